#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "advdet/experiment.hpp"

using namespace advdet;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny(const fs::path& out) {
    ExperimentConfig c;
    c.dataset.kind = "synthetic";
    c.dataset.synthetic_train = 300;
    c.dataset.synthetic_test = 120;
    c.dataset.synthetic_side = 8;
    c.dataset.synthetic_classes = 4;
    c.classifier.hidden = {16};
    c.classifier.epochs = 10;
    c.autoencoder.hidden = 16;
    c.autoencoder.bottleneck = 4;
    c.autoencoder.epochs = 2;
    c.attack.iterative_step = 0.02;
    c.attack.max_steps = 100;
    c.clean_pool = 40;
    c.adversarial_pool = 20;
    c.table2_examples = 10;
    c.evasion_examples = 5;
    c.defense_successes = 5;
    c.dump_examples = 1;
    c.out_dir = out.string();
    return c;
}

fs::path fresh_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("config json round trip and hash") {
    const auto c = tiny("out");
    const auto back = ExperimentConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());
    auto other = c;
    other.seed = 1;
    CHECK(other.hash() != c.hash());

    const auto defaults = ExperimentConfig::from_json(nlohmann::json::object());
    CHECK(defaults.attack.fgs_step == doctest::Approx(10.0 / 255.0));
    CHECK(defaults.attack.iterative_step == doctest::Approx(1.0 / 255.0));
    CHECK(defaults.attack.lambda == 1e-3);
    CHECK(std::isinf(defaults.table2_radii.front()));

    CHECK_THROWS_AS(ExperimentConfig::from_json({{"attack", {{"confidence", 1.5}}}}), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_json({{"dataset", {{"kind", "imagenet"}}}}), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_json({{"table2_radii", {"big"}}}), Error);
}

TEST_CASE("missing data path") {
    auto c = tiny(fresh_dir("advdet_exp_missing"));
    c.dataset.kind = "mnist";
    c.dataset.path = "/nonexistent/mnist";
    Workspace ws(c);
    try {
        ws.data();
        FAIL("expected FileNotFound");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::FileNotFound);
        CHECK(std::string(e.what()).find("/nonexistent/mnist") != std::string::npos);
    }
}

TEST_CASE("train is reproducible") {
    const auto a = fresh_dir("advdet_exp_train_a");
    const auto b = fresh_dir("advdet_exp_train_b");
    Workspace wa(tiny(a)), wb(tiny(b));
    const auto ra = cmd_train(wa);
    const auto rb = cmd_train(wb);
    CHECK(ra.to_json(wa, false) == rb.to_json(wb, false));
    CHECK(ra.body["classifier"]["train_accuracy"].get<double>() > 0.9);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        ++files;
        CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
    }
    CHECK(files == 3);  // classifier, encoder, decoder
}

TEST_CASE("table1 and table2 reports are deterministic") {
    const auto a = fresh_dir("advdet_exp_det_a");
    const auto b = fresh_dir("advdet_exp_det_b");
    Workspace wa(tiny(a)), wb(tiny(b));
    for (auto cmd : {cmd_table1, cmd_table2}) {
        const auto ra = cmd(wa);
        const auto rb = cmd(wb);
        CHECK(ra.ok());
        CHECK(ra.to_json(wa, false).dump() == rb.to_json(wb, false).dump());
        CHECK(ra.to_json(wa, true).contains("timestamp"));
        CHECK(ra.to_json(wa, false)["provenance"]["config_hash"] == wa.config().hash());
    }
    for (const auto& e : fs::directory_iterator(a)) {
        const auto ext = e.path().extension();
        if (ext == ".jsonl" || ext == ".csv" || ext == ".pgm")
            CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
    }
    CHECK(fs::exists(a / "table1_fgs_attacks.jsonl"));
    CHECK(fs::exists(a / "table2_rinf_attacks.jsonl"));
}

TEST_CASE("table1 numbers are recomputable from artifacts") {
    const auto dir = fresh_dir("advdet_exp_recompute");
    Workspace ws(tiny(dir));
    const auto rep = cmd_table1(ws);
    const auto row = rep.body["iterative"];
    REQUIRE(row["whiten_var"].is_object());
    const auto ev = cmd_eval(dir / row["whiten_var"]["scores_csv"].get<std::string>(), dir / "eval");
    CHECK(ev.body["whiten_var"]["auroc"] == row["whiten_var"]["auroc"]);
    CHECK(ev.body["whiten_var"]["aupr"] == row["whiten_var"]["aupr"]);

    std::ifstream in(dir / "table1_iterative_attacks.jsonl");
    std::string line;
    std::size_t accepted = 0, lines = 0;
    double l2 = 0.0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        ++lines;
        for (const char* k : {"index", "target", "success", "steps", "l1", "l2", "linf", "final_prob"})
            CHECK(j.contains(k));
        if (j["success"].get<bool>()) {
            ++accepted;
            l2 += j["l2"].get<double>();
        }
    }
    CHECK(lines == row["attempted"].get<std::size_t>());
    CHECK(accepted == row["accepted"].get<std::size_t>());
    CHECK(l2 / accepted == doctest::Approx(row["mean_distances"]["l2"].get<double>()).epsilon(1e-12));
}

TEST_CASE("saliency command") {
    const auto dir = fresh_dir("advdet_exp_saliency");
    auto c = tiny(dir);
    c.saliency_ids = {0, 3};
    Workspace ws(c);
    const auto rep = cmd_saliency(ws);
    CHECK(rep.body["maps"].size() == 8);
    for (const auto& m : rep.body["maps"]) {
        CHECK(fs::exists(dir / m["pgm"].get<std::string>()));
        CHECK(fs::exists(dir / m["ppm"].get<std::string>()));
    }
    const std::string first = slurp(dir / "saliency_0_modified.pgm");
    cmd_saliency(ws);
    CHECK(slurp(dir / "saliency_0_modified.pgm") == first);

    auto bad = c;
    bad.saliency_ids = {100000};
    Workspace wb(bad);
    try {
        cmd_saliency(wb);
        FAIL("expected BadImageId");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::BadImageId);
    }
}

TEST_CASE("eval rejects malformed csv") {
    const auto dir = fresh_dir("advdet_exp_eval");
    fs::create_directories(dir);
    std::ofstream(dir / "bad.csv") << "id,source,label,score\n0,msp,maybe,1.0\n";
    CHECK_THROWS_AS(cmd_eval(dir / "bad.csv", dir), Error);
    std::ofstream(dir / "ok.csv") << "id,source,label,score\n0,msp,adv,0.9\n1,msp,adv,0.4\n"
                                     "0,msp,clean,0.1\n1,msp,clean,0.7\n";
    const auto rep = cmd_eval(dir / "ok.csv", dir);
    CHECK(rep.body["msp"]["auroc"].get<double>() == 75.0);
    try {
        cmd_eval(dir / "none.csv", dir);
        FAIL("expected FileNotFound");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::FileNotFound);
    }
}
