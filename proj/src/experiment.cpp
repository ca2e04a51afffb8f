#include "advdet/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "advdet/detect.hpp"
#include "advdet/metrics.hpp"

namespace advdet {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

json radius_to_json(double r) { return std::isinf(r) ? json("inf") : json(r); }

double radius_from_json(const json& j) {
    if (j.is_string()) {
        if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
        throw Error(ErrorCode::BadFormat, "radius must be a number or \"inf\"");
    }
    return j.get<double>();
}

template <class T>
void read_opt(const json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "gelu") return Activation::gelu;
    throw Error(ErrorCode::BadFormat, "unknown activation '" + s + "'");
}

json attack_record(std::size_t index, const AttackResult& r) {
    return {{"index", index},          {"target", r.target},        {"success", r.success},
            {"steps", r.steps_used},   {"l1", r.distances.l1},      {"l2", r.distances.l2},
            {"linf", r.distances.linf}, {"final_prob", r.final_target_prob}};
}

class Jsonl {
public:
    explicit Jsonl(const std::filesystem::path& path) : out_(path) {
        if (!out_) throw Error(ErrorCode::FileNotFound, "cannot write " + path.string());
    }
    void write(const json& j) { out_ << j.dump() << '\n'; }

private:
    std::ofstream out_;
};

struct DistanceMeans {
    std::size_t count = 0;
    Distances sum;

    void add(const Distances& d) {
        ++count;
        sum.l1 += d.l1;
        sum.l2 += d.l2;
        sum.linf += d.linf;
    }
    json to_json() const {
        if (count == 0) return {{"l1", nullptr}, {"l2", nullptr}, {"linf", nullptr}};
        const double n = static_cast<double>(count);
        return {{"l1", sum.l1 / n}, {"l2", sum.l2 / n}, {"linf", sum.linf / n}};
    }
    double mean_l2() const { return count == 0 ? 0.0 : sum.l2 / static_cast<double>(count); }
};

struct AttackPool {
    std::vector<Vector> adversarial;
    std::vector<std::size_t> source_index;
    std::size_t attempted = 0;
    DistanceMeans distances;
};

bool in_domain(const Vector& x, PixelRange r) {
    return std::all_of(x.begin(), x.end(), [&](double v) { return v >= r.lo && v <= r.hi; });
}

bool norms_ordered(const Distances& d) {
    return d.linf <= d.l2 * (1 + 1e-12) && d.l2 <= d.l1 * (1 + 1e-12);
}

// Attacks test images in order until `want` successes are collected.
AttackPool collect(const Dataset& test, std::size_t want, double confidence, Jsonl& log,
                   const std::function<AttackResult(std::size_t)>& attack, RunReport& report,
                   const std::string& tag) {
    AttackPool pool;
    bool domain_ok = true;
    bool norms_ok = true;
    bool success_ok = true;
    for (std::size_t i = 0; i < test.size() && pool.adversarial.size() < want; ++i) {
        const AttackResult r = attack(i);
        ++pool.attempted;
        log.write(attack_record(i, r));
        domain_ok = domain_ok && in_domain(r.adversarial, test.pixel_range);
        norms_ok = norms_ok && norms_ordered(r.distances);
        if (r.success) {
            success_ok = success_ok && r.final_target_prob >= confidence;
            pool.distances.add(r.distances);
            pool.adversarial.push_back(r.adversarial);
            pool.source_index.push_back(i);
        }
    }
    report.check(tag + "_in_domain", domain_ok);
    report.check(tag + "_norm_order", norms_ok);
    report.check(tag + "_success_confidence", success_ok);
    return pool;
}

json detector_summary(const PoolScores& s, const std::filesystem::path& dir,
                      const std::string& stem) {
    const Vector pos = s.positive_values();
    const Vector neg = s.negative_values();
    write_scores_csv(dir / (stem + "_scores.csv"), s);
    const auto roc = roc_points(pos, neg);
    write_curve_csv(dir / (stem + "_curve.csv"), roc);
    return {{"auroc", auroc(pos, neg)},
            {"aupr", aupr(pos, neg)},
            {"positives", pos.size()},
            {"negatives", neg.size()},
            {"scores_csv", stem + "_scores.csv"},
            {"curve_csv", stem + "_curve.csv"}};
}

void write_coefficients(const std::filesystem::path& path, const Vector& clean, const Vector& adv) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::FileNotFound, "cannot write " + path.string());
    out << "index,clean,adversarial\n";
    char buf[96];
    for (std::size_t i = 0; i < clean.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", i, clean[i], adv[i]);
        out << buf;
    }
}

std::vector<std::uint8_t> unit_gray(const Vector& v) { return to_gray(rescale_unit(v), 0.0, 1.0); }

// Tiles equally sized grayscale images into a rows × cols grid.
void write_grid(const std::filesystem::path& path, const std::vector<std::vector<Vector>>& rows,
                std::size_t h, std::size_t w) {
    const std::size_t cols = rows.empty() ? 0 : rows.front().size();
    std::vector<std::uint8_t> px(rows.size() * h * cols * w, 0);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const auto g = to_gray(rows[r][c], 0.0, 1.0);
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    px[(r * h + y) * cols * w + c * w + x] = g[y * w + x];
        }
    write_pgm(path, cols * w, rows.size() * h, px);
}

std::string timestamp_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

// ----- config -----

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    try {
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            read_opt(d, "kind", c.dataset.kind);
            read_opt(d, "path", c.dataset.path);
            read_opt(d, "synthetic_train", c.dataset.synthetic_train);
            read_opt(d, "synthetic_test", c.dataset.synthetic_test);
            read_opt(d, "synthetic_side", c.dataset.synthetic_side);
            read_opt(d, "synthetic_classes", c.dataset.synthetic_classes);
            read_opt(d, "synthetic_seed", c.dataset.synthetic_seed);
        }
        if (j.contains("classifier")) {
            const auto& d = j.at("classifier");
            read_opt(d, "hidden", c.classifier.hidden);
            read_opt(d, "activation", c.classifier.activation);
            read_opt(d, "epochs", c.classifier.epochs);
            read_opt(d, "batch", c.classifier.batch);
        }
        if (j.contains("attack")) {
            const auto& d = j.at("attack");
            read_opt(d, "fgs_step", c.attack.fgs_step);
            read_opt(d, "iterative_step", c.attack.iterative_step);
            read_opt(d, "lambda", c.attack.lambda);
            read_opt(d, "recon_lambda", c.attack.recon_lambda);
            read_opt(d, "confidence", c.attack.confidence);
            read_opt(d, "max_steps", c.attack.max_steps);
            read_opt(d, "barrier_weight", c.attack.barrier_weight);
            read_opt(d, "sigma_floor", c.attack.sigma_floor);
        }
        if (j.contains("autoencoder")) {
            const auto& d = j.at("autoencoder");
            read_opt(d, "hidden", c.autoencoder.hidden);
            read_opt(d, "bottleneck", c.autoencoder.bottleneck);
            read_opt(d, "epochs", c.autoencoder.epochs);
            read_opt(d, "batch", c.autoencoder.batch);
        }
        read_opt(j, "tail_start", c.tail_start);
        read_opt(j, "whiten_eps", c.whiten_eps);
        read_opt(j, "clean_pool", c.clean_pool);
        read_opt(j, "adversarial_pool", c.adversarial_pool);
        read_opt(j, "table2_examples", c.table2_examples);
        if (j.contains("table2_radii")) {
            c.table2_radii.clear();
            for (const auto& r : j.at("table2_radii")) c.table2_radii.push_back(radius_from_json(r));
        }
        read_opt(j, "evasion_examples", c.evasion_examples);
        read_opt(j, "defense_successes", c.defense_successes);
        read_opt(j, "blur_sigma", c.blur_sigma);
        read_opt(j, "dump_examples", c.dump_examples);
        read_opt(j, "saliency_ids", c.saliency_ids);
        read_opt(j, "saliency_modes", c.saliency_modes);
        read_opt(j, "seed", c.seed);
        read_opt(j, "out_dir", c.out_dir);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::BadFormat, std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::FileNotFound, path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::BadFormat, path.string() + ": " + e.what());
    }
    return from_json(j);
}

json ExperimentConfig::to_json() const {
    json radii = json::array();
    for (double r : table2_radii) radii.push_back(radius_to_json(r));
    return {
        {"dataset",
         {{"kind", dataset.kind},
          {"path", dataset.path},
          {"synthetic_train", dataset.synthetic_train},
          {"synthetic_test", dataset.synthetic_test},
          {"synthetic_side", dataset.synthetic_side},
          {"synthetic_classes", dataset.synthetic_classes},
          {"synthetic_seed", dataset.synthetic_seed}}},
        {"classifier",
         {{"hidden", classifier.hidden},
          {"activation", classifier.activation},
          {"epochs", classifier.epochs},
          {"batch", classifier.batch}}},
        {"attack",
         {{"fgs_step", attack.fgs_step},
          {"iterative_step", attack.iterative_step},
          {"lambda", attack.lambda},
          {"recon_lambda", attack.recon_lambda},
          {"confidence", attack.confidence},
          {"max_steps", attack.max_steps},
          {"barrier_weight", attack.barrier_weight},
          {"sigma_floor", attack.sigma_floor}}},
        {"autoencoder",
         {{"hidden", autoencoder.hidden},
          {"bottleneck", autoencoder.bottleneck},
          {"epochs", autoencoder.epochs},
          {"batch", autoencoder.batch}}},
        {"tail_start", tail_start},
        {"whiten_eps", whiten_eps},
        {"clean_pool", clean_pool},
        {"adversarial_pool", adversarial_pool},
        {"table2_examples", table2_examples},
        {"table2_radii", radii},
        {"evasion_examples", evasion_examples},
        {"defense_successes", defense_successes},
        {"blur_sigma", blur_sigma},
        {"dump_examples", dump_examples},
        {"saliency_ids", saliency_ids},
        {"saliency_modes", saliency_modes},
        {"seed", seed},
        {"out_dir", out_dir},
    };
}

std::string ExperimentConfig::hash() const {
    json j = to_json();
    j.erase("out_dir");
    return fnv1a_hex(j.dump());
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, "config: " + m); };
    if (dataset.kind != "mnist" && dataset.kind != "cifar10" && dataset.kind != "synthetic")
        fail("dataset.kind must be mnist, cifar10 or synthetic");
    parse_activation(classifier.activation);
    if (classifier.epochs == 0 || classifier.batch == 0) fail("classifier epochs/batch must be > 0");
    if (!(attack.fgs_step > 0.0) || !(attack.iterative_step > 0.0)) fail("attack steps must be > 0");
    if (!(attack.confidence > 0.0 && attack.confidence < 1.0)) fail("confidence must be in (0,1)");
    if (attack.max_steps == 0) fail("max_steps must be >= 1");
    if (!(attack.lambda >= 0.0) || !(attack.recon_lambda >= 0.0)) fail("lambda must be >= 0");
    if (!(attack.sigma_floor > 0.0)) fail("sigma_floor must be > 0");
    if (!(whiten_eps > 0.0)) fail("whiten_eps must be > 0");
    if (clean_pool < 2) fail("clean_pool must be >= 2");
    if (!(blur_sigma >= 0.0)) fail("blur_sigma must be >= 0");
    for (const auto& m : saliency_modes) parse_saliency_mode(m);
    for (double r : table2_radii)
        if (!(r > 0.0)) fail("table2 radii must be > 0 or inf");
}

// ----- workspace -----

Workspace::Workspace(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::filesystem::create_directories(cfg_.out_dir);
}

const TrainTestSplit& Workspace::data() {
    if (data_) return *data_;
    const auto& d = cfg_.dataset;
    if (d.kind == "mnist") {
        if (!mnist_available(d.path))
            throw Error(ErrorCode::FileNotFound, "MNIST IDX files not found in " + d.path);
        data_ = load_mnist_dir(d.path);
    } else if (d.kind == "cifar10") {
        std::vector<std::filesystem::path> train;
        for (int b = 1; b <= 5; ++b)
            train.push_back(std::filesystem::path(d.path) / ("data_batch_" + std::to_string(b) + ".bin"));
        const std::vector<std::filesystem::path> test{std::filesystem::path(d.path) / "test_batch.bin"};
        data_ = TrainTestSplit{load_cifar10_batches(train), load_cifar10_batches(test)};
    } else {
        const Dataset all = make_synthetic(d.synthetic_seed, d.synthetic_train + d.synthetic_test,
                                           d.synthetic_side, d.synthetic_classes);
        data_ = TrainTestSplit{all.slice(0, d.synthetic_train),
                               all.slice(d.synthetic_train, d.synthetic_test)};
        data_->train.name = "synthetic-train";
        data_->test.name = "synthetic-test";
    }
    log("data: " + std::to_string(data_->train.size()) + " train / " +
        std::to_string(data_->test.size()) + " test (" + data_->train.name + ")");
    return *data_;
}

Network Workspace::train_or_load(const NetworkSpec& spec, const std::string& tag) {
    json key{{"dataset", cfg_.to_json()["dataset"]},
             {"classifier", cfg_.to_json()["classifier"]},
             {"activation", spec.activations.empty() ? 0 : static_cast<int>(spec.activations[0])},
             {"seed", cfg_.seed}};
    const auto path = out_dir() / (tag + "-" + fnv1a_hex(key.dump()) + ".net");
    if (std::filesystem::exists(path)) {
        log("loading " + path.string());
        return load_network(path);
    }
    const auto& d = data();
    log("training " + tag);
    TrainOptions opts{cfg_.classifier.epochs, cfg_.classifier.batch, cfg_.seed + 1};
    Network net = train_classifier(d.train, spec, opts);
    save_network(net, path);
    return net;
}

const Network& Workspace::classifier() {
    if (classifier_) return *classifier_;
    const auto& d = data();
    const auto spec = NetworkSpec::classifier(d.train.dim(), cfg_.classifier.hidden,
                                              static_cast<std::size_t>(d.train.num_classes),
                                              parse_activation(cfg_.classifier.activation), cfg_.seed);
    classifier_ = train_or_load(spec, "classifier");
    return *classifier_;
}

const Network& Workspace::relu_classifier() {
    if (parse_activation(cfg_.classifier.activation) == Activation::relu) return classifier();
    if (relu_classifier_) return *relu_classifier_;
    const auto& d = data();
    const auto spec = NetworkSpec::classifier(d.train.dim(), cfg_.classifier.hidden,
                                              static_cast<std::size_t>(d.train.num_classes),
                                              Activation::relu, cfg_.seed);
    relu_classifier_ = train_or_load(spec, "classifier-relu");
    return *relu_classifier_;
}

TailSpec Workspace::tail() {
    const std::size_t d = data().train.dim();
    return {cfg_.tail_start == 0 ? default_tail_start(d) : cfg_.tail_start, d};
}

const WhiteningModel& Workspace::whitening() {
    if (whitening_) return *whitening_;
    json key{{"dataset", cfg_.to_json()["dataset"]}, {"eps", cfg_.whiten_eps}};
    const auto path = out_dir() / ("whitening-" + fnv1a_hex(key.dump()) + ".wht");
    if (std::filesystem::exists(path)) {
        log("loading " + path.string());
        whitening_ = load_whitening(path);
    } else {
        log("fitting whitening");
        const auto [train, rest] = center_data(data().train, {});
        whitening_ = fit_whitening(train, cfg_.whiten_eps);
        save_whitening(*whitening_, path);
    }
    return *whitening_;
}

const AutoencoderNet& Workspace::autoencoder() {
    if (autoencoder_) return *autoencoder_;
    const Network& clf = classifier();
    json key{{"dataset", cfg_.to_json()["dataset"]},
             {"classifier", cfg_.to_json()["classifier"]},
             {"autoencoder", cfg_.to_json()["autoencoder"]},
             {"seed", cfg_.seed}};
    const std::string h = fnv1a_hex(key.dump());
    const auto enc = out_dir() / ("encoder-" + h + ".net");
    const auto dec = out_dir() / ("decoder-" + h + ".net");
    if (std::filesystem::exists(enc) && std::filesystem::exists(dec)) {
        log("loading autoencoder " + h);
        autoencoder_ = AutoencoderNet{load_network(enc), load_network(dec), clf};
    } else {
        log("training autoencoder");
        AutoencoderOptions opts;
        opts.hidden = cfg_.autoencoder.hidden;
        opts.bottleneck = cfg_.autoencoder.bottleneck;
        opts.train = {cfg_.autoencoder.epochs, cfg_.autoencoder.batch, cfg_.seed + 2};
        autoencoder_ = train_autoencoder(data().train, clf, opts);
        save_network(autoencoder_->encoder, enc);
        save_network(autoencoder_->decoder, dec);
    }
    return *autoencoder_;
}

std::vector<Vector> Workspace::clean_pool() {
    const auto& test = data().test;
    const std::size_t n = std::min(cfg_.clean_pool, test.size());
    return {test.examples.begin(), test.examples.begin() + static_cast<std::ptrdiff_t>(n)};
}

// ----- reports -----

bool RunReport::ok() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.second; });
}

json RunReport::to_json(const Workspace& ws, bool with_timestamp) const {
    json j = body;
    json c = json::object();
    for (const auto& [name, passed] : checks) c[name] = passed;
    j["checks"] = c;
    j["provenance"] = {{"config_hash", ws.config().hash()},
                       {"seed", ws.config().seed},
                       {"version", kVersion}};
    if (with_timestamp) j["timestamp"] = timestamp_now();
    return j;
}

void RunReport::write(const Workspace& ws, const std::string& name) const {
    const auto path = ws.out_dir() / (name + ".json");
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::FileNotFound, "cannot write " + path.string());
    out << to_json(ws, true).dump(2) << '\n';
}

AttackConfig fgs_config(const ExperimentConfig& cfg, std::uint64_t seed) {
    AttackConfig a;
    a.kind = AttackKind::fgs;
    a.step = cfg.attack.fgs_step;
    a.confidence = cfg.attack.confidence;
    a.max_steps = 1;
    a.seed = seed;
    return a;
}

AttackConfig iterative_config(const ExperimentConfig& cfg, std::uint64_t seed, double lambda) {
    AttackConfig a;
    a.kind = AttackKind::iterative;
    a.step = cfg.attack.iterative_step;
    a.lambda = lambda;
    a.confidence = cfg.attack.confidence;
    a.max_steps = cfg.attack.max_steps;
    a.seed = seed;
    return a;
}

RunReport cmd_train(Workspace& ws) {
    RunReport rep;
    const auto& d = ws.data();
    const Network& clf = ws.classifier();
    rep.body["classifier"] = {{"train_accuracy", accuracy(clf, d.train)},
                              {"test_accuracy", accuracy(clf, d.test)}};
    const auto& ae = ws.autoencoder();
    double recon = 0.0;
    const std::size_t n = std::min<std::size_t>(d.test.size(), 500);
    for (std::size_t i = 0; i < n; ++i) recon += reconstruction_loss(ae, d.test.examples[i], nullptr);
    rep.body["autoencoder"] = {{"test_mse", n == 0 ? 0.0 : recon / static_cast<double>(n)}};
    rep.body["dataset"] = d.train.name;
    return rep;
}

RunReport cmd_table1(Workspace& ws) {
    RunReport rep;
    const auto& cfg = ws.config();
    const auto& test = ws.data().test;
    const Network& net = ws.classifier();
    const WhiteningModel& model = ws.whitening();
    const TailSpec tail = ws.tail();
    const auto clean = ws.clean_pool();
    const auto dir = ws.out_dir();

    const TailVarianceStatistic stat(model, tail);
    const CleanStats cs = estimate_clean_stats(stat, clean);
    rep.body["dataset"] = test.name;
    rep.body["tail_start"] = tail.start;
    rep.body["clean_stats"] = {{"mu", cs.mu}, {"sigma", cs.sigma}, {"count", clean.size()}};

    for (const std::string kind : {"fgs", "iterative"}) {
        ws.log("table1: " + kind + " attacks");
        Jsonl records(dir / ("table1_" + kind + "_attacks.jsonl"));
        auto attack = [&](std::size_t i) {
            const std::uint64_t seed = cfg.seed ^ i;
            return kind == "fgs"
                       ? fgs_attack(net, test.examples[i], test.labels[i], fgs_config(cfg, seed))
                       : iterative_attack(net, test.examples[i], test.labels[i],
                                          iterative_config(cfg, seed, cfg.attack.lambda));
        };
        const AttackPool pool = collect(test, cfg.adversarial_pool, cfg.attack.confidence, records, attack, rep, kind);
        json row{{"attempted", pool.attempted},
                 {"accepted", pool.adversarial.size()},
                 {"success_rate", pool.attempted == 0 ? 0.0
                                                      : static_cast<double>(pool.adversarial.size()) /
                                                            static_cast<double>(pool.attempted)},
                 {"mean_distances", pool.distances.to_json()},
                 {"records", "table1_" + kind + "_attacks.jsonl"}};
        if (pool.adversarial.empty()) {
            row["whiten_var"] = nullptr;
            rep.body[kind] = row;
            continue;
        }
        const auto wv = score_pool(whiten_var_detector(model, tail), clean, pool.adversarial);
        row["whiten_var"] = detector_summary(wv, dir, "table1_" + kind + "_whiten_var");
        std::size_t beyond = 0;
        for (const auto& s : wv.positive) beyond += s.score > cs.mu + 10.0 * cs.sigma ? 1 : 0;
        row["beyond_10_sigma"] = static_cast<double>(beyond) / static_cast<double>(wv.positive.size());
        row["msp"] = detector_summary(score_pool(msp_detector(net), clean, pool.adversarial), dir,
                                      "table1_" + kind + "_msp");
        row["kl_uniform"] = detector_summary(score_pool(kl_uniform_detector(net), clean,
                                                        pool.adversarial),
                                             dir, "table1_" + kind + "_kl_uniform");

        const std::size_t dumps = std::min(cfg.dump_examples, pool.adversarial.size());
        const auto& shape = test.shape;
        for (std::size_t k = 0; k < dumps; ++k) {
            const std::size_t src = pool.source_index[k];
            const Vector& x = test.examples[src];
            const Vector& adv = pool.adversarial[k];
            const std::string stem = "table1_" + kind + "_" + std::to_string(src);
            write_coefficients(dir / (stem + "_coefficients.csv"), pca_whiten(model, x),
                               pca_whiten(model, adv));
            if (shape.channels == 1) {
                write_pgm(dir / (stem + "_zca_clean.pgm"), shape.width, shape.height,
                          unit_gray(zca_whiten(model, x)));
                write_pgm(dir / (stem + "_zca_adv.pgm"), shape.width, shape.height,
                          unit_gray(zca_whiten(model, adv)));
            }
        }
        rep.body[kind] = row;
    }
    return rep;
}

RunReport cmd_table2(Workspace& ws) {
    RunReport rep;
    const auto& cfg = ws.config();
    const auto& test = ws.data().test;
    const Network& net = ws.classifier();
    const auto clean = ws.clean_pool();
    const KlUniformStatistic kl(net);
    const CleanStats cs = estimate_clean_stats(kl, clean);
    rep.body["dataset"] = test.name;
    const double sigma = std::max(cs.sigma, cfg.attack.sigma_floor);
    rep.body["clean_stats"] = {
        {"mu", cs.mu}, {"sigma", cs.sigma}, {"barrier_sigma", sigma}, {"count", clean.size()}};

    const std::size_t n = std::min(cfg.table2_examples, test.size());
    json rows = json::array();
    bool inside_ok = true;
    bool domain_ok = true;
    for (double r : cfg.table2_radii) {
        const std::string label = std::isinf(r) ? "inf" : std::to_string(r);
        ws.log("table2: r = " + label);
        Jsonl records(ws.out_dir() / ("table2_r" + label + "_attacks.jsonl"));
        BarrierSpec barrier;
        barrier.mu = cs.mu;
        barrier.sigma = sigma;
        barrier.radius_mult = r;
        barrier.weight = cfg.attack.barrier_weight;
        DistanceMeans dm;
        std::size_t infeasible = 0;
        for (std::size_t i = 0; i < n; ++i) {
            AttackConfig a = iterative_config(cfg, cfg.seed ^ i, cfg.attack.lambda);
            a.barrier = barrier;
            try {
                const AttackResult res = constrained_kl_attack(net, test.examples[i], test.labels[i], a);
                json rec = attack_record(i, res);
                rec["kl"] = *res.final_statistic;
                records.write(rec);
                domain_ok = domain_ok && in_domain(res.adversarial, test.pixel_range);
                if (res.success) {
                    dm.add(res.distances);
                    inside_ok = inside_ok && barrier.inside(*res.final_statistic);
                }
            } catch (const Error& e) {
                if (e.code() != ErrorCode::BarrierInfeasible) throw;
                ++infeasible;
                records.write({{"index", i}, {"success", false}, {"infeasible", true}});
            }
        }
        rows.push_back({{"radius_mult", radius_to_json(r)},
                        {"attempted", n},
                        {"successes", dm.count},
                        {"success_rate", n == 0 ? 0.0 : static_cast<double>(dm.count) / static_cast<double>(n)},
                        {"infeasible_start", infeasible},
                        {"mean_distances", dm.to_json()},
                        {"records", "table2_r" + label + "_attacks.jsonl"}});
    }
    rep.body["rows"] = rows;
    rep.check("successes_inside_interval", inside_ok);
    rep.check("in_domain", domain_ok);
    return rep;
}

RunReport cmd_recon(Workspace& ws) {
    RunReport rep;
    const auto& cfg = ws.config();
    const auto& test = ws.data().test;
    const Network& net = ws.classifier();
    const AutoencoderNet& ae = ws.autoencoder();
    const auto clean = ws.clean_pool();
    ws.log("recon: iterative attacks");
    Jsonl records(ws.out_dir() / "recon_attacks.jsonl");
    auto attack = [&](std::size_t i) {
        return iterative_attack(net, test.examples[i], test.labels[i],
                                iterative_config(cfg, cfg.seed ^ i, cfg.attack.recon_lambda));
    };
    const AttackPool pool = collect(test, cfg.adversarial_pool, cfg.attack.confidence, records, attack, rep, "iterative");
    rep.body["dataset"] = test.name;
    rep.body["lambda"] = cfg.attack.recon_lambda;
    rep.body["attempted"] = pool.attempted;
    rep.body["accepted"] = pool.adversarial.size();
    rep.body["mean_distances"] = pool.distances.to_json();
    if (pool.adversarial.empty()) throw Error(ErrorCode::EmptyPool, "no successful attacks for recon");
    rep.body["recon_err"] = detector_summary(score_pool(recon_detector(ae), clean, pool.adversarial),
                                             ws.out_dir(), "recon_recon_err");

    const auto& shape = test.shape;
    if (shape.channels == 1) {
        std::vector<std::vector<Vector>> grid;
        for (std::size_t k = 0; k < std::min(cfg.dump_examples, pool.adversarial.size()); ++k) {
            const Vector& x = test.examples[pool.source_index[k]];
            const Vector& adv = pool.adversarial[k];
            grid.push_back({x, reconstruct(ae, x), adv, reconstruct(ae, adv)});
        }
        write_grid(ws.out_dir() / "recon_grid.pgm", grid, shape.height, shape.width);
        rep.body["grid"] = "recon_grid.pgm";
    }
    return rep;
}

RunReport cmd_variance_evasion(Workspace& ws) {
    RunReport rep;
    const auto& cfg = ws.config();
    const auto& test = ws.data().test;
    const Network& net = ws.classifier();
    const WhiteningModel& model = ws.whitening();
    const TailSpec tail = ws.tail();
    const auto clean = ws.clean_pool();
    const TailVarianceStatistic stat(model, tail);
    const CleanStats cs = estimate_clean_stats(stat, clean);
    rep.body["dataset"] = test.name;
    const double sigma = std::max(cs.sigma, cfg.attack.sigma_floor);
    rep.body["clean_stats"] = {
        {"mu", cs.mu}, {"sigma", cs.sigma}, {"barrier_sigma", sigma}, {"count", clean.size()}};

    ws.log("variance-evasion: fgs outliers");
    Jsonl fgs_records(ws.out_dir() / "evasion_fgs_attacks.jsonl");
    auto fgs = [&](std::size_t i) {
        return fgs_attack(net, test.examples[i], test.labels[i], fgs_config(cfg, cfg.seed ^ i));
    };
    const AttackPool pool = collect(test, cfg.adversarial_pool, cfg.attack.confidence, fgs_records, fgs, rep, "fgs");
    std::size_t beyond = 0;
    for (const auto& adv : pool.adversarial) beyond += stat.value(adv) > cs.mu + 10.0 * sigma;
    rep.body["fgs"] = {{"accepted", pool.adversarial.size()},
                       {"beyond_10_sigma",
                        pool.adversarial.empty() ? 0.0
                                                 : static_cast<double>(beyond) /
                                                       static_cast<double>(pool.adversarial.size())}};

    ws.log("variance-evasion: constrained attacks");
    const std::size_t n = std::min(cfg.evasion_examples, test.size());
    Jsonl records(ws.out_dir() / "evasion_constrained_attacks.jsonl");
    Jsonl free_records(ws.out_dir() / "evasion_unconstrained_attacks.jsonl");
    std::size_t success = 0, infeasible = 0, stalled = 0, free_success = 0;
    bool inside_ok = true;
    bool domain_ok = true;
    for (std::size_t i = 0; i < n; ++i) {
        AttackConfig a = iterative_config(cfg, cfg.seed ^ i, cfg.attack.lambda);
        const AttackResult free = iterative_attack(net, test.examples[i], test.labels[i], a);
        free_records.write(attack_record(i, free));
        free_success += free.success;
        a.barrier = BarrierSpec{nullptr, cs.mu, sigma, 1.0, cfg.attack.barrier_weight};
        try {
            const AttackResult r =
                constrained_variance_attack(net, model, tail, test.examples[i], test.labels[i], a);
            json rec = attack_record(i, r);
            rec["tail_variance"] = *r.final_statistic;
            records.write(rec);
            domain_ok = domain_ok && in_domain(r.adversarial, test.pixel_range);
            if (r.success) {
                ++success;
                inside_ok = inside_ok && a.barrier->inside(*r.final_statistic);
            } else if (r.steps_used < cfg.attack.max_steps) {
                ++stalled;
            }
        } catch (const Error& e) {
            if (e.code() != ErrorCode::BarrierInfeasible) throw;
            ++infeasible;
            records.write({{"index", i}, {"success", false}, {"infeasible", true}});
        }
    }
    const double dn = n == 0 ? 1.0 : static_cast<double>(n);
    rep.body["constrained"] = {{"attempted", n},
                               {"successes", success},
                               {"success_rate", static_cast<double>(success) / dn},
                               {"infeasible_start", infeasible},
                               {"stalled", stalled},
                               {"records", "evasion_constrained_attacks.jsonl"}};
    rep.body["unconstrained"] = {{"attempted", n},
                                 {"successes", free_success},
                                 {"success_rate", static_cast<double>(free_success) / dn},
                                 {"records", "evasion_unconstrained_attacks.jsonl"}};
    rep.check("successes_inside_interval", inside_ok);
    rep.check("in_domain", domain_ok);
    return rep;
}

RunReport cmd_defense(Workspace& ws) {
    RunReport rep;
    const auto& cfg = ws.config();
    const auto& test = ws.data().test;
    const Network& net = ws.classifier();
    const BlurDefense defense(test.shape, cfg.blur_sigma);
    const BlurDefense identity(test.shape, 0.0);
    Jsonl plain_records(ws.out_dir() / "defense_plain_attacks.jsonl");
    Jsonl adaptive_records(ws.out_dir() / "defense_adaptive_attacks.jsonl");

    ws.log("defense: plain and adaptive attacks");
    std::size_t attempted = 0, plain_success = 0, reverted = 0, adaptive_success = 0, paired = 0;
    DistanceMeans plain_l2, adaptive_l2;
    bool domain_ok = true;
    for (std::size_t i = 0; i < test.size() && paired < cfg.defense_successes; ++i) {
        ++attempted;
        const auto a = iterative_config(cfg, cfg.seed ^ i, cfg.attack.lambda);
        const AttackResult plain = iterative_attack(net, test.examples[i], test.labels[i], a);
        const AttackResult adaptive =
            adaptive_attack(net, test.examples[i], test.labels[i], a, test.shape, cfg.blur_sigma);
        json pr = attack_record(i, plain);
        if (plain.success) {
            ++plain_success;
            const bool back = predict(net, defense.apply(plain.adversarial)) == test.labels[i];
            reverted += back;
            pr["reverted"] = back;
        }
        plain_records.write(pr);
        adaptive_records.write(attack_record(i, adaptive));
        adaptive_success += adaptive.success;
        domain_ok = domain_ok && in_domain(plain.adversarial, test.pixel_range) &&
                    in_domain(adaptive.adversarial, test.pixel_range);
        if (plain.success && adaptive.success) {
            ++paired;
            plain_l2.add(plain.distances);
            adaptive_l2.add(adaptive.distances);
        }
    }
    const double reverted_fraction =
        plain_success == 0 ? 0.0 : static_cast<double>(reverted) / static_cast<double>(plain_success);
    const double ratio = plain_l2.mean_l2() > 0.0 ? adaptive_l2.mean_l2() / plain_l2.mean_l2() : 0.0;

    // Control: with σ = 0 the defense is the identity.
    std::size_t control_n = std::min<std::size_t>(20, attempted), control_reverted = 0, control_plain = 0;
    DistanceMeans control_plain_l2, control_adaptive_l2;
    for (std::size_t i = 0; i < control_n; ++i) {
        const auto a = iterative_config(cfg, cfg.seed ^ i, cfg.attack.lambda);
        const AttackResult plain = iterative_attack(net, test.examples[i], test.labels[i], a);
        const AttackResult adaptive =
            adaptive_attack(net, test.examples[i], test.labels[i], a, test.shape, 0.0);
        if (plain.success) {
            ++control_plain;
            control_reverted += predict(net, identity.apply(plain.adversarial)) == test.labels[i];
        }
        if (plain.success && adaptive.success) {
            control_plain_l2.add(plain.distances);
            control_adaptive_l2.add(adaptive.distances);
        }
    }

    rep.body["dataset"] = test.name;
    rep.body["blur_sigma"] = cfg.blur_sigma;
    rep.body["attempted"] = attempted;
    rep.body["plain"] = {{"successes", plain_success},
                         {"reverted", reverted},
                         {"reverted_fraction", reverted_fraction},
                         {"records", "defense_plain_attacks.jsonl"}};
    rep.body["adaptive"] = {{"successes", adaptive_success},
                            {"records", "defense_adaptive_attacks.jsonl"}};
    rep.body["paired_successes"] = paired;
    rep.body["mean_l2_plain"] = plain_l2.mean_l2();
    rep.body["mean_l2_adaptive"] = adaptive_l2.mean_l2();
    rep.body["l2_ratio"] = ratio;
    rep.body["l2_increase_percent"] = 100.0 * (ratio - 1.0);
    rep.body["control_sigma0"] = {
        {"attempted", control_n},
        {"reverted_fraction", control_plain == 0 ? 0.0
                                                 : static_cast<double>(control_reverted) /
                                                       static_cast<double>(control_plain)},
        {"l2_ratio", control_plain_l2.mean_l2() > 0.0
                         ? control_adaptive_l2.mean_l2() / control_plain_l2.mean_l2()
                         : 0.0}};
    rep.check("in_domain", domain_ok);
    rep.check("l2_ratio_above_one", ratio > 1.0);
    rep.check("reverted_fraction_positive", reverted_fraction > 0.0);
    return rep;
}

RunReport cmd_saliency(Workspace& ws) {
    RunReport rep;
    const auto& cfg = ws.config();
    const auto& test = ws.data().test;
    const auto& shape = test.shape;
    json maps = json::array();
    for (std::size_t id : cfg.saliency_ids) {
        if (id >= test.size())
            throw Error(ErrorCode::BadImageId, "image id " + std::to_string(id) + " out of range (" +
                                                   std::to_string(test.size()) + " test images)");
        for (const auto& name : cfg.saliency_modes) {
            const SaliencyMode mode = parse_saliency_mode(name);
            const bool relu_rule = mode == SaliencyMode::guided || mode == SaliencyMode::modified;
            const Network& net = relu_rule ? ws.relu_classifier() : ws.classifier();
            const int cls = predict(net, test.examples[id]);
            const SaliencyMap m = compute_saliency(net, test.examples[id], cls, mode);
            const std::string stem = "saliency_" + std::to_string(id) + "_" + name;
            const std::size_t plane = shape.height * shape.width;
            // Channels are summed for display.
            Vector flat(plane, 0.0);
            for (std::size_t k = 0; k < m.values.size(); ++k) flat[k % plane] += m.values[k];
            write_pgm(ws.out_dir() / (stem + ".pgm"), shape.width, shape.height, positive_map(flat));
            write_signed_ppm(ws.out_dir() / (stem + "_signed.ppm"), shape.width, shape.height, flat);
            const auto nonzero = std::count_if(m.values.begin(), m.values.end(),
                                               [](double v) { return v != 0.0; });
            maps.push_back({{"id", id},
                            {"mode", name},
                            {"network", relu_rule ? "relu" : cfg.classifier.activation},
                            {"class", cls},
                            {"label", test.labels[id]},
                            {"nonzero", nonzero},
                            {"pgm", stem + ".pgm"},
                            {"ppm", stem + "_signed.ppm"}});
        }
    }
    rep.body["maps"] = maps;
    return rep;
}

RunReport cmd_eval(const std::filesystem::path& scores_csv, const std::filesystem::path& out_dir) {
    std::ifstream in(scores_csv);
    if (!in) throw Error(ErrorCode::FileNotFound, scores_csv.string());
    std::string line;
    if (!std::getline(in, line) || line != "id,source,label,score")
        throw Error(ErrorCode::BadFormat, scores_csv.string() + ": expected header id,source,label,score");
    std::map<std::string, std::pair<Vector, Vector>> by_source;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string id, source, label, score;
        if (!std::getline(ss, id, ',') || !std::getline(ss, source, ',') ||
            !std::getline(ss, label, ',') || !std::getline(ss, score))
            throw Error(ErrorCode::BadFormat, scores_csv.string() + ":" + std::to_string(lineno));
        double v = 0.0;
        try {
            v = std::stod(score);
        } catch (const std::exception&) {
            throw Error(ErrorCode::BadFormat, scores_csv.string() + ":" + std::to_string(lineno) +
                                                  ": bad score '" + score + "'");
        }
        auto& [pos, neg] = by_source[source];
        if (label == "adv")
            pos.push_back(v);
        else if (label == "clean")
            neg.push_back(v);
        else
            throw Error(ErrorCode::BadFormat, scores_csv.string() + ":" + std::to_string(lineno) +
                                                  ": label must be adv or clean");
    }
    RunReport rep;
    std::filesystem::create_directories(out_dir);
    for (const auto& [source, pools] : by_source) {
        const auto& [pos, neg] = pools;
        write_curve_csv(out_dir / ("eval_" + source + "_curve.csv"), roc_points(pos, neg));
        rep.body[source] = {{"auroc", auroc(pos, neg)},
                            {"aupr", aupr(pos, neg)},
                            {"positives", pos.size()},
                            {"negatives", neg.size()}};
    }
    return rep;
}

}  // namespace advdet
