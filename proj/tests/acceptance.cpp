// Acceptance suite: prints one PASS/FAIL line per criterion.
//
// Criteria 1-7 run the experiment commands on MNIST with the default
// configuration; 8-12 are self-contained oracle and property checks.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "advdet/attack.hpp"
#include "advdet/detect.hpp"
#include "advdet/experiment.hpp"
#include "advdet/metrics.hpp"
#include "advdet/saliency.hpp"
#include "test_util.hpp"

using namespace advdet;
using nlohmann::json;
using testutil::numeric_gradient;
using testutil::random_net;
using testutil::random_vector;
using testutil::relative_error;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double num(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

bool all_checks(const json& report) {
    return std::all_of(report["checks"].begin(), report["checks"].end(),
                       [](const json& c) { return c.get<bool>(); });
}

// ----- MNIST experiment criteria -----

class MnistRuns {
public:
    MnistRuns(fs::path data, fs::path out) {
        cfg_.dataset.path = data.string();
        cfg_.out_dir = out.string();
        available_ = mnist_available(data);
        if (available_) {
            ws_.emplace(cfg_);
            ws_->log = [](const std::string& m) { std::cerr << "  " << m << '\n'; };
        }
    }

    bool available() const { return available_; }

    const json& report(const std::string& name) {
        auto it = reports_.find(name);
        if (it != reports_.end()) return it->second;
        static const std::map<std::string, RunReport (*)(Workspace&)> cmds{
            {"table1", cmd_table1},   {"table2", cmd_table2},
            {"recon", cmd_recon},     {"variance_evasion", cmd_variance_evasion},
            {"defense", cmd_defense},
        };
        std::cerr << "running " << name << '\n';
        const RunReport rep = cmds.at(name)(*ws_);
        rep.write(*ws_, name);
        return reports_[name] = rep.to_json(*ws_, false);
    }

private:
    ExperimentConfig cfg_;
    bool available_ = false;
    std::optional<Workspace> ws_;
    std::map<std::string, json> reports_;
};

Outcome criterion1(MnistRuns& m) {
    const json& r = m.report("table1")["fgs"];
    if (r["whiten_var"].is_null()) return {false, "no accepted FGS adversarials"};
    const double a = num(r["whiten_var"]["auroc"]), p = num(r["whiten_var"]["aupr"]);
    return {a >= 99.0 && p >= 99.0,
            fmt("FGS whiten_var AUROC %.2f AUPR %.2f (%zu accepted)", a, p,
                r["accepted"].get<std::size_t>())};
}

Outcome criterion2(MnistRuns& m) {
    const json& r = m.report("table1")["iterative"];
    if (r["whiten_var"].is_null()) return {false, "no accepted iterative adversarials"};
    const double a = num(r["whiten_var"]["auroc"]);
    return {a >= 95.0, fmt("iterative whiten_var AUROC %.2f AUPR %.2f", a, num(r["whiten_var"]["aupr"]))};
}

Outcome criterion3(MnistRuns& m) {
    const json& t = m.report("table1");
    const double f = num(t["fgs"]["beyond_10_sigma"]);
    return {f >= 0.99, fmt("%.1f%% of FGS adversarials beyond mu+10sigma (mu %.3g, sigma %.3g)",
                           100.0 * f, num(t["clean_stats"]["mu"]), num(t["clean_stats"]["sigma"]))};
}

Outcome criterion4(MnistRuns& m) {
    const json& r = m.report("variance_evasion");
    const double s = num(r["constrained"]["success_rate"]);
    return {s <= 0.05 && all_checks(r),
            fmt("constrained success %.1f%% (%zu/%zu; unconstrained %.1f%%)", 100.0 * s,
                r["constrained"]["successes"].get<std::size_t>(),
                r["constrained"]["attempted"].get<std::size_t>(),
                100.0 * num(r["unconstrained"]["success_rate"]))};
}

Outcome criterion5(MnistRuns& m) {
    const json& r = m.report("recon")["recon_err"];
    const double a = num(r["auroc"]), p = num(r["aupr"]);
    return {a >= 85.0 && p >= 85.0, fmt("recon_err AUROC %.2f AUPR %.2f", a, p)};
}

Outcome criterion6(MnistRuns& m) {
    const json& t = m.report("table2");
    const json* inf = nullptr;
    const json* one = nullptr;
    for (const auto& row : t["rows"]) {
        if (row["radius_mult"] == "inf") inf = &row;
        if (row["radius_mult"].is_number() && row["radius_mult"].get<double>() == 1.0) one = &row;
    }
    if (inf == nullptr || one == nullptr) return {false, "table2 lacks the r=inf or r=1 row"};
    const double s_inf = num((*inf)["success_rate"]), s_one = num((*one)["success_rate"]);
    const double l2_inf = num((*inf)["mean_distances"]["l2"]);
    const double l2_one = num((*one)["mean_distances"]["l2"]);
    const bool l2_up = std::isfinite(l2_one) && l2_one > l2_inf;
    std::string l2_txt = std::isfinite(l2_one) ? fmt("%.3f", l2_one) : "undefined (no successes)";
    return {s_inf >= 0.95 && l2_up && s_one < s_inf,
            fmt("success r=inf %.0f%%, r=sigma %.0f%%; mean l2 r=inf %.3f, r=sigma ", 100.0 * s_inf,
                100.0 * s_one, l2_inf) + l2_txt};
}

Outcome criterion7(MnistRuns& m) {
    const json& r = m.report("defense");
    const double ratio = num(r["l2_ratio"]), rev = num(r["plain"]["reverted_fraction"]);
    return {ratio > 1.0 && rev > 0.0 && all_checks(r),
            fmt("adaptive/plain l2 ratio %.3f over %zu pairs, reverted %.1f%%", ratio,
                r["paired_successes"].get<std::size_t>(), 100.0 * rev)};
}

// ----- property criteria -----

double trapezoid_auroc(const Vector& pos, const Vector& neg) {
    std::vector<std::pair<double, int>> all;
    for (double p : pos) all.emplace_back(p, 1);
    for (double n : neg) all.emplace_back(n, 0);
    std::sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.first > b.first; });
    double area = 0.0, tpr = 0.0, fpr = 0.0;
    std::size_t tp = 0, fp = 0, i = 0;
    while (i < all.size()) {
        const double t = all[i].first;
        for (; i < all.size() && all[i].first == t; ++i) (all[i].second ? tp : fp) += 1;
        const double ntpr = static_cast<double>(tp) / pos.size();
        const double nfpr = static_cast<double>(fp) / neg.size();
        area += (nfpr - fpr) * (ntpr + tpr) / 2.0;
        tpr = ntpr;
        fpr = nfpr;
    }
    return 100.0 * area;
}

Outcome criterion8() {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<std::size_t> size(1, 50);
    std::uniform_int_distribution<int> level(0, 6);
    double worst = 0.0;
    bool symmetric = true;
    for (int t = 0; t < 200; ++t) {
        Vector pos(size(rng)), neg(size(rng));
        for (double& v : pos) v = level(rng) * 0.5;
        for (double& v : neg) v = level(rng) * 0.5;
        worst = std::max(worst, std::abs(auroc(pos, neg) - trapezoid_auroc(pos, neg)));
        symmetric = symmetric && auroc(pos, neg) + auroc(neg, pos) == 100.0;
    }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vector pos(5000), neg(5000);
    for (double& v : pos) v = u(rng);
    for (double& v : neg) v = u(rng);
    const double pr = aupr(pos, neg);
    return {worst <= 1e-9 && symmetric && std::abs(pr - 50.0) <= 5.0,
            fmt("max |rank - trapezoid| %.2g over 200 tied pools, symmetry %s, random AUPR %.2f",
                worst, symmetric ? "exact" : "broken", pr)};
}

Outcome criterion9() {
    std::mt19937_64 rng(9);
    double clf = 0.0, ae = 0.0, obj = 0.0;
    int clf_n = 0;
    for (Activation act : {Activation::gelu, Activation::relu}) {
        for (int t = 0; t < 10; ++t) {
            const Network net = random_net(300 + t, {8, 6, 5, 3}, act);
            const Vector x = random_vector(rng, 8, 0, 1);
            const auto lg = loss_and_grads(net, x, t % 3);
            const Vector fd = numeric_gradient(
                [&](const Vector& z) { return loss_and_grads(net, z, t % 3).loss; }, x);
            clf = std::max(clf, relative_error(lg.input_grad, fd));
            // one parameter block per case: first-layer weights
            Network probe = net;
            auto& w = probe.layers[0].weights.data();
            Vector an(w.size()), nm(w.size());
            for (std::size_t k = 0; k < w.size(); ++k) {
                const double keep = w[k];
                w[k] = keep + 1e-5;
                const double up = loss_and_grads(probe, x, t % 3).loss;
                w[k] = keep - 1e-5;
                const double down = loss_and_grads(probe, x, t % 3).loss;
                w[k] = keep;
                an[k] = lg.params.layers[0].weights.data()[k];
                nm[k] = (up - down) / 2e-5;
            }
            clf = std::max(clf, relative_error(an, nm));
            ++clf_n;
        }
    }
    for (int t = 0; t < 10; ++t) {
        const Network c = random_net(400 + t, {6, 5, 3}, Activation::gelu);
        const auto net = make_autoencoder(6, c, 5, 2, 500 + t);
        const Vector x = random_vector(rng, 6, 0, 1);
        Vector g;
        reconstruction_loss(net, x, &g);
        const Vector fd =
            numeric_gradient([&](const Vector& z) { return reconstruction_loss(net, z, nullptr); }, x);
        ae = std::max(ae, relative_error(g, fd));
    }
    const ImageShape shape{3, 3, 1};
    for (int t = 0; t < 10; ++t) {
        const Network net = random_net(600 + t, {9, 7, 4}, Activation::gelu);
        const Vector x0 = random_vector(rng, 9, 0.05, 0.95);
        Vector x = x0;
        for (double& v : x) v = std::clamp(v + random_vector(rng, 1, -0.05, 0.05)[0], 0.02, 0.98);
        auto stat = std::make_shared<KlUniformStatistic>(net);
        const double v = stat->value(x);
        const BarrierSpec barrier{stat, v * 1.1, std::abs(v) + 0.1, 1.0, 0.5};
        const BlurDefense defense(shape, 0.7);
        const auto o = attack_objective(net, x0, x, t % 4, 0.3, &barrier, &defense);
        const Vector fd = numeric_gradient(
            [&](const Vector& z) { return attack_objective(net, x0, z, t % 4, 0.3, &barrier, &defense).value; },
            x);
        obj = std::max(obj, relative_error(o.gradient, fd));
    }
    return {clf <= 1e-4 && ae <= 1e-4 && obj <= 1e-4,
            fmt("max rel. error: classifier %.2g (%d cases), autoencoder %.2g, attack objective %.2g",
                clf, clf_n, ae, obj)};
}

Outcome criterion10() {
    std::mt19937_64 rng(10);
    double recon = 0.0;
    for (int t = 0; t < 20; ++t) {
        const Matrix m = testutil::random_symmetric(rng, 12);
        const auto e = sym_eig(m);
        Matrix r(12, 12);
        for (std::size_t i = 0; i < 12; ++i)
            for (std::size_t j = 0; j < 12; ++j)
                for (std::size_t k = 0; k < 12; ++k)
                    r(i, j) += e.vectors(i, k) * e.values[k] * e.vectors(j, k);
        double diff = 0.0;
        for (std::size_t i = 0; i < m.data().size(); ++i)
            diff += std::pow(m.data()[i] - r.data()[i], 2);
        recon = std::max(recon, std::sqrt(diff) / m.frobenius_norm());
    }
    const std::size_t d = 15, n = 200;
    Dataset data;
    data.shape = {1, d, 1};
    Matrix mix(d, d);
    for (double& v : mix.data()) v = random_vector(rng, 1, -1, 1)[0];
    for (std::size_t i = 0; i < n; ++i) {
        data.examples.push_back(matvec(mix, random_vector(rng, d, 0, 1)));
        data.labels.push_back(0);
    }
    const auto train = center_data(data, {}).first;
    const auto model = fit_whitening(train, 1e-3);
    double cov_err = 0.0, zca_err = 0.0;
    Matrix cov(d, d);
    for (const auto& x : train.centered) {
        const Vector c = pca_whiten(model, x, true);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) cov(i, j) += c[i] * c[j] / static_cast<double>(n);
        const Vector z = zca_whiten(model, data.examples[&x - train.centered.data()]);
        const Vector u = matvec(model.components, pca_whiten(model, data.examples[&x - train.centered.data()]));
        for (std::size_t i = 0; i < d; ++i) zca_err = std::max(zca_err, std::abs(z[i] - u[i]));
    }
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double want = i == j ? model.eigenvalues[i] / (model.eigenvalues[i] + model.eps) : 0.0;
            cov_err = std::max(cov_err, std::abs(cov(i, j) - want));
        }
    return {cov_err <= 1e-6 && recon <= 1e-8 && zca_err <= 1e-10,
            fmt("whitened covariance err %.2g, eig reconstruction %.2g*|M|_F, zca vs U*pca %.2g",
                cov_err, recon, zca_err)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Report checks from the MNIST runs plus a synthetic pipeline run twice.
Outcome criterion11(MnistRuns& m, const fs::path& scratch) {
    std::vector<std::string> broken;
    if (m.available())
        for (const char* name : {"table1", "table2", "variance_evasion", "defense", "recon"})
            for (const auto& [check, ok] : m.report(name)["checks"].items())
                if (!ok.get<bool>()) broken.push_back(std::string(name) + "." + check);

    ExperimentConfig c;
    c.dataset.kind = "synthetic";
    c.dataset.synthetic_train = 400;
    c.dataset.synthetic_test = 200;
    c.dataset.synthetic_side = 10;
    c.dataset.synthetic_classes = 5;
    c.classifier.hidden = {32};
    c.classifier.epochs = 8;
    c.autoencoder.hidden = 32;
    c.autoencoder.bottleneck = 5;
    c.autoencoder.epochs = 3;
    c.attack.iterative_step = 0.01;
    c.attack.max_steps = 200;
    c.clean_pool = 60;
    c.adversarial_pool = 30;
    c.table2_examples = 20;
    c.evasion_examples = 10;
    c.defense_successes = 10;
    std::vector<std::string> texts[2];
    std::size_t compared = 0;
    for (int run = 0; run < 2; ++run) {
        const fs::path dir = scratch / ("determinism_" + std::to_string(run));
        fs::remove_all(dir);
        c.out_dir = dir.string();
        Workspace ws(c);
        for (auto cmd : {cmd_table1, cmd_table2, cmd_variance_evasion, cmd_recon, cmd_defense}) {
            const RunReport rep = cmd(ws);
            for (const auto& [check, ok] : rep.checks)
                if (!ok && check != "l2_ratio_above_one" && check != "reverted_fraction_positive")
                    broken.push_back("synthetic." + check);
            texts[run].push_back(rep.to_json(ws, false).dump());
        }
    }
    bool identical = texts[0] == texts[1];
    for (const auto& e : fs::directory_iterator(scratch / "determinism_0")) {
        const auto other = scratch / "determinism_1" / e.path().filename();
        identical = identical && fs::exists(other) && slurp(e.path()) == slurp(other);
        ++compared;
    }
    std::string detail = fmt("%zu report checks failing; %zu artifacts + 5 reports %s across reruns",
                             broken.size(), compared, identical ? "byte-identical" : "DIFFER");
    if (!m.available()) detail += " (MNIST report checks not run)";
    for (const auto& b : broken) detail += " " + b;
    return {broken.empty() && identical && m.available(), detail};
}

Network toy_221(double w) {
    NetworkSpec spec{{2, 2, 1}, {Activation::relu}, Head::linear_reconstruction, 0};
    Network net = make_network(spec);
    net.layers[0].weights.data() = {1.0, -1.0, 0.5, 2.0};
    net.layers[0].bias = {0.0, -2.0};
    net.layers[1].weights.data() = {3.0, w};
    net.layers[1].bias = {0.0};
    return net;
}

Outcome criterion12() {
    std::mt19937_64 rng(12);
    double fd_err = 0.0;
    for (int t = 0; t < 10; ++t) {
        const Network net = random_net(700 + t, {8, 6, 5, 3}, Activation::gelu);
        const Vector x = random_vector(rng, 8, 0, 1);
        const auto s = vanilla_saliency(net, x, t % 3);
        const Vector fd = numeric_gradient(
            [&](const Vector& z) { return logits(net, z)[static_cast<std::size_t>(t % 3)]; }, x);
        fd_err = std::max(fd_err, relative_error(s.values, fd));
    }
    bool binary = true;
    for (int t = 0; t < 20; ++t) {
        GateRecord gates;
        modified_saliency(random_net(800 + t, {10, 8, 7, 4}, Activation::relu),
                          random_vector(rng, 10, 0, 1), t % 4, &gates);
        for (const auto& layer : gates)
            for (double g : layer) binary = binary && (g == 0.0 || g == 1.0);
    }
    bool guided_eq = true;
    for (int t = 0; t < 10; ++t) {
        Network net = random_net(900 + t, {6, 5, 4, 3}, Activation::relu);
        for (auto& layer : net.layers) {
            for (double& w : layer.weights.data()) w = std::abs(w) + 0.01;
            for (double& b : layer.bias) b = std::abs(b) + 0.01;
        }
        const Vector x = random_vector(rng, 6, 0, 1);
        guided_eq = guided_eq && guided_backprop(net, x, 1).values == vanilla_saliency(net, x, 1).values;
    }
    // Hand traces: x=(1,.5) gives f=(.5,−.5); x=(1,1.5) gives f=(−.5,1.5).
    const bool hand =
        vanilla_saliency(toy_221(-2), Vector{1.0, 0.5}, 0).values == Vector{3.0, -3.0} &&
        guided_backprop(toy_221(-2), Vector{1.0, 0.5}, 0).values == Vector{3.0, -3.0} &&
        modified_saliency(toy_221(-2), Vector{1.0, 0.5}, 0).values == Vector{1.0, -1.0} &&
        guided_backprop(toy_221(-2), Vector{1.0, 1.5}, 0).values == Vector{0.0, 0.0} &&
        modified_saliency(toy_221(2), Vector{1.0, 1.5}, 0).values == Vector{0.5, 2.0};
    return {fd_err <= 1e-4 && binary && guided_eq && hand,
            fmt("vanilla FD rel. error %.2g, gates binary %s, guided==vanilla %s, hand traces %s",
                fd_err, binary ? "yes" : "no", guided_eq ? "yes" : "no", hand ? "match" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string data_dir = ADVDET_MNIST_DIR;
    std::string out_dir = "acceptance_out";
    std::vector<int> allow_fail;
    std::vector<int> only;
    app.add_option("--data-dir", data_dir, "MNIST IDX directory");
    app.add_option("--out", out_dir, "working directory for models and reports");
    app.add_option("--allow-fail", allow_fail,
                   "criteria whose FAIL does not change the exit status (documented known failures)");
    app.add_option("--only", only, "run only these criteria");
    CLI11_PARSE(app, argc, argv);

    fs::create_directories(out_dir);
    MnistRuns mnist(data_dir, fs::path(out_dir) / "mnist");
    // Lines also go to <out>/acceptance.txt, since ctest hides the output of passing tests.
    std::ofstream summary(fs::path(out_dir) / "acceptance.txt");
    auto emit = [&](const std::string& line) {
        std::cout << line << std::endl;
        summary << line << std::endl;
    };
    emit("data: " + (mnist.available() ? "MNIST at " + data_dir : "MNIST not found at " + data_dir));

    const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
        {1, [&] { return criterion1(mnist); }},
        {2, [&] { return criterion2(mnist); }},
        {3, [&] { return criterion3(mnist); }},
        {4, [&] { return criterion4(mnist); }},
        {5, [&] { return criterion5(mnist); }},
        {6, [&] { return criterion6(mnist); }},
        {7, [&] { return criterion7(mnist); }},
        {8, criterion8},
        {9, criterion9},
        {10, criterion10},
        {11, [&] { return criterion11(mnist, out_dir); }},
        {12, criterion12},
    };
    const std::set<int> allowed(allow_fail.begin(), allow_fail.end());
    const std::set<int> selected(only.begin(), only.end());
    int unexpected = 0;
    for (const auto& [id, run] : criteria) {
        if (!selected.empty() && !selected.count(id)) continue;
        Outcome o;
        if (id <= 7 && !mnist.available()) {
            o = {false, "MNIST data unavailable"};
        } else {
            try {
                o = run();
            } catch (const std::exception& e) {
                o = {false, std::string("error: ") + e.what()};
            }
        }
        std::string note;
        if (!o.pass && allowed.count(id)) note = " [known failure]";
        if (!o.pass && !allowed.count(id)) ++unexpected;
        emit(std::string(o.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(id) + ": " +
             o.detail + note);
    }
    return unexpected == 0 ? 0 : 1;
}
