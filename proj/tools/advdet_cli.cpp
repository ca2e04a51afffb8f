#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "advdet/experiment.hpp"

using namespace advdet;

namespace {

int run_report(Workspace& ws, const std::string& name, RunReport (*cmd)(Workspace&)) {
    const RunReport rep = cmd(ws);
    rep.write(ws, name);
    std::cout << rep.to_json(ws, false).dump(2) << '\n';
    if (!rep.ok()) {
        for (const auto& [check, passed] : rep.checks)
            if (!passed) std::cerr << "check failed: " << check << '\n';
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial image detection experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string data_dir;
    bool quiet = false;
    app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "override the config seed");
    app.add_option("--out", out_dir, "override the output directory");
    app.add_option("--data-dir", data_dir, "override the dataset path");
    app.add_flag("-q,--quiet", quiet, "no progress messages");

    struct Sub {
        const char* name;
        const char* help;
        RunReport (*cmd)(Workspace&);
    };
    const Sub subs[] = {
        {"train", "train the classifier and autoencoder", cmd_train},
        {"table1", "whitening detector against FGS and iterative attacks", cmd_table1},
        {"table2", "KL-barrier constrained attacks at several radii", cmd_table2},
        {"recon", "autoencoder reconstruction-error detector", cmd_recon},
        {"variance-evasion", "tail-variance constrained attack", cmd_variance_evasion},
        {"defense", "blur preprocessing defense and adaptive attack", cmd_defense},
        {"saliency", "saliency maps for selected test images", cmd_saliency},
    };
    std::vector<CLI::App*> handles;
    for (const auto& s : subs) handles.push_back(app.add_subcommand(s.name, s.help));

    std::vector<std::size_t> ids;
    std::vector<std::string> modes;
    handles.back()->add_option("--ids", ids, "test image ids");
    handles.back()->add_option("--modes", modes, "vanilla, guided, modified, gelu_modified");

    auto* eval = app.add_subcommand("eval", "AUROC/AUPR from a scores CSV");
    std::string scores;
    eval->add_option("scores", scores, "CSV with id,source,label,score")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (eval->parsed()) {
            const std::filesystem::path out = out_dir.empty() ? "." : out_dir;
            const RunReport rep = cmd_eval(scores, out);
            std::cout << rep.body.dump(2) << '\n';
            return 0;
        }
        ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{}
                                                   : ExperimentConfig::load(config_path);
        if (seed) cfg.seed = *seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (!data_dir.empty()) cfg.dataset.path = data_dir;
        if (!ids.empty()) cfg.saliency_ids = ids;
        if (!modes.empty()) cfg.saliency_modes = modes;
        Workspace ws(cfg);
        if (!quiet) ws.log = [](const std::string& m) { std::cerr << "[advdet] " << m << '\n'; };
        for (std::size_t i = 0; i < handles.size(); ++i)
            if (handles[i]->parsed()) return run_report(ws, subs[i].name, subs[i].cmd);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
