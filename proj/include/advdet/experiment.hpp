#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "advdet/attack.hpp"
#include "advdet/dataio.hpp"
#include "advdet/nn.hpp"
#include "advdet/saliency.hpp"
#include "advdet/whiten.hpp"

namespace advdet {

struct ExperimentConfig {
    struct DatasetCfg {
        std::string kind = "mnist";  // mnist | cifar10 | synthetic
        std::string path = "data/mnist";
        std::size_t synthetic_train = 2000;
        std::size_t synthetic_test = 1000;
        std::size_t synthetic_side = 28;
        int synthetic_classes = 10;
        std::uint64_t synthetic_seed = 7;
    } dataset;

    struct ClassifierCfg {
        std::vector<std::size_t> hidden{256, 256};
        std::string activation = "gelu";
        std::size_t epochs = 5;
        std::size_t batch = 32;
    } classifier;

    struct AttackCfg {
        double fgs_step = 10.0 / 255.0;
        double iterative_step = 1.0 / 255.0;
        double lambda = 1e-3;
        double recon_lambda = 1.0;
        double confidence = 0.5;
        std::size_t max_steps = 1000;
        double barrier_weight = 1e-3;
        // Lower bound on the clean spread used for barrier intervals; a clean
        // statistic that is identically constant would leave an empty interval.
        double sigma_floor = 1e-12;
    } attack;

    struct AutoencoderCfg {
        std::size_t hidden = 256;
        std::size_t bottleneck = 10;
        std::size_t epochs = 20;
        std::size_t batch = 32;
    } autoencoder;

    std::size_t tail_start = 0;  // 0: dimension default
    double whiten_eps = 1e-8;
    std::size_t clean_pool = 500;
    std::size_t adversarial_pool = 500;
    std::size_t table2_examples = 100;
    std::vector<double> table2_radii{std::numeric_limits<double>::infinity(), 1.0, 0.5, 0.25};
    std::size_t evasion_examples = 100;
    std::size_t defense_successes = 100;
    double blur_sigma = 0.5;
    std::size_t dump_examples = 4;
    std::vector<std::size_t> saliency_ids{0};
    std::vector<std::string> saliency_modes{"vanilla", "guided", "modified", "gelu_modified"};

    std::uint64_t seed = 0;
    std::string out_dir = "out";

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    /// FNV-1a over the canonical JSON dump, out_dir excluded.
    std::string hash() const;
    void validate() const;
};

/// Lazily loaded data and models shared by the experiment commands. Trained
/// models are cached under out_dir, keyed by a hash of the settings that
/// determine them.
class Workspace {
public:
    explicit Workspace(ExperimentConfig cfg);

    const ExperimentConfig& config() const { return cfg_; }
    std::filesystem::path out_dir() const { return cfg_.out_dir; }

    const TrainTestSplit& data();
    const Network& classifier();
    /// ReLU network of the same shape, used by the ReLU-only saliency rules.
    const Network& relu_classifier();
    const WhiteningModel& whitening();
    const AutoencoderNet& autoencoder();
    TailSpec tail();

    /// Test images [0, clean_pool).
    std::vector<Vector> clean_pool();

    std::function<void(const std::string&)> log = [](const std::string&) {};

private:
    Network train_or_load(const NetworkSpec& spec, const std::string& tag);

    ExperimentConfig cfg_;
    std::optional<TrainTestSplit> data_;
    std::optional<Network> classifier_;
    std::optional<Network> relu_classifier_;
    std::optional<WhiteningModel> whitening_;
    std::optional<AutoencoderNet> autoencoder_;
};

/// Report object; `checks` holds named invariant checks, all of which must
/// hold for the command to succeed.
struct RunReport {
    nlohmann::json body = nlohmann::json::object();
    std::vector<std::pair<std::string, bool>> checks;

    bool ok() const;
    void check(const std::string& name, bool passed) { checks.emplace_back(name, passed); }
    /// Writes <out>/<name>.json with provenance and a timestamp that the
    /// config hash does not cover.
    void write(const Workspace& ws, const std::string& name) const;
    nlohmann::json to_json(const Workspace& ws, bool with_timestamp) const;
};

AttackConfig fgs_config(const ExperimentConfig& cfg, std::uint64_t seed);
AttackConfig iterative_config(const ExperimentConfig& cfg, std::uint64_t seed, double lambda);

RunReport cmd_train(Workspace& ws);
RunReport cmd_table1(Workspace& ws);
RunReport cmd_table2(Workspace& ws);
RunReport cmd_recon(Workspace& ws);
RunReport cmd_variance_evasion(Workspace& ws);
RunReport cmd_defense(Workspace& ws);
RunReport cmd_saliency(Workspace& ws);

/// Reads an id,source,label,score CSV and reports AUROC/AUPR per source.
RunReport cmd_eval(const std::filesystem::path& scores_csv, const std::filesystem::path& out_dir);

}  // namespace advdet
