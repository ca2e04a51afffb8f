#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "advdet/common.hpp"
#include "advdet/nn.hpp"
#include "advdet/whiten.hpp"

namespace advdet {

enum class DetectorSource { whiten_var, msp, kl_uniform, recon_err };

std::string_view to_string(DetectorSource source);

/// Higher scores mean "more likely adversarial" for every source.
struct DetectorScore {
    std::size_t id = 0;
    double score = 0.0;
    DetectorSource source = DetectorSource::whiten_var;
};

DetectorScore score_whiten_var(const WhiteningModel& model, TailSpec tail, std::span<const double> x,
                               std::size_t id = 0);
/// −max softmax probability.
DetectorScore score_msp(const Network& net, std::span<const double> x, std::size_t id = 0);
/// −KL(p‖u).
DetectorScore score_kl_uniform(const Network& net, std::span<const double> x, std::size_t id = 0);
/// Mean absolute difference between x and its reconstruction.
DetectorScore score_recon(const AutoencoderNet& ae, std::span<const double> x, std::size_t id = 0);

struct Detector {
    DetectorSource source;
    std::function<double(std::span<const double>)> score;
};

Detector whiten_var_detector(const WhiteningModel& model, TailSpec tail);
Detector msp_detector(const Network& net);
Detector kl_uniform_detector(const Network& net);
Detector recon_detector(const AutoencoderNet& ae);

struct PoolScores {
    std::vector<DetectorScore> positive;  // adversarial
    std::vector<DetectorScore> negative;  // clean

    Vector positive_values() const;
    Vector negative_values() const;
};

/// Scores both pools in id order. Throws EmptyPool if either is empty.
PoolScores score_pool(const Detector& detector, std::span<const Vector> clean,
                      std::span<const Vector> adversarial);

/// CSV with header id,source,label,score (label adv|clean).
void write_scores_csv(const std::filesystem::path& path, const PoolScores& scores);

}  // namespace advdet
