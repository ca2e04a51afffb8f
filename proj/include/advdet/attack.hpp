#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>

#include "advdet/common.hpp"
#include "advdet/dataio.hpp"
#include "advdet/nn.hpp"
#include "advdet/whiten.hpp"

namespace advdet {

enum class AttackKind { fgs, iterative };

struct TargetRule {
    enum class Kind { random_other, fixed };
    Kind kind = Kind::random_other;
    int fixed_class = 0;

    static TargetRule random_other() { return {}; }
    static TargetRule fixed(int cls) { return {Kind::fixed, cls}; }
};

/// A differentiable scalar summary of an input that a barrier can constrain.
class ScalarStatistic {
public:
    virtual ~ScalarStatistic() = default;
    virtual double value(std::span<const double> x) const = 0;
    virtual double value_and_gradient(std::span<const double> x, Vector& grad) const = 0;
    virtual std::string name() const = 0;
};

class TailVarianceStatistic final : public ScalarStatistic {
public:
    TailVarianceStatistic(const WhiteningModel& model, TailSpec spec) : projector_(model, spec) {}
    double value(std::span<const double> x) const override { return projector_.value(x); }
    double value_and_gradient(std::span<const double> x, Vector& grad) const override {
        return projector_.value_and_gradient(x, grad);
    }
    std::string name() const override { return "tail_variance"; }

private:
    TailVarianceProjector projector_;
};

/// KL(softmax(f(x)) ‖ uniform). Holds a reference; the network must outlive it.
class KlUniformStatistic final : public ScalarStatistic {
public:
    explicit KlUniformStatistic(const Network& net) : net_(net) {}
    double value(std::span<const double> x) const override;
    double value_and_gradient(std::span<const double> x, Vector& grad) const override;
    std::string name() const override { return "kl_uniform"; }

private:
    const Network& net_;
};

/// log K + Σ pᵢ log pᵢ, natural log, with 0·log 0 = 0.
double kl_from_uniform(std::span<const double> probs);

/// Keeps a statistic inside the open interval μ ± r·σ via
/// weight·[−log(μ + rσ − v) − log(v − μ + rσ)]. An infinite radius disables it.
struct BarrierSpec {
    std::shared_ptr<const ScalarStatistic> statistic;
    double mu = 0.0;
    double sigma = 1.0;
    double radius_mult = 1.0;
    double weight = 1e-3;

    bool unbounded() const;
    double lower() const;
    double upper() const;
    bool inside(double value) const;
    void validate() const;
};

struct BarrierValue {
    double penalty = 0.0;
    double derivative = 0.0;
};

/// Throws OutOfInterval when `value` is not strictly inside the interval.
BarrierValue barrier_penalty(const BarrierSpec& spec, double value);

struct AttackConfig {
    AttackKind kind = AttackKind::iterative;
    double step = 1.0 / 255.0;
    double lambda = 1e-3;
    std::size_t max_steps = 1000;
    double confidence = 0.5;
    PixelRange clip{0.0, 1.0};
    TargetRule target{};
    std::optional<BarrierSpec> barrier;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Distances {
    double l1 = 0.0;
    double l2 = 0.0;
    double linf = 0.0;
};

Distances perturbation_norms(std::span<const double> clean, std::span<const double> adversarial);

struct AttackResult {
    Vector adversarial;
    bool success = false;
    std::size_t steps_used = 0;
    Distances distances;
    int target = -1;
    double final_target_prob = 0.0;
    std::optional<double> final_statistic;
};

/// Uniform over classes other than `true_label`; one redraw if the pick
/// equals the model's current prediction.
int choose_target(std::mt19937_64& rng, int classes, int true_label, int predicted,
                  const TargetRule& rule);

/// Square, Gaussian-blur, square-root defense on the image grid. The kernel
/// is truncated at radius ⌈3σ⌉ and renormalised at the borders.
class BlurDefense {
public:
    BlurDefense(ImageShape shape, double sigma);

    Vector apply(std::span<const double> x) const;
    /// Vector-Jacobian product: gradient of ⟨g, apply(x)⟩ with respect to x.
    Vector vjp(std::span<const double> x, std::span<const double> g) const;

    double sigma() const { return sigma_; }
    const ImageShape& shape() const { return shape_; }

private:
    void blur(std::span<double> plane, bool transpose) const;

    ImageShape shape_;
    double sigma_;
    Vector kernel_;  // taps for offsets −R..R
};

Vector preprocess_defense(std::span<const double> x, ImageShape shape, double blur_sigma);

struct ObjectiveValue {
    double value = 0.0;
    Vector gradient;
};

/// CE(f(pre(x)), target) + λ‖x − x0‖² + barrier(stat(x)); `barrier` and
/// `defense` may be null.
ObjectiveValue attack_objective(const Network& net, std::span<const double> x0,
                                std::span<const double> x, int target, double lambda,
                                const BarrierSpec* barrier, const BlurDefense* defense);

/// One targeted sign step x − step·sign(∇CE), clipped.
AttackResult fgs_attack(const Network& net, std::span<const double> x, int label,
                        const AttackConfig& cfg);

/// Proximal sign descent on CE-to-target + λ‖x′ − x‖² (+ barrier), clipped
/// after every step, stopping at the confidence threshold or max_steps.
/// Throws BarrierInfeasible if the clean statistic starts outside the interval.
AttackResult iterative_attack(const Network& net, std::span<const double> x, int label,
                              const AttackConfig& cfg);

struct CleanStats {
    double mu = 0.0;
    double sigma = 0.0;
};

/// Mean and population standard deviation of a statistic over clean inputs.
CleanStats estimate_clean_stats(const ScalarStatistic& statistic,
                                std::span<const Vector> clean_examples);

/// Iterative attack under a tail-variance barrier of radius 1σ. `cfg.barrier`
/// supplies μ, σ and the weight; its statistic is replaced.
AttackResult constrained_variance_attack(const Network& net, const WhiteningModel& model,
                                         TailSpec tail, std::span<const double> x, int label,
                                         AttackConfig cfg);

/// Iterative attack under a KL-from-uniform barrier; `cfg.barrier` supplies
/// μ, σ, radius and weight.
AttackResult constrained_kl_attack(const Network& net, std::span<const double> x, int label,
                                   AttackConfig cfg);

/// Iterative attack through the blur defense; success is judged on the
/// preprocessed image.
AttackResult adaptive_attack(const Network& net, std::span<const double> x, int label,
                             const AttackConfig& cfg, ImageShape shape, double blur_sigma);

}  // namespace advdet
