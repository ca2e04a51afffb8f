#include "advdet/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace advdet {
namespace {

constexpr int kMaxHalvings = 10;

struct CeValue {
    double loss = 0.0;
    Vector grad;
    Vector probs;
};

// Cross-entropy toward `target` and its input gradient, without parameter grads.
CeValue cross_entropy(const Network& net, std::span<const double> x, int target) {
    auto fwd = forward(net, x);
    const double m = *std::max_element(fwd.logits.begin(), fwd.logits.end());
    double lse = 0.0;
    for (double z : fwd.logits) lse += std::exp(z - m);
    CeValue out;
    out.loss = m + std::log(lse) - fwd.logits[static_cast<std::size_t>(target)];
    Vector g = fwd.probs;
    g[static_cast<std::size_t>(target)] -= 1.0;
    out.grad = backward(net, fwd.trace, g, nullptr);
    out.probs = std::move(fwd.probs);
    return out;
}

Vector classify(const Network& net, std::span<const double> x, const BlurDefense* defense) {
    if (defense == nullptr) return forward(net, x).probs;
    const Vector y = defense->apply(x);
    return forward(net, y).probs;
}

int argmax(std::span<const double> v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_input(const Network& net, std::span<const double> x, int label) {
    require_dim(x.size(), net.input_dim(), "attack input");
    if (net.spec.head != Head::softmax_classifier)
        throw Error(ErrorCode::InvalidArgument, "attacks need a softmax classifier");
    if (label < 0 || static_cast<std::size_t>(label) >= net.output_dim())
        throw Error(ErrorCode::InvalidArgument, "label " + std::to_string(label) + " out of range");
}

AttackResult finish(std::span<const double> x0, Vector adv, int target, double prob,
                    bool success, std::size_t steps, const BarrierSpec* barrier) {
    AttackResult r;
    r.distances = perturbation_norms(x0, adv);
    r.adversarial = std::move(adv);
    r.target = target;
    r.final_target_prob = prob;
    r.success = success;
    r.steps_used = steps;
    if (barrier != nullptr) r.final_statistic = barrier->statistic->value(r.adversarial);
    return r;
}

AttackResult run_iterative(const Network& net, std::span<const double> x0, int label,
                           const AttackConfig& cfg, const BlurDefense* defense) {
    cfg.validate();
    check_input(net, x0, label);
    if (cfg.kind != AttackKind::iterative)
        throw Error(ErrorCode::InvalidArgument, "iterative attack given a non-iterative config");
    const BarrierSpec* barrier = cfg.barrier ? &*cfg.barrier : nullptr;
    if (barrier != nullptr && barrier->statistic == nullptr)
        throw Error(ErrorCode::InvalidArgument, "barrier has no statistic");

    std::mt19937_64 rng(cfg.seed);
    const Vector p0 = classify(net, x0, defense);
    const int classes = static_cast<int>(p0.size());
    const int target = choose_target(rng, classes, label, argmax(p0), cfg.target);

    if (barrier != nullptr) {
        const double v0 = barrier->statistic->value(x0);
        if (!barrier->inside(v0))
            throw Error(ErrorCode::BarrierInfeasible,
                        "clean " + barrier->statistic->name() + " " + std::to_string(v0) +
                            " outside (" + std::to_string(barrier->lower()) + ", " +
                            std::to_string(barrier->upper()) + ")");
    }

    Vector x(x0.begin(), x0.end());
    double prob = p0[static_cast<std::size_t>(target)];
    if (prob >= cfg.confidence) return finish(x0, x, target, prob, true, 0, barrier);

    const std::size_t d = x.size();
    Vector y(d);
    std::size_t steps = 0;
    bool success = false;
    for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
        const auto obj = attack_objective(net, x0, x, target, 0.0, barrier, defense);
        double alpha = cfg.step;
        bool accepted = false;
        for (int tries = 0; tries <= kMaxHalvings; ++tries, alpha *= 0.5) {
            // sign step on the loss, then the exact proximal map of α·λ‖· − x0‖²
            const double shrink = 1.0 / (1.0 + 2.0 * cfg.lambda * alpha);
            for (std::size_t j = 0; j < d; ++j) {
                const double moved =
                    std::clamp(x[j] - alpha * sign(obj.gradient[j]), cfg.clip.lo, cfg.clip.hi);
                y[j] = x0[j] + (moved - x0[j]) * shrink;
            }
            if (barrier == nullptr || barrier->inside(barrier->statistic->value(y))) {
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
        x.swap(y);
        steps = step;
        prob = classify(net, x, defense)[static_cast<std::size_t>(target)];
        if (prob >= cfg.confidence) {
            success = true;
            break;
        }
    }
    return finish(x0, std::move(x), target, prob, success, steps, barrier);
}

// Normalised 1-D taps k(t) = exp(−t²/2σ²) for |t| ≤ ⌈3σ⌉.
Vector gaussian_taps(double sigma) {
    if (!(sigma > 0.0)) return {1.0};
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    Vector k(static_cast<std::size_t>(2 * radius + 1));
    for (int t = -radius; t <= radius; ++t)
        k[static_cast<std::size_t>(t + radius)] = std::exp(-0.5 * t * t / (sigma * sigma));
    return k;
}

}  // namespace

double kl_from_uniform(std::span<const double> probs) {
    if (probs.empty()) throw Error(ErrorCode::InvalidArgument, "empty probability vector");
    double s = std::log(static_cast<double>(probs.size()));
    for (double p : probs)
        if (p > 0.0) s += p * std::log(p);
    return s;
}

double KlUniformStatistic::value(std::span<const double> x) const {
    return kl_from_uniform(forward(net_, x).probs);
}

double KlUniformStatistic::value_and_gradient(std::span<const double> x, Vector& grad) const {
    const auto fwd = forward(net_, x);
    const Vector& p = fwd.probs;
    double plogp = 0.0;
    for (double v : p)
        if (v > 0.0) plogp += v * std::log(v);
    // ∂KL/∂z_k = p_k (log p_k − Σ p log p)
    Vector dz(p.size());
    for (std::size_t k = 0; k < p.size(); ++k)
        dz[k] = p[k] > 0.0 ? p[k] * (std::log(p[k]) - plogp) : 0.0;
    grad = backward(net_, fwd.trace, dz, nullptr);
    return std::log(static_cast<double>(p.size())) + plogp;
}

bool BarrierSpec::unbounded() const { return std::isinf(radius_mult); }
double BarrierSpec::lower() const { return mu - radius_mult * sigma; }
double BarrierSpec::upper() const { return mu + radius_mult * sigma; }

bool BarrierSpec::inside(double value) const {
    if (!std::isfinite(value)) return false;
    return unbounded() || (value > lower() && value < upper());
}

void BarrierSpec::validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
        throw Error(ErrorCode::InvalidArgument, "barrier sigma must be finite and > 0");
    if (!(radius_mult > 0.0))
        throw Error(ErrorCode::InvalidArgument, "barrier radius_mult must be > 0 or infinite");
    if (!(weight >= 0.0) || !std::isfinite(weight))
        throw Error(ErrorCode::InvalidArgument, "barrier weight must be finite and >= 0");
    if (!std::isfinite(mu)) throw Error(ErrorCode::InvalidArgument, "barrier mu is not finite");
}

BarrierValue barrier_penalty(const BarrierSpec& spec, double value) {
    spec.validate();
    if (spec.unbounded()) return {};
    if (!spec.inside(value))
        throw Error(ErrorCode::OutOfInterval,
                    "value " + std::to_string(value) + " outside (" + std::to_string(spec.lower()) +
                        ", " + std::to_string(spec.upper()) + ")");
    const double a = spec.upper() - value;
    const double b = value - spec.lower();
    return {spec.weight * (-std::log(a) - std::log(b)), spec.weight * (1.0 / a - 1.0 / b)};
}

void AttackConfig::validate() const {
    // A zero FGS step is allowed as the degenerate no-op.
    const bool step_ok = kind == AttackKind::fgs ? step >= 0.0 : step > 0.0;
    if (!step_ok || !std::isfinite(step))
        throw Error(ErrorCode::InvalidArgument, "attack step must be finite and > 0");
    if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda must be >= 0");
    if (!(confidence > 0.0 && confidence < 1.0))
        throw Error(ErrorCode::InvalidArgument, "confidence must lie in (0, 1)");
    if (max_steps < 1) throw Error(ErrorCode::InvalidArgument, "max_steps must be >= 1");
    if (!(clip.lo < clip.hi)) throw Error(ErrorCode::InvalidArgument, "empty clip interval");
    if (barrier) {
        if (kind != AttackKind::iterative)
            throw Error(ErrorCode::InvalidArgument, "barriers need the iterative attack");
        barrier->validate();
    }
}

Distances perturbation_norms(std::span<const double> clean, std::span<const double> adversarial) {
    require_dim(adversarial.size(), clean.size(), "adversarial");
    Distances d;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        const double v = std::abs(adversarial[i] - clean[i]);
        d.l1 += v;
        d.l2 += v * v;
        d.linf = std::max(d.linf, v);
    }
    d.l2 = std::sqrt(d.l2);
    return d;
}

int choose_target(std::mt19937_64& rng, int classes, int true_label, int predicted,
                  const TargetRule& rule) {
    if (rule.kind == TargetRule::Kind::fixed) {
        if (rule.fixed_class < 0 || rule.fixed_class >= classes)
            throw Error(ErrorCode::InvalidArgument, "fixed target class out of range");
        return rule.fixed_class;
    }
    if (classes < 2) throw Error(ErrorCode::InvalidArgument, "need at least two classes");
    std::uniform_int_distribution<int> pick(0, classes - 2);
    auto draw = [&] {
        const int t = pick(rng);
        return t >= true_label ? t + 1 : t;
    };
    int t = draw();
    if (t == predicted) t = draw();
    return t;
}

BlurDefense::BlurDefense(ImageShape shape, double sigma)
    : shape_(shape), sigma_(sigma), kernel_(gaussian_taps(sigma)) {
    if (shape.size() == 0) throw Error(ErrorCode::InvalidArgument, "empty image shape");
    if (sigma < 0.0 || !std::isfinite(sigma))
        throw Error(ErrorCode::InvalidArgument, "blur sigma must be finite and >= 0");
}

void BlurDefense::blur(std::span<double> plane, bool transpose) const {
    const int radius = static_cast<int>(kernel_.size() / 2);
    if (radius == 0) return;
    const std::size_t h = shape_.height;
    const std::size_t w = shape_.width;
    // One pass along a line of n samples with stride s: out_i = Σ_t k(t) in_{i+t} / Z_i,
    // Z_i summing the taps that land inside the line. The transpose scatters instead.
    Vector in;
    Vector out;
    auto pass = [&](std::size_t n, std::size_t lines, std::size_t line_stride, std::size_t s) {
        in.resize(n);
        out.resize(n);
        for (std::size_t line = 0; line < lines; ++line) {
            double* base = plane.data() + line * line_stride;
            for (std::size_t i = 0; i < n; ++i) in[i] = base[i * s];
            std::fill(out.begin(), out.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const int lo = std::max(-radius, -static_cast<int>(i));
                const int hi = std::min(radius, static_cast<int>(n - 1 - i));
                double z = 0.0;
                for (int t = lo; t <= hi; ++t) z += kernel_[static_cast<std::size_t>(t + radius)];
                for (int t = lo; t <= hi; ++t) {
                    const double k = kernel_[static_cast<std::size_t>(t + radius)] / z;
                    const std::size_t j = static_cast<std::size_t>(static_cast<int>(i) + t);
                    if (transpose)
                        out[j] += k * in[i];
                    else
                        out[i] += k * in[j];
                }
            }
            for (std::size_t i = 0; i < n; ++i) base[i * s] = out[i];
        }
    };
    if (!transpose) {
        pass(w, h, w, 1);  // along rows
        pass(h, w, 1, w);  // along columns
    } else {
        pass(h, w, 1, w);
        pass(w, h, w, 1);
    }
}

Vector BlurDefense::apply(std::span<const double> x) const {
    require_dim(x.size(), shape_.size(), "preprocess input");
    // σ = 0 is the identity on the data domain; the chain below would agree in
    // value but its derivative vanishes at black pixels.
    if (sigma_ == 0.0) {
        Vector out(x.begin(), x.end());
        for (double& v : out) v = std::clamp(v, 0.0, 1.0);
        return out;
    }
    Vector u(x.size());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = x[i] * x[i];
    const std::size_t plane = shape_.height * shape_.width;
    for (std::size_t c = 0; c < shape_.channels; ++c)
        blur(std::span<double>(u).subspan(c * plane, plane), false);
    for (double& v : u) v = std::clamp(std::sqrt(std::max(v, 0.0)), 0.0, 1.0);
    return u;
}

Vector BlurDefense::vjp(std::span<const double> x, std::span<const double> g) const {
    require_dim(g.size(), shape_.size(), "preprocess output gradient");
    if (sigma_ == 0.0) {
        require_dim(x.size(), shape_.size(), "preprocess input");
        return Vector(g.begin(), g.end());
    }
    const Vector y = apply(x);
    // d sqrt(u)/du = 1/(2y); taken as 0 where y = 0
    Vector h(y.size());
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = y[i] > 0.0 ? g[i] / (2.0 * y[i]) : 0.0;
    const std::size_t plane = shape_.height * shape_.width;
    for (std::size_t c = 0; c < shape_.channels; ++c)
        blur(std::span<double>(h).subspan(c * plane, plane), true);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] *= 2.0 * x[i];
    return h;
}

Vector preprocess_defense(std::span<const double> x, ImageShape shape, double blur_sigma) {
    return BlurDefense(shape, blur_sigma).apply(x);
}

ObjectiveValue attack_objective(const Network& net, std::span<const double> x0,
                                std::span<const double> x, int target, double lambda,
                                const BarrierSpec* barrier, const BlurDefense* defense) {
    require_dim(x.size(), x0.size(), "attack iterate");
    ObjectiveValue out;
    if (defense != nullptr) {
        const Vector y = defense->apply(x);
        auto ce = cross_entropy(net, y, target);
        out.value = ce.loss;
        out.gradient = defense->vjp(x, ce.grad);
    } else {
        auto ce = cross_entropy(net, x, target);
        out.value = ce.loss;
        out.gradient = std::move(ce.grad);
    }
    if (lambda != 0.0) {
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double diff = x[j] - x0[j];
            out.value += lambda * diff * diff;
            out.gradient[j] += 2.0 * lambda * diff;
        }
    }
    if (barrier != nullptr && !barrier->unbounded()) {
        Vector sg;
        const double v = barrier->statistic->value_and_gradient(x, sg);
        const auto b = barrier_penalty(*barrier, v);
        out.value += b.penalty;
        for (std::size_t j = 0; j < x.size(); ++j) out.gradient[j] += b.derivative * sg[j];
    }
    return out;
}

AttackResult fgs_attack(const Network& net, std::span<const double> x, int label,
                        const AttackConfig& cfg) {
    cfg.validate();
    check_input(net, x, label);
    if (cfg.kind != AttackKind::fgs)
        throw Error(ErrorCode::InvalidArgument, "fgs attack given a non-fgs config");
    std::mt19937_64 rng(cfg.seed);
    const auto clean = forward(net, x);
    const int target =
        choose_target(rng, static_cast<int>(clean.probs.size()), label, argmax(clean.probs),
                      cfg.target);
    const auto ce = cross_entropy(net, x, target);
    Vector adv(x.size());
    for (std::size_t j = 0; j < x.size(); ++j)
        adv[j] = std::clamp(x[j] - cfg.step * sign(ce.grad[j]), cfg.clip.lo, cfg.clip.hi);
    const double prob = forward(net, adv).probs[static_cast<std::size_t>(target)];
    return finish(x, std::move(adv), target, prob, prob >= cfg.confidence, 1, nullptr);
}

AttackResult iterative_attack(const Network& net, std::span<const double> x, int label,
                              const AttackConfig& cfg) {
    return run_iterative(net, x, label, cfg, nullptr);
}

CleanStats estimate_clean_stats(const ScalarStatistic& statistic,
                                std::span<const Vector> clean_examples) {
    if (clean_examples.size() < 2)
        throw Error(ErrorCode::TooFewExamples, "clean statistics need at least 2 examples, got " +
                                                   std::to_string(clean_examples.size()));
    Vector v;
    v.reserve(clean_examples.size());
    for (const auto& x : clean_examples) v.push_back(statistic.value(x));
    const double n = static_cast<double>(v.size());
    const double mu = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double s : v) ss += (s - mu) * (s - mu);
    return {mu, std::sqrt(ss / n)};
}

AttackResult constrained_variance_attack(const Network& net, const WhiteningModel& model,
                                         TailSpec tail, std::span<const double> x, int label,
                                         AttackConfig cfg) {
    if (!cfg.barrier)
        throw Error(ErrorCode::InvalidArgument, "variance attack needs barrier mu/sigma");
    cfg.barrier->statistic = std::make_shared<TailVarianceStatistic>(model, tail);
    cfg.barrier->radius_mult = 1.0;
    return run_iterative(net, x, label, cfg, nullptr);
}

AttackResult constrained_kl_attack(const Network& net, std::span<const double> x, int label,
                                   AttackConfig cfg) {
    if (!cfg.barrier) throw Error(ErrorCode::InvalidArgument, "KL attack needs barrier mu/sigma");
    cfg.barrier->statistic = std::make_shared<KlUniformStatistic>(net);
    return run_iterative(net, x, label, cfg, nullptr);
}

AttackResult adaptive_attack(const Network& net, std::span<const double> x, int label,
                             const AttackConfig& cfg, ImageShape shape, double blur_sigma) {
    const BlurDefense defense(shape, blur_sigma);
    return run_iterative(net, x, label, cfg, &defense);
}

}  // namespace advdet
