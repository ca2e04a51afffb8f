#include "advdet/detect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "advdet/attack.hpp"

namespace advdet {
namespace {

DetectorScore checked(std::size_t id, double score, DetectorSource source) {
    if (!std::isfinite(score))
        throw Error(ErrorCode::NonFiniteActivation,
                    std::string(to_string(source)) + " score for example " + std::to_string(id) +
                        " is not finite");
    return {id, score, source};
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string_view to_string(DetectorSource source) {
    switch (source) {
        case DetectorSource::whiten_var: return "whiten_var";
        case DetectorSource::msp: return "msp";
        case DetectorSource::kl_uniform: return "kl_uniform";
        case DetectorSource::recon_err: return "recon_err";
    }
    return "unknown";
}

DetectorScore score_whiten_var(const WhiteningModel& model, TailSpec tail, std::span<const double> x,
                               std::size_t id) {
    return checked(id, tail_variance(pca_whiten(model, x), tail), DetectorSource::whiten_var);
}

DetectorScore score_msp(const Network& net, std::span<const double> x, std::size_t id) {
    const Vector p = forward(net, x).probs;
    return checked(id, -*std::max_element(p.begin(), p.end()), DetectorSource::msp);
}

DetectorScore score_kl_uniform(const Network& net, std::span<const double> x, std::size_t id) {
    return checked(id, -kl_from_uniform(forward(net, x).probs), DetectorSource::kl_uniform);
}

DetectorScore score_recon(const AutoencoderNet& ae, std::span<const double> x, std::size_t id) {
    const Vector r = reconstruct(ae, x);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(x[i] - r[i]);
    return checked(id, s / static_cast<double>(x.size()), DetectorSource::recon_err);
}

Detector whiten_var_detector(const WhiteningModel& model, TailSpec tail) {
    return {DetectorSource::whiten_var,
            [&model, tail](std::span<const double> x) { return score_whiten_var(model, tail, x).score; }};
}

Detector msp_detector(const Network& net) {
    return {DetectorSource::msp, [&net](std::span<const double> x) { return score_msp(net, x).score; }};
}

Detector kl_uniform_detector(const Network& net) {
    return {DetectorSource::kl_uniform,
            [&net](std::span<const double> x) { return score_kl_uniform(net, x).score; }};
}

Detector recon_detector(const AutoencoderNet& ae) {
    return {DetectorSource::recon_err,
            [&ae](std::span<const double> x) { return score_recon(ae, x).score; }};
}

Vector PoolScores::positive_values() const {
    Vector v;
    for (const auto& s : positive) v.push_back(s.score);
    return v;
}

Vector PoolScores::negative_values() const {
    Vector v;
    for (const auto& s : negative) v.push_back(s.score);
    return v;
}

PoolScores score_pool(const Detector& detector, std::span<const Vector> clean,
                      std::span<const Vector> adversarial) {
    if (clean.empty() || adversarial.empty())
        throw Error(ErrorCode::EmptyPool, std::string(to_string(detector.source)) + ": " +
                                              (clean.empty() ? "clean" : "adversarial") +
                                              " pool is empty");
    PoolScores out;
    for (std::size_t i = 0; i < adversarial.size(); ++i)
        out.positive.push_back(checked(i, detector.score(adversarial[i]), detector.source));
    for (std::size_t i = 0; i < clean.size(); ++i)
        out.negative.push_back(checked(i, detector.score(clean[i]), detector.source));
    return out;
}

void write_scores_csv(const std::filesystem::path& path, const PoolScores& scores) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::FileNotFound, "cannot write " + path.string());
    out << "id,source,label,score\n";
    auto emit = [&](const std::vector<DetectorScore>& rows, const char* label) {
        for (const auto& s : rows)
            out << s.id << ',' << to_string(s.source) << ',' << label << ','
                << format_double(s.score) << '\n';
    };
    emit(scores.positive, "adv");
    emit(scores.negative, "clean");
}

}  // namespace advdet
