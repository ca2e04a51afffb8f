#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace advdet {

struct CurvePoint {
    double threshold = 0.0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;
    double tpr = 0.0;
    double fpr = 0.0;
    double precision = 1.0;
    double recall = 0.0;
};

/// Percentage of (pos, neg) pairs ordered correctly, ties counting one half.
double auroc(std::span<const double> pos, std::span<const double> neg);

/// Step-integrated area under the precision-recall curve, in percent.
double aupr(std::span<const double> pos, std::span<const double> neg);

/// Threshold sweep from +∞ down through every distinct score; a score is
/// flagged positive when it is ≥ the threshold. The first point is (0, 0)
/// and the last is (1, 1).
std::vector<CurvePoint> roc_points(std::span<const double> pos, std::span<const double> neg);
std::vector<CurvePoint> pr_points(std::span<const double> pos, std::span<const double> neg);

/// Header threshold,tp,fp,tn,fn,tpr,fpr,precision,recall.
void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> points);

}  // namespace advdet
