#include "advdet/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>

#include "advdet/common.hpp"

namespace advdet {
namespace {

void require_pools(std::span<const double> pos, std::span<const double> neg) {
    if (pos.empty() || neg.empty())
        throw Error(ErrorCode::EmptyPool,
                    std::string(pos.empty() ? "positive" : "negative") + " score pool is empty");
}

std::vector<CurvePoint> sweep(std::span<const double> pos, std::span<const double> neg) {
    require_pools(pos, neg);
    struct Item {
        double score;
        bool positive;
    };
    std::vector<Item> items;
    items.reserve(pos.size() + neg.size());
    for (double s : pos) items.push_back({s, true});
    for (double s : neg) items.push_back({s, false});
    std::sort(items.begin(), items.end(),
              [](const Item& a, const Item& b) { return a.score > b.score; });

    const std::size_t np = pos.size();
    const std::size_t nn = neg.size();
    auto point = [&](double threshold, std::size_t tp, std::size_t fp) {
        CurvePoint c;
        c.threshold = threshold;
        c.tp = tp;
        c.fp = fp;
        c.fn = np - tp;
        c.tn = nn - fp;
        c.tpr = static_cast<double>(tp) / static_cast<double>(np);
        c.fpr = static_cast<double>(fp) / static_cast<double>(nn);
        c.precision = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
        c.recall = c.tpr;
        return c;
    };
    std::vector<CurvePoint> out{point(std::numeric_limits<double>::infinity(), 0, 0)};
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (std::size_t i = 0; i < items.size();) {
        const double t = items[i].score;
        for (; i < items.size() && items[i].score == t; ++i) (items[i].positive ? tp : fp) += 1;
        out.push_back(point(t, tp, fp));
    }
    return out;
}

}  // namespace

double auroc(std::span<const double> pos, std::span<const double> neg) {
    require_pools(pos, neg);
    std::vector<double> sorted(neg.begin(), neg.end());
    std::sort(sorted.begin(), sorted.end());
    // Count in half-pairs so ties stay integral.
    unsigned long long half_pairs = 0;
    for (double p : pos) {
        const auto lo = std::lower_bound(sorted.begin(), sorted.end(), p);
        const auto hi = std::upper_bound(lo, sorted.end(), p);
        half_pairs += 2ULL * static_cast<unsigned long long>(lo - sorted.begin()) +
                      static_cast<unsigned long long>(hi - lo);
    }
    const unsigned long long total = 2ULL * pos.size() * neg.size();
    // Evaluate from whichever end is nearer so swapping the pools gives the
    // exact complement.
    if (2 * half_pairs <= total)
        return 100.0 * static_cast<double>(half_pairs) / static_cast<double>(total);
    return 100.0 - 100.0 * static_cast<double>(total - half_pairs) / static_cast<double>(total);
}

double aupr(std::span<const double> pos, std::span<const double> neg) {
    const auto points = sweep(pos, neg);
    double area = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i)
        area += (points[i].recall - points[i - 1].recall) * points[i].precision;
    return 100.0 * area;
}

std::vector<CurvePoint> roc_points(std::span<const double> pos, std::span<const double> neg) {
    return sweep(pos, neg);
}

std::vector<CurvePoint> pr_points(std::span<const double> pos, std::span<const double> neg) {
    return sweep(pos, neg);
}

void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> points) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::FileNotFound, "cannot write " + path.string());
    out << "threshold,tp,fp,tn,fn,tpr,fpr,precision,recall\n";
    char buf[256];
    for (const auto& c : points) {
        std::snprintf(buf, sizeof buf, "%.17g,%zu,%zu,%zu,%zu,%.17g,%.17g,%.17g,%.17g\n",
                      c.threshold, c.tp, c.fp, c.tn, c.fn, c.tpr, c.fpr, c.precision, c.recall);
        out << buf;
    }
}

}  // namespace advdet
