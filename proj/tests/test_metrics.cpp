#include <doctest.h>

#include <cmath>
#include <random>

#include "advdet/common.hpp"
#include "advdet/metrics.hpp"

using namespace advdet;

namespace {

// Trapezoidal area under (fpr, tpr) built independently from sorted scores.
double trapezoid_auroc(const Vector& pos, const Vector& neg) {
    std::vector<std::pair<double, int>> all;
    for (double p : pos) all.emplace_back(p, 1);
    for (double n : neg) all.emplace_back(n, 0);
    std::sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.first > b.first; });
    double area = 0.0, tpr = 0.0, fpr = 0.0;
    std::size_t tp = 0, fp = 0, i = 0;
    while (i < all.size()) {
        const double t = all[i].first;
        while (i < all.size() && all[i].first == t) {
            (all[i].second ? tp : fp) += 1;
            ++i;
        }
        const double ntpr = static_cast<double>(tp) / pos.size();
        const double nfpr = static_cast<double>(fp) / neg.size();
        area += (nfpr - fpr) * (ntpr + tpr) / 2.0;
        tpr = ntpr;
        fpr = nfpr;
    }
    return 100.0 * area;
}

Vector tied_scores(std::mt19937_64& rng, std::size_t n) {
    std::uniform_int_distribution<int> level(0, 6);
    Vector v(n);
    for (double& x : v) x = level(rng) * 0.25;
    return v;
}

}  // namespace

TEST_CASE("auroc examples") {
    CHECK(auroc(Vector{0.9, 0.8}, Vector{0.1, 0.7}) == 100.0);
    CHECK(auroc(Vector{0.9, 0.4}, Vector{0.1, 0.7}) == 75.0);
    CHECK(auroc(Vector{0.3, 0.1, 0.2}, Vector{0.2, 0.3, 0.1}) == 50.0);
    CHECK(auroc(Vector{1, 1, 1}, Vector{1, 1}) == 50.0);
    try {
        auroc(Vector{}, Vector{1.0});
        FAIL("expected EmptyPool");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyPool);
    }
}

TEST_CASE("aupr examples") {
    CHECK(aupr(Vector{5, 6, 7}, Vector{1, 2}) == 100.0);
    CHECK(aupr(Vector{3}, Vector{1, 2, 2.5}) == 100.0);
    // pos 0.9 then neg 0.8 then pos 0.7: recall 1/2 at precision 1, then 1 at 2/3
    CHECK(aupr(Vector{0.9, 0.7}, Vector{0.8}) == doctest::Approx(100.0 * (0.5 + 0.5 * 2.0 / 3.0)));
    CHECK_THROWS_AS(aupr(Vector{1.0}, Vector{}), Error);
}

TEST_CASE("rank auroc equals trapezoidal area") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> size(1, 50);
    for (int t = 0; t < 200; ++t) {
        const Vector pos = tied_scores(rng, size(rng));
        const Vector neg = tied_scores(rng, size(rng));
        const double a = auroc(pos, neg);
        CHECK(std::abs(a - trapezoid_auroc(pos, neg)) <= 1e-9);
        CHECK(a + auroc(neg, pos) == 100.0);

        // curve counts and monotonicity
        const auto pts = roc_points(pos, neg);
        REQUIRE(pts.size() >= 2);
        CHECK(pts.front().tpr == 0.0);
        CHECK(pts.front().fpr == 0.0);
        CHECK(pts.back().tpr == 1.0);
        CHECK(pts.back().fpr == 1.0);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            CHECK(pts[i].tp + pts[i].fn == pos.size());
            CHECK(pts[i].fp + pts[i].tn == neg.size());
            CHECK(pts[i].recall == pts[i].tpr);
            if (pts[i].tp + pts[i].fp == 0) CHECK(pts[i].precision == 1.0);
            if (i > 0) {
                CHECK(pts[i].tpr >= pts[i - 1].tpr);
                CHECK(pts[i].fpr >= pts[i - 1].fpr);
                CHECK(pts[i].threshold < pts[i - 1].threshold);
            }
        }

        // strictly increasing transform
        Vector ep = pos, en = neg;
        for (double& v : ep) v = std::exp(3.0 * v);
        for (double& v : en) v = std::exp(3.0 * v);
        CHECK(std::abs(auroc(ep, en) - a) <= 1e-12);
        CHECK(std::abs(aupr(ep, en) - aupr(pos, neg)) <= 1e-12);
    }
}

TEST_CASE("roc of a perfect single pair") {
    const auto pts = roc_points(Vector{1.0}, Vector{0.0});
    bool corner = false;
    for (const auto& p : pts) corner |= (p.fpr == 0.0 && p.tpr == 1.0);
    CHECK(corner);
}

TEST_CASE("aupr of random scores matches the positive fraction") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double frac : {0.5, 0.2}) {
        const auto npos = static_cast<std::size_t>(10000 * frac);
        Vector pos(npos), neg(10000 - npos);
        for (double& v : pos) v = u(rng);
        for (double& v : neg) v = u(rng);
        CHECK(std::abs(aupr(pos, neg) - 100.0 * frac) <= 5.0);
        CHECK(std::abs(auroc(pos, neg) - 50.0) <= 5.0);
    }
}
