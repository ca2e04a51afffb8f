#include "advdet/whiten.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "advdet/binary_io.hpp"

namespace advdet {
namespace {

constexpr int kMaxSweeps = 100;

double max_off_diagonal(const Matrix& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j) m = std::max(m, std::abs(a(i, j)));
    return m;
}

}  // namespace

EigenResult sym_eig(const Matrix& m) {
    const std::size_t n = m.rows();
    if (m.cols() != n) throw Error(ErrorCode::NotSymmetric, "matrix is not square");
    const double fro = m.frobenius_norm();
    const double sym_tol = 1e-10 * std::max(1.0, fro);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(m(i, j) - m(j, i)) > sym_tol)
                throw Error(ErrorCode::NotSymmetric, "entries (" + std::to_string(i) + "," +
                                                         std::to_string(j) + ") differ");

    Matrix a = m;
    // Row i of vt is the i-th eigenvector; rotations then touch contiguous memory.
    Matrix vt = Matrix::identity(n);
    const double tol = 1e-12 * fro;

    bool converged = fro == 0.0 || max_off_diagonal(a) < tol;
    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) < tol) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                a(p, p) -= t * apq;
                a(q, q) += t * apq;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                auto row_p = a.row(p);
                auto row_q = a.row(q);
                for (std::size_t k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    const double akp = row_p[k];
                    const double akq = row_q[k];
                    const double np = c * akp - s * akq;
                    const double nq = s * akp + c * akq;
                    row_p[k] = np;
                    row_q[k] = nq;
                    a(k, p) = np;
                    a(k, q) = nq;
                }
                auto vp = vt.row(p);
                auto vq = vt.row(q);
                for (std::size_t k = 0; k < n; ++k) {
                    const double x = vp[k];
                    const double y = vq[k];
                    vp[k] = c * x - s * y;
                    vq[k] = s * x + c * y;
                }
            }
        }
        converged = max_off_diagonal(a) < tol;
    }
    if (!converged)
        throw Error(ErrorCode::NoConvergence,
                    "Jacobi iteration did not converge in " + std::to_string(kMaxSweeps) + " sweeps");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

    EigenResult out{Vector(n), Matrix(n, n)};
    for (std::size_t col = 0; col < n; ++col) {
        const std::size_t src = order[col];
        out.values[col] = a(src, src);
        auto v = vt.row(src);
        std::size_t arg = 0;
        for (std::size_t k = 1; k < n; ++k)
            if (std::abs(v[k]) > std::abs(v[arg])) arg = k;
        const double sign = v[arg] < 0.0 ? -1.0 : 1.0;
        for (std::size_t k = 0; k < n; ++k) out.vectors(k, col) = sign * v[k];
    }
    return out;
}

std::size_t default_tail_start(std::size_t dim) {
    switch (dim) {
        case 784: return 700;
        case 3072: return 2500;
        case 12288: return 10000;
        default: return std::min(dim - 1, (dim * 700) / 784);
    }
}

TailSpec default_tail(std::size_t dim) { return {default_tail_start(dim), dim}; }

Vector WhiteningModel::scales() const {
    Vector s(eigenvalues.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = 1.0 / std::sqrt(eigenvalues[i] + eps);
    return s;
}

WhiteningModel fit_whitening(const CenteredDataset& train, double eps) {
    if (train.centered.empty())
        throw Error(ErrorCode::EmptyDataset, "cannot fit whitening on an empty training set");
    if (!(eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "whitening eps must be > 0");
    const std::size_t d = train.mean.size();

    Matrix cov(d, d);
    for (const auto& x : train.centered) {
        require_dim(x.size(), d, "centered example");
        for (std::size_t i = 0; i < d; ++i) {
            const double xi = x[i];
            if (xi == 0.0) continue;
            double* row = cov.row(i).data();
            for (std::size_t j = i; j < d; ++j) row[j] += xi * x[j];
        }
    }
    const double inv_n = 1.0 / static_cast<double>(train.centered.size());
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) {
            cov(i, j) *= inv_n;
            cov(j, i) = cov(i, j);
        }

    auto eig = sym_eig(cov);
    WhiteningModel model;
    model.mean = train.mean;
    model.eps = eps;
    model.components = std::move(eig.vectors);
    model.eigenvalues = std::move(eig.values);
    // Roundoff can leave null-space eigenvalues a hair below zero.
    for (double& v : model.eigenvalues) v = std::max(v, 0.0);
    return model;
}

Vector pca_whiten(const WhiteningModel& model, std::span<const double> x, bool already_centered) {
    const std::size_t d = model.dim();
    require_dim(x.size(), d, "whitening input");
    Vector z(x.begin(), x.end());
    if (!already_centered)
        for (std::size_t j = 0; j < d; ++j) z[j] -= model.mean[j];
    Vector coeffs = matvec_transposed(model.components, z);
    const Vector s = model.scales();
    for (std::size_t i = 0; i < d; ++i) coeffs[i] *= s[i];
    return coeffs;
}

Vector zca_whiten(const WhiteningModel& model, std::span<const double> x) {
    return matvec(model.components, pca_whiten(model, x));
}

Vector rescale_unit(std::span<const double> v) {
    Vector out(v.size(), 0.0);
    if (v.empty()) return out;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double span = *hi - *lo;
    if (span <= 0.0) return out;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / span;
    return out;
}

double tail_variance(std::span<const double> coeffs, TailSpec spec) {
    const std::size_t end = spec.end == 0 ? coeffs.size() : spec.end;
    if (spec.start >= end || end > coeffs.size())
        throw Error(ErrorCode::BadIndex, "tail [" + std::to_string(spec.start) + ", " +
                                             std::to_string(end) + ") does not fit " +
                                             std::to_string(coeffs.size()) + " coefficients");
    const auto tail = coeffs.subspan(spec.start, end - spec.start);
    const double n = static_cast<double>(tail.size());
    const double mean = std::accumulate(tail.begin(), tail.end(), 0.0) / n;
    double s = 0.0;
    for (double c : tail) s += (c - mean) * (c - mean);
    return s / n;
}

TailVarianceProjector::TailVarianceProjector(const WhiteningModel& model, TailSpec spec)
    : mean_(model.mean) {
    const std::size_t d = model.dim();
    const std::size_t end = spec.end == 0 ? d : spec.end;
    if (spec.start >= end || end > d)
        throw Error(ErrorCode::BadIndex, "tail start " + std::to_string(spec.start) +
                                             " outside dimension " + std::to_string(d));
    const Vector s = model.scales();
    rows_ = Matrix(end - spec.start, d);
    for (std::size_t i = spec.start; i < end; ++i) {
        auto row = rows_.row(i - spec.start);
        for (std::size_t k = 0; k < d; ++k) row[k] = s[i] * model.components(k, i);
    }
}

Vector TailVarianceProjector::tail_coefficients(std::span<const double> x) const {
    require_dim(x.size(), mean_.size(), "tail-variance input");
    Vector z(x.size());
    for (std::size_t k = 0; k < z.size(); ++k) z[k] = x[k] - mean_[k];
    return matvec(rows_, z);
}

double TailVarianceProjector::value(std::span<const double> x) const {
    const Vector c = tail_coefficients(x);
    return tail_variance(c, {0, c.size()});
}

double TailVarianceProjector::value_and_gradient(std::span<const double> x, Vector& grad) const {
    const Vector c = tail_coefficients(x);
    const double m = static_cast<double>(c.size());
    const double mean = std::accumulate(c.begin(), c.end(), 0.0) / m;
    Vector dc(c.size());
    double var = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        var += (c[i] - mean) * (c[i] - mean);
        dc[i] = 2.0 * (c[i] - mean) / m;
    }
    grad = matvec_transposed(rows_, dc);
    return var / m;
}

void save_whitening(const WhiteningModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::FileNotFound, "cannot write " + path.string());
    out.write("WHT1", 4);
    const std::size_t d = model.dim();
    binio::write_double(out, static_cast<double>(d));
    binio::write_double(out, model.eps);
    binio::write_doubles(out, model.mean);
    binio::write_doubles(out, model.eigenvalues);
    binio::write_doubles(out, model.components.data());
}

WhiteningModel load_whitening(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::FileNotFound, path.string());
    binio::expect_magic(in, "WHT1", path.string());
    const std::size_t d = binio::read_size(in, "dimension");
    WhiteningModel model;
    model.eps = binio::read_double(in, "eps");
    model.mean.resize(d);
    model.eigenvalues.resize(d);
    model.components = Matrix(d, d);
    binio::read_doubles(in, model.mean, "mean");
    binio::read_doubles(in, model.eigenvalues, "eigenvalues");
    binio::read_doubles(in, model.components.data(), "components");
    return model;
}

}  // namespace advdet
