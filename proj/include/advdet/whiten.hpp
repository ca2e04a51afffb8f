#pragma once

#include <filesystem>
#include <span>

#include "advdet/common.hpp"
#include "advdet/dataio.hpp"

namespace advdet {

struct EigenResult {
    Vector values;   // nonincreasing
    Matrix vectors;  // column i pairs with values[i]
};

/// Symmetric eigendecomposition by cyclic Jacobi rotations. Stops when the
/// largest off-diagonal magnitude drops below 1e-12·‖M‖_F, throws
/// NoConvergence after 100 sweeps. Eigenvectors are sign-normalised so their
/// largest-magnitude entry is positive.
EigenResult sym_eig(const Matrix& m);

/// Entries [start, end) of a whitened coefficient vector.
struct TailSpec {
    std::size_t start = 0;
    std::size_t end = 0;
};

/// Default tail start for a data dimension: 700 for 784-d, 2500 for 3072-d,
/// 10000 for 12288-d, otherwise the same fraction as the 784-d case.
std::size_t default_tail_start(std::size_t dim);
TailSpec default_tail(std::size_t dim);

struct WhiteningModel {
    Vector mean;
    Matrix components;  // d×d, orthogonal, columns by descending eigenvalue
    Vector eigenvalues;
    double eps = 1e-8;

    std::size_t dim() const { return mean.size(); }
    /// (λᵢ + eps)^{-1/2}
    Vector scales() const;
};

/// Covariance (1/n)·Σ xxᵀ of the centered training examples, eigendecomposed.
WhiteningModel fit_whitening(const CenteredDataset& train, double eps = 1e-8);

/// diag((λ+eps)^{-1/2})·Uᵀ·(x − mean); the mean is skipped when `already_centered`.
Vector pca_whiten(const WhiteningModel& model, std::span<const double> x,
                  bool already_centered = false);

/// U·diag((λ+eps)^{-1/2})·Uᵀ·(x − mean).
Vector zca_whiten(const WhiteningModel& model, std::span<const double> x);

/// Affine map of a vector onto [0,1] for display (constant input maps to 0).
Vector rescale_unit(std::span<const double> v);

/// Population variance of coeffs[start, end).
double tail_variance(std::span<const double> coeffs, TailSpec spec);

/// Tail variance of the whitened input together with its gradient in pixel
/// space. Only the tail rows of the whitening map are kept.
class TailVarianceProjector {
public:
    TailVarianceProjector(const WhiteningModel& model, TailSpec spec);

    double value(std::span<const double> x) const;
    double value_and_gradient(std::span<const double> x, Vector& grad) const;

    std::size_t dim() const { return mean_.size(); }

private:
    Vector tail_coefficients(std::span<const double> x) const;

    Vector mean_;
    Matrix rows_;  // tail rows of diag(scales)·Uᵀ
};

/// Binary model file: "WHT1" then little-endian doubles
/// d, eps, mean[d], eigenvalues[d], U row-major.
void save_whitening(const WhiteningModel& model, const std::filesystem::path& path);
WhiteningModel load_whitening(const std::filesystem::path& path);

}  // namespace advdet
