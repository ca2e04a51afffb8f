#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace advdet {

using Vector = std::vector<double>;

enum class ErrorCode {
    BadMagic,
    TruncatedFile,
    CountMismatch,
    DimensionMismatch,
    EmptyDataset,
    NotSymmetric,
    NoConvergence,
    BadIndex,
    NonFiniteActivation,
    ShapeMismatch,
    BarrierInfeasible,
    OutOfInterval,
    TooFewExamples,
    EmptyPool,
    RequiresRelu,
    RequiresGelu,
    BadImageId,
    FileNotFound,
    BadFormat,
    InvalidArgument,
};

std::string_view to_string(ErrorCode code);

/// All library failures surface as this exception; `code()` identifies the
/// failure class and `what()` names the offending field or path.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Dense row-major matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    Matrix transposed() const;
    double frobenius_norm() const;

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator*(const Matrix& a, const Matrix& b);

/// y = M x
Vector matvec(const Matrix& m, std::span<const double> x);
/// y = Mᵀ x
Vector matvec_transposed(const Matrix& m, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

void require_dim(std::size_t got, std::size_t want, std::string_view what);

}  // namespace advdet
