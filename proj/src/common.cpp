#include "advdet/common.hpp"

#include <cmath>

namespace advdet {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::TruncatedFile: return "TruncatedFile";
        case ErrorCode::CountMismatch: return "CountMismatch";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::NotSymmetric: return "NotSymmetric";
        case ErrorCode::NoConvergence: return "NoConvergence";
        case ErrorCode::BadIndex: return "BadIndex";
        case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::BarrierInfeasible: return "BarrierInfeasible";
        case ErrorCode::OutOfInterval: return "OutOfInterval";
        case ErrorCode::TooFewExamples: return "TooFewExamples";
        case ErrorCode::EmptyPool: return "EmptyPool";
        case ErrorCode::RequiresRelu: return "RequiresRelu";
        case ErrorCode::RequiresGelu: return "RequiresGelu";
        case ErrorCode::BadImageId: return "BadImageId";
        case ErrorCode::FileNotFound: return "FileNotFound";
        case ErrorCode::BadFormat: return "BadFormat";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

double Matrix::frobenius_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
}

Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw Error(ErrorCode::DimensionMismatch, "matrix product inner dimensions differ");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto orow = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            auto brow = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Vector matvec(const Matrix& m, std::span<const double> x) {
    require_dim(x.size(), m.cols(), "matvec input");
    Vector y(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) y[r] = dot(m.row(r), x);
    return y;
}

Vector matvec_transposed(const Matrix& m, std::span<const double> x) {
    require_dim(x.size(), m.rows(), "transposed matvec input");
    Vector y(m.cols(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double xr = x[r];
        if (xr == 0.0) continue;
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) y[c] += xr * row[c];
    }
    return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void require_dim(std::size_t got, std::size_t want, std::string_view what) {
    if (got != want)
        throw Error(ErrorCode::DimensionMismatch, std::string(what) + " has length " +
                                                      std::to_string(got) + ", expected " +
                                                      std::to_string(want));
}

}  // namespace advdet
