#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "aqt/error.hpp"

namespace aqt {

using complex = std::complex<double>;
/// Fixed base alignment keeps Eigen's vectorized paths identical between runs.
using ComplexBuffer = std::vector<complex, Eigen::aligned_allocator<complex>>;

/// Default cap on the number of entries of any dense matrix (2^13 x 2^13).
inline constexpr std::size_t kDefaultMaxEntries = std::size_t{1} << 26;

/// Dense row-major complex matrix.
class ComplexMatrix {
 public:
  ComplexMatrix() = default;

  ComplexMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), entries_(rows * cols) {}

  ComplexMatrix(std::size_t rows, std::size_t cols, const std::vector<complex>& entries)
      : rows_(rows), cols_(cols), entries_(entries.begin(), entries.end()) {
    if (entries_.size() != rows_ * cols_) {
      throw ShapeError("entry count " + std::to_string(entries_.size()) + " does not match " + std::to_string(rows_) +
                       "x" + std::to_string(cols_));
    }
  }

  /// Row-wise literal, e.g. `ComplexMatrix{{0, 1}, {1, 0}}`.
  ComplexMatrix(std::initializer_list<std::initializer_list<complex>> rows) : rows_(rows.size()) {
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    entries_.reserve(rows_ * cols_);
    for (const auto& row : rows) {
      if (row.size() != cols_) throw ShapeError("ragged matrix literal");
      entries_.insert(entries_.end(), row.begin(), row.end());
    }
  }

  static ComplexMatrix identity(std::size_t n) {
    ComplexMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static ComplexMatrix diagonal(const std::vector<double>& values) {
    ComplexMatrix m(values.size(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool is_square() const noexcept { return rows_ == cols_; }

  complex& operator()(std::size_t r, std::size_t c) { return entries_[r * cols_ + c]; }
  const complex& operator()(std::size_t r, std::size_t c) const { return entries_[r * cols_ + c]; }

  ComplexBuffer& entries() noexcept { return entries_; }
  const ComplexBuffer& entries() const noexcept { return entries_; }

  ComplexMatrix adjoint() const {
    ComplexMatrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) out(c, r) = std::conj((*this)(r, c));
    return out;
  }

  complex trace() const {
    complex t = 0.0;
    for (std::size_t i = 0; i < std::min(rows_, cols_); ++i) t += (*this)(i, i);
    return t;
  }

  ComplexMatrix& operator+=(const ComplexMatrix& other) {
    require_same_shape(other);
    for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i] += other.entries_[i];
    return *this;
  }

  ComplexMatrix& operator-=(const ComplexMatrix& other) {
    require_same_shape(other);
    for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i] -= other.entries_[i];
    return *this;
  }

  ComplexMatrix& operator*=(complex s) {
    for (auto& e : entries_) e *= s;
    return *this;
  }

  friend ComplexMatrix operator+(ComplexMatrix a, const ComplexMatrix& b) { return a += b; }
  friend ComplexMatrix operator-(ComplexMatrix a, const ComplexMatrix& b) { return a -= b; }
  friend ComplexMatrix operator*(complex s, ComplexMatrix a) { return a *= s; }

  bool all_finite() const {
    return std::all_of(entries_.begin(), entries_.end(),
                       [](const complex& z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); });
  }

 private:
  void require_same_shape(const ComplexMatrix& other) const {
    if (rows_ != other.rows_ || cols_ != other.cols_) {
      throw ShapeError(std::to_string(rows_) + "x" + std::to_string(cols_) + " vs " + std::to_string(other.rows_) +
                       "x" + std::to_string(other.cols_));
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  ComplexBuffer entries_;
};

inline double max_abs(const ComplexMatrix& m) {
  double best = 0.0;
  for (const auto& z : m.entries()) best = std::max(best, std::abs(z));
  return best;
}

inline double max_abs_diff(const ComplexMatrix& a, const ComplexMatrix& b) { return max_abs(a - b); }

inline double frobenius_norm(const ComplexMatrix& m) {
  double s = 0.0;
  for (const auto& z : m.entries()) s += std::norm(z);
  return std::sqrt(s);
}

/// max |m - m^dagger|
inline double hermiticity_defect(const ComplexMatrix& m) {
  if (!m.is_square()) throw ShapeError("hermiticity of non-square matrix");
  double worst = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = r; c < m.cols(); ++c) worst = std::max(worst, std::abs(m(r, c) - std::conj(m(c, r))));
  return worst;
}

/// (m + m^dagger) / 2
inline ComplexMatrix symmetrize(const ComplexMatrix& m) {
  if (!m.is_square()) throw ShapeError("cannot symmetrize non-square matrix");
  ComplexMatrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = 0.5 * (m(r, c) + std::conj(m(c, r)));
  return out;
}

namespace detail {

using EigenComplex = Eigen::Matrix<complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const EigenComplex> as_eigen(const ComplexMatrix& m) {
  return {m.entries().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

inline Eigen::Map<EigenComplex> as_eigen(ComplexMatrix& m) {
  return {m.entries().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

inline void check_capacity(std::size_t rows, std::size_t cols, std::size_t max_entries) {
  if (rows != 0 && cols > max_entries / rows) {
    throw CapacityError(std::to_string(rows) + "x" + std::to_string(cols) + " exceeds the cap of " +
                        std::to_string(max_entries) + " entries");
  }
}

}  // namespace detail

inline ComplexMatrix matmul(const ComplexMatrix& a, const ComplexMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul of " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " by " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  ComplexMatrix out(a.rows(), b.cols());
  detail::as_eigen(out).noalias() = detail::as_eigen(a) * detail::as_eigen(b);
  return out;
}

/// Kronecker product with block layout: block (i, j) of the result is a(i, j) * b.
inline ComplexMatrix kron(const ComplexMatrix& a, const ComplexMatrix& b,
                          std::size_t max_entries = kDefaultMaxEntries) {
  const std::size_t rows = a.rows() * b.rows();
  const std::size_t cols = a.cols() * b.cols();
  detail::check_capacity(rows, cols, max_entries);
  ComplexMatrix out(rows, cols);
  for (std::size_t ar = 0; ar < a.rows(); ++ar)
    for (std::size_t ac = 0; ac < a.cols(); ++ac) {
      const complex s = a(ar, ac);
      for (std::size_t br = 0; br < b.rows(); ++br)
        for (std::size_t bc = 0; bc < b.cols(); ++bc) out(ar * b.rows() + br, ac * b.cols() + bc) = s * b(br, bc);
    }
  return out;
}

struct HermitianEigen {
  std::vector<double> eigenvalues;  // ascending
  ComplexMatrix eigenvectors;       // column k pairs with eigenvalues[k]
};

inline constexpr double kHermitianTolerance = 1e-10;

/// Eigendecomposition of a Hermitian matrix. Callers symmetrize first; inputs
/// further than 1e-10 from Hermitian are rejected.
inline HermitianEigen hermitian_eig(const ComplexMatrix& m) {
  if (!m.is_square()) {
    throw ShapeError("hermitian_eig needs a square matrix, got " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()));
  }
  if (const double defect = hermiticity_defect(m); defect > kHermitianTolerance) {
    throw DomainError("matrix is not Hermitian (max |m - m^dagger| = " + std::to_string(defect) + ")");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(detail::as_eigen(m), Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) throw NumericError("Hermitian eigensolver did not converge");

  HermitianEigen out;
  const auto n = m.rows();
  out.eigenvalues.assign(solver.eigenvalues().data(), solver.eigenvalues().data() + n);
  out.eigenvectors = ComplexMatrix(n, n);
  detail::as_eigen(out.eigenvectors) = solver.eigenvectors();
  return out;
}

/// V diag(values) V^dagger
inline ComplexMatrix compose_spectral(const ComplexMatrix& vectors, const std::vector<double>& values) {
  const auto v = detail::as_eigen(vectors);
  Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  ComplexMatrix out(vectors.rows(), vectors.rows());
  detail::as_eigen(out).noalias() = v * d.asDiagonal() * v.adjoint();
  return out;
}

inline constexpr double kNegativeEigenvalueTolerance = 1e-9;

/// Principal square root of a Hermitian PSD matrix. Eigenvalues down to -1e-9
/// are treated as zero, as are positive ones at rounding level.
inline ComplexMatrix psd_sqrt(const ComplexMatrix& m) {
  auto eig = hermitian_eig(m);
  // eigenvalues this close to zero are rounding noise; their square roots would not be
  const double noise = static_cast<double>(m.rows()) * 1e-15 * std::max(std::abs(eig.eigenvalues.back()), 1.0);
  for (auto& lambda : eig.eigenvalues) {
    if (lambda < -kNegativeEigenvalueTolerance) {
      throw DomainError("psd_sqrt of a matrix with eigenvalue " + std::to_string(lambda));
    }
    lambda = lambda <= noise ? 0.0 : std::sqrt(lambda);
  }
  return compose_spectral(eig.eigenvectors, eig.eigenvalues);
}

}  // namespace aqt

namespace aqt {

/// Pairwise (tree) summation; the result depends only on the input order.
template <typename T>
T pairwise_sum(std::span<const T> values) {
  if (values.size() <= 8) {
    T s{};
    for (const auto& v : values) s += v;
    return s;
  }
  const auto half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

}  // namespace aqt
