#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "aqt/error.hpp"
#include "aqt/linalg.hpp"

namespace aqt {

/// A 2^N x 2^N Hermitian, unit-trace matrix. Frame inversions of noisy
/// probabilities may be indefinite; `projected` records whether the matrix has
/// been mapped onto the PSD cone.
struct DensityMatrix {
  static constexpr double kTolerance = 1e-10;

  std::size_t n_qubits = 0;
  ComplexMatrix matrix;
  bool projected = false;
  double projection_distance = 0.0;

  DensityMatrix() = default;

  DensityMatrix(std::size_t n, ComplexMatrix m, bool is_projected = false, double distance = 0.0)
      : n_qubits(n), matrix(std::move(m)), projected(is_projected), projection_distance(distance) {
    const std::size_t dim = std::size_t{1} << n_qubits;
    if (matrix.rows() != dim || matrix.cols() != dim) {
      throw ShapeError("density matrix for " + std::to_string(n_qubits) + " qubits must be " + std::to_string(dim) +
                       "x" + std::to_string(dim));
    }
    if (!matrix.all_finite()) throw NumericError("density matrix has non-finite entries");
    if (hermiticity_defect(matrix) > kTolerance) throw DomainError("density matrix is not Hermitian");
    if (std::abs(matrix.trace() - complex(1.0)) > kTolerance) {
      throw DomainError("density matrix trace is " + std::to_string(matrix.trace().real()));
    }
  }

  std::size_t dim() const noexcept { return matrix.rows(); }
};

}  // namespace aqt
