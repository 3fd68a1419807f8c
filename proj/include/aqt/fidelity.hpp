#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "aqt/density.hpp"
#include "aqt/error.hpp"
#include "aqt/linalg.hpp"
#include "aqt/model.hpp"
#include "aqt/povm.hpp"
#include "aqt/states.hpp"

namespace aqt {

/// Maps packed outcome strings to their probabilities.
using ProbabilityFn = std::function<std::vector<double>(std::span<const Symbol>)>;

inline ProbabilityFn state_probability_fn(const ProductOperatorEnsemble& state, const PovmFrame& frame) {
  return [prob = StateProbability(state, frame)](std::span<const Symbol> symbols) { return prob.batch(symbols); };
}

inline ProbabilityFn model_probability_fn(const TransformerModel& model) {
  return [&model](std::span<const Symbol> symbols) {
    auto p = log_probs(model, symbols);
    for (auto& v : p) v = std::exp(v);
    return p;
  };
}

enum class FidelityMethod { kExact, kSampled };

struct FidelityEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_samples = 0;
  FidelityMethod method = FidelityMethod::kExact;
};

inline constexpr std::size_t kMaxEnumerationQubits = 8;
inline constexpr std::size_t kEnumerationChunk = 4096;

/// sum_a sqrt(p0(a) p1(a)) over all 4^N outcomes, in lexicographic order with
/// pairwise summation.
inline FidelityEstimate classical_fidelity_exact(const ProbabilityFn& p0, const ProbabilityFn& p1,
                                                 std::size_t n_qubits) {
  if (n_qubits > kMaxEnumerationQubits) {
    throw CapacityError("exact classical fidelity enumerates 4^N outcomes; N=" + std::to_string(n_qubits) +
                        " exceeds the cap of " + std::to_string(kMaxEnumerationQubits));
  }
  const std::size_t total = std::size_t{1} << (2 * n_qubits);
  std::vector<double> terms(total);
  for (std::size_t first = 0; first < total; first += kEnumerationChunk) {
    const std::size_t count = std::min(kEnumerationChunk, total - first);
    const auto outcomes = enumerate_outcomes(n_qubits, first, count);
    const auto a = p0(outcomes);
    const auto b = p1(outcomes);
    for (std::size_t k = 0; k < count; ++k) {
      if (a[k] < 0.0 || b[k] < 0.0) throw DomainError("probability evaluator returned a negative value");
      terms[first + k] = std::sqrt(a[k] * b[k]);
    }
  }
  return {pairwise_sum<double>(terms), 0.0, total, FidelityMethod::kExact};
}

/// Importance-sampled F_C: the mean of sqrt(p0(a) / p1(a)) over a ~ p1, where
/// p1 is the model. Both probabilities are evaluated on the same packed batch.
inline FidelityEstimate classical_fidelity_sampled(const ProbabilityFn& p0, const TransformerModel& model,
                                                   std::size_t n_samples, std::uint64_t seed) {
  if (n_samples == 0) throw DomainError("n_samples must be at least 1");
  const auto draws = sample_model(model, n_samples, seed);
  const auto& symbols = draws.dataset.symbols;
  const auto target = p0(symbols);
  const auto model_lp = log_probs(model, symbols);
  std::vector<double> ratios(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    if (target[i] < 0.0) throw DomainError("target probability evaluator returned a negative value");
    ratios[i] = std::sqrt(target[i] / std::exp(model_lp[i]));
  }
  const double mean = pairwise_sum<double>(ratios) / static_cast<double>(n_samples);
  double std_error = 0.0;
  if (n_samples > 1) {
    std::vector<double> sq(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) sq[i] = (ratios[i] - mean) * (ratios[i] - mean);
    const double var = pairwise_sum<double>(sq) / static_cast<double>(n_samples - 1);
    std_error = std::sqrt(var / static_cast<double>(n_samples));
  }
  return {mean, std_error, n_samples, FidelityMethod::kSampled};
}

namespace detail {

inline void require_density(const ComplexMatrix& rho, const char* which) {
  if (!rho.is_square()) throw ShapeError(std::string(which) + " is not square");
  if (hermiticity_defect(rho) > kHermitianTolerance) throw DomainError(std::string(which) + " is not Hermitian");
  if (std::abs(rho.trace() - complex(1.0)) > 1e-8) {
    throw DomainError(std::string(which) + " has trace " + std::to_string(rho.trace().real()) + ", expected 1");
  }
  const double lowest = hermitian_eig(rho).eigenvalues.front();
  if (lowest < -kNegativeEigenvalueTolerance) {
    throw DomainError(std::string(which) + " is not PSD (eigenvalue " + std::to_string(lowest) +
                      "); project it first");
  }
}

}  // namespace detail

/// F_Q = (Tr sqrt(sqrt(rho0) rho1 sqrt(rho0)))^2, clamped to [0, 1].
inline double quantum_fidelity(const ComplexMatrix& rho0, const ComplexMatrix& rho1) {
  if (rho0.rows() != rho1.rows() || rho0.cols() != rho1.cols()) throw ShapeError("density matrices differ in size");
  detail::require_density(rho0, "rho0");
  detail::require_density(rho1, "rho1");
  const auto root = psd_sqrt(symmetrize(rho0));
  const auto inner = symmetrize(matmul(matmul(root, rho1), root));
  double trace_root = 0.0;
  for (const double lambda : hermitian_eig(inner).eigenvalues) trace_root += std::sqrt(std::max(lambda, 0.0));
  return std::clamp(trace_root * trace_root, 0.0, 1.0);
}

inline double quantum_fidelity(const DensityMatrix& rho0, const DensityMatrix& rho1) {
  return quantum_fidelity(rho0.matrix, rho1.matrix);
}

enum class PsdProjectionMethod {
  /// Frobenius-nearest trace-1 PSD matrix: eigenvalues shifted by a common
  /// offset, then clipped at zero.
  kNearest,
  /// Eigenvalues clipped at zero, then rescaled to unit trace.
  kClipRescale,
};

struct PsdProjection {
  DensityMatrix rho;
  double distance = 0.0;  // Frobenius norm of the change
};

/// Maps a Hermitian matrix onto the unit-trace PSD cone.
inline PsdProjection project_to_psd(const ComplexMatrix& m,
                                    PsdProjectionMethod method = PsdProjectionMethod::kNearest) {
  if (!m.is_square() || m.rows() == 0 || (m.rows() & (m.rows() - 1)) != 0) {
    throw ShapeError("projection needs a 2^N x 2^N matrix");
  }
  const auto n_qubits = static_cast<std::size_t>(std::countr_zero(m.rows()));
  auto eig = hermitian_eig(m);
  auto& lambda = eig.eigenvalues;
  const double trace = std::accumulate(lambda.begin(), lambda.end(), 0.0);
  if (lambda.back() <= 0.0) throw DomainError("matrix has no positive eigenvalue; cannot project");
  if (lambda.front() >= 0.0 && std::abs(trace - 1.0) <= 1e-12) {
    return {DensityMatrix(n_qubits, symmetrize(m), true, 0.0), 0.0};
  }

  if (method == PsdProjectionMethod::kNearest) {
    // lambda is ascending; find the offset mu with sum_i max(lambda_i - mu, 0) = 1.
    double mu = 0.0;
    double partial = 0.0;
    for (std::size_t k = 1; k <= lambda.size(); ++k) {
      partial += lambda[lambda.size() - k];
      const double candidate = (partial - 1.0) / static_cast<double>(k);
      if (lambda[lambda.size() - k] - candidate > 0.0) mu = candidate;
    }
    for (auto& l : lambda) l = std::max(l - mu, 0.0);
  } else {
    double kept = 0.0;
    for (auto& l : lambda) kept += (l = std::max(l, 0.0));
    for (auto& l : lambda) l /= kept;
  }
  auto projected = symmetrize(compose_spectral(eig.eigenvectors, lambda));
  const double distance = frobenius_norm(projected - m);
  return {DensityMatrix(n_qubits, std::move(projected), true, distance), distance};
}

}  // namespace aqt
