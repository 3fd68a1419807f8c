#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aqt/density.hpp"
#include "aqt/error.hpp"
#include "aqt/fidelity.hpp"
#include "aqt/linalg.hpp"
#include "aqt/model.hpp"
#include "aqt/povm.hpp"

namespace aqt {

inline constexpr std::size_t kMaxReconstructQubits = 8;
inline constexpr std::size_t kMaxMleQubits = 6;

namespace detail {

/// 4x4 map applied independently to every qubit index of a 4^N tensor.
using LocalMap = std::array<std::array<complex, 4>, 4>;

/// tensor[.. b ..] <- sum_a map[b][a] tensor[.. a ..] for each qubit in turn.
/// Index of qubit k has stride 4^(N-1-k).
inline void apply_local_map(std::vector<complex>& tensor, std::size_t n_qubits, const LocalMap& map) {
  std::size_t stride = tensor.size() / 4;
  for (std::size_t k = 0; k < n_qubits; ++k, stride /= 4) {
    for (std::size_t outer = 0; outer < tensor.size(); outer += 4 * stride)
      for (std::size_t inner = 0; inner < stride; ++inner) {
        const std::size_t base = outer + inner;
        std::array<complex, 4> x{};
        for (std::size_t a = 0; a < 4; ++a) x[a] = tensor[base + a * stride];
        for (std::size_t b = 0; b < 4; ++b)
          tensor[base + b * stride] = (map[b][0] * x[0] + map[b][1] * x[1]) + (map[b][2] * x[2] + map[b][3] * x[3]);
      }
  }
}

/// Pair tensor: index sum_k (2 i_k + j_k) 4^(N-1-k) holds operator entry (i, j).
inline ComplexMatrix pair_tensor_to_operator(const std::vector<complex>& tensor, std::size_t n_qubits) {
  const std::size_t dim = std::size_t{1} << n_qubits;
  ComplexMatrix out(dim, dim);
  for (std::size_t idx = 0; idx < tensor.size(); ++idx) {
    std::size_t row = 0, col = 0, rest = idx;
    for (std::size_t k = 0; k < n_qubits; ++k) {
      const std::size_t shift = n_qubits - 1 - k;
      const std::size_t pair = (rest >> (2 * shift)) & 3u;
      row |= (pair >> 1) << shift;
      col |= (pair & 1u) << shift;
    }
    out(row, col) = tensor[idx];
  }
  return out;
}

inline std::vector<complex> operator_to_pair_tensor(const ComplexMatrix& m, std::size_t n_qubits) {
  std::vector<complex> tensor(m.size());
  for (std::size_t row = 0; row < m.rows(); ++row)
    for (std::size_t col = 0; col < m.cols(); ++col) {
      std::size_t idx = 0;
      for (std::size_t k = 0; k < n_qubits; ++k) {
        const std::size_t shift = n_qubits - 1 - k;
        idx = idx * 4 + 2 * ((row >> shift) & 1u) + ((col >> shift) & 1u);
      }
      tensor[idx] = m(row, col);
    }
  return tensor;
}

/// map[2i + j][a] = ops[a](i, j)
inline LocalMap entries_map(const std::array<ComplexMatrix, kNumOutcomes>& ops) {
  LocalMap map{};
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) map[2 * i + j][a] = ops[a](i, j);
  return map;
}

/// sum_a w(a) (x)_k ops[a_k] for a weight vector over all 4^N outcomes.
inline ComplexMatrix weighted_operator_sum(std::span<const double> weights, std::size_t n_qubits,
                                           const std::array<ComplexMatrix, kNumOutcomes>& ops) {
  std::vector<complex> tensor(weights.begin(), weights.end());
  apply_local_map(tensor, n_qubits, entries_map(ops));
  return pair_tensor_to_operator(tensor, n_qubits);
}

inline void check_qubits(std::size_t n_qubits, std::size_t cap, const char* what) {
  if (n_qubits > cap) {
    throw CapacityError(std::string(what) + " supports at most " + std::to_string(cap) + " qubits, got " +
                        std::to_string(n_qubits));
  }
}

}  // namespace detail

/// rho = sum_a p(a) (x)_i N_{a_i}, symmetrized. `probabilities` is indexed
/// lexicographically (qubit 0 most significant).
inline DensityMatrix frame_inversion(std::span<const double> probabilities, std::size_t n_qubits,
                                     const PovmFrame& frame) {
  if (probabilities.size() != (std::size_t{1} << (2 * n_qubits))) throw ShapeError("need 4^N probabilities");
  return {n_qubits, symmetrize(detail::weighted_operator_sum(probabilities, n_qubits, frame.duals()))};
}

/// p(a) = Tr(rho (x)_i M_{a_i}) for all 4^N outcomes, lexicographic order.
inline std::vector<double> povm_probabilities(const ComplexMatrix& rho, std::size_t n_qubits, const PovmFrame& frame) {
  detail::LocalMap map{};
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) map[a][2 * i + j] = frame.element(a)(j, i);
  auto tensor = detail::operator_to_pair_tensor(rho, n_qubits);
  detail::apply_local_map(tensor, n_qubits, map);
  std::vector<double> out(tensor.size());
  for (std::size_t i = 0; i < tensor.size(); ++i) out[i] = tensor[i].real();
  return out;
}

/// Exact outcome distribution of a model, by enumeration.
inline std::vector<double> model_distribution(const TransformerModel& model) {
  const auto n = model.n_qubits();
  detail::check_qubits(n, kMaxReconstructQubits, "model enumeration");
  const std::size_t total = std::size_t{1} << (2 * n);
  std::vector<double> p;
  p.reserve(total);
  for (std::size_t first = 0; first < total; first += kEnumerationChunk) {
    const auto count = std::min(kEnumerationChunk, total - first);
    for (const double lp : log_probs(model, enumerate_outcomes(n, first, count))) p.push_back(std::exp(lp));
  }
  return p;
}

/// Raw (possibly indefinite) density matrix implied by the model's exact
/// distribution.
inline DensityMatrix reconstruct_from_model(const TransformerModel& model, const PovmFrame& frame) {
  detail::check_qubits(model.n_qubits(), kMaxReconstructQubits, "model reconstruction");
  return frame_inversion(model_distribution(model), model.n_qubits(), frame);
}

/// Empirical outcome frequencies over all 4^N outcomes.
inline std::vector<double> empirical_frequencies(const OutcomeDataset& data) {
  if (data.empty()) throw DomainError("dataset is empty");
  std::vector<double> f(std::size_t{1} << (2 * data.n_qubits), 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) f[outcome_index(data.outcome(i))] += 1.0;
  for (auto& v : f) v /= static_cast<double>(data.size());
  return f;
}

/// Linear inversion of empirical frequencies (raw, possibly indefinite).
inline DensityMatrix linear_inversion(const OutcomeDataset& data, const PovmFrame& frame) {
  detail::check_qubits(data.n_qubits, kMaxReconstructQubits, "linear inversion");
  return frame_inversion(empirical_frequencies(data), data.n_qubits, frame);
}

struct MleOptions {
  std::size_t max_iters = 5000;
  double tol = 1e-10;  // stop when the log-likelihood gain falls below this
  std::optional<ComplexMatrix> initial;  // starting iterate; maximally mixed if absent
};

struct MleResult {
  DensityMatrix rho;
  std::size_t iterations = 0;
  bool converged = false;
  std::size_t regularizations = 0;
  std::vector<double> log_likelihood;  // per iterate, starting with the initial state
};

/// Maximum-likelihood fit by the fixed-point iteration rho <- R rho R / Tr(R rho R),
/// R = sum_a f(a) / p_rho(a) (x)_i M_{a_i}.
inline MleResult mle_reconstruct(const OutcomeDataset& data, const PovmFrame& frame, const MleOptions& opts = {}) {
  detail::check_qubits(data.n_qubits, kMaxMleQubits, "MLE reconstruction");
  const auto n = data.n_qubits;
  const auto freq = empirical_frequencies(data);
  const std::size_t dim = std::size_t{1} << n;
  const double mix = 1e-9;

  ComplexMatrix rho = ComplexMatrix::identity(dim);
  rho *= 1.0 / static_cast<double>(dim);
  if (opts.initial) rho = DensityMatrix(n, symmetrize(*opts.initial)).matrix;
  MleResult result;

  auto evaluate = [&](ComplexMatrix& state, std::vector<double>& p) {
    for (;;) {
      p = povm_probabilities(state, n, frame);
      bool degenerate = false;
      for (std::size_t a = 0; a < p.size() && !degenerate; ++a) degenerate = freq[a] > 0.0 && !(p[a] > 0.0);
      if (!degenerate) break;
      state *= 1.0 - mix;
      state += (mix / static_cast<double>(dim)) * ComplexMatrix::identity(dim);
      ++result.regularizations;
    }
    std::vector<double> terms(p.size(), 0.0);
    for (std::size_t a = 0; a < p.size(); ++a)
      if (freq[a] > 0.0) terms[a] = freq[a] * std::log(p[a]);
    return pairwise_sum<double>(terms);
  };

  std::vector<double> p;
  result.log_likelihood.push_back(evaluate(rho, p));
  std::vector<double> weights(p.size());
  for (std::size_t it = 0; it < opts.max_iters; ++it) {
    for (std::size_t a = 0; a < p.size(); ++a) weights[a] = freq[a] > 0.0 ? freq[a] / p[a] : 0.0;
    const auto R = symmetrize(detail::weighted_operator_sum(weights, n, frame.elements()));
    auto next = symmetrize(matmul(matmul(R, rho), R));
    next *= 1.0 / next.trace().real();
    const double ll = evaluate(next, p);
    rho = std::move(next);
    result.log_likelihood.push_back(ll);
    result.iterations = it + 1;
    if (std::abs(ll - result.log_likelihood[result.log_likelihood.size() - 2]) < opts.tol) {
      result.converged = true;
      break;
    }
  }
  result.rho = DensityMatrix(n, std::move(rho), true, 0.0);
  return result;
}

/// Share of total absolute mass carried by the four GHZ corner elements
/// (indices {0, 2^N - 1} x {0, 2^N - 1}).
inline double corner_mass_fraction(const ComplexMatrix& m) {
  const std::size_t last = m.rows() - 1;
  double total = 0.0;
  for (const auto& z : m.entries()) total += std::abs(z);
  const double corners = std::abs(m(0, 0)) + std::abs(m(0, last)) + std::abs(m(last, 0)) + std::abs(m(last, last));
  return total > 0.0 ? corners / total : 0.0;
}

// Density-matrix export: a JSON document
//   {"format": "aqt-dm v1", "n_qubits": N, "basis_convention": "qubit0-most-significant",
//    "projected": bool, "projection_distance": x, "real": [[...]], "imag": [[...]]}
// with every number printed using 17 significant digits.

inline void write_density_matrix(std::ostream& os, const DensityMatrix& rho) {
  char buf[32];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  auto block = [&](bool imag) {
    std::string s = "[";
    for (std::size_t r = 0; r < rho.dim(); ++r) {
      s += r == 0 ? "\n    [" : ",\n    [";
      for (std::size_t c = 0; c < rho.dim(); ++c) {
        if (c) s += ", ";
        s += num(imag ? rho.matrix(r, c).imag() : rho.matrix(r, c).real());
      }
      s += "]";
    }
    return s + "\n  ]";
  };
  os << "{\n"
     << "  \"format\": \"aqt-dm v1\",\n"
     << "  \"n_qubits\": " << rho.n_qubits << ",\n"
     << "  \"basis_convention\": \"qubit0-most-significant\",\n"
     << "  \"projected\": " << (rho.projected ? "true" : "false") << ",\n"
     << "  \"projection_distance\": " << num(rho.projection_distance) << ",\n"
     << "  \"real\": " << block(false) << ",\n"
     << "  \"imag\": " << block(true) << "\n"
     << "}\n";
}

inline DensityMatrix read_density_matrix(std::istream& is) {
  try {
    const auto j = nlohmann::json::parse(is);
    if (j.at("format").get<std::string>() != "aqt-dm v1") throw ValidationError("not an aqt-dm v1 document");
    if (j.at("basis_convention").get<std::string>() != "qubit0-most-significant") {
      throw ValidationError("unsupported basis convention");
    }
    const auto n = j.at("n_qubits").get<std::size_t>();
    const std::size_t dim = std::size_t{1} << n;
    const auto& re = j.at("real");
    const auto& im = j.at("imag");
    if (re.size() != dim || im.size() != dim) throw ValidationError("density matrix rows do not match n_qubits");
    ComplexMatrix m(dim, dim);
    for (std::size_t r = 0; r < dim; ++r) {
      if (re[r].size() != dim || im[r].size() != dim) throw ValidationError("density matrix row has wrong length");
      for (std::size_t c = 0; c < dim; ++c) m(r, c) = complex(re[r][c].get<double>(), im[r][c].get<double>());
    }
    return {n, std::move(m), j.at("projected").get<bool>(), j.value("projection_distance", 0.0)};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed density-matrix document: ") + e.what());
  }
}

inline void save_density_matrix(const std::string& path, const DensityMatrix& rho) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_density_matrix(os, rho);
  if (!os) throw IoError("failed writing '" + path + "'");
}

inline DensityMatrix load_density_matrix(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  return read_density_matrix(is);
}

/// Bar-plot CSV: one row per element, columns row,col,abs.
inline void write_bar_csv(std::ostream& os, const ComplexMatrix& m) {
  os << "row,col,abs\n";
  char buf[32];
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", std::abs(m(r, c)));
      os << r << ',' << c << ',' << buf << '\n';
    }
}

}  // namespace aqt
