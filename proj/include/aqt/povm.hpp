#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "aqt/error.hpp"
#include "aqt/linalg.hpp"
#include "aqt/rng.hpp"
#include "aqt/states.hpp"

namespace aqt {

using Symbol = std::uint8_t;
inline constexpr std::size_t kNumOutcomes = 4;

/// Four-outcome single-qubit POVM with its overlap matrix and dual frame.
class PovmFrame {
 public:
  PovmFrame(std::string name, std::array<ComplexMatrix, kNumOutcomes> elements)
      : name_(std::move(name)), elements_(std::move(elements)) {
    ComplexMatrix sum(2, 2);
    for (const auto& m : elements_) {
      if (m.rows() != 2 || m.cols() != 2) throw ShapeError("POVM elements must be 2x2");
      if (hermiticity_defect(m) > 1e-12) throw DomainError("POVM element is not Hermitian");
      if (hermitian_eig(m).eigenvalues.front() < -1e-12) throw DomainError("POVM element is not PSD");
      sum += m;
    }
    if (max_abs_diff(sum, ComplexMatrix::identity(2)) > 1e-12) throw DomainError("POVM elements do not sum to I");

    for (std::size_t a = 0; a < kNumOutcomes; ++a)
      for (std::size_t b = 0; b < kNumOutcomes; ++b) overlap_(a, b) = matmul(elements_[a], elements_[b]).trace().real();
    if (std::abs(overlap_.determinant()) <= 1e-9) throw DomainError("POVM is not informationally complete");
    const Eigen::Matrix4d inverse = overlap_.inverse();
    for (std::size_t a = 0; a < kNumOutcomes; ++a) {
      duals_[a] = ComplexMatrix(2, 2);
      for (std::size_t b = 0; b < kNumOutcomes; ++b) duals_[a] += inverse(a, b) * elements_[b];
    }
  }

  const std::string& name() const noexcept { return name_; }
  const ComplexMatrix& element(std::size_t a) const { return elements_.at(a); }
  const ComplexMatrix& dual(std::size_t a) const { return duals_.at(a); }
  const std::array<ComplexMatrix, kNumOutcomes>& elements() const noexcept { return elements_; }
  const std::array<ComplexMatrix, kNumOutcomes>& duals() const noexcept { return duals_; }
  /// T_ab = Tr(M_a M_b)
  const Eigen::Matrix4d& overlap() const noexcept { return overlap_; }

 private:
  std::string name_;
  std::array<ComplexMatrix, kNumOutcomes> elements_;
  std::array<ComplexMatrix, kNumOutcomes> duals_;
  Eigen::Matrix4d overlap_;
};

/// M_0 = |0><0|/3, M_1 = |+><+|/3, M_2 = |+i><+i|/3, M_3 = I - M_0 - M_1 - M_2.
inline PovmFrame pauli4_frame() {
  const double third = 1.0 / 3.0;
  const complex i(0.0, 1.0);
  ComplexMatrix m0{{third, 0.0}, {0.0, 0.0}};
  ComplexMatrix m1{{third / 2, third / 2}, {third / 2, third / 2}};
  ComplexMatrix m2{{third / 2, -i * (third / 2)}, {i * (third / 2), third / 2}};
  ComplexMatrix m3 = ComplexMatrix::identity(2) - m0 - m1 - m2;
  return PovmFrame("pauli4", {std::move(m0), std::move(m1), std::move(m2), std::move(m3)});
}

/// Outcome strings packed back to back, `n_qubits` symbols each.
struct OutcomeDataset {
  std::size_t n_qubits = 0;
  std::string povm_name = "pauli4";
  std::uint64_t seed = 0;
  std::string source;
  std::vector<Symbol> symbols;

  std::size_t size() const noexcept { return n_qubits == 0 ? 0 : symbols.size() / n_qubits; }
  bool empty() const noexcept { return size() == 0; }

  std::span<const Symbol> outcome(std::size_t i) const { return {symbols.data() + i * n_qubits, n_qubits}; }

  void push_back(std::span<const Symbol> a) {
    if (a.size() != n_qubits) throw ShapeError("outcome length does not match n_qubits");
    for (const auto s : a) {
      if (s >= kNumOutcomes) throw DomainError("outcome symbol " + std::to_string(s) + " is not in {0,1,2,3}");
    }
    symbols.insert(symbols.end(), a.begin(), a.end());
  }
};

inline void require_valid_outcome(std::span<const Symbol> a, std::size_t n_qubits) {
  if (a.size() != n_qubits) {
    throw ShapeError("outcome has length " + std::to_string(a.size()) + ", expected " + std::to_string(n_qubits));
  }
  for (const auto s : a) {
    if (s >= kNumOutcomes) throw DomainError("outcome symbol " + std::to_string(s) + " is not in {0,1,2,3}");
  }
}

/// Exact outcome probabilities p(a) = sum_t coeff_t prod_i Tr(F_ti M_{a_i}) for
/// an ensemble state. The per-(term, qubit, symbol) traces are tabulated once.
class StateProbability {
 public:
  StateProbability(const ProductOperatorEnsemble& state, const PovmFrame& frame)
      : n_qubits_(state.n_qubits()), n_terms_(state.terms().size()) {
    coeffs_.reserve(n_terms_);
    traces_.resize(n_terms_ * n_qubits_ * kNumOutcomes);
    suffix_.resize(n_terms_ * (n_qubits_ + 1));
    for (std::size_t t = 0; t < n_terms_; ++t) {
      const auto& term = state.terms()[t];
      coeffs_.push_back(term.coeff);
      for (std::size_t q = 0; q < n_qubits_; ++q)
        for (std::size_t a = 0; a < kNumOutcomes; ++a)
          traces_[(t * n_qubits_ + q) * kNumOutcomes + a] = matmul(term.factors[q], frame.element(a)).trace();
      suffix_[t * (n_qubits_ + 1) + n_qubits_] = 1.0;
      for (std::size_t q = n_qubits_; q-- > 0;) {
        suffix_[t * (n_qubits_ + 1) + q] = suffix_[t * (n_qubits_ + 1) + q + 1] * term.factors[q].trace();
      }
    }
  }

  std::size_t n_qubits() const noexcept { return n_qubits_; }

  double operator()(std::span<const Symbol> a) const {
    require_valid_outcome(a, n_qubits_);
    complex total = 0.0;
    for (std::size_t t = 0; t < n_terms_; ++t) {
      complex prod = coeffs_[t];
      for (std::size_t q = 0; q < n_qubits_; ++q) prod *= trace(t, q, a[q]);
      total += prod;
    }
    return std::clamp(total.real(), 0.0, 1.0);
  }

  /// Probabilities of every packed outcome in `symbols`.
  std::vector<double> batch(std::span<const Symbol> symbols) const {
    const std::size_t n = symbols.size() / n_qubits_;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = (*this)(symbols.subspan(i * n_qubits_, n_qubits_));
    return out;
  }

  /// Draws one outcome by sequential conditionals, writing it to `out`.
  void draw(RandomStream& rng, std::span<Symbol> out, std::vector<complex>& prefix) const {
    prefix.assign(coeffs_.begin(), coeffs_.end());
    for (std::size_t q = 0; q < n_qubits_; ++q) {
      std::array<double, kNumOutcomes> weights{};
      double total = 0.0;
      for (std::size_t a = 0; a < kNumOutcomes; ++a) {
        complex w = 0.0;
        for (std::size_t t = 0; t < n_terms_; ++t) w += prefix[t] * trace(t, q, a) * suffix_[t * (n_qubits_ + 1) + q + 1];
        weights[a] = std::max(w.real(), 0.0);
        total += weights[a];
      }
      if (!(total > 0.0)) throw NumericError("conditional outcome distribution vanished");
      const double u = rng.uniform() * total;
      std::size_t chosen = kNumOutcomes - 1;
      double cumulative = 0.0;
      for (std::size_t a = 0; a < kNumOutcomes; ++a) {
        cumulative += weights[a];
        if (u < cumulative && weights[a] > 0.0) {
          chosen = a;
          break;
        }
      }
      while (weights[chosen] <= 0.0) --chosen;
      out[q] = static_cast<Symbol>(chosen);
      // Rescale so the running prefix stays normalized and cannot underflow.
      for (std::size_t t = 0; t < n_terms_; ++t) prefix[t] *= trace(t, q, chosen) / weights[chosen];
    }
  }

 private:
  const complex& trace(std::size_t t, std::size_t q, std::size_t a) const {
    return traces_[(t * n_qubits_ + q) * kNumOutcomes + a];
  }

  std::size_t n_qubits_;
  std::size_t n_terms_;
  std::vector<complex> coeffs_;
  std::vector<complex> traces_;
  std::vector<complex> suffix_;  // prod_{i >= q} Tr(F_ti), per term
};

inline double outcome_prob(const ProductOperatorEnsemble& state, const PovmFrame& frame, std::span<const Symbol> a) {
  return StateProbability(state, frame)(a);
}

/// Samples are drawn in blocks of this many; block b uses stream
/// (seed, b * kSampleBlock), so output does not depend on the worker count.
inline constexpr std::size_t kSampleBlock = 4096;

/// Runs `fn(block_begin, block_end)` over [0, n) in kSampleBlock chunks,
/// distributing whole blocks over `workers` threads.
template <typename Fn>
void for_each_block(std::size_t n, std::size_t workers, Fn&& fn) {
  const std::size_t blocks = (n + kSampleBlock - 1) / kSampleBlock;
  auto run = [&](std::size_t first_block, std::size_t stride) {
    for (std::size_t b = first_block; b < blocks; b += stride) fn(b * kSampleBlock, std::min(n, (b + 1) * kSampleBlock));
  };
  workers = std::max<std::size_t>(1, std::min(workers, blocks));
  if (workers == 1) {
    run(0, 1);
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w, workers);
}

inline std::string simulated_source(const std::string& state_label) {
  return "simulated " + state_label + " rng=" + std::string(RandomStream::kAlgorithm);
}

/// i.i.d. outcomes from the exact POVM distribution of `state`.
inline OutcomeDataset sample(const ProductOperatorEnsemble& state, const PovmFrame& frame, std::size_t n_samples,
                             std::uint64_t seed, std::string source = {}, std::size_t workers = 1) {
  if (n_samples == 0) throw DomainError("n_samples must be at least 1");
  const StateProbability prob(state, frame);
  OutcomeDataset out;
  out.n_qubits = state.n_qubits();
  out.povm_name = frame.name();
  out.seed = seed;
  out.source = source.empty() ? simulated_source("state") : std::move(source);
  out.symbols.resize(n_samples * out.n_qubits);
  for_each_block(n_samples, workers, [&](std::size_t begin, std::size_t end) {
    RandomStream rng(seed, begin);
    std::vector<complex> prefix;
    for (std::size_t i = begin; i < end; ++i) {
      prob.draw(rng, std::span<Symbol>(out.symbols.data() + i * out.n_qubits, out.n_qubits), prefix);
    }
  });
  return out;
}

/// (x)_i N_{a_i}, qubit 0 outermost.
inline ComplexMatrix multi_qubit_dual(const PovmFrame& frame, std::span<const Symbol> a,
                                      std::size_t max_qubits = kMaxDenseQubits) {
  if (a.size() > max_qubits) {
    throw CapacityError(std::to_string(a.size()) + "-qubit dual exceeds the " + std::to_string(max_qubits) +
                        "-qubit cap");
  }
  require_valid_outcome(a, a.size());
  ComplexMatrix out{{1.0}};
  for (const auto s : a) out = kron(out, frame.dual(s));
  return out;
}

// Dataset file:
//   # aqt-dataset v1 n_qubits=<N> povm=pauli4 seed=<s> source=<text>
//   one outcome per line, N characters from {0,1,2,3}

inline std::string dataset_header(const OutcomeDataset& d) {
  return "# aqt-dataset v1 n_qubits=" + std::to_string(d.n_qubits) + " povm=" + d.povm_name +
         " seed=" + std::to_string(d.seed) + " source=" + d.source;
}

inline void write_dataset(std::ostream& os, const OutcomeDataset& d) {
  os << dataset_header(d) << '\n';
  std::string line(d.n_qubits + 1, '\n');
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto a = d.outcome(i);
    for (std::size_t q = 0; q < d.n_qubits; ++q) line[q] = static_cast<char>('0' + a[q]);
    os.write(line.data(), static_cast<std::streamsize>(line.size()));
  }
}

inline void save_dataset(const std::string& path, const OutcomeDataset& d) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_dataset(os, d);
  if (!os) throw IoError("failed writing '" + path + "'");
}

inline OutcomeDataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ValidationError("dataset is empty (line 1)");
  static const std::string kMagic = "# aqt-dataset v1 ";
  if (line.rfind(kMagic, 0) != 0) throw ValidationError("line 1: missing '# aqt-dataset v1' header");

  OutcomeDataset d;
  const auto source_at = line.find(" source=");
  if (source_at == std::string::npos) throw ValidationError("line 1: header lacks source=");
  d.source = line.substr(source_at + 8);
  std::istringstream fields(line.substr(kMagic.size(), source_at - kMagic.size()));
  bool have_n = false, have_povm = false, have_seed = false;
  for (std::string field; fields >> field;) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw ValidationError("line 1: malformed header field '" + field + "'");
    const auto key = field.substr(0, eq);
    const auto value = field.substr(eq + 1);
    try {
      if (key == "n_qubits") {
        d.n_qubits = std::stoul(value);
        have_n = true;
      } else if (key == "povm") {
        d.povm_name = value;
        have_povm = true;
      } else if (key == "seed") {
        d.seed = std::stoull(value);
        have_seed = true;
      } else {
        throw ValidationError("line 1: unknown header field '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw ValidationError("line 1: bad value for " + key);
    }
  }
  if (!have_n || !have_povm || !have_seed) throw ValidationError("line 1: header needs n_qubits, povm and seed");
  if (d.n_qubits == 0) throw ValidationError("line 1: n_qubits must be positive");
  if (d.povm_name != "pauli4") throw ValidationError("line 1: unsupported povm '" + d.povm_name + "'");

  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.size() != d.n_qubits) {
      throw ValidationError("line " + std::to_string(line_no) + ": expected " + std::to_string(d.n_qubits) +
                            " symbols, got " + std::to_string(line.size()));
    }
    for (const char c : line) {
      if (c < '0' || c > '3') {
        throw ValidationError("line " + std::to_string(line_no) + ": invalid symbol '" + std::string(1, c) + "'");
      }
      d.symbols.push_back(static_cast<Symbol>(c - '0'));
    }
  }
  return d;
}

inline OutcomeDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset '" + path + "'");
  return read_dataset(is);
}

/// Visits every outcome string of length n in lexicographic order (qubit 0
/// most significant), i.e. index = sum_i a_i 4^(n-1-i).
inline std::vector<Symbol> enumerate_outcomes(std::size_t n_qubits, std::size_t first, std::size_t count) {
  std::vector<Symbol> out(count * n_qubits);
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t index = first + k;
    for (std::size_t q = n_qubits; q-- > 0;) {
      out[k * n_qubits + q] = static_cast<Symbol>(index & 3u);
      index >>= 2;
    }
  }
  return out;
}

inline std::size_t outcome_index(std::span<const Symbol> a) {
  std::size_t index = 0;
  for (const auto s : a) index = index * kNumOutcomes + s;
  return index;
}

}  // namespace aqt
