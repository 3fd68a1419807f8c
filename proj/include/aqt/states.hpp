#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "aqt/density.hpp"
#include "aqt/error.hpp"
#include "aqt/linalg.hpp"

namespace aqt {

/// One tensor-product term: coeff * (factors[0] (x) factors[1] (x) ...).
struct ProductTerm {
  complex coeff;
  std::vector<ComplexMatrix> factors;  // 2x2 each, qubit 0 first
};

/// Density operator stored as a sum of tensor-product terms. Qubit 0 is the
/// most significant bit of the computational-basis index, so |100> is index 4.
class ProductOperatorEnsemble {
 public:
  static constexpr double kTraceTolerance = 1e-12;

  /// Validates the invariants: factor count and shape, unit trace, and closure
  /// of the term set under the adjoint.
  ProductOperatorEnsemble(std::size_t n_qubits, std::vector<ProductTerm> terms)
      : n_qubits_(n_qubits), terms_(std::move(terms)) {
    validate();
  }

  std::size_t n_qubits() const noexcept { return n_qubits_; }
  const std::vector<ProductTerm>& terms() const noexcept { return terms_; }

  complex trace() const {
    complex total = 0.0;
    for (const auto& term : terms_) {
      complex t = term.coeff;
      for (const auto& f : term.factors) t *= f.trace();
      total += t;
    }
    return total;
  }

  /// Term-wise conjugate transpose. Represents the same operator.
  ProductOperatorEnsemble adjoint() const {
    std::vector<ProductTerm> out;
    out.reserve(terms_.size());
    for (const auto& term : terms_) {
      ProductTerm t{std::conj(term.coeff), {}};
      for (const auto& f : term.factors) t.factors.push_back(f.adjoint());
      out.push_back(std::move(t));
    }
    return {n_qubits_, std::move(out)};
  }

 private:
  void validate() const {
    if (n_qubits_ == 0) throw DomainError("ensemble needs at least one qubit");
    if (terms_.empty()) throw DomainError("ensemble has no terms");
    for (const auto& term : terms_) {
      if (term.factors.size() != n_qubits_) {
        throw ShapeError("term has " + std::to_string(term.factors.size()) + " factors for " +
                         std::to_string(n_qubits_) + " qubits");
      }
      for (const auto& f : term.factors) {
        if (f.rows() != 2 || f.cols() != 2) throw ShapeError("ensemble factors must be 2x2");
      }
    }
    if (const auto t = trace(); std::abs(t - complex(1.0)) > kTraceTolerance) {
      throw DomainError("ensemble trace is " + std::to_string(t.real()) + "+" + std::to_string(t.imag()) + "i");
    }
    for (const auto& term : terms_) {
      if (!has_adjoint_partner(term)) throw DomainError("ensemble term set is not closed under the adjoint");
    }
  }

  bool has_adjoint_partner(const ProductTerm& term) const {
    constexpr double tol = 1e-12;
    for (const auto& other : terms_) {
      if (std::abs(other.coeff - std::conj(term.coeff)) > tol) continue;
      bool match = true;
      for (std::size_t q = 0; q < n_qubits_ && match; ++q) {
        match = max_abs_diff(other.factors[q], term.factors[q].adjoint()) <= tol;
      }
      if (match) return true;
    }
    return false;
  }

  std::size_t n_qubits_;
  std::vector<ProductTerm> terms_;
};

namespace detail {

/// |s><t|
inline ComplexMatrix basis_outer(int s, int t) {
  ComplexMatrix m(2, 2);
  m(static_cast<std::size_t>(s), static_cast<std::size_t>(t)) = 1.0;
  return m;
}

/// The four terms of (|x0><x0| + |x0><x1| + |x1><x0| + |x1><x1|) * weight / 2
/// where x0 and x1 differ on every qubit; `flipped0` flips qubit 0 in both.
inline void append_cat_terms(std::vector<ProductTerm>& terms, std::size_t n, double weight, bool flipped0) {
  for (int s = 0; s < 2; ++s)
    for (int t = 0; t < 2; ++t) {
      ProductTerm term{weight * 0.5, {}};
      term.factors.reserve(n);
      for (std::size_t q = 0; q < n; ++q) {
        const bool flip = flipped0 && q == 0;
        term.factors.push_back(basis_outer(flip ? 1 - s : s, flip ? 1 - t : t));
      }
      terms.push_back(std::move(term));
    }
}

}  // namespace detail

/// |GHZ><GHZ| with |GHZ> = (|0...0> + |1...1>) / sqrt(2).
inline ProductOperatorEnsemble ghz(std::size_t n_qubits) {
  if (n_qubits == 0) throw DomainError("GHZ state needs n_qubits >= 1");
  std::vector<ProductTerm> terms;
  detail::append_cat_terms(terms, n_qubits, 1.0, false);
  return {n_qubits, std::move(terms)};
}

/// Three-qubit GHZ whose qubit 0 flips with probability p:
/// (1 - p) |GHZ><GHZ| + p |psi><psi|, |psi> = (|100> + |011>) / sqrt(2).
inline ProductOperatorEnsemble faulty_qubit_state(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("flip probability must lie in [0, 1], got " + std::to_string(p));
  std::vector<ProductTerm> terms;
  detail::append_cat_terms(terms, 3, 1.0 - p, false);
  detail::append_cat_terms(terms, 3, p, true);
  return {3, std::move(terms)};
}

/// Product state rho_0 (x) rho_1 (x) ... from single-qubit density matrices.
inline ProductOperatorEnsemble product_state(std::vector<ComplexMatrix> qubits) {
  const auto n = qubits.size();
  return {n, {ProductTerm{1.0, std::move(qubits)}}};
}

inline constexpr std::size_t kMaxDenseQubits = 12;

/// Dense 2^N x 2^N operator.
inline ComplexMatrix to_dense_matrix(const ProductOperatorEnsemble& e, std::size_t max_qubits = kMaxDenseQubits) {
  if (e.n_qubits() > max_qubits) {
    throw CapacityError("dense form of a " + std::to_string(e.n_qubits()) + "-qubit state exceeds the " +
                        std::to_string(max_qubits) + "-qubit cap");
  }
  const std::size_t dim = std::size_t{1} << e.n_qubits();
  ComplexMatrix out(dim, dim);
  for (const auto& term : e.terms()) {
    ComplexMatrix acc{{term.coeff}};
    for (const auto& f : term.factors) acc = kron(acc, f);
    out += acc;
  }
  return out;
}

inline DensityMatrix to_dense(const ProductOperatorEnsemble& e, std::size_t max_qubits = kMaxDenseQubits) {
  return {e.n_qubits(), to_dense_matrix(e, max_qubits)};
}

/// "ghz:N" or "faulty:p".
inline ProductOperatorEnsemble parse_state_spec(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) throw ValidationError("state spec '" + spec + "' is not of the form kind:value");
  const auto kind = spec.substr(0, colon);
  const auto value = spec.substr(colon + 1);
  try {
    std::size_t used = 0;
    if (kind == "ghz") {
      const long n = std::stol(value, &used);
      if (used != value.size() || n < 1) throw ValidationError("GHZ qubit count must be a positive integer");
      return ghz(static_cast<std::size_t>(n));
    }
    if (kind == "faulty") {
      const double p = std::stod(value, &used);
      if (used != value.size()) throw ValidationError("bad flip probability '" + value + "'");
      return faulty_qubit_state(p);
    }
  } catch (const std::logic_error&) {
    throw ValidationError("cannot parse state spec '" + spec + "'");
  } catch (const DomainError& e) {
    throw ValidationError(e.what());
  }
  throw ValidationError("unknown state kind '" + kind + "' (expected ghz or faulty)");
}

}  // namespace aqt
