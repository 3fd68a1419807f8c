#include <gtest/gtest.h>

#include <random>

#include "aqt/states.hpp"
#include "oracles.hpp"

using namespace aqt;

namespace {

std::size_t count_nonzero(const ComplexMatrix& m) {
  std::size_t n = 0;
  for (const auto& z : m.entries()) n += std::abs(z) > 0.0;
  return n;
}

/// (|100> + |011>)(<100| + <011|) / 2
ComplexMatrix psi3_dense() {
  ComplexMatrix m(8, 8);
  m(4, 4) = m(4, 3) = m(3, 4) = m(3, 3) = 0.5;
  return m;
}

}  // namespace

TEST(Ghz, SingleQubitIsPlusState) {
  const auto d = to_dense(ghz(1));
  EXPECT_LE(max_abs_diff(d.matrix, ComplexMatrix{{0.5, 0.5}, {0.5, 0.5}}), 1e-15);
}

TEST(Ghz, ThreeQubitCorners) {
  const auto g = ghz(3);
  EXPECT_EQ(g.terms().size(), 4u);
  for (const auto& t : g.terms()) EXPECT_EQ(t.coeff, complex(0.5));
  const auto d = to_dense(g);
  EXPECT_LE(max_abs_diff(d.matrix, oracle::ghz_dense(3)), 1e-15);
  EXPECT_NEAR(d.matrix.trace().real(), 1.0, 1e-15);
  EXPECT_NEAR(oracle::naive_trace(oracle::triple_loop(d.matrix, d.matrix)).real(), 1.0, 1e-15);
}

TEST(Ghz, FourNonzeroEntriesUpTo12Qubits) {
  for (std::size_t n : {1u, 2u, 5u, 9u, 12u}) {
    const auto d = to_dense_matrix(ghz(n));
    EXPECT_EQ(count_nonzero(d), 4u) << n;
    const std::size_t last = d.rows() - 1;
    EXPECT_EQ(d(0, 0), complex(0.5));
    EXPECT_EQ(d(last, last), complex(0.5));
    EXPECT_EQ(d(0, last), complex(0.5));
    EXPECT_EQ(d(last, 0), complex(0.5));
  }
}

TEST(Ghz, ZeroQubitsIsDomainError) { EXPECT_THROW(ghz(0), DomainError); }

TEST(Faulty, EndpointsMatchPureStates) {
  EXPECT_LE(max_abs_diff(to_dense(faulty_qubit_state(0.0)).matrix, to_dense(ghz(3)).matrix), 1e-15);
  EXPECT_LE(max_abs_diff(to_dense(faulty_qubit_state(1.0)).matrix, psi3_dense()), 1e-15);
}

TEST(Faulty, GhzOverlapIsOneMinusP) {
  for (double p : {0.0, 0.1, 0.3, 0.75}) {
    const auto rho = to_dense(faulty_qubit_state(p)).matrix;
    // <GHZ| rho |GHZ> with |GHZ> = (e0 + e7)/sqrt2
    const double overlap = 0.5 * (rho(0, 0) + rho(0, 7) + rho(7, 0) + rho(7, 7)).real();
    EXPECT_NEAR(overlap, 1.0 - p, 1e-14);
  }
}

TEST(Faulty, HalfMixtureIsDirectSum) {
  auto expected = oracle::ghz_dense(3);
  expected *= 0.5;
  auto psi = psi3_dense();
  psi *= 0.5;
  expected += psi;
  EXPECT_LE(max_abs_diff(to_dense(faulty_qubit_state(0.5)).matrix, expected), 1e-15);
}

TEST(Faulty, SpectrumIsOneMinusPAndP) {
  for (double p : {0.0, 0.15, 0.3, 0.5}) {
    const auto e = hermitian_eig(to_dense(faulty_qubit_state(p)).matrix).eigenvalues;
    std::vector<double> want(8, 0.0);
    want[6] = std::min(p, 1.0 - p);
    want[7] = std::max(p, 1.0 - p);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(e[k], want[k], 1e-12) << p;
  }
}

TEST(Faulty, RejectsOutOfRange) {
  EXPECT_THROW(faulty_qubit_state(-0.01), DomainError);
  EXPECT_THROW(faulty_qubit_state(1.01), DomainError);
}

TEST(Ensemble, TraceIsOneForAllConstructors) {
  EXPECT_NEAR(std::abs(ghz(7).trace() - complex(1.0)), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(faulty_qubit_state(0.2).trace() - complex(1.0)), 0.0, 1e-12);
  const ComplexMatrix zero{{1.0, 0.0}, {0.0, 0.0}};
  EXPECT_NEAR(std::abs(product_state({zero, zero}).trace() - complex(1.0)), 0.0, 1e-12);
}

TEST(Ensemble, AdjointDenseIsDenseAdjoint) {
  for (const auto& e : {ghz(4), faulty_qubit_state(0.3)}) {
    const auto d = to_dense_matrix(e);
    EXPECT_LE(max_abs_diff(to_dense_matrix(e.adjoint()), d.adjoint()), 1e-15);
    EXPECT_LE(hermiticity_defect(d), 1e-12);
  }
}

TEST(Ensemble, RejectsBrokenInvariants) {
  const ComplexMatrix zero{{1.0, 0.0}, {0.0, 0.0}};
  const ComplexMatrix up{{0.0, 1.0}, {0.0, 0.0}};
  // wrong factor count
  EXPECT_THROW(ProductOperatorEnsemble(2, {{1.0, {zero}}}), ShapeError);
  // trace 2
  EXPECT_THROW(ProductOperatorEnsemble(1, {{2.0, {zero}}}), DomainError);
  // |0><1| without its adjoint partner
  EXPECT_THROW(ProductOperatorEnsemble(1, {{1.0, {zero}}, {0.5, {up}}}), DomainError);
}

TEST(ToDense, CapacityErrorPast12Qubits) { EXPECT_THROW(to_dense(ghz(13)), CapacityError); }

TEST(StateSpec, Parses) {
  EXPECT_EQ(parse_state_spec("ghz:5").n_qubits(), 5u);
  EXPECT_EQ(parse_state_spec("faulty:0.25").n_qubits(), 3u);
  EXPECT_THROW(parse_state_spec("ghz:"), ValidationError);
  EXPECT_THROW(parse_state_spec("ghz:x"), ValidationError);
  EXPECT_THROW(parse_state_spec("w:3"), ValidationError);
  EXPECT_THROW(parse_state_spec("faulty:1.5"), ValidationError);
}
