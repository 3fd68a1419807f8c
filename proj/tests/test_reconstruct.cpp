#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <sstream>

#include "aqt/experiments.hpp"
#include "aqt/reconstruct.hpp"
#include "aqt/states.hpp"
#include "oracles.hpp"

using namespace aqt;

namespace {

std::vector<double> exact_probabilities(const ProductOperatorEnsemble& state) {
  const auto n = state.n_qubits();
  return StateProbability(state, pauli4_frame()).batch(enumerate_outcomes(n, 0, std::size_t{1} << (2 * n)));
}

/// sum_a w(a) (x)_i N_{a_i} with explicit Kronecker products.
ComplexMatrix dual_sum_oracle(const std::vector<double>& w, std::size_t n) {
  const auto frame = pauli4_frame();
  ComplexMatrix rho(std::size_t{1} << n, std::size_t{1} << n);
  std::size_t k = 0;
  for (const auto& a : oracle::all_outcomes(n)) {
    ComplexMatrix d = frame.dual(a[0]);
    for (std::size_t i = 1; i < n; ++i) d = oracle::naive_kron(d, frame.dual(a[i]));
    d *= w[k++];
    rho += d;
  }
  return rho;
}

/// Dataset whose empirical frequencies are exactly `counts`.
OutcomeDataset dataset_from_counts(std::size_t n, const std::vector<std::size_t>& counts) {
  OutcomeDataset d;
  d.n_qubits = n;
  for (std::size_t idx = 0; idx < counts.size(); ++idx) {
    const auto a = enumerate_outcomes(n, idx, 1);
    for (std::size_t c = 0; c < counts[idx]; ++c) d.push_back(a);
  }
  return d;
}

TransformerModel random_model(std::size_t n, std::uint64_t seed) {
  auto m = init(TransformerConfig::desk(n, seed));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.3);
  for (auto& p : m.parameters()) p += g(rng);
  return m;
}

}  // namespace

TEST(FrameInversion, ExactProbabilitiesReproduceStates) {
  std::mt19937_64 rng(1);
  for (std::size_t n = 1; n <= 4; ++n) {
    std::vector<ComplexMatrix> qubits;
    for (std::size_t q = 0; q < n; ++q) qubits.push_back(oracle::random_density(rng, 2));
    for (const auto& state : {ghz(n), product_state(qubits)}) {
      const auto rho = frame_inversion(exact_probabilities(state), n, pauli4_frame());
      EXPECT_LE(max_abs_diff(rho.matrix, to_dense_matrix(state)), 1e-9) << n;
    }
  }
  const auto f = faulty_qubit_state(0.3);
  EXPECT_LE(max_abs_diff(frame_inversion(exact_probabilities(f), 3, pauli4_frame()).matrix, to_dense_matrix(f)), 1e-9);
}

TEST(FrameInversion, MatchesExplicitKroneckerSum) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t n : {1u, 2u, 3u}) {
    std::vector<double> w(std::size_t{1} << (2 * n));
    for (auto& x : w) x = u(rng);
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto& x : w) x /= total;
    EXPECT_LE(max_abs_diff(frame_inversion(w, n, pauli4_frame()).matrix, symmetrize(dual_sum_oracle(w, n))), 1e-12);
  }
}

TEST(PovmProbabilities, InvertsFrameInversion) {
  std::mt19937_64 rng(3);
  const auto rho = oracle::random_density(rng, 8);
  const auto p = povm_probabilities(rho, 3, pauli4_frame());
  const auto elems = oracle::pauli4_elements();
  std::size_t k = 0;
  for (const auto& a : oracle::all_outcomes(3)) EXPECT_NEAR(p[k++], oracle::dense_probability(rho, elems, a), 1e-14);
  EXPECT_LE(max_abs_diff(frame_inversion(p, 3, pauli4_frame()).matrix, rho), 1e-12);
}

TEST(ModelReconstruction, EqualsLinearInversionOfModelDistribution) {
  for (std::size_t n : {1u, 2u, 3u, 4u}) {
    const auto m = random_model(n, 10 + n);
    const auto rho = reconstruct_from_model(m, pauli4_frame());
    auto lp = log_probs(m, enumerate_outcomes(n, 0, std::size_t{1} << (2 * n)));
    for (auto& v : lp) v = std::exp(v);
    EXPECT_LE(max_abs_diff(rho.matrix, symmetrize(dual_sum_oracle(lp, n))), 1e-9);
    EXPECT_NEAR(rho.matrix.trace().real(), 1.0, 1e-8);
    EXPECT_FALSE(rho.projected);
  }
}

TEST(ModelReconstruction, SingleQubitZeroState) {
  // A one-qubit model whose head bias alone sets p = (1/3, 1/6, 1/6, 1/3).
  auto m = init(TransformerConfig::desk(1, 1));
  const auto& bias = m.layout()[m.layout().head_bias];
  const double p[] = {1.0 / 3, 1.0 / 6, 1.0 / 6, 1.0 / 3};
  for (std::size_t k = 0; k < 4; ++k) m.parameters()[bias.offset + k] = std::log(p[k]);
  const auto rho = reconstruct_from_model(m, pauli4_frame());
  EXPECT_LE(max_abs_diff(rho.matrix, ComplexMatrix::diagonal({1.0, 0.0})), 1e-6);
}

TEST(ModelReconstruction, UniformModelGivesQuarterDualSum) {
  const auto frame = pauli4_frame();
  const auto rho = reconstruct_from_model(init(TransformerConfig::desk(1, 1)), frame);
  ComplexMatrix want(2, 2);
  for (std::size_t a = 0; a < 4; ++a) want += 0.25 * frame.dual(a);
  EXPECT_LE(max_abs_diff(rho.matrix, want), 1e-14);
}

TEST(ModelReconstruction, CapacityErrorPastEightQubits) {
  EXPECT_THROW(reconstruct_from_model(init(TransformerConfig::desk(9, 1)), pauli4_frame()), CapacityError);
}

TEST(LinearInversion, ExactWeightedEnumerationGivesGhz2) {
  const auto p = exact_probabilities(ghz(2));
  EXPECT_LE(max_abs_diff(frame_inversion(p, 2, pauli4_frame()).matrix, oracle::ghz_dense(2)), 1e-10);
  // integer counts proportional to 54 * p are exact for ghz(2): p(a) is a multiple of 1/36
  std::vector<std::size_t> counts;
  for (const double x : p) counts.push_back(static_cast<std::size_t>(std::llround(x * 36.0)));
  const auto rho = linear_inversion(dataset_from_counts(2, counts), pauli4_frame());
  EXPECT_LE(max_abs_diff(rho.matrix, oracle::ghz_dense(2)), 1e-10);
}

TEST(LinearInversion, SmallSampleStillHermitianUnitTrace) {
  const auto d = sample(ghz(3), pauli4_frame(), 100, 4);
  const auto rho = linear_inversion(d, pauli4_frame());
  EXPECT_LE(hermiticity_defect(rho.matrix), 1e-15);
  EXPECT_NEAR(rho.matrix.trace().real(), 1.0, 1e-12);
}

TEST(LinearInversion, EmptyDatasetIsDomainError) {
  OutcomeDataset d;
  d.n_qubits = 2;
  EXPECT_THROW(linear_inversion(d, pauli4_frame()), DomainError);
}

TEST(LinearInversion, MillionSamplesOfGhz3) {
  const auto d = sample(ghz(3), pauli4_frame(), 1000000, 5);
  const auto rho = project_to_psd(linear_inversion(d, pauli4_frame()).matrix);
  EXPECT_GE(quantum_fidelity(rho.rho, to_dense(ghz(3))), 0.99);
}

TEST(Mle, ZeroStateIsFixedPointOfExactFrequencies) {
  // p = (1/3, 1/6, 1/6, 1/3) as counts (2, 1, 1, 2); at rho = |0><0| the map R is the identity.
  const auto d = dataset_from_counts(1, {2, 1, 1, 2});
  const auto zero = ComplexMatrix::diagonal({1.0, 0.0});
  MleOptions o;
  o.initial = zero;
  o.max_iters = 100;
  o.tol = 0.0;
  const auto r = mle_reconstruct(d, pauli4_frame(), o);
  EXPECT_LE(max_abs_diff(r.rho.matrix, zero), 1e-8);
}

TEST(Mle, ExactFrequenciesApproachZeroStateFromMixed) {
  // The approach to a rank-deficient fixed point is sublinear, so the bound is loose.
  const auto d = dataset_from_counts(1, {2, 1, 1, 2});
  MleOptions o;
  o.max_iters = 20000;
  o.tol = 1e-15;
  const auto r = mle_reconstruct(d, pauli4_frame(), o);
  EXPECT_LE(max_abs_diff(r.rho.matrix, ComplexMatrix::diagonal({1.0, 0.0})), 1e-4);
  EXPECT_GE(r.rho.matrix(0, 0).real(), r.rho.matrix(1, 1).real());
}

TEST(Mle, LikelihoodIsMonotone) {
  const auto d = sample(faulty_qubit_state(0.15), pauli4_frame(), 2700, 6);
  MleOptions o;
  o.max_iters = 300;
  const auto r = mle_reconstruct(d, pauli4_frame(), o);
  EXPECT_EQ(r.regularizations, 0u);
  ASSERT_GE(r.log_likelihood.size(), 2u);
  for (std::size_t k = 1; k < r.log_likelihood.size(); ++k) {
    EXPECT_GE(r.log_likelihood[k], r.log_likelihood[k - 1] - 1e-12) << "iteration " << k;
  }
  EXPECT_NEAR(r.rho.matrix.trace().real(), 1.0, 1e-10);
  EXPECT_GE(hermitian_eig(r.rho.matrix).eigenvalues.front(), -1e-12);
  EXPECT_TRUE(r.rho.projected);
}

TEST(Mle, ReportsNonConvergence) {
  const auto d = sample(ghz(2), pauli4_frame(), 500, 7);
  MleOptions o;
  o.max_iters = 2;
  o.tol = 0.0;
  const auto r = mle_reconstruct(d, pauli4_frame(), o);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 2u);
}

TEST(Mle, CapacityError) {
  OutcomeDataset d;
  d.n_qubits = 7;
  d.push_back(std::vector<Symbol>(7, 0));
  EXPECT_THROW(mle_reconstruct(d, pauli4_frame()), CapacityError);
}

TEST(CornerMass, GhzIsAllCorners) {
  EXPECT_DOUBLE_EQ(corner_mass_fraction(oracle::ghz_dense(4)), 1.0);
  EXPECT_DOUBLE_EQ(corner_mass_fraction(ComplexMatrix::identity(4)), 0.5);
}

TEST(Export, RoundTripWith17Digits) {
  std::mt19937_64 rng(8);
  const DensityMatrix rho(2, oracle::random_density(rng, 4), true, 0.125);
  std::stringstream ss;
  write_density_matrix(ss, rho);
  const auto text = ss.str();
  EXPECT_NE(text.find("\"format\": \"aqt-dm v1\""), std::string::npos);
  EXPECT_NE(text.find("\"basis_convention\": \"qubit0-most-significant\""), std::string::npos);
  EXPECT_NE(text.find("\"projected\": true"), std::string::npos);
  const auto back = read_density_matrix(ss);
  EXPECT_EQ(back.n_qubits, 2u);
  EXPECT_TRUE(back.projected);
  EXPECT_EQ(back.projection_distance, 0.125);
  EXPECT_EQ(max_abs_diff(back.matrix, rho.matrix), 0.0);
}

TEST(Export, RejectsMalformedDocuments) {
  std::istringstream wrong_format(R"({"format": "other", "basis_convention": "qubit0-most-significant"})");
  EXPECT_THROW(read_density_matrix(wrong_format), ValidationError);
  std::istringstream not_json("{");
  EXPECT_THROW(read_density_matrix(not_json), ValidationError);
}

TEST(BarCsv, OneRowPerElement) {
  std::ostringstream os;
  write_bar_csv(os, oracle::ghz_dense(1));
  EXPECT_EQ(os.str(), "row,col,abs\n0,0,0.5\n0,1,0.5\n1,0,0.5\n1,1,0.5\n");
}

namespace {

struct Ghz3Budget {
  Reconstruction aqt, mle;
};

const Ghz3Budget& ghz3_budget_run() {
  static const Ghz3Budget r = [] {
    const auto frame = pauli4_frame();
    const auto run = sample_and_train(ghz(3), frame, 2700, 12, TransformerConfig::desk(3), TrainOptions{});
    return Ghz3Budget{reconstruct_model(run.result.model, frame), reconstruct_dataset(run.data, ReconstructMethod::kMle, frame)};
  }();
  return r;
}

}  // namespace

TEST(Reconstruction, Ghz3At2700SamplesCornersDominate) {
  const auto& r = ghz3_budget_run();
  for (const auto* rec : {&r.aqt, &r.mle}) {
    const auto& m = rec->projected.matrix;
    double largest_other = 0.0;
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        if (!((i == 0 || i == 7) && (j == 0 || j == 7))) largest_other = std::max(largest_other, std::abs(m(i, j)));
    for (std::size_t i : {0u, 7u})
      for (std::size_t j : {0u, 7u}) EXPECT_GT(std::abs(m(i, j)), largest_other);
  }
}

TEST(Reconstruction, Ghz3At2700SamplesOffCornerMassAtMost15Percent) {
  const auto& r = ghz3_budget_run();
  const double aqt_off = 1.0 - corner_mass_fraction(r.aqt.projected.matrix);
  const double mle_off = 1.0 - corner_mass_fraction(r.mle.projected.matrix);
  RecordProperty("aqt_off_corner", std::to_string(aqt_off));
  RecordProperty("mle_off_corner", std::to_string(mle_off));
  EXPECT_LE(aqt_off, 0.15);
  EXPECT_LE(mle_off, 0.15);
}
