#include <gtest/gtest.h>

#include <sstream>

#include "aqt/experiments.hpp"

using namespace aqt;

namespace {

ScalingOptions tiny_sweep() {
  ScalingOptions o;
  o.n_qubits = {2, 3};
  o.ladder = {40, 80};
  o.seeds = {1, 2};
  o.fidelity_samples = 300;
  o.stop_at_crossing = false;
  o.shape.n_layers = 1;
  o.shape.embed_dim = 8;
  o.shape.n_heads = 2;
  o.shape.ff_dim = 16;
  o.train.max_epochs = 2;
  return o;
}

}  // namespace

TEST(DeriveSeed, DeterministicAndTagSensitive) {
  EXPECT_EQ(derive_seed(1, {2, 3}), derive_seed(1, {2, 3}));
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
  EXPECT_NE(derive_seed(1, {2}), derive_seed(2, {2}));
}

TEST(Crossing, FirstRungAtOrAboveThreshold) {
  const std::vector<std::size_t> ladder{100, 200, 500, 1000};
  auto t = find_crossing(4, ladder, {0.95, 0.985, 0.991}, 0.99);
  EXPECT_EQ(t.status, CrossingStatus::kResolved);
  EXPECT_EQ(t.n_star, 500u);
  t = find_crossing(4, ladder, {0.95, 0.99}, 0.99);
  EXPECT_EQ(t.status, CrossingStatus::kResolved);
  EXPECT_EQ(t.n_star, 200u);
}

TEST(Crossing, UnbracketedAndNeverReachedAreUnresolved) {
  const std::vector<std::size_t> ladder{100, 200};
  EXPECT_EQ(find_crossing(4, ladder, {0.995}, 0.99).status, CrossingStatus::kNotBracketed);
  EXPECT_EQ(find_crossing(4, ladder, {0.9, 0.95}, 0.99).status, CrossingStatus::kNeverReached);
}

TEST(Crossing, ThresholdCsvLeavesUnresolvedBlank) {
  SweepResult r;
  r.thresholds = {{4, CrossingStatus::kResolved, 500}, {6, CrossingStatus::kNeverReached, 0}};
  std::ostringstream os;
  write_threshold_csv(os, r);
  EXPECT_EQ(os.str(), "# aqt-sample-threshold v1\nn_qubits,status,n_star\n4,resolved,500\n6,never-reached,\n");
}

TEST(SweepScaling, ValidatesLadder) {
  auto o = tiny_sweep();
  o.ladder = {100, 100};
  EXPECT_THROW(sweep_scaling(o), ValidationError);
  o.ladder = {200, 100};
  EXPECT_THROW(sweep_scaling(o), ValidationError);
}

TEST(SweepScaling, CsvIsReproducible) {
  const auto o = tiny_sweep();
  const auto a = sweep_scaling(o);
  const auto b = sweep_scaling(o);
  ASSERT_EQ(a.rows.size(), 8u);
  std::ostringstream sa, sb;
  write_sweep_csv(sa, a);
  write_sweep_csv(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(sa.str().substr(0, sa.str().find('\n', sa.str().find('\n') + 1)),
            "# aqt-sweep-scaling v1\nn_qubits,n_samples,seed,fc,fc_std_error");
  EXPECT_EQ(a.thresholds.size(), 2u);
}

TEST(SweepScaling, StopsAtFirstCrossing) {
  auto o = tiny_sweep();
  o.n_qubits = {2};
  o.seeds = {1};
  o.threshold = 0.01;  // any model crosses
  o.stop_at_crossing = true;
  const auto r = sweep_scaling(o);
  EXPECT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.thresholds.front().status, CrossingStatus::kNotBracketed);
}

TEST(SweepError, RowsAndCsv) {
  ErrorSweepOptions o;
  o.p = {0.0, 0.2};
  o.n_samples = 200;
  o.shape = tiny_sweep().shape;
  o.train.max_epochs = 1;
  const auto rows = sweep_error(o);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_NEAR(r.deviation, std::abs(r.fq_ghz - (1.0 - r.p)), 1e-15);
    EXPECT_GE(r.fq_ghz, 0.0);
    EXPECT_LE(r.fq_ghz, 1.0);
  }
  std::ostringstream os;
  write_error_csv(os, rows);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n', os.str().find('\n') + 1)),
            "# aqt-sweep-error v1\np,seed,fq,abs_error,fq_err,fc,projection_distance");
  o.p = {1.5};
  EXPECT_THROW(sweep_error(o), ValidationError);
}

TEST(ReconstructMethod, Parses) {
  EXPECT_EQ(parse_reconstruct_method("aqt"), ReconstructMethod::kAqt);
  EXPECT_EQ(parse_reconstruct_method("mle"), ReconstructMethod::kMle);
  EXPECT_THROW(parse_reconstruct_method("svd"), ValidationError);
}
