#pragma once

#include <bit>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <initializer_list>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "aqt/error.hpp"
#include "aqt/fidelity.hpp"
#include "aqt/model.hpp"
#include "aqt/povm.hpp"
#include "aqt/reconstruct.hpp"
#include "aqt/states.hpp"
#include "aqt/train.hpp"

namespace aqt {

/// splitmix64 finalizer folded over the tags; used to give every pipeline stage
/// its own seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(base);
  for (const auto t : tags) h = mix(h ^ t);
  return h;
}

enum SeedTag : std::uint64_t { kTagData = 1, kTagInit = 2, kTagTrain = 3, kTagFidelity = 4 };

/// Architecture template; max_len and seed are filled in per run.
using ModelShape = TransformerConfig;

struct TrainedRun {
  OutcomeDataset data;
  TrainResult result;
  double seconds = 0.0;
};

/// sample -> init -> train, all seeds derived from `seed`.
inline TrainedRun sample_and_train(const ProductOperatorEnsemble& state, const PovmFrame& frame,
                                   std::size_t n_samples, std::uint64_t seed, const ModelShape& shape,
                                   TrainOptions opts, const std::string& label = "state") {
  const auto t0 = std::chrono::steady_clock::now();
  auto data = sample(state, frame, n_samples, derive_seed(seed, {kTagData}), simulated_source(label));
  auto config = shape;
  config.max_len = state.n_qubits();
  config.seed = derive_seed(seed, {kTagInit});
  opts.seed = derive_seed(seed, {kTagTrain});
  auto result = train(init(config), data, opts);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(data), std::move(result), seconds};
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---- sample-size scaling -------------------------------------------------

struct ScalingOptions {
  std::vector<std::size_t> n_qubits{4, 6, 8, 10};
  std::vector<std::size_t> ladder{100, 200, 500, 1000, 2000, 5000, 10000};
  double threshold = 0.99;
  std::vector<std::uint64_t> seeds{1};
  std::size_t fidelity_samples = 10000;
  bool stop_at_crossing = true;
  ModelShape shape;
  TrainOptions train;
};

struct SweepRow {
  std::size_t n_qubits = 0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  double fc = 0.0;
  double fc_std_error = 0.0;
  double wall_time = 0.0;
};

enum class CrossingStatus { kResolved, kNeverReached, kNotBracketed };

inline const char* to_string(CrossingStatus s) {
  switch (s) {
    case CrossingStatus::kResolved: return "resolved";
    case CrossingStatus::kNeverReached: return "never-reached";
    case CrossingStatus::kNotBracketed: return "not-bracketed";
  }
  return "?";
}

struct SampleSizeThreshold {
  std::size_t n_qubits = 0;
  CrossingStatus status = CrossingStatus::kNeverReached;
  std::size_t n_star = 0;  // meaningful only when resolved
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<SampleSizeThreshold> thresholds;
};

/// Seed-averaged F_C per rung; N_s* is the first rung whose mean reaches the
/// threshold, provided the rung below it was tested and fell short.
inline SampleSizeThreshold find_crossing(std::size_t n_qubits, const std::vector<std::size_t>& ladder,
                                         const std::vector<double>& mean_fc, double threshold) {
  SampleSizeThreshold out{n_qubits, CrossingStatus::kNeverReached, 0};
  for (std::size_t k = 0; k < mean_fc.size(); ++k) {
    if (mean_fc[k] >= threshold) {
      out.status = k == 0 ? CrossingStatus::kNotBracketed : CrossingStatus::kResolved;
      out.n_star = ladder[k];
      return out;
    }
  }
  return out;
}

inline void validate(const ScalingOptions& o) {
  if (o.n_qubits.empty() || o.ladder.empty() || o.seeds.empty()) throw ValidationError("sweep grid is empty");
  for (std::size_t k = 1; k < o.ladder.size(); ++k) {
    if (o.ladder[k] <= o.ladder[k - 1]) throw ValidationError("sample-size ladder must be strictly increasing");
  }
  if (o.ladder.front() == 0) throw ValidationError("sample-size ladder entries must be positive");
  if (!(o.threshold > 0.0 && o.threshold <= 1.0)) throw ValidationError("threshold must lie in (0, 1]");
  if (o.fidelity_samples == 0) throw ValidationError("fidelity_samples must be positive");
}

inline SweepResult sweep_scaling(const ScalingOptions& opts, const PovmFrame& frame = pauli4_frame(),
                                 const std::function<void(const SweepRow&)>& on_row = {}) {
  validate(opts);
  SweepResult out;
  for (const auto nq : opts.n_qubits) {
    const auto state = ghz(nq);
    const auto p0 = state_probability_fn(state, frame);
    std::vector<double> mean_fc;
    for (const auto ns : opts.ladder) {
      double sum = 0.0;
      for (const auto seed : opts.seeds) {
        const auto point_seed = derive_seed(seed, {nq, ns});
        auto run = sample_and_train(state, frame, ns, point_seed, opts.shape, opts.train, "ghz:" + std::to_string(nq));
        const auto t0 = std::chrono::steady_clock::now();
        const auto fc = classical_fidelity_sampled(p0, run.result.model, opts.fidelity_samples,
                                                   derive_seed(point_seed, {kTagFidelity}));
        const double seconds = run.seconds + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        SweepRow row{nq, ns, seed, fc.value, fc.std_error, seconds};
        out.rows.push_back(row);
        if (on_row) on_row(row);
        sum += fc.value;
      }
      mean_fc.push_back(sum / static_cast<double>(opts.seeds.size()));
      if (opts.stop_at_crossing && mean_fc.back() >= opts.threshold) break;
    }
    out.thresholds.push_back(find_crossing(nq, opts.ladder, mean_fc, opts.threshold));
  }
  return out;
}

// The CSV leaves out wall_time so that reruns are byte-identical; timings go
// to a separate file.
inline void write_sweep_csv(std::ostream& os, const SweepResult& r) {
  os << "# aqt-sweep-scaling v1\n" << "n_qubits,n_samples,seed,fc,fc_std_error\n";
  for (const auto& row : r.rows) {
    os << row.n_qubits << ',' << row.n_samples << ',' << row.seed << ',' << format_double(row.fc) << ','
       << format_double(row.fc_std_error) << '\n';
  }
}

inline void write_sweep_timing_csv(std::ostream& os, const SweepResult& r) {
  os << "n_qubits,n_samples,seed,wall_time\n";
  char buf[32];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%.3f", row.wall_time);
    os << row.n_qubits << ',' << row.n_samples << ',' << row.seed << ',' << buf << '\n';
  }
}

inline void write_threshold_csv(std::ostream& os, const SweepResult& r) {
  os << "# aqt-sample-threshold v1\n" << "n_qubits,status,n_star\n";
  for (const auto& t : r.thresholds) {
    os << t.n_qubits << ',' << to_string(t.status) << ',';
    if (t.status == CrossingStatus::kResolved) os << t.n_star;
    os << '\n';
  }
}

// ---- error-model readout -------------------------------------------------

struct ErrorSweepOptions {
  std::vector<double> p{0.0, 0.1, 0.2, 0.3};
  std::size_t n_samples = 60000;
  std::vector<std::uint64_t> seeds{1};
  PsdProjectionMethod projection = PsdProjectionMethod::kNearest;
  ModelShape shape;
  TrainOptions train;
};

struct ErrorRow {
  double p = 0.0;
  std::uint64_t seed = 0;
  double fq_ghz = 0.0;        // F_Q(rho_model, GHZ)
  double deviation = 0.0;     // |fq_ghz - (1 - p)|
  double fq_err = 0.0;        // F_Q(rho_model, rho_err)
  double fc = 0.0;            // exact F_C(p_err, p_model)
  double projection_distance = 0.0;
};

inline ErrorRow error_point(double p, std::size_t n_samples, std::uint64_t seed, const ModelShape& shape,
                            const TrainOptions& train_opts, PsdProjectionMethod projection,
                            const PovmFrame& frame = pauli4_frame()) {
  const auto state = faulty_qubit_state(p);
  auto run = sample_and_train(state, frame, n_samples, derive_seed(seed, {std::bit_cast<std::uint64_t>(p)}), shape,
                              train_opts, "faulty:" + format_double(p));
  const auto& model = run.result.model;
  const auto rho = project_to_psd(reconstruct_from_model(model, frame).matrix, projection);
  ErrorRow row;
  row.p = p;
  row.seed = seed;
  row.fq_ghz = quantum_fidelity(rho.rho, to_dense(ghz(3)));
  row.deviation = std::abs(row.fq_ghz - (1.0 - p));
  row.fq_err = quantum_fidelity(rho.rho, to_dense(state));
  row.fc = classical_fidelity_exact(state_probability_fn(state, frame), model_probability_fn(model), 3).value;
  row.projection_distance = rho.distance;
  return row;
}

inline std::vector<ErrorRow> sweep_error(const ErrorSweepOptions& opts, const PovmFrame& frame = pauli4_frame(),
                                         const std::function<void(const ErrorRow&)>& on_row = {}) {
  for (const double p : opts.p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("error probability " + format_double(p) + " outside [0, 1]");
  }
  if (opts.n_samples == 0) throw ValidationError("n_samples must be positive");
  std::vector<ErrorRow> rows;
  for (const double p : opts.p)
    for (const auto seed : opts.seeds) {
      rows.push_back(error_point(p, opts.n_samples, seed, opts.shape, opts.train, opts.projection, frame));
      if (on_row) on_row(rows.back());
    }
  return rows;
}

inline void write_error_csv(std::ostream& os, const std::vector<ErrorRow>& rows) {
  os << "# aqt-sweep-error v1\n" << "p,seed,fq,abs_error,fq_err,fc,projection_distance\n";
  for (const auto& r : rows) {
    os << format_double(r.p) << ',' << r.seed << ',' << format_double(r.fq_ghz) << ',' << format_double(r.deviation)
       << ',' << format_double(r.fq_err) << ',' << format_double(r.fc) << ','
       << format_double(r.projection_distance) << '\n';
  }
}

// ---- reconstruction ------------------------------------------------------

enum class ReconstructMethod { kAqt, kLinear, kMle };

inline ReconstructMethod parse_reconstruct_method(const std::string& s) {
  if (s == "aqt") return ReconstructMethod::kAqt;
  if (s == "linear") return ReconstructMethod::kLinear;
  if (s == "mle") return ReconstructMethod::kMle;
  throw ValidationError("unknown reconstruction method '" + s + "' (expected aqt, linear or mle)");
}

struct Reconstruction {
  DensityMatrix raw;        // frame inversion; PSD only for MLE
  DensityMatrix projected;  // unit-trace PSD
  std::optional<MleResult> mle;
};

inline Reconstruction finish_reconstruction(DensityMatrix raw, PsdProjectionMethod projection) {
  auto p = project_to_psd(raw.matrix, projection);
  return {std::move(raw), std::move(p.rho), std::nullopt};
}

inline Reconstruction reconstruct_model(const TransformerModel& model, const PovmFrame& frame = pauli4_frame(),
                                        PsdProjectionMethod projection = PsdProjectionMethod::kNearest) {
  return finish_reconstruction(reconstruct_from_model(model, frame), projection);
}

inline Reconstruction reconstruct_dataset(const OutcomeDataset& data, ReconstructMethod method,
                                          const PovmFrame& frame = pauli4_frame(), const MleOptions& mle = {},
                                          PsdProjectionMethod projection = PsdProjectionMethod::kNearest) {
  if (method == ReconstructMethod::kAqt) throw ValidationError("aqt reconstruction needs a trained model");
  if (method == ReconstructMethod::kLinear) return finish_reconstruction(linear_inversion(data, frame), projection);
  auto fit = mle_reconstruct(data, frame, mle);
  Reconstruction r{fit.rho, fit.rho, std::nullopt};
  r.mle = std::move(fit);
  return r;
}

}  // namespace aqt
