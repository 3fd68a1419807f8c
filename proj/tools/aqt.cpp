// aqt: command-line front end for sampling, training, evaluation, sweeps and
// reconstruction. Every run writes manifest.json into its own run directory.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aqt/aqt.hpp"

namespace fs = std::filesystem;
using namespace aqt;

namespace {

const CLI::Validator kAtLeastOne(
    [](const std::string& v) -> std::string {
      try {
        if (std::stoll(v) >= 1) return {};
      } catch (const std::exception&) {
      }
      return "must be an integer >= 1, got " + v;
    },
    "INT>=1");

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

std::string utc_stamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw IoError("cannot open '" + p.string() + "' for writing");
  return os;
}

/// Run directory plus the manifest written when the command finishes.
class Run {
 public:
  void start(const CLI::App& app, const std::string& command, const fs::path& root) {
    command_ = command;
    // Globals plus the active subcommand's section.
    std::istringstream all(app.config_to_str(true, false));
    for (std::string line; std::getline(all, line);) {
      const auto key = line.substr(0, line.find('='));
      if (key.find('.') == std::string::npos || key.rfind(command + ".", 0) == 0) config_ += line + "\n";
    }
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(command + "\n" + config_)));
    const auto base = utc_stamp() + "-" + std::string(hash, 12);
    dir_ = root / base;
    for (int k = 2; fs::exists(dir_); ++k) dir_ = root / (base + "." + std::to_string(k));
    fs::create_directories(dir_);
    started_ = std::chrono::steady_clock::now();
  }

  const fs::path& dir() const { return dir_; }
  bool active() const { return !dir_.empty(); }

  /// An explicit path if given, otherwise `name` inside the run directory.
  fs::path artifact(const std::string& explicit_path, const std::string& name) {
    fs::path p = explicit_path.empty() ? dir_ / name : fs::path(explicit_path);
    artifacts_.push_back(p.string());
    return p;
  }

  nlohmann::json& results() { return results_; }

  void finish(int exit_code, const std::string& error = {}) {
    if (!active()) return;
    nlohmann::json m;
    m["format"] = "aqt-manifest v1";
    m["version"] = AQT_VERSION;
    m["command"] = command_;
    m["resolved_config"] = config_;
    m["rng"] = std::string(RandomStream::kAlgorithm);
    m["basis_convention"] = "qubit0-most-significant";
    m["artifacts"] = artifacts_;
    m["results"] = results_;
    m["exit_code"] = exit_code;
    if (!error.empty()) m["error"] = error;
    m["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    std::ofstream(dir_ / "manifest.json") << m.dump(2) << '\n';
  }

 private:
  std::string command_, config_;
  fs::path dir_;
  std::vector<std::string> artifacts_;
  nlohmann::json results_ = nlohmann::json::object();
  std::chrono::steady_clock::time_point started_;
};

struct ModelFlags {
  bool large = false;
  std::size_t layers = 2, embed_dim = 64, heads = 4, ff_dim = 0;
  CLI::Option *layers_opt = nullptr, *embed_opt = nullptr, *ff_opt = nullptr;

  void add(CLI::App* cmd) {
    cmd->add_flag("--large-config", large, "Use the 6-layer, d=256 architecture");
    layers_opt = cmd->add_option("--layers", layers, "Transformer layers")->check(kAtLeastOne)->capture_default_str();
    embed_opt = cmd->add_option("--embed-dim", embed_dim, "Embedding width")->check(kAtLeastOne)->capture_default_str();
    cmd->add_option("--heads", heads, "Attention heads")->check(kAtLeastOne)->capture_default_str();
    ff_opt = cmd->add_option("--ff-dim", ff_dim, "Feed-forward width (0 = 4 x embed-dim)")->capture_default_str();
  }

  ModelShape shape() const {
    ModelShape s = large ? TransformerConfig::large(1) : TransformerConfig::desk(1);
    if (!large || layers_opt->count()) s.n_layers = layers;
    if (!large || embed_opt->count()) s.embed_dim = embed_dim;
    s.n_heads = heads;
    s.ff_dim = ff_dim ? ff_dim : 4 * s.embed_dim;
    s.validate();
    return s;
  }
};

struct TrainFlags {
  TrainOptions o;
  bool no_shuffle = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--lr", o.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--lr-decay", o.lr_decay, "Per-epoch learning-rate multiplier")->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    cmd->add_option("--batch-size", o.batch_size, "Minibatch size")->check(kAtLeastOne)->capture_default_str();
    cmd->add_option("--epochs", o.max_epochs, "Maximum epochs")->check(kAtLeastOne)->capture_default_str();
    cmd->add_option("--patience", o.patience, "Early-stopping patience (epochs)")->capture_default_str();
    cmd->add_option("--heldout", o.heldout_fraction, "Held-out fraction")->check(CLI::Range(0.0, 0.99))
        ->capture_default_str();
    cmd->add_option("--beta1", o.beta1)->capture_default_str();
    cmd->add_option("--beta2", o.beta2)->capture_default_str();
    cmd->add_option("--adam-eps", o.epsilon)->capture_default_str();
    cmd->add_flag("--no-shuffle", no_shuffle, "Keep dataset order");
  }

  TrainOptions options() const {
    auto t = o;
    t.shuffle = !no_shuffle;
    return t;
  }
};

PsdProjectionMethod parse_projection(const std::string& s) {
  return s == "clip" ? PsdProjectionMethod::kClipRescale : PsdProjectionMethod::kNearest;
}

void print_epoch(const EpochStats& s) {
  std::fprintf(stderr, "epoch %4zu  train_nll %.6f  heldout_nll %.6f\n", s.epoch, s.train_nll, s.heldout_nll);
}

void write_trace_csv(std::ostream& os, const std::vector<EpochStats>& trace) {
  os << "epoch,train_nll,heldout_nll\n";
  for (const auto& s : trace) os << s.epoch << ',' << format_double(s.train_nll) << ',' << format_double(s.heldout_nll) << '\n';
}

/// Exact-probability summary of the sampled state and of the draws themselves.
void report_sample(const ProductOperatorEnsemble& state, const PovmFrame& frame, const OutcomeDataset& data,
                   nlohmann::json& results) {
  const auto n = state.n_qubits();
  std::printf("wrote %zu outcomes of %zu qubits\n", data.size(), n);
  if (n > 6) return;
  const auto exact = povm_probabilities(to_dense_matrix(state), n, frame);
  const auto freq = empirical_frequencies(data);
  double entropy = 0.0, pmax = 0.0, bc = 0.0;
  std::size_t support = 0;
  for (std::size_t a = 0; a < exact.size(); ++a) {
    const double p = std::max(exact[a], 0.0);
    if (p > 1e-15) {
      entropy -= p * std::log(p);
      ++support;
    }
    pmax = std::max(pmax, p);
    bc += std::sqrt(p * freq[a]);
  }
  std::printf("exact distribution: %zu of %zu outcomes with p > 0, max p = %.6g, entropy = %.6f nats\n", support,
              exact.size(), pmax, entropy);
  std::printf("classical fidelity of empirical frequencies to exact p: %.6f\n", bc);
  results["exact_entropy_nats"] = entropy;
  results["support"] = support;
  results["empirical_fc"] = bc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-based quantum state tomography"};
  app.set_config("--config", "", "TOML/INI config file; command-line flags override it");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(AQT_VERSION));
  std::string runs_root = "runs";
  std::size_t workers = 1;
  bool verbose = false;
  app.add_option("--runs-dir", runs_root, "Parent directory for per-run output")->capture_default_str();
  app.add_option("--workers", workers, "Sampling threads")->check(kAtLeastOne)->capture_default_str();
  app.add_flag("-v,--verbose", verbose, "Print per-epoch progress");

  // sample
  auto* c_sample = app.add_subcommand("sample", "Draw POVM outcomes from a simulated state");
  std::string s_state, s_out;
  std::size_t s_n = 0;
  std::uint64_t s_seed = 0;
  c_sample->add_option("--state", s_state, "ghz:N or faulty:p")->required();
  c_sample->add_option("--n", s_n, "Number of outcomes")->required()->check(kAtLeastOne);
  c_sample->add_option("--seed", s_seed)->capture_default_str();
  c_sample->add_option("--out", s_out, "Dataset path (default: run directory)");

  // train
  auto* c_train = app.add_subcommand("train", "Train a model on a dataset");
  std::string t_data, t_ckpt, t_trace;
  std::uint64_t t_seed = 0;
  ModelFlags t_model;
  TrainFlags t_train;
  c_train->add_option("--data", t_data, "Dataset file")->required();
  c_train->add_option("--checkpoint", t_ckpt, "Checkpoint output path (default: run directory)");
  c_train->add_option("--trace", t_trace, "Loss-trace CSV path (default: run directory)");
  c_train->add_option("--seed", t_seed, "Seed for initialization and shuffling")->capture_default_str();
  t_model.add(c_train);
  t_train.add(c_train);

  // eval
  auto* c_eval = app.add_subcommand("eval", "Score a checkpoint against a target state");
  std::string e_ckpt, e_state, e_which, e_out, e_proj = "nearest";
  std::size_t e_n = 100000;
  std::uint64_t e_seed = 0;
  c_eval->add_option("--checkpoint", e_ckpt)->required();
  c_eval->add_option("--state", e_state, "ghz:N or faulty:p")->required();
  c_eval->add_option("--which", e_which)->required()->check(CLI::IsMember({"fc-sampled", "fc-exact", "fq"}));
  c_eval->add_option("--n", e_n, "Draws for fc-sampled")->check(kAtLeastOne)->capture_default_str();
  c_eval->add_option("--seed", e_seed)->capture_default_str();
  c_eval->add_option("--out", e_out, "Density-matrix export path for fq (default: run directory)");
  c_eval->add_option("--projection", e_proj)->check(CLI::IsMember({"nearest", "clip"}))->capture_default_str();

  // sweep-scaling
  auto* c_scale = app.add_subcommand("sweep-scaling", "Sample size needed to reach a classical fidelity");
  ScalingOptions sc;
  std::string sc_out, sc_thr_out;
  ModelFlags sc_model;
  TrainFlags sc_train;
  c_scale->add_option("--qubits", sc.n_qubits, "Grid of N_q")->capture_default_str();
  c_scale->add_option("--ladder", sc.ladder, "Strictly increasing sample sizes")->capture_default_str();
  c_scale->add_option("--threshold", sc.threshold)->capture_default_str();
  c_scale->add_option("--seeds", sc.seeds, "Seeds averaged per point")->capture_default_str();
  c_scale->add_option("--fc-samples", sc.fidelity_samples)->check(kAtLeastOne)->capture_default_str();
  c_scale->add_flag("!--full-ladder", sc.stop_at_crossing, "Keep climbing past the first crossing");
  c_scale->add_option("--out", sc_out, "Sweep CSV path (default: run directory)");
  c_scale->add_option("--thresholds-out", sc_thr_out, "N_s* CSV path (default: run directory)");
  sc_model.add(c_scale);
  sc_train.add(c_scale);

  // sweep-error
  auto* c_err = app.add_subcommand("sweep-error", "Read the error rate of faulty-qubit states off F_Q");
  ErrorSweepOptions er;
  std::string er_out, er_proj = "nearest";
  ModelFlags er_model;
  TrainFlags er_train;
  c_err->add_option("--p", er.p, "Error probabilities")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  c_err->add_option("--n", er.n_samples, "Samples per point")->check(kAtLeastOne)->capture_default_str();
  c_err->add_option("--seeds", er.seeds)->capture_default_str();
  c_err->add_option("--projection", er_proj)->check(CLI::IsMember({"nearest", "clip"}))->capture_default_str();
  c_err->add_option("--out", er_out, "CSV path (default: run directory)");
  er_model.add(c_err);
  er_train.add(c_err);

  // reconstruct
  auto* c_rec = app.add_subcommand("reconstruct", "Density matrix from a checkpoint or a dataset");
  std::string r_ckpt, r_data, r_method = "aqt", r_out, r_bars, r_state, r_proj = "nearest";
  MleOptions r_mle;
  auto* r_ckpt_opt = c_rec->add_option("--checkpoint", r_ckpt, "Trained model (method aqt)");
  auto* r_data_opt = c_rec->add_option("--data", r_data, "Dataset (methods linear, mle)");
  r_ckpt_opt->excludes(r_data_opt);
  c_rec->add_option("--method", r_method)->check(CLI::IsMember({"aqt", "linear", "mle"}))->capture_default_str();
  c_rec->add_option("--out", r_out, "Density-matrix export path (default: run directory)");
  c_rec->add_option("--bars", r_bars, "Bar-plot CSV path (default: run directory)");
  c_rec->add_option("--state", r_state, "Optional target state for an F_Q report");
  c_rec->add_option("--max-iters", r_mle.max_iters)->capture_default_str();
  c_rec->add_option("--tol", r_mle.tol)->capture_default_str();
  c_rec->add_option("--projection", r_proj)->check(CLI::IsMember({"nearest", "clip"}))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const auto* cmd = app.get_subcommands().front();
  Run run;
  auto on_epoch = [&](const EpochStats& s) {
    if (verbose) print_epoch(s);
  };
  try {
    run.start(app, cmd->get_name(), runs_root);
    const auto frame = pauli4_frame();
    auto& results = run.results();

    if (cmd == c_sample) {
      const auto state = parse_state_spec(s_state);
      const auto data = sample(state, frame, s_n, s_seed, simulated_source(s_state), workers);
      const auto path = run.artifact(s_out, "dataset.txt");
      save_dataset(path.string(), data);
      report_sample(state, frame, data, results);
    } else if (cmd == c_train) {
      const auto data = load_dataset(t_data);
      auto config = t_model.shape();
      config.max_len = data.n_qubits;
      config.seed = t_seed;
      auto opts = t_train.options();
      opts.seed = t_seed;
      TrainResult result = [&] {
        try {
          return train(init(config), data, opts, on_epoch);
        } catch (const TrainingAborted& e) {
          save_checkpoint(run.artifact("", "last_good.ckpt").string(), {e.last_good(), opts, data.source});
          throw;
        }
      }();
      const auto ckpt = run.artifact(t_ckpt, "model.ckpt");
      save_checkpoint(ckpt.string(), {result.model, opts, data.source});
      auto trace_os = open_out(run.artifact(t_trace, "trace.csv"));
      write_trace_csv(trace_os, result.trace);
      const auto& best = result.trace[result.best_epoch - 1];
      std::printf("trained %zu epochs (best %zu%s): train_nll %.6f heldout_nll %.6f\n", result.trace.size(),
                  result.best_epoch, result.early_stopped ? ", early stop" : "", best.train_nll, best.heldout_nll);
      results["epochs"] = result.trace.size();
      results["best_epoch"] = result.best_epoch;
      results["best_heldout_nll"] = best.heldout_nll;
    } else if (cmd == c_eval) {
      const auto ck = load_checkpoint(e_ckpt);
      const auto state = parse_state_spec(e_state);
      if (state.n_qubits() != ck.model.n_qubits()) {
        throw ValidationError("state has " + std::to_string(state.n_qubits()) + " qubits but the model has " +
                              std::to_string(ck.model.n_qubits()));
      }
      const auto p0 = state_probability_fn(state, frame);
      if (e_which == "fc-sampled") {
        const auto fc = classical_fidelity_sampled(p0, ck.model, e_n, e_seed);
        std::printf("F_C = %.6f +- %.6f (sampled, n = %zu)\n", fc.value, fc.std_error, fc.n_samples);
        results["fc"] = fc.value;
        results["fc_std_error"] = fc.std_error;
      } else if (e_which == "fc-exact") {
        const auto fc = classical_fidelity_exact(p0, model_probability_fn(ck.model), state.n_qubits());
        std::printf("F_C = %.10f (exact)\n", fc.value);
        results["fc"] = fc.value;
      } else {
        const auto rec = reconstruct_model(ck.model, frame, parse_projection(e_proj));
        const double fq = quantum_fidelity(rec.projected, to_dense(state));
        save_density_matrix(run.artifact(e_out, "density_matrix.json").string(), rec.projected);
        std::printf("F_Q = %.6f (projection distance %.6f)\n", fq, rec.projected.projection_distance);
        results["fq"] = fq;
        results["projection_distance"] = rec.projected.projection_distance;
      }
    } else if (cmd == c_scale) {
      sc.shape = sc_model.shape();
      sc.train = sc_train.options();
      const auto sweep = sweep_scaling(sc, frame, [&](const SweepRow& r) {
        std::fprintf(stderr, "N_q=%zu N_s=%zu seed=%llu F_C=%.5f +- %.5f (%.1f s)\n", r.n_qubits, r.n_samples,
                     static_cast<unsigned long long>(r.seed), r.fc, r.fc_std_error, r.wall_time);
      });
      auto os = open_out(run.artifact(sc_out, "sweep_scaling.csv"));
      write_sweep_csv(os, sweep);
      auto ts = open_out(run.artifact("", "sweep_scaling_timing.csv"));
      write_sweep_timing_csv(ts, sweep);
      auto th = open_out(run.artifact(sc_thr_out, "sample_thresholds.csv"));
      write_threshold_csv(th, sweep);
      for (const auto& t : sweep.thresholds) {
        if (t.status == CrossingStatus::kResolved) {
          std::printf("N_q=%zu  N_s*=%zu\n", t.n_qubits, t.n_star);
        } else {
          std::printf("N_q=%zu  N_s* unresolved (%s)\n", t.n_qubits, to_string(t.status));
        }
        results["n_star"][std::to_string(t.n_qubits)] =
            t.status == CrossingStatus::kResolved ? nlohmann::json(t.n_star) : nlohmann::json(to_string(t.status));
      }
    } else if (cmd == c_err) {
      er.shape = er_model.shape();
      er.train = er_train.options();
      er.projection = parse_projection(er_proj);
      const auto rows = sweep_error(er, frame, [](const ErrorRow& r) {
        std::printf("p=%.3f seed=%llu  F_Q(GHZ)=%.4f  |F_Q-(1-p)|=%.4f  F_Q(rho_err)=%.4f  F_C=%.5f\n", r.p,
                    static_cast<unsigned long long>(r.seed), r.fq_ghz, r.deviation, r.fq_err, r.fc);
      });
      auto os = open_out(run.artifact(er_out, "sweep_error.csv"));
      write_error_csv(os, rows);
    } else if (cmd == c_rec) {
      const auto method = parse_reconstruct_method(r_method);
      const auto proj = parse_projection(r_proj);
      Reconstruction rec = [&] {
        if (method == ReconstructMethod::kAqt) {
          if (r_ckpt.empty()) throw ValidationError("method aqt needs --checkpoint");
          return reconstruct_model(load_checkpoint(r_ckpt).model, frame, proj);
        }
        if (r_data.empty()) throw ValidationError("methods linear and mle need --data");
        return reconstruct_dataset(load_dataset(r_data), method, frame, r_mle, proj);
      }();
      save_density_matrix(run.artifact(r_out, "density_matrix.json").string(), rec.projected);
      auto bars = open_out(run.artifact(r_bars, "bars.csv"));
      write_bar_csv(bars, rec.projected.matrix);
      const double corner = corner_mass_fraction(rec.projected.matrix);
      std::printf("reconstructed %zu-qubit density matrix (%s), projection distance %.6f, corner mass %.4f\n",
                  rec.projected.n_qubits, r_method.c_str(), rec.projected.projection_distance, corner);
      results["corner_mass_fraction"] = corner;
      results["projection_distance"] = rec.projected.projection_distance;
      if (rec.mle) {
        std::printf("MLE: %zu iterations, %s\n", rec.mle->iterations, rec.mle->converged ? "converged" : "NOT converged");
        results["mle_iterations"] = rec.mle->iterations;
        results["mle_converged"] = rec.mle->converged;
      }
      if (!r_state.empty()) {
        const double fq = quantum_fidelity(rec.projected, to_dense(parse_state_spec(r_state)));
        std::printf("F_Q to %s = %.6f\n", r_state.c_str(), fq);
        results["fq"] = fq;
      }
    }
    run.finish(0);
    return 0;
  } catch (const Error& e) {
    std::fprintf(stderr, "aqt %s: %s\n", cmd->get_name().c_str(), e.what());
    run.finish(e.exit_code(), e.what());
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "aqt %s: I/O error: %s\n", cmd->get_name().c_str(), e.what());
    run.finish(2, e.what());
    return 2;
  }
}
