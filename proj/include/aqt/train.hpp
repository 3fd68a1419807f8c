#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "aqt/error.hpp"
#include "aqt/model.hpp"
#include "aqt/povm.hpp"
#include "aqt/rng.hpp"

namespace aqt {

struct TrainOptions {
  double learning_rate = 1e-3;
  double lr_decay = 1.0;  // per-epoch multiplier; epoch e uses learning_rate * lr_decay^(e-1)
  std::size_t batch_size = 100;
  std::size_t max_epochs = 200;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = true;
  double heldout_fraction = 0.1;
  std::size_t patience = 10;  // epochs without held-out improvement
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  double heldout_nll = 0.0;  // NaN when there is no held-out split
};

struct TrainResult {
  TransformerModel model;
  std::vector<EpochStats> trace;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

/// Raised when the loss turns non-finite; carries the parameters from before
/// the offending step.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, TransformerModel last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const TransformerModel& last_good() const noexcept { return last_good_; }

 private:
  TransformerModel last_good_;
};

class Adam {
 public:
  Adam(std::size_t n, const TrainOptions& opts) : opts_(opts), m_(n, 0.0), v_(n, 0.0) {}

  void step(AlignedBuffer& params, const AlignedBuffer& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * grads[i];
      v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * grads[i] * grads[i];
      params[i] -= opts_.learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + opts_.epsilon);
    }
  }

  std::size_t steps() const noexcept { return t_; }
  void set_learning_rate(double lr) noexcept { opts_.learning_rate = lr; }

 private:
  TrainOptions opts_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

/// Mean negative log-likelihood of a set of packed outcomes.
inline double mean_nll(const TransformerModel& model, std::span<const Symbol> symbols) {
  const auto lp = log_probs(model, symbols);
  double total = 0.0;
  for (const double v : lp) total -= v;
  return total / static_cast<double>(lp.size());
}

inline void validate_training_inputs(const TransformerModel& model, const OutcomeDataset& data,
                                     const TrainOptions& opts) {
  std::vector<std::string> problems;
  if (data.n_qubits != model.config().max_len) {
    problems.push_back("dataset n_qubits=" + std::to_string(data.n_qubits) +
                       " but model max_len=" + std::to_string(model.config().max_len));
  }
  if (data.povm_name != "pauli4") problems.push_back("dataset povm=" + data.povm_name + " (expected pauli4)");
  if (data.empty()) problems.push_back("dataset has no outcomes");
  if (opts.batch_size == 0) problems.push_back("batch_size must be positive");
  if (!(opts.learning_rate > 0.0)) problems.push_back("learning_rate must be positive");
  if (!(opts.lr_decay > 0.0 && opts.lr_decay <= 1.0)) problems.push_back("lr_decay must lie in (0, 1]");
  if (!(opts.heldout_fraction >= 0.0 && opts.heldout_fraction < 1.0)) {
    problems.push_back("heldout_fraction must lie in [0, 1)");
  }
  if (!problems.empty()) {
    std::string msg = "training inputs are inconsistent:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ValidationError(msg);
  }
}

/// Adam on the mean NLL with a held-out split for early stopping. The returned
/// model holds the parameters of the epoch with the best held-out NLL.
inline TrainResult train(TransformerModel model, const OutcomeDataset& data, const TrainOptions& opts,
                         const std::function<void(const EpochStats&)>& on_epoch = {}) {
  validate_training_inputs(model, data, opts);
  const std::size_t len = data.n_qubits;
  const std::size_t n = data.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (opts.shuffle) RandomStream(opts.seed, 0).shuffle(order.begin(), order.end());
  std::size_t n_heldout = static_cast<std::size_t>(std::floor(opts.heldout_fraction * static_cast<double>(n)));
  if (opts.heldout_fraction > 0.0 && n_heldout == 0 && n >= 2) n_heldout = 1;

  auto gather = [&](auto first, auto last) {
    std::vector<Symbol> out;
    out.reserve(static_cast<std::size_t>(last - first) * len);
    for (auto it = first; it != last; ++it) {
      const auto a = data.outcome(*it);
      out.insert(out.end(), a.begin(), a.end());
    }
    return out;
  };
  const std::vector<Symbol> heldout = gather(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_heldout));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_heldout), order.end());

  Adam adam(model.parameters().size(), opts);
  TrainResult result{model, {}, 0, false};
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<Symbol> batch;

  for (std::size_t epoch = 1; epoch <= opts.max_epochs; ++epoch) {
    if (opts.shuffle) RandomStream(opts.seed, epoch).shuffle(train_idx.begin(), train_idx.end());
    adam.set_learning_rate(opts.learning_rate * std::pow(opts.lr_decay, static_cast<double>(epoch - 1)));
    double total = 0.0;
    for (std::size_t first = 0; first < train_idx.size(); first += opts.batch_size) {
      const auto last = std::min(train_idx.size(), first + opts.batch_size);
      batch.clear();
      for (std::size_t i = first; i < last; ++i) {
        const auto a = data.outcome(train_idx[i]);
        batch.insert(batch.end(), a.begin(), a.end());
      }
      auto step = nll_and_gradients(model, batch);
      if (!std::isfinite(step.loss)) {
        throw TrainingAborted("loss became non-finite at epoch " + std::to_string(epoch), model);
      }
      total += step.loss * static_cast<double>(last - first);
      adam.step(model.parameters(), step.grads);
    }
    if (!model.all_finite()) throw TrainingAborted("parameters became non-finite at epoch " + std::to_string(epoch), result.model);

    EpochStats stats{epoch, total / static_cast<double>(train_idx.size()), std::numeric_limits<double>::quiet_NaN()};
    const double score = heldout.empty() ? stats.train_nll : (stats.heldout_nll = mean_nll(model, heldout));
    result.trace.push_back(stats);
    if (on_epoch) on_epoch(stats);

    if (score < best) {
      best = score;
      since_best = 0;
      result.best_epoch = epoch;
      result.model = model;
    } else if (!heldout.empty() && ++since_best >= opts.patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

}  // namespace aqt
