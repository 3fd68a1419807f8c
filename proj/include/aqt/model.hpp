#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "aqt/error.hpp"
#include "aqt/povm.hpp"
#include "aqt/rng.hpp"

namespace aqt {

/// Hyperparameters of the autoregressive Transformer. Token ids 0..3 are
/// outcome symbols and id 4 is the start token.
struct TransformerConfig {
  static constexpr std::size_t kVocab = 5;
  static constexpr int kStartToken = 4;

  std::size_t n_layers = 2;
  std::size_t embed_dim = 64;
  std::size_t n_heads = 4;
  std::size_t ff_dim = 256;
  std::size_t vocab = kVocab;
  std::size_t max_len = 1;
  std::uint64_t seed = 0;

  /// Two layers, d = 64: small enough for CI.
  static TransformerConfig desk(std::size_t n_qubits, std::uint64_t seed = 0) {
    TransformerConfig c;
    c.max_len = n_qubits;
    c.seed = seed;
    return c;
  }

  /// Six layers, d = 256.
  static TransformerConfig large(std::size_t n_qubits, std::uint64_t seed = 0) {
    TransformerConfig c;
    c.n_layers = 6;
    c.embed_dim = 256;
    c.ff_dim = 4 * 256;
    c.max_len = n_qubits;
    c.seed = seed;
    return c;
  }

  void validate() const {
    if (n_layers == 0) throw ValidationError("n_layers must be at least 1");
    if (embed_dim == 0 || n_heads == 0 || embed_dim % n_heads != 0) {
      throw ValidationError("embed_dim (" + std::to_string(embed_dim) + ") must be divisible by n_heads (" +
                            std::to_string(n_heads) + ")");
    }
    if (ff_dim == 0) throw ValidationError("ff_dim must be positive");
    if (vocab != kVocab) throw ValidationError("vocab must be 5 (four outcomes plus start token)");
    if (max_len == 0) throw ValidationError("max_len must be at least 1");
  }

  std::size_t head_dim() const { return embed_dim / n_heads; }

  friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;
};

struct ParameterSpec {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  std::size_t size() const noexcept { return rows * cols; }
};

/// Fixed order of the named parameter arrays inside one flat buffer:
///   token_embedding [5 x d]
///   per layer l: layer<l>.ln1.gain, .ln1.bias [1 x d], .attn.wq, .wk, .wv, .wo
///     [d x d], .ln2.gain, .ln2.bias [1 x d], .ff.w1 [d x ff], .ff.b1 [1 x ff],
///     .ff.w2 [ff x d], .ff.b2 [1 x d]
///   final_ln.gain, final_ln.bias [1 x d]
///   head.weight [d x 4], head.bias [1 x 4]
/// Linear maps act on row vectors: y = x W + b.
class ParameterLayout {
 public:
  struct Layer {
    std::size_t ln1_gain, ln1_bias, wq, wk, wv, wo, ln2_gain, ln2_bias, w1, b1, w2, b2;
  };

  explicit ParameterLayout(const TransformerConfig& c) {
    const auto d = c.embed_dim;
    token_embedding = add("token_embedding", c.vocab, d);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      const auto p = "layer" + std::to_string(l) + ".";
      Layer layer{};
      layer.ln1_gain = add(p + "ln1.gain", 1, d);
      layer.ln1_bias = add(p + "ln1.bias", 1, d);
      layer.wq = add(p + "attn.wq", d, d);
      layer.wk = add(p + "attn.wk", d, d);
      layer.wv = add(p + "attn.wv", d, d);
      layer.wo = add(p + "attn.wo", d, d);
      layer.ln2_gain = add(p + "ln2.gain", 1, d);
      layer.ln2_bias = add(p + "ln2.bias", 1, d);
      layer.w1 = add(p + "ff.w1", d, c.ff_dim);
      layer.b1 = add(p + "ff.b1", 1, c.ff_dim);
      layer.w2 = add(p + "ff.w2", c.ff_dim, d);
      layer.b2 = add(p + "ff.b2", 1, d);
      layers.push_back(layer);
    }
    final_gain = add("final_ln.gain", 1, d);
    final_bias = add("final_ln.bias", 1, d);
    head_weight = add("head.weight", d, kNumOutcomes);
    head_bias = add("head.bias", 1, kNumOutcomes);
  }

  const std::vector<ParameterSpec>& specs() const noexcept { return specs_; }
  const ParameterSpec& operator[](std::size_t i) const { return specs_[i]; }
  std::size_t total() const noexcept { return total_; }

  std::size_t token_embedding = 0;
  std::vector<Layer> layers;
  std::size_t final_gain = 0, final_bias = 0, head_weight = 0, head_bias = 0;

 private:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols) {
    specs_.push_back({std::move(name), rows, cols, total_});
    total_ += rows * cols;
    return specs_.size() - 1;
  }

  std::vector<ParameterSpec> specs_;
  std::size_t total_ = 0;
};

/// Heap buffers that Eigen maps over. A fixed base alignment keeps the
/// vectorized reductions on the same code path from run to run.
using AlignedBuffer = std::vector<double, Eigen::aligned_allocator<double>>;

namespace nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using RowVec = Eigen::Map<Eigen::RowVectorXd>;
using ConstRowVec = Eigen::Map<const Eigen::RowVectorXd>;

inline constexpr double kLayerNormEps = 1e-5;

inline ConstMatMap view(const AlignedBuffer& buf, const ParameterSpec& s) {
  return {buf.data() + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols)};
}
inline MatMap view(AlignedBuffer& buf, const ParameterSpec& s) {
  return {buf.data() + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols)};
}
inline ConstRowVec row_view(const AlignedBuffer& buf, const ParameterSpec& s) {
  return {buf.data() + s.offset, static_cast<Eigen::Index>(s.size())};
}
inline RowVec row_view(AlignedBuffer& buf, const ParameterSpec& s) {
  return {buf.data() + s.offset, static_cast<Eigen::Index>(s.size())};
}

/// Sinusoidal positional encoding table [len x d].
inline RowMat positional_encoding(std::size_t len, std::size_t d) {
  RowMat pe(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(d));
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(t) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = std::sin(angle);
      if (i + 1 < d) pe(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i + 1)) = std::cos(angle);
    }
  return pe;
}

inline void layer_norm_forward(const RowMat& x, ConstRowVec gain, ConstRowVec bias, RowMat& xhat,
                               Eigen::VectorXd& rstd, RowMat& y) {
  const auto rows = x.rows();
  xhat.resize(rows, x.cols());
  y.resize(rows, x.cols());
  rstd.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = x.row(r).mean();
    xhat.row(r) = x.row(r).array() - mean;
    const double var = xhat.row(r).squaredNorm() / static_cast<double>(x.cols());
    rstd(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) *= rstd(r);
    y.row(r) = xhat.row(r).cwiseProduct(gain) + bias;
  }
}

/// Accumulates gain/bias gradients and returns dx.
inline void layer_norm_backward(const RowMat& dy, const RowMat& xhat, const Eigen::VectorXd& rstd, ConstRowVec gain,
                                RowVec dgain, RowVec dbias, RowMat& dx) {
  dgain += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  dx.resize(dy.rows(), dy.cols());
  const double inv_d = 1.0 / static_cast<double>(dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(gain);
    const double mean_dxhat = dxhat.sum() * inv_d;
    const double mean_dxhat_xhat = dxhat.dot(xhat.row(r)) * inv_d;
    dx.row(r) = rstd(r) * (dxhat.array() - mean_dxhat - xhat.row(r).array() * mean_dxhat_xhat).matrix();
  }
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

/// tanh-approximated GELU.
inline double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u))); }

inline double gelu_grad(double u) {
  const double th = std::tanh(kGeluC * (u + 0.044715 * u * u * u));
  return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

inline void log_softmax_rows(RowMat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    const double lse = mx + std::log((m.row(r).array() - mx).exp().sum());
    m.row(r).array() -= lse;
  }
}

struct LayerCache {
  RowMat x_in, xhat1, n1, q, k, v, att, x_mid, xhat2, n2, u, g;
  Eigen::VectorXd rstd1, rstd2;
  AlignedBuffer probs;  // [batch][head][T][T]
};

/// Activations of one full-sequence forward pass, kept for the backward pass.
struct ForwardCache {
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<int> inputs;   // [batch * len], start token first
  std::vector<int> targets;  // [batch * len]
  std::vector<LayerCache> layers;
  RowMat x_final, xhat_f, n_f, logp;
  Eigen::VectorXd rstd_f;
};

}  // namespace nn

/// Autoregressive Transformer over outcome strings:
/// p(a) = prod_i p(a_i | start, a_1 .. a_{i-1}).
class TransformerModel {
 public:
  explicit TransformerModel(TransformerConfig config)
      : config_((config.validate(), config)),
        layout_(config_),
        params_(layout_.total(), 0.0),
        positions_(nn::positional_encoding(config_.max_len, config_.embed_dim)) {}

  const TransformerConfig& config() const noexcept { return config_; }
  const ParameterLayout& layout() const noexcept { return layout_; }
  AlignedBuffer& parameters() noexcept { return params_; }
  const AlignedBuffer& parameters() const noexcept { return params_; }
  const nn::RowMat& positions() const noexcept { return positions_; }
  std::size_t n_qubits() const noexcept { return config_.max_len; }

  nn::ConstMatMap param(std::size_t i) const { return nn::view(params_, layout_[i]); }
  nn::ConstRowVec param_row(std::size_t i) const { return nn::row_view(params_, layout_[i]); }

  /// Named parameter lookup.
  std::span<const double> parameter(const std::string& name) const {
    for (const auto& s : layout_.specs()) {
      if (s.name == name) return {params_.data() + s.offset, s.size()};
    }
    throw ValidationError("no parameter named '" + name + "'");
  }

  bool all_finite() const {
    return std::all_of(params_.begin(), params_.end(), [](double x) { return std::isfinite(x); });
  }

 private:
  TransformerConfig config_;
  ParameterLayout layout_;
  AlignedBuffer params_;
  nn::RowMat positions_;
};

/// Initialization scales:
///   token embedding ~ N(0, 1)
///   wq, wk, wv, w1 ~ N(0, 1/fan_in)
///   wo, w2 ~ N(0, 1/(2 n_layers fan_in))
///   biases 0, layer-norm gains 1
///   head weight and bias 0, so a fresh model is uniform over outcomes.
inline TransformerModel init(const TransformerConfig& config) {
  TransformerModel model(config);
  RandomStream rng(config.seed, 0x1417);
  auto& p = model.parameters();
  const auto& lay = model.layout();
  auto fill_normal = [&](std::size_t idx, double stddev) {
    const auto& s = lay[idx];
    for (std::size_t i = 0; i < s.size(); ++i) p[s.offset + i] = stddev * rng.normal();
  };
  auto fill_const = [&](std::size_t idx, double value) {
    const auto& s = lay[idx];
    std::fill_n(p.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size(), value);
  };
  const double d = static_cast<double>(config.embed_dim);
  const double ff = static_cast<double>(config.ff_dim);
  const double residual = 1.0 / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  fill_normal(lay.token_embedding, 1.0);
  for (const auto& l : lay.layers) {
    fill_const(l.ln1_gain, 1.0);
    fill_normal(l.wq, 1.0 / std::sqrt(d));
    fill_normal(l.wk, 1.0 / std::sqrt(d));
    fill_normal(l.wv, 1.0 / std::sqrt(d));
    fill_normal(l.wo, residual / std::sqrt(d));
    fill_const(l.ln2_gain, 1.0);
    fill_normal(l.w1, 1.0 / std::sqrt(d));
    fill_normal(l.w2, residual / std::sqrt(ff));
  }
  fill_const(lay.final_gain, 1.0);
  return model;
}

namespace nn {

/// Causal multi-head attention over `batch` sequences of length `len`.
inline void attention_forward(const TransformerConfig& c, std::size_t batch, std::size_t len, LayerCache& lc) {
  const auto H = c.n_heads;
  const auto dh = static_cast<Eigen::Index>(c.head_dim());
  const auto T = static_cast<Eigen::Index>(len);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  lc.probs.resize(batch * H * len * len);
  lc.att.resize(lc.q.rows(), lc.q.cols());
  for (std::size_t b = 0; b < batch; ++b) {
    const auto row0 = static_cast<Eigen::Index>(b * len);
    for (std::size_t h = 0; h < H; ++h) {
      const auto col0 = static_cast<Eigen::Index>(h) * dh;
      MatMap P(lc.probs.data() + (b * H + h) * len * len, T, T);
      P.noalias() = lc.q.block(row0, col0, T, dh) * lc.k.block(row0, col0, T, dh).transpose();
      for (Eigen::Index i = 0; i < T; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j <= i; ++j) mx = std::max(mx, P(i, j) * scale);
        double sum = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          P(i, j) = std::exp(P(i, j) * scale - mx);
          sum += P(i, j);
        }
        for (Eigen::Index j = 0; j <= i; ++j) P(i, j) /= sum;
        for (Eigen::Index j = i + 1; j < T; ++j) P(i, j) = 0.0;
      }
      lc.att.block(row0, col0, T, dh).noalias() = P * lc.v.block(row0, col0, T, dh);
    }
  }
}

inline void attention_backward(const TransformerConfig& c, std::size_t batch, std::size_t len, const LayerCache& lc,
                               const RowMat& datt, RowMat& dq, RowMat& dk, RowMat& dv) {
  const auto H = c.n_heads;
  const auto dh = static_cast<Eigen::Index>(c.head_dim());
  const auto T = static_cast<Eigen::Index>(len);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  dq.resize(datt.rows(), datt.cols());
  dk.resize(datt.rows(), datt.cols());
  dv.resize(datt.rows(), datt.cols());
  RowMat dP(T, T);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto row0 = static_cast<Eigen::Index>(b * len);
    for (std::size_t h = 0; h < H; ++h) {
      const auto col0 = static_cast<Eigen::Index>(h) * dh;
      ConstMatMap P(lc.probs.data() + (b * H + h) * len * len, T, T);
      const auto dA = datt.block(row0, col0, T, dh);
      dP.noalias() = dA * lc.v.block(row0, col0, T, dh).transpose();
      dv.block(row0, col0, T, dh).noalias() = P.transpose() * dA;
      for (Eigen::Index i = 0; i < T; ++i) {
        const double inner = P.row(i).dot(dP.row(i));
        for (Eigen::Index j = 0; j < T; ++j) dP(i, j) = P(i, j) * (dP(i, j) - inner) * scale;
      }
      dq.block(row0, col0, T, dh).noalias() = dP * lc.k.block(row0, col0, T, dh);
      dk.block(row0, col0, T, dh).noalias() = dP.transpose() * lc.q.block(row0, col0, T, dh);
    }
  }
}

/// Full causal forward pass over packed outcome strings. Fills `cache.logp`
/// ([batch * len] x 4 log conditionals) and returns per-sequence log p(a).
inline std::vector<double> forward(const TransformerModel& model, std::span<const Symbol> symbols, ForwardCache& cache) {
  const auto& c = model.config();
  const auto& lay = model.layout();
  const std::size_t len = c.max_len;
  if (symbols.size() % len != 0) throw ShapeError("packed outcomes are not a multiple of max_len");
  const std::size_t batch = symbols.size() / len;
  const auto R = static_cast<Eigen::Index>(batch * len);
  const auto d = static_cast<Eigen::Index>(c.embed_dim);
  const auto& p = model.parameters();

  cache.batch = batch;
  cache.len = len;
  cache.inputs.resize(batch * len);
  cache.targets.resize(batch * len);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < len; ++t) {
      const auto s = symbols[b * len + t];
      if (s >= kNumOutcomes) throw DomainError("outcome symbol " + std::to_string(s) + " is not in {0,1,2,3}");
      cache.targets[b * len + t] = s;
      cache.inputs[b * len + t] = t == 0 ? TransformerConfig::kStartToken : symbols[b * len + t - 1];
    }

  const auto emb = model.param(lay.token_embedding);
  RowMat x(R, d);
  for (Eigen::Index r = 0; r < R; ++r) {
    x.row(r) = emb.row(cache.inputs[static_cast<std::size_t>(r)]) + model.positions().row(r % static_cast<Eigen::Index>(len));
  }

  cache.layers.resize(c.n_layers);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& L = lay.layers[l];
    auto& lc = cache.layers[l];
    lc.x_in = std::move(x);
    layer_norm_forward(lc.x_in, row_view(p, lay[L.ln1_gain]), row_view(p, lay[L.ln1_bias]), lc.xhat1, lc.rstd1, lc.n1);
    lc.q.noalias() = lc.n1 * view(p, lay[L.wq]);
    lc.k.noalias() = lc.n1 * view(p, lay[L.wk]);
    lc.v.noalias() = lc.n1 * view(p, lay[L.wv]);
    attention_forward(c, batch, len, lc);
    lc.x_mid = lc.x_in;
    lc.x_mid.noalias() += lc.att * view(p, lay[L.wo]);
    layer_norm_forward(lc.x_mid, row_view(p, lay[L.ln2_gain]), row_view(p, lay[L.ln2_bias]), lc.xhat2, lc.rstd2, lc.n2);
    lc.u.noalias() = lc.n2 * view(p, lay[L.w1]);
    lc.u.rowwise() += row_view(p, lay[L.b1]);
    lc.g = lc.u.unaryExpr([](double v) { return gelu(v); });
    x = lc.x_mid;
    x.noalias() += lc.g * view(p, lay[L.w2]);
    x.rowwise() += row_view(p, lay[L.b2]);
  }
  cache.x_final = std::move(x);
  layer_norm_forward(cache.x_final, row_view(p, lay[lay.final_gain]), row_view(p, lay[lay.final_bias]), cache.xhat_f,
                     cache.rstd_f, cache.n_f);
  cache.logp.noalias() = cache.n_f * view(p, lay[lay.head_weight]);
  cache.logp.rowwise() += row_view(p, lay[lay.head_bias]);
  log_softmax_rows(cache.logp);

  std::vector<double> out(batch, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < len; ++t) {
      const auto r = static_cast<Eigen::Index>(b * len + t);
      out[b] += cache.logp(r, cache.targets[b * len + t]);
    }
  return out;
}

/// Back-propagates loss = -(1/batch) sum_b log p(a_b) through the cached pass,
/// accumulating into `grads` (same layout as the parameters).
inline void backward(const TransformerModel& model, const ForwardCache& cache, AlignedBuffer& grads) {
  const auto& c = model.config();
  const auto& lay = model.layout();
  const auto& p = model.parameters();
  const auto R = static_cast<Eigen::Index>(cache.batch * cache.len);
  const double inv_batch = 1.0 / static_cast<double>(cache.batch);

  RowMat dlogits = cache.logp.array().exp().matrix();
  for (Eigen::Index r = 0; r < R; ++r) dlogits(r, cache.targets[static_cast<std::size_t>(r)]) -= 1.0;
  dlogits *= inv_batch;

  view(grads, lay[lay.head_weight]).noalias() += cache.n_f.transpose() * dlogits;
  row_view(grads, lay[lay.head_bias]) += dlogits.colwise().sum();
  RowMat dn = dlogits * view(p, lay[lay.head_weight]).transpose();
  RowMat dx;
  layer_norm_backward(dn, cache.xhat_f, cache.rstd_f, row_view(p, lay[lay.final_gain]),
                      row_view(grads, lay[lay.final_gain]), row_view(grads, lay[lay.final_bias]), dx);

  RowMat tmp, dq, dk, dv, datt, dln;
  for (std::size_t l = c.n_layers; l-- > 0;) {
    const auto& L = lay.layers[l];
    const auto& lc = cache.layers[l];
    // feed-forward branch
    view(grads, lay[L.w2]).noalias() += lc.g.transpose() * dx;
    row_view(grads, lay[L.b2]) += dx.colwise().sum();
    tmp.noalias() = dx * view(p, lay[L.w2]).transpose();
    tmp.array() *= lc.u.unaryExpr([](double v) { return gelu_grad(v); }).array();
    view(grads, lay[L.w1]).noalias() += lc.n2.transpose() * tmp;
    row_view(grads, lay[L.b1]) += tmp.colwise().sum();
    dn.noalias() = tmp * view(p, lay[L.w1]).transpose();
    layer_norm_backward(dn, lc.xhat2, lc.rstd2, row_view(p, lay[L.ln2_gain]), row_view(grads, lay[L.ln2_gain]),
                        row_view(grads, lay[L.ln2_bias]), dln);
    dx += dln;
    // attention branch
    view(grads, lay[L.wo]).noalias() += lc.att.transpose() * dx;
    datt.noalias() = dx * view(p, lay[L.wo]).transpose();
    attention_backward(c, cache.batch, cache.len, lc, datt, dq, dk, dv);
    view(grads, lay[L.wq]).noalias() += lc.n1.transpose() * dq;
    view(grads, lay[L.wk]).noalias() += lc.n1.transpose() * dk;
    view(grads, lay[L.wv]).noalias() += lc.n1.transpose() * dv;
    dn.noalias() = dq * view(p, lay[L.wq]).transpose();
    dn.noalias() += dk * view(p, lay[L.wk]).transpose();
    dn.noalias() += dv * view(p, lay[L.wv]).transpose();
    layer_norm_backward(dn, lc.xhat1, lc.rstd1, row_view(p, lay[L.ln1_gain]), row_view(grads, lay[L.ln1_gain]),
                        row_view(grads, lay[L.ln1_bias]), dln);
    dx += dln;
  }

  auto demb = view(grads, lay[lay.token_embedding]);
  for (Eigen::Index r = 0; r < R; ++r) demb.row(cache.inputs[static_cast<std::size_t>(r)]) += dx.row(r);
}

/// Key/value-cached decoder that advances `batch` sequences one position at a
/// time; used for ancestral sampling.
class IncrementalDecoder {
 public:
  IncrementalDecoder(const TransformerModel& model, std::size_t batch) : model_(model), batch_(batch) {
    const auto& c = model.config();
    const auto rows = static_cast<Eigen::Index>(batch * c.max_len);
    const auto d = static_cast<Eigen::Index>(c.embed_dim);
    keys_.assign(c.n_layers, RowMat(rows, d));
    values_.assign(c.n_layers, RowMat(rows, d));
  }

  std::size_t position() const noexcept { return position_; }

  /// Feeds the tokens at the current position and returns the [batch x 4] log
  /// conditionals for the symbol at that position.
  const RowMat& step(std::span<const int> tokens) {
    const auto& c = model_.config();
    const auto& lay = model_.layout();
    const auto& p = model_.parameters();
    if (position_ >= c.max_len) throw ShapeError("decoder already produced max_len positions");
    const auto B = static_cast<Eigen::Index>(batch_);
    const auto d = static_cast<Eigen::Index>(c.embed_dim);
    const auto dh = static_cast<Eigen::Index>(c.head_dim());
    const auto len = static_cast<Eigen::Index>(c.max_len);
    const auto t = static_cast<Eigen::Index>(position_);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    const auto emb = model_.param(lay.token_embedding);
    RowMat x(B, d);
    for (Eigen::Index b = 0; b < B; ++b) x.row(b) = emb.row(tokens[static_cast<std::size_t>(b)]) + model_.positions().row(t);

    RowMat xhat, n, q, k, v, att(B, d), u;
    Eigen::VectorXd rstd;
    Eigen::RowVectorXd scores(t + 1);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      const auto& L = lay.layers[l];
      layer_norm_forward(x, row_view(p, lay[L.ln1_gain]), row_view(p, lay[L.ln1_bias]), xhat, rstd, n);
      q.noalias() = n * view(p, lay[L.wq]);
      k.noalias() = n * view(p, lay[L.wk]);
      v.noalias() = n * view(p, lay[L.wv]);
      auto& K = keys_[l];
      auto& V = values_[l];
      for (Eigen::Index b = 0; b < B; ++b) {
        K.row(b * len + t) = k.row(b);
        V.row(b * len + t) = v.row(b);
        for (std::size_t h = 0; h < c.n_heads; ++h) {
          const auto col0 = static_cast<Eigen::Index>(h) * dh;
          const auto Kb = K.block(b * len, col0, t + 1, dh);
          scores.noalias() = q.block(b, col0, 1, dh) * Kb.transpose();
          scores *= scale;
          const double mx = scores.maxCoeff();
          scores = (scores.array() - mx).exp().matrix();
          scores /= scores.sum();
          att.block(b, col0, 1, dh).noalias() = scores * V.block(b * len, col0, t + 1, dh);
        }
      }
      x.noalias() += att * view(p, lay[L.wo]);
      layer_norm_forward(x, row_view(p, lay[L.ln2_gain]), row_view(p, lay[L.ln2_bias]), xhat, rstd, n);
      u.noalias() = n * view(p, lay[L.w1]);
      u.rowwise() += row_view(p, lay[L.b1]);
      u = u.unaryExpr([](double s) { return gelu(s); });
      x.noalias() += u * view(p, lay[L.w2]);
      x.rowwise() += row_view(p, lay[L.b2]);
    }
    layer_norm_forward(x, row_view(p, lay[lay.final_gain]), row_view(p, lay[lay.final_bias]), xhat, rstd, n);
    logp_.noalias() = n * view(p, lay[lay.head_weight]);
    logp_.rowwise() += row_view(p, lay[lay.head_bias]);
    log_softmax_rows(logp_);
    ++position_;
    return logp_;
  }

 private:
  const TransformerModel& model_;
  std::size_t batch_;
  std::size_t position_ = 0;
  std::vector<RowMat> keys_, values_;
  RowMat logp_;
};

}  // namespace nn

/// Outcomes are scored in chunks of this many strings; chunking is fixed so
/// results do not depend on how callers group their requests.
inline constexpr std::size_t kEvalChunk = 512;

/// log p(a) for every packed outcome string.
inline std::vector<double> log_probs(const TransformerModel& model, std::span<const Symbol> symbols) {
  const auto len = model.config().max_len;
  if (symbols.size() % len != 0) {
    throw ShapeError("outcome length does not match the model's max_len " + std::to_string(len));
  }
  const std::size_t n = symbols.size() / len;
  std::vector<double> out;
  out.reserve(n);
  nn::ForwardCache cache;
  for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
    const std::size_t count = std::min(kEvalChunk, n - begin);
    const auto part = nn::forward(model, symbols.subspan(begin * len, count * len), cache);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

inline double log_prob(const TransformerModel& model, std::span<const Symbol> a) {
  if (a.size() != model.config().max_len) {
    throw ShapeError("outcome has length " + std::to_string(a.size()) + ", model expects " +
                     std::to_string(model.config().max_len));
  }
  return log_probs(model, a).front();
}

/// Conditional distributions p(a_i = k | a_<i) for every position of `a`.
inline std::vector<std::array<double, kNumOutcomes>> conditionals(const TransformerModel& model,
                                                                  std::span<const Symbol> a) {
  if (a.size() != model.config().max_len) throw ShapeError("outcome length does not match max_len");
  nn::ForwardCache cache;
  nn::forward(model, a, cache);
  std::vector<std::array<double, kNumOutcomes>> out(a.size());
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t k = 0; k < kNumOutcomes; ++k)
      out[t][k] = std::exp(cache.logp(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)));
  return out;
}

struct ModelSample {
  OutcomeDataset dataset;
  std::vector<double> log_probs;  // log p(a) accumulated during sampling
};

/// Ancestral sampling. Block b of kSampleBlock draws uses stream
/// (seed, b * kSampleBlock), matching the state sampler's contract.
inline ModelSample sample_model(const TransformerModel& model, std::size_t n, std::uint64_t seed,
                                std::size_t workers = 1) {
  if (n == 0) throw DomainError("number of samples must be at least 1");
  const std::size_t len = model.config().max_len;
  ModelSample out;
  out.dataset.n_qubits = len;
  out.dataset.seed = seed;
  out.dataset.source = "model rng=" + std::string(RandomStream::kAlgorithm);
  out.dataset.symbols.resize(n * len);
  out.log_probs.assign(n, 0.0);
  constexpr std::size_t kDecodeBatch = 256;
  for_each_block(n, workers, [&](std::size_t begin, std::size_t end) {
    RandomStream rng(seed, begin);
    for (std::size_t first = begin; first < end; first += kDecodeBatch) {
      const std::size_t count = std::min(kDecodeBatch, end - first);
      nn::IncrementalDecoder decoder(model, count);
      std::vector<int> tokens(count, TransformerConfig::kStartToken);
      for (std::size_t t = 0; t < len; ++t) {
        const auto& logp = decoder.step(tokens);
        for (std::size_t b = 0; b < count; ++b) {
          const auto row = static_cast<Eigen::Index>(b);
          const double u = rng.uniform();
          double cumulative = 0.0;
          std::size_t chosen = kNumOutcomes - 1;
          for (std::size_t k = 0; k < kNumOutcomes; ++k) {
            cumulative += std::exp(logp(row, static_cast<Eigen::Index>(k)));
            if (u < cumulative) {
              chosen = k;
              break;
            }
          }
          out.dataset.symbols[(first + b) * len + t] = static_cast<Symbol>(chosen);
          out.log_probs[first + b] += logp(row, static_cast<Eigen::Index>(chosen));
          tokens[b] = static_cast<int>(chosen);
        }
      }
    }
  });
  return out;
}

struct LossAndGradients {
  double loss = 0.0;
  AlignedBuffer grads;  // same layout as the parameters
};

/// loss = -(1/|batch|) sum log p(a) and its exact gradient.
inline LossAndGradients nll_and_gradients(const TransformerModel& model, std::span<const Symbol> batch) {
  const auto len = model.config().max_len;
  if (batch.empty()) throw DomainError("empty batch");
  if (batch.size() % len != 0) throw ShapeError("batch outcomes do not all have length max_len");
  LossAndGradients out;
  out.grads.assign(model.parameters().size(), 0.0);
  nn::ForwardCache cache;
  auto lp = nn::forward(model, batch, cache);
  // summed in sorted order so the loss does not depend on batch order
  std::sort(lp.begin(), lp.end());
  out.loss = -pairwise_sum<double>(lp) / static_cast<double>(lp.size());
  nn::backward(model, cache, out.grads);
  return out;
}

}  // namespace aqt
