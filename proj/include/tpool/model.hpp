// SPDX-License-Identifier: Apache-2.0
//
// Temporal convolutional encoder-decoder.
//
//   encoder x L : conv1d -> activation -> [dropout] -> pooling (stride 2) -> [normalize]
//   decoder x L : upsample -> conv1d -> activation -> [dropout]
//   classifier  : timedense -> softmax
//
// Decoders mirror the encoder filter counts in reverse and crop each
// upsampled sequence to the length its matching encoder saw, so the output
// always has exactly T frames.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tpool/config.hpp"
#include "tpool/error.hpp"
#include "tpool/layers.hpp"
#include "tpool/normact.hpp"
#include "tpool/pooling.hpp"
#include "tpool/rng.hpp"
#include "tpool/tensor.hpp"
#include "tpool/types.hpp"

namespace tpool {

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  PoolKind pooling = PoolKind::max;
  int window = 5;
  bool learnable = true;
  ActivationKind activation = ActivationKind::nrelu;
  NormKind normalization = NormKind::none;
  std::vector<int> filters = {64, 96};
  int kernel_size = 25;
  double epsilon = 1e-5;
  double theta = 1.0;
  double leaky_alpha = 0.01;
  double dropout = 0.0;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
    if (filters.empty()) throw ConfigError("filters must list at least one encoder width");
    for (int f : filters) {
      if (f < 1) throw ConfigError("filters must all be >= 1");
    }
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel_size must be odd and >= 1");
    if (window < 1 || window % 2 == 0) throw ConfigError("window must be odd and >= 1");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    if (!std::isfinite(theta)) throw ConfigError("theta must be finite");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  }

  [[nodiscard]] ActivationSpec activation_spec() const { return {activation, theta, epsilon, leaky_alpha}; }
  [[nodiscard]] PoolingConfig pooling_config() const { return {pooling, window, 2, learnable}; }

  bool operator==(const TrainConfig&) const = default;
};

/// Reads every TrainConfig key present in kv (absent keys keep defaults).
inline void read_train_config(const KeyValueConfig& kv, TrainConfig& cfg) {
  kv.read("epochs", cfg.epochs);
  kv.read("learning_rate", cfg.learning_rate);
  kv.read("clip_norm", cfg.clip_norm);
  kv.read("seed", cfg.seed);
  if (const auto* v = kv.raw("pooling")) {
    const auto kind = parse_pool_kind(*v);
    if (!kind) throw ConfigError("config key 'pooling': unknown kind '" + *v + "'");
    cfg.pooling = *kind;
  }
  kv.read("window", cfg.window);
  kv.read("learnable", cfg.learnable);
  if (const auto* v = kv.raw("activation")) {
    const auto kind = parse_activation_kind(*v);
    if (!kind) throw ConfigError("config key 'activation': unknown kind '" + *v + "'");
    cfg.activation = *kind;
  }
  if (const auto* v = kv.raw("normalization")) {
    const auto kind = parse_norm_kind(*v);
    if (!kind) throw ConfigError("config key 'normalization': unknown kind '" + *v + "'");
    cfg.normalization = *kind;
  }
  kv.read("filters", cfg.filters);
  kv.read("kernel_size", cfg.kernel_size);
  kv.read("epsilon", cfg.epsilon);
  kv.read("theta", cfg.theta);
  kv.read("leaky_alpha", cfg.leaky_alpha);
  kv.read("dropout", cfg.dropout);
  kv.read("weight_decay", cfg.weight_decay);
  kv.read("adam_beta1", cfg.adam_beta1);
  kv.read("adam_beta2", cfg.adam_beta2);
  kv.read("adam_epsilon", cfg.adam_epsilon);
}

inline void write_train_config(const TrainConfig& cfg, KeyValueConfig& kv) {
  const auto num = KeyValueConfig::format_double;
  kv.set("epochs", std::to_string(cfg.epochs));
  kv.set("learning_rate", num(cfg.learning_rate));
  kv.set("clip_norm", num(cfg.clip_norm));
  kv.set("seed", std::to_string(cfg.seed));
  kv.set("pooling", std::string(to_string(cfg.pooling)));
  kv.set("window", std::to_string(cfg.window));
  kv.set("learnable", cfg.learnable ? "true" : "false");
  kv.set("activation", std::string(to_string(cfg.activation)));
  kv.set("normalization", std::string(to_string(cfg.normalization)));
  std::string filters;
  for (std::size_t i = 0; i < cfg.filters.size(); ++i) filters += (i ? "," : "") + std::to_string(cfg.filters[i]);
  kv.set("filters", filters);
  kv.set("kernel_size", std::to_string(cfg.kernel_size));
  kv.set("epsilon", num(cfg.epsilon));
  kv.set("theta", num(cfg.theta));
  kv.set("leaky_alpha", num(cfg.leaky_alpha));
  kv.set("dropout", num(cfg.dropout));
  kv.set("weight_decay", num(cfg.weight_decay));
  kv.set("adam_beta1", num(cfg.adam_beta1));
  kv.set("adam_beta2", num(cfg.adam_beta2));
  kv.set("adam_epsilon", num(cfg.adam_epsilon));
}

enum class LayerKind { conv1d, activation, dropout, pooling, normalize, upsample, timedense, softmax };

inline std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::activation: return "activation";
    case LayerKind::dropout: return "dropout";
    case LayerKind::pooling: return "pooling";
    case LayerKind::normalize: return "normalize";
    case LayerKind::upsample: return "upsample";
    case LayerKind::timedense: return "timedense";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

/// One layer of the architecture. `name` prefixes its parameter tensors.
struct LayerSpec {
  LayerKind kind = LayerKind::conv1d;
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  int kernel_size = 1;
  PoolingConfig pooling{};
  ActivationSpec activation{};
  NormKind norm = NormKind::none;
  double dropout = 0.0;
};

inline std::string describe(const LayerSpec& l) {
  std::string s = l.name + " " + std::string(to_string(l.kind)) + " " + std::to_string(l.in_channels) + "->" +
                  std::to_string(l.out_channels);
  switch (l.kind) {
    case LayerKind::conv1d: s += " k=" + std::to_string(l.kernel_size); break;
    case LayerKind::activation: s += " " + std::string(to_string(l.activation.kind)); break;
    case LayerKind::pooling:
      s += " " + std::string(to_string(l.pooling.kind)) + " window=" + std::to_string(l.pooling.window) +
           " stride=" + std::to_string(l.pooling.stride) + (l.pooling.learnable ? " learnable" : " fixed");
      break;
    case LayerKind::normalize: s += " " + std::string(to_string(l.norm)); break;
    case LayerKind::dropout: s += " rate=" + KeyValueConfig::format_double(l.dropout); break;
    default: break;
  }
  return s;
}

struct ModelParams {
  std::vector<LayerSpec> layers;
  TensorMap params;
  int input_dim = 0;
  int classes = 0;
  std::uint64_t seed = 0;
  TrainConfig config;

  [[nodiscard]] std::string architecture() const {
    std::string s;
    for (const auto& l : layers) s += describe(l) + "\n";
    return s;
  }
};

namespace detail {

inline void glorot_fill(Tensor& t, std::size_t fan_in, std::size_t fan_out, CounterRng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.values) v = rng.uniform(-limit, limit);
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline Vector to_eigen(const Tensor& t) {
  return Eigen::Map<const Vector>(t.values.data(), static_cast<Eigen::Index>(t.size()));
}

}  // namespace detail

/// Builds the architecture for input width d and C classes and initializes
/// parameters from cfg.seed: Glorot-uniform kernels, zero biases, box-filter
/// pooling weights and theta = cfg.theta.
inline ModelParams build_model(const TrainConfig& cfg, int input_dim, int classes) {
  cfg.validate();
  if (input_dim < 1) throw ConfigError("input width must be >= 1");
  if (classes < 2) throw ConfigError("need at least 2 classes");
  ModelParams m;
  m.input_dim = input_dim;
  m.classes = classes;
  m.seed = cfg.seed;
  m.config = cfg;

  std::uint64_t stream = 0;
  auto add_conv = [&](const std::string& name, int in, int out) {
    LayerSpec l{LayerKind::conv1d, name, in, out, cfg.kernel_size};
    const auto k = static_cast<std::size_t>(cfg.kernel_size);
    CounterRng rng(cfg.seed, ++stream);
    Tensor w({static_cast<std::size_t>(out), static_cast<std::size_t>(in), k});
    detail::glorot_fill(w, static_cast<std::size_t>(in) * k, static_cast<std::size_t>(out) * k, rng);
    m.params.add(name + ".weight", std::move(w));
    m.params.add(name + ".bias", Tensor({static_cast<std::size_t>(out)}));
    m.layers.push_back(l);
  };
  auto add_activation = [&](const std::string& name, int width) {
    LayerSpec l{LayerKind::activation, name, width, width};
    l.activation = cfg.activation_spec();
    if (cfg.activation == ActivationKind::rpn) m.params.add(name + ".theta", Tensor({1}, cfg.theta));
    m.layers.push_back(l);
    if (cfg.dropout > 0.0) {
      LayerSpec drop{LayerKind::dropout, name + ".dropout", width, width};
      drop.dropout = cfg.dropout;
      m.layers.push_back(drop);
    }
  };

  int width = input_dim;
  const auto levels = cfg.filters.size();
  for (std::size_t i = 0; i < levels; ++i) {
    const std::string prefix = "enc" + std::to_string(i);
    add_conv(prefix + ".conv", width, cfg.filters[i]);
    width = cfg.filters[i];
    add_activation(prefix + ".act", width);
    LayerSpec pool{LayerKind::pooling, prefix + ".pool", width, 0};
    pool.pooling = cfg.pooling_config();
    pool.out_channels = static_cast<int>(output_dim(cfg.pooling, static_cast<std::size_t>(width)));
    if (has_weights(cfg.pooling)) {
      const PoolingWeights w = uniform_weights(cfg.window);
      const std::size_t n = static_cast<std::size_t>(cfg.window);
      if (uses_decoupled_weights(cfg.pooling)) {
        m.params.add(pool.name + ".p", Tensor({n}, w.p(0)));
        m.params.add(pool.name + ".q", Tensor({n}, w.q(0)));
      } else {
        m.params.add(pool.name + ".omega", Tensor({n}, w.omega(0)));
      }
    }
    m.layers.push_back(pool);
    width = pool.out_channels;
    if (cfg.normalization != NormKind::none) {
      LayerSpec norm{LayerKind::normalize, prefix + ".norm", width, width};
      norm.norm = cfg.normalization;
      m.layers.push_back(norm);
    }
  }
  for (std::size_t j = 0; j < levels; ++j) {
    const std::string prefix = "dec" + std::to_string(j);
    m.layers.push_back({LayerKind::upsample, prefix + ".up", width, width});
    const int filters = cfg.filters[levels - 1 - j];
    add_conv(prefix + ".conv", width, filters);
    width = filters;
    add_activation(prefix + ".act", width);
  }
  {
    LayerSpec dense{LayerKind::timedense, "dense", width, classes};
    CounterRng rng(cfg.seed, ++stream);
    Tensor w({static_cast<std::size_t>(classes), static_cast<std::size_t>(width)});
    detail::glorot_fill(w, static_cast<std::size_t>(width), static_cast<std::size_t>(classes), rng);
    m.params.add("dense.weight", std::move(w));
    m.params.add("dense.bias", Tensor({static_cast<std::size_t>(classes)}));
    m.layers.push_back(dense);
    m.layers.push_back({LayerKind::softmax, "softmax", classes, classes});
  }
  return m;
}

/// Applies the live theta for RPN layers.
inline ActivationSpec live_activation(const ModelParams& m, const LayerSpec& l) {
  ActivationSpec spec = l.activation;
  if (spec.kind == ActivationKind::rpn) spec.theta = m.params.at(l.name + ".theta")[0];
  return spec;
}

inline PoolingWeights live_pool_weights(const ModelParams& m, const LayerSpec& l) {
  PoolingWeights w;
  if (!has_weights(l.pooling.kind)) return w;
  if (uses_decoupled_weights(l.pooling.kind)) {
    w.p = detail::to_eigen(m.params.at(l.name + ".p"));
    w.q = detail::to_eigen(m.params.at(l.name + ".q"));
  } else {
    w.omega = detail::to_eigen(m.params.at(l.name + ".omega"));
  }
  return w;
}

/// Dropout masks for one training step; absent during inference.
struct DropoutContext {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

/// Layer inputs recorded during a forward pass, for the backward pass.
struct ForwardTrace {
  std::vector<Sequence> inputs;
  std::vector<Sequence> dropout_masks;
  std::vector<Eigen::Index> upsample_targets;
  Sequence logits;
  Sequence probs;
};

namespace detail {

inline void require_finite(const Sequence& y, const LayerSpec& l, std::size_t index) {
  if (!y.allFinite()) {
    throw NumericError("non-finite values after layer " + std::to_string(index) + " (" + l.name + ")");
  }
}

inline Sequence dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, const DropoutContext& ctx,
                             std::size_t layer_index) {
  CounterRng rng(ctx.seed ^ 0xD50F5EEDULL, ctx.step * 1024 + layer_index);
  const double keep = 1.0 - rate;
  Sequence mask(rows, cols);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return mask;
}

}  // namespace detail

/// Runs the network, recording what backward needs. Output rows are
/// per-frame class probabilities.
inline Sequence forward(const ModelParams& m, const Sequence& x, ForwardTrace* trace,
                        const DropoutContext* dropout = nullptr) {
  if (x.cols() != m.input_dim) {
    throw ShapeError("input has " + std::to_string(x.cols()) + " channels, model expects " +
                     std::to_string(m.input_dim));
  }
  if (x.rows() < 1) throw ShapeError("input sequence is empty");
  std::vector<Eigen::Index> pre_pool_lengths;
  Sequence h = x;
  if (trace) {
    trace->inputs.clear();
    trace->dropout_masks.assign(m.layers.size(), Sequence());
    trace->upsample_targets.assign(m.layers.size(), 0);
  }
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const LayerSpec& l = m.layers[i];
    if (trace) trace->inputs.push_back(h);
    switch (l.kind) {
      case LayerKind::conv1d:
        h = conv1d(h, m.params.at(l.name + ".weight"), m.params.at(l.name + ".bias"));
        break;
      case LayerKind::activation:
        h = activate(h, live_activation(m, l));
        break;
      case LayerKind::dropout:
        if (dropout) {
          Sequence mask = detail::dropout_mask(h.rows(), h.cols(), l.dropout, *dropout, i);
          h = h.cwiseProduct(mask);
          if (trace) trace->dropout_masks[i] = std::move(mask);
        }
        break;
      case LayerKind::pooling:
        pre_pool_lengths.push_back(h.rows());
        h = pool(h, l.pooling, live_pool_weights(m, l));
        break;
      case LayerKind::normalize:
        h = normalize(h, l.norm);
        break;
      case LayerKind::upsample: {
        if (pre_pool_lengths.empty()) throw ShapeError("upsample without a matching pooling layer");
        const Eigen::Index target = pre_pool_lengths.back();
        pre_pool_lengths.pop_back();
        if (trace) trace->upsample_targets[i] = target;
        h = upsample_nn(h, target);
        break;
      }
      case LayerKind::timedense:
        h = timedense(h, m.params.at(l.name + ".weight"), m.params.at(l.name + ".bias"));
        if (trace) trace->logits = h;
        break;
      case LayerKind::softmax:
        h = softmax(h);
        break;
    }
    detail::require_finite(h, l, i);
  }
  if (trace) trace->probs = h;
  return h;
}

inline Sequence forward(const ModelParams& m, const Sequence& x) { return forward(m, x, nullptr); }

inline Labels predict(const ModelParams& m, const Sequence& x) { return argmax_labels(forward(m, x)); }

struct LossAndGrads {
  double loss = 0.0;
  TensorMap grads;
  Sequence probs;
};

/// Zero tensors shaped like every parameter.
inline TensorMap zero_like(const TensorMap& params) {
  TensorMap out;
  for (const auto& e : params) out.add(e.name, Tensor(e.tensor.shape));
  return out;
}

/// Mean frame-wise cross-entropy and its gradient for every parameter,
/// by reverse traversal of the layer stack. Gradients of pooling weights of
/// a non-learnable pooler are zero.
inline LossAndGrads loss_and_grads(const ModelParams& m, const Sequence& x, const Labels& y,
                                   const DropoutContext* dropout = nullptr) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw ShapeError("features have " + std::to_string(x.rows()) + " frames, labels " + std::to_string(y.size()));
  }
  for (int label : y) {
    if (label < 0 || label >= m.classes) throw DataError("label " + std::to_string(label) + " out of range");
  }
  ForwardTrace trace;
  LossAndGrads out;
  out.probs = forward(m, x, &trace, dropout);
  out.loss = cross_entropy(out.probs, y);
  if (!std::isfinite(out.loss)) throw NumericError("loss is not finite (after final layer softmax)");
  out.grads = zero_like(m.params);

  Sequence g;
  for (std::size_t idx = m.layers.size(); idx-- > 0;) {
    const LayerSpec& l = m.layers[idx];
    const Sequence& in = trace.inputs[idx];
    switch (l.kind) {
      case LayerKind::softmax:
        g = cross_entropy_logit_grad(out.probs, y);
        break;
      case LayerKind::timedense: {
        auto dg = timedense_backward(in, m.params.at(l.name + ".weight"), g);
        out.grads.at(l.name + ".weight") = std::move(dg.weight);
        out.grads.at(l.name + ".bias") = std::move(dg.bias);
        g = std::move(dg.x);
        break;
      }
      case LayerKind::conv1d: {
        auto cg = conv1d_backward(in, m.params.at(l.name + ".weight"), m.params.at(l.name + ".bias"), g);
        out.grads.at(l.name + ".weight") = std::move(cg.kernel);
        out.grads.at(l.name + ".bias") = std::move(cg.bias);
        g = std::move(cg.x);
        break;
      }
      case LayerKind::activation: {
        auto ag = activation_backward(in, live_activation(m, l), g);
        if (l.activation.kind == ActivationKind::rpn) out.grads.at(l.name + ".theta")[0] = ag.theta;
        g = std::move(ag.x);
        break;
      }
      case LayerKind::dropout:
        if (trace.dropout_masks[idx].size() > 0) g = g.cwiseProduct(trace.dropout_masks[idx]);
        break;
      case LayerKind::pooling: {
        auto pg = pool_backward(in, l.pooling, live_pool_weights(m, l), g);
        if (has_weights(l.pooling.kind) && l.pooling.learnable) {
          if (uses_decoupled_weights(l.pooling.kind)) {
            out.grads.at(l.name + ".p").values = detail::to_std(pg.weights.p);
            out.grads.at(l.name + ".q").values = detail::to_std(pg.weights.q);
          } else {
            out.grads.at(l.name + ".omega").values = detail::to_std(pg.weights.omega);
          }
        }
        g = std::move(pg.x);
        break;
      }
      case LayerKind::normalize:
        g = normalize_backward(in, l.norm, g);
        break;
      case LayerKind::upsample:
        g = upsample_nn_backward(in, g);
        break;
    }
  }
  return out;
}

}  // namespace tpool
