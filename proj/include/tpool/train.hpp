// SPDX-License-Identifier: Apache-2.0
//
// Deterministic single-threaded training: Adam, one sequence per step,
// global gradient-norm clipping.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "tpool/error.hpp"
#include "tpool/metrics.hpp"
#include "tpool/model.hpp"
#include "tpool/rng.hpp"
#include "tpool/types.hpp"

namespace tpool {

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  MetricScores train;
};

struct TrainResult {
  ModelParams model;
  std::vector<EpochRecord> history;
};

/// Called after every epoch; return false to stop early.
using EpochCallback = std::function<bool(const EpochRecord&, const ModelParams&)>;

namespace detail {

/// FNV-1a over the raw bytes of an item, used to order items independently
/// of how the caller listed them.
inline std::uint64_t content_hash(const LabeledSequence& item) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto feed = [&](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001B3ULL;
    }
  };
  const std::int64_t shape[2] = {item.features.rows(), item.features.cols()};
  feed(shape, sizeof shape);
  feed(item.features.data(), sizeof(double) * static_cast<std::size_t>(item.features.size()));
  feed(item.labels.data(), sizeof(int) * item.labels.size());
  return h;
}

/// Items sorted by content (hash, then bytes), independent of input order.
inline std::vector<const LabeledSequence*> canonical_order(const std::vector<const LabeledSequence*>& items) {
  std::vector<std::pair<std::uint64_t, const LabeledSequence*>> keyed;
  keyed.reserve(items.size());
  for (const auto* item : items) keyed.emplace_back(content_hash(*item), item);
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    const auto& fa = a.second->features;
    const auto& fb = b.second->features;
    if (fa.size() != fb.size()) return fa.size() < fb.size();
    const int c = std::memcmp(fa.data(), fb.data(), sizeof(double) * static_cast<std::size_t>(fa.size()));
    if (c != 0) return c < 0;
    return a.second->labels < b.second->labels;
  });
  std::vector<const LabeledSequence*> out;
  out.reserve(items.size());
  for (const auto& [h, item] : keyed) out.push_back(item);
  return out;
}

inline void shuffle(std::vector<std::size_t>& order, CounterRng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
}

/// Weight decay applies to convolution and dense kernels only.
inline bool decays(const std::string& name) { return name.size() > 7 && name.ends_with(".weight"); }

}  // namespace detail

struct AdamState {
  TensorMap m;
  TensorMap v;
  std::uint64_t step = 0;
};

/// Names of tensors the optimizer may change (fixed pooling weights are excluded).
inline std::vector<std::string> trainable_names(const ModelParams& model) {
  std::vector<std::string> names;
  for (const auto& l : model.layers) {
    if (l.kind == LayerKind::pooling && !l.pooling.learnable) continue;
    for (const auto& e : model.params) {
      if (e.name.starts_with(l.name + ".")) names.push_back(e.name);
    }
  }
  return names;
}

/// L2 norm over the listed gradient tensors.
inline double gradient_norm(const TensorMap& grads, const std::vector<std::string>& names) {
  double sq = 0.0;
  for (const auto& name : names) {
    for (double g : grads.at(name).values) sq += g * g;
  }
  return std::sqrt(sq);
}

/// Trains on the listed items. Items are first put into a canonical
/// content order, then visited in a seed-keyed shuffle each epoch.
inline TrainResult train(ModelParams model, const std::vector<const LabeledSequence*>& items, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (items.empty()) throw DataError("training set is empty");
  for (const auto* item : items) {
    if (item->features.cols() != model.input_dim) {
      throw ShapeError("training item has " + std::to_string(item->features.cols()) + " channels, model expects " +
                       std::to_string(model.input_dim));
    }
  }
  const auto ordered = detail::canonical_order(items);
  const auto names = trainable_names(model);
  AdamState adam{zero_like(model.params), zero_like(model.params), 0};
  TrainResult result;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(ordered.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng shuffle_rng(cfg.seed, 0x5EED0000ULL + static_cast<std::uint64_t>(epoch));
    detail::shuffle(order, shuffle_rng);

    double loss_sum = 0.0;
    std::vector<MetricScores> scores;
    for (std::size_t s = 0; s < order.size(); ++s) {
      const LabeledSequence& item = *ordered[order[s]];
      const DropoutContext dctx{cfg.seed, adam.step};
      LossAndGrads lg;
      try {
        lg = loss_and_grads(model, item.features, item.labels, cfg.dropout > 0.0 ? &dctx : nullptr);
      } catch (const NumericError& e) {
        throw TrainError("diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(s) + ": " +
                         e.what());
      }
      loss_sum += lg.loss;
      scores.push_back(score_sequence(argmax_labels(lg.probs), item.labels));

      if (cfg.weight_decay > 0.0) {
        for (const auto& name : names) {
          if (!detail::decays(name)) continue;
          auto& g = lg.grads.at(name).values;
          const auto& p = model.params.at(name).values;
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += cfg.weight_decay * p[i];
        }
      }
      const double norm = gradient_norm(lg.grads, names);
      const double scale = norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;

      ++adam.step;
      const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam.step));
      const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam.step));
      for (const auto& name : names) {
        auto& p = model.params.at(name).values;
        const auto& g = lg.grads.at(name).values;
        auto& m1 = adam.m.at(name).values;
        auto& m2 = adam.v.at(name).values;
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double gi = g[i] * scale;
          m1[i] = cfg.adam_beta1 * m1[i] + (1.0 - cfg.adam_beta1) * gi;
          m2[i] = cfg.adam_beta2 * m2[i] + (1.0 - cfg.adam_beta2) * gi * gi;
          p[i] -= cfg.learning_rate * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + cfg.adam_epsilon);
        }
      }
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), mean_scores(scores)};
    if (!std::isfinite(rec.loss)) throw TrainError("loss is not finite at epoch " + std::to_string(epoch));
    result.history.push_back(rec);
    if (on_epoch && !on_epoch(rec, model)) break;
  }
  result.model = std::move(model);
  return result;
}

/// Convenience overload over a whole dataset.
inline TrainResult train(ModelParams model, const Dataset& ds, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  std::vector<const LabeledSequence*> items;
  for (const auto& item : ds.items) items.push_back(&item);
  return train(std::move(model), items, cfg, on_epoch);
}

/// Mean-over-sequences scores of a model on the listed items.
inline MetricScores evaluate(const ModelParams& model, const std::vector<const LabeledSequence*>& items,
                             std::optional<int> ignore = std::nullopt) {
  std::vector<MetricScores> scores;
  for (const auto* item : items) scores.push_back(score_sequence(predict(model, item->features), item->labels, ignore));
  return mean_scores(scores);
}

inline std::string format_history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,loss,acc,edit,f1\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.loss, r.train.accuracy, r.train.edit,
                  r.train.f1);
    out += buf;
  }
  return out;
}

}  // namespace tpool
