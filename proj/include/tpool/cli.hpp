// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the tpool executable. Each command writes
// human-readable output to a stream and reports failure by throwing; the
// executable maps exception types to exit codes.
#pragma once

#include <algorithm>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "tpool/checkpoint.hpp"
#include "tpool/config.hpp"
#include "tpool/error.hpp"
#include "tpool/metrics.hpp"
#include "tpool/model.hpp"
#include "tpool/pooling.hpp"
#include "tpool/seqdata.hpp"
#include "tpool/train.hpp"
#include "tpool/verify.hpp"

namespace tpool::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kVerifyFailed = 1, kUsage = 2, kData = 3 };

/// Config, usage and file-resolution problems exit 2; data, shape and
/// numeric problems exit 3.
inline int exit_code_for(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kUsage;
  return kData;
}

/// Everything a training run needs. Paths are absolute once loaded.
struct RunConfig {
  TrainConfig train;
  fs::path data;
  int classes = 0;
  int test_fold = -1;  // -1 trains on every item
  std::size_t downsample = 1;
  fs::path out;

  bool operator==(const RunConfig&) const = default;
};

inline fs::path resolve(const fs::path& base, const std::string& text) {
  fs::path p(text);
  if (p.is_relative()) p = base / p;
  return p.lexically_normal();
}

/// Parses a run config; relative paths resolve against base_dir.
inline RunConfig parse_run_config(std::string_view text, const fs::path& base_dir) {
  const auto kv = KeyValueConfig::parse(text);
  RunConfig rc;
  for (const char* key : {"data", "classes", "out"}) {
    if (!kv.contains(key)) throw ConfigError(std::string("config key '") + key + "' is required");
  }
  std::string data, out;
  kv.read("data", data);
  kv.read("out", out);
  kv.read("classes", rc.classes);
  kv.read("test_fold", rc.test_fold);
  std::uint64_t factor = rc.downsample;
  kv.read("downsample", factor);
  rc.downsample = factor;
  read_train_config(kv, rc.train);
  kv.reject_unknown();

  rc.data = resolve(base_dir, data);
  rc.out = resolve(base_dir, out);
  if (rc.classes < 1) throw ConfigError("config key 'classes' must be >= 1");
  if (rc.downsample < 1) throw ConfigError("config key 'downsample' must be >= 1");
  if (rc.test_fold < -1) throw ConfigError("config key 'test_fold' must be -1 or a fold index");
  rc.train.validate();
  if (!fs::is_directory(rc.data)) throw ConfigError("config key 'data': no directory '" + rc.data.string() + "'");
  if (const auto missing = missing_feature_files(rc.data); !missing.empty()) {
    throw ConfigError("config key 'data': missing feature file '" + missing.front().string() + "'");
  }
  return rc;
}

inline RunConfig load_run_config(const fs::path& path) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(text, fs::absolute(path).parent_path());
}

inline std::string format_run_config(const RunConfig& rc) {
  KeyValueConfig kv;
  kv.set("data", rc.data.string());
  kv.set("classes", std::to_string(rc.classes));
  kv.set("test_fold", std::to_string(rc.test_fold));
  kv.set("downsample", std::to_string(rc.downsample));
  kv.set("out", rc.out.string());
  write_train_config(rc.train, kv);
  return kv.format();
}

inline void downsample_dataset(Dataset& ds, std::size_t factor) {
  if (factor == 1) return;
  for (auto& item : ds.items) std::tie(item.features, item.labels) = downsample(item.features, item.labels, factor);
}

/// Items outside (train) or inside (test) a fold; fold -1 puts every item in train.
struct Split {
  std::vector<const LabeledSequence*> train;
  std::vector<const LabeledSequence*> test;
};

inline Split split_dataset(const Dataset& ds, int test_fold) {
  if (test_fold >= static_cast<int>(ds.folds.size())) {
    throw ConfigError("test_fold " + std::to_string(test_fold) + " out of range: dataset has " +
                      std::to_string(ds.folds.size()) + " folds");
  }
  std::vector<bool> held_out(ds.items.size(), false);
  if (test_fold >= 0) {
    for (std::size_t i : ds.folds[static_cast<std::size_t>(test_fold)]) held_out[i] = true;
  }
  Split s;
  for (std::size_t i = 0; i < ds.items.size(); ++i) (held_out[i] ? s.test : s.train).push_back(&ds.items[i]);
  return s;
}

inline std::string score_line(const std::string& name, const MetricScores& s) {
  return name + " acc/edit/F1@0.10 " + format_scores(s);
}

/// cmd_train: writes model.tpck, history.csv and config.cfg into rc.out.
inline TrainResult run_train(const RunConfig& rc, std::ostream& log) {
  Dataset ds = load_dataset(rc.data, rc.classes);
  downsample_dataset(ds, rc.downsample);
  const Split split = split_dataset(ds, rc.test_fold);
  if (split.train.empty()) throw DataError("training split is empty");
  std::error_code ec;
  fs::create_directories(rc.out, ec);
  if (!fs::is_directory(rc.out)) throw ConfigError("cannot create output directory '" + rc.out.string() + "'");

  const auto input_dim = static_cast<int>(ds.items.front().features.cols());
  ModelParams model = build_model(rc.train, input_dim, rc.classes);
  log << "training " << split.train.size() << " sequences, " << model.params.parameter_count() << " parameters\n";
  auto result = train(std::move(model), split.train, rc.train, [&](const EpochRecord& r, const ModelParams&) {
    log << "epoch " << r.epoch << " loss " << r.loss << " " << score_line("train", r.train) << "\n";
    return true;
  });
  if (!split.test.empty()) log << score_line("test", evaluate(result.model, split.test)) << "\n";

  save_model(rc.out / "model.tpck", result.model);
  detail::write_file(rc.out / "history.csv", format_history_csv(result.history));
  detail::write_file(rc.out / "config.cfg", format_run_config(rc));
  return result;
}

struct EvalOptions {
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> predictions;  // directory of seq_NNNN.labels used instead of a model
  fs::path data;
  std::optional<int> classes;
  std::optional<int> ignore;
  std::optional<int> fold;
  std::size_t downsample = 1;
  std::optional<fs::path> dump;
};

/// cmd_eval: per-sequence and mean-over-sequences scores.
inline MetricScores run_eval(const EvalOptions& opt, std::ostream& out) {
  if (opt.checkpoint.has_value() == opt.predictions.has_value()) {
    throw ConfigError("eval needs exactly one of --checkpoint or --predictions");
  }
  std::optional<ModelParams> model;
  int classes = 0;
  if (opt.checkpoint) {
    model = load_model(*opt.checkpoint);
    classes = model->classes;
  } else {
    if (!opt.classes) throw ConfigError("--classes is required with --predictions");
    classes = *opt.classes;
  }
  Dataset ds = load_dataset(opt.data, classes);
  downsample_dataset(ds, opt.downsample);
  std::vector<std::size_t> indices;
  if (opt.fold) {
    if (*opt.fold < 0 || *opt.fold >= static_cast<int>(ds.folds.size())) {
      throw ConfigError("--fold " + std::to_string(*opt.fold) + " out of range");
    }
    indices = ds.folds[static_cast<std::size_t>(*opt.fold)];
    std::sort(indices.begin(), indices.end());
  } else {
    for (std::size_t i = 0; i < ds.items.size(); ++i) indices.push_back(i);
  }
  if (opt.dump) {
    std::error_code ec;
    fs::create_directories(*opt.dump, ec);
    if (!fs::is_directory(*opt.dump)) throw ConfigError("cannot create dump directory '" + opt.dump->string() + "'");
  }

  std::vector<MetricScores> scores;
  for (std::size_t i : indices) {
    const auto& item = ds.items[i];
    Labels pred;
    if (model) {
      pred = predict(*model, item.features);
    } else {
      pred = load_labels(*opt.predictions / (item_stem(i) + ".labels"), classes);
      if (opt.downsample > 1) {
        Labels kept;
        for (std::size_t t = 0; t < pred.size(); t += opt.downsample) kept.push_back(pred[t]);
        pred = std::move(kept);
      }
    }
    const MetricScores s = score_sequence(pred, item.labels, opt.ignore);
    scores.push_back(s);
    out << score_line(item_stem(i), s) << "\n";
    if (opt.dump) store_labels(*opt.dump / (item_stem(i) + ".labels"), pred);
  }
  if (scores.empty()) throw DataError("nothing to evaluate");
  const MetricScores mean = mean_scores(scores);
  out << score_line("mean-over-sequences", mean) << "\n";
  return mean;
}

/// cmd_verify: returns true iff every check passes.
inline bool run_verify(int seeds, std::ostream& out, double omega_fault = 0.0) {
  if (seeds < 1) throw ConfigError("--seeds must be >= 1");
  bool ok = true;
  auto report = [&](const CheckResult& c) {
    out << format_check(c) << "\n";
    ok = ok && c.passed;
  };
  for (const auto& c : verify_kernels(seeds, 1, omega_fault)) report(c);
  report(verify_hvec_identity(seeds));
  out << "output_dim at d=128:\n";
  for (const auto& row : dimension_table()) {
    const bool match = row.actual == row.expected;
    out << "  " << to_string(row.kind) << " " << row.actual << " (published " << row.expected << "): "
        << (match ? "PASS" : "FAIL") << "\n";
    ok = ok && match;
  }
  report(verify_gradients(1));
  out << (ok ? "verify: PASS" : "verify: FAIL") << "\n";
  return ok;
}

/// cmd_synth: writes feature files, label files and folds.txt into dir.
inline void run_synth(const SynthParams& p, const fs::path& dir, FeatureFormat format) {
  const Dataset ds = synth_covariance_dataset(p);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw ConfigError("cannot create output directory '" + dir.string() + "'");
  try {
    store_dataset(dir, ds, format);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

struct PoolOptions {
  fs::path in;
  fs::path out;
  std::string kind;
  int window = 5;
  int stride = 2;
  std::optional<fs::path> weights;  // CSV: omega on one line, or p then q
};

inline PoolingWeights read_pool_weights(const fs::path& path, PoolKind kind, int window) {
  const Sequence rows = load_features(path, FeatureFormat::csv);
  const Eigen::Index need = uses_decoupled_weights(kind) ? 2 : 1;
  if (rows.rows() != need || rows.cols() != window) {
    throw ShapeError("weights file '" + path.string() + "' must hold " + std::to_string(need) + " line(s) of " +
                     std::to_string(window) + " values");
  }
  PoolingWeights w = uniform_weights(window);
  if (need == 2) {
    w.p = rows.row(0).transpose();
    w.q = rows.row(1).transpose();
  } else {
    w.omega = rows.row(0).transpose();
  }
  return w;
}

/// cmd_pool: applies one pooler to a feature file. Without weights the
/// box filter is used, which gives the non-learnable forms.
inline Sequence run_pool(const PoolOptions& opt) {
  const auto kind = parse_pool_kind(opt.kind);
  if (!kind) throw ConfigError("unknown pooling kind '" + opt.kind + "'");
  PoolingConfig cfg{*kind, opt.window, opt.stride, opt.weights.has_value()};
  cfg.validate();
  const Sequence x = load_features(opt.in);
  const PoolingWeights w =
      opt.weights && has_weights(*kind) ? read_pool_weights(*opt.weights, *kind, opt.window) : uniform_weights(opt.window);
  Sequence y = pool(x, cfg, w);
  store_features(opt.out, y);
  return y;
}

}  // namespace tpool::cli
