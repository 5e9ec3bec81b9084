// SPDX-License-Identifier: Apache-2.0
//
// Feature/label ingestion, fold files, the correlated-Gaussian synthetic
// generator and temporal downsampling.
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tpool/error.hpp"
#include "tpool/rng.hpp"
#include "tpool/types.hpp"

namespace tpool {

enum class FeatureFormat { csv, binary };

inline constexpr std::array<char, 4> kFeatureMagic = {'T', 'P', 'F', '1'};

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to '" + path.string() + "'");
}

/// Splits on '\n'. A single trailing newline does not produce an empty line.
inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t begin = 0;
  while (begin < text.size()) {
    const std::size_t end = text.find('\n', begin);
    if (end == std::string_view::npos) {
      lines.push_back(text.substr(begin));
      break;
    }
    lines.push_back(text.substr(begin, end - begin));
    begin = end + 1;
  }
  return lines;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return v;
}

}  // namespace detail

/// Infers the format from the extension: ".csv" is CSV, anything else binary.
inline FeatureFormat format_for(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? FeatureFormat::csv : FeatureFormat::binary;
}

/// Throws DataError if any value is NaN or infinite.
inline void check_finite(const Sequence& x, std::string_view what = "features") {
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (!std::isfinite(x(t, c))) {
        throw DataError(std::string(what) + ": non-finite value at frame " + std::to_string(t) +
                        ", channel " + std::to_string(c));
      }
    }
  }
}

inline Sequence parse_features_csv(std::string_view text) {
  const auto lines = detail::split_lines(text);
  if (lines.empty()) throw ParseError("feature CSV is empty");
  std::vector<std::vector<double>> rows;
  rows.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::vector<double> row;
    std::string_view line = lines[i];
    if (detail::trim(line).empty()) throw ParseError("feature CSV row " + std::to_string(i) + " is blank");
    while (true) {
      const std::size_t comma = line.find(',');
      double value = 0.0;
      if (!detail::parse_number(line.substr(0, comma), value)) {
        throw ParseError("feature CSV row " + std::to_string(i) + ": bad number");
      }
      row.push_back(value);
      if (comma == std::string_view::npos) break;
      line.remove_prefix(comma + 1);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError("feature CSV row " + std::to_string(i) + " has " + std::to_string(row.size()) +
                       " values, expected " + std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  Sequence x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t c = 0; c < rows[t].size(); ++c) x(t, c) = rows[t][c];
  }
  check_finite(x);
  return x;
}

inline Sequence parse_features_binary(std::string_view bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kFeatureMagic.data(), 4) != 0) {
    throw ParseError("binary feature file: missing TPF1 header");
  }
  const std::uint32_t frames = detail::get_u32(bytes, 4);
  const std::uint32_t channels = detail::get_u32(bytes, 8);
  if (frames == 0 || channels == 0) throw ParseError("binary feature file: zero dimension");
  const std::uint64_t count = std::uint64_t{frames} * channels;
  if (bytes.size() != 12 + 4 * count) {
    throw ParseError("binary feature file: payload holds " + std::to_string((bytes.size() - 12) / 4) +
                     " floats, header declares " + std::to_string(count));
  }
  Sequence x(frames, channels);
  for (std::uint64_t i = 0; i < count; ++i) {
    x.data()[i] = static_cast<double>(std::bit_cast<float>(detail::get_u32(bytes, 12 + 4 * i)));
  }
  check_finite(x);
  return x;
}

inline Sequence load_features(const std::filesystem::path& path, FeatureFormat format) {
  const std::string bytes = detail::read_file(path);
  try {
    return format == FeatureFormat::csv ? parse_features_csv(bytes) : parse_features_binary(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline Sequence load_features(const std::filesystem::path& path) {
  return load_features(path, format_for(path));
}

inline std::string format_features_csv(const Sequence& x) {
  std::string out;
  char buf[32];
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (c) out.push_back(',');
      const auto res = std::to_chars(buf, buf + sizeof buf, x(t, c));
      out.append(buf, res.ptr);
    }
    out.push_back('\n');
  }
  return out;
}

/// Binary payload is 32-bit float; values are narrowed on write.
inline std::string format_features_binary(const Sequence& x) {
  std::string out(kFeatureMagic.begin(), kFeatureMagic.end());
  detail::put_u32(out, static_cast<std::uint32_t>(x.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(x.cols()));
  out.reserve(out.size() + 4 * static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x.data()[i])));
  }
  return out;
}

inline void store_features(const std::filesystem::path& path, const Sequence& x, FeatureFormat format) {
  detail::write_file(path, format == FeatureFormat::csv ? format_features_csv(x) : format_features_binary(x));
}

inline void store_features(const std::filesystem::path& path, const Sequence& x) {
  store_features(path, x, format_for(path));
}

inline Labels parse_labels(std::string_view text, int classes) {
  const auto lines = detail::split_lines(text);
  if (lines.empty()) throw ParseError("label file is empty");
  Labels labels;
  labels.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    int value = 0;
    if (!detail::parse_number(lines[i], value)) {
      throw ParseError("label line " + std::to_string(i) + " is not an integer");
    }
    if (value < 0 || value >= classes) {
      throw DataError("label line " + std::to_string(i) + ": class " + std::to_string(value) +
                      " outside [0, " + std::to_string(classes) + ")");
    }
    labels.push_back(value);
  }
  return labels;
}

inline Labels load_labels(const std::filesystem::path& path, int classes) {
  const std::string text = detail::read_file(path);
  try {
    return parse_labels(text, classes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline std::string format_labels(const Labels& labels) {
  std::string out;
  for (int v : labels) {
    out += std::to_string(v);
    out.push_back('\n');
  }
  return out;
}

inline void store_labels(const std::filesystem::path& path, const Labels& labels) {
  detail::write_file(path, format_labels(labels));
}

/// Validates that folds are disjoint and cover [0, n).
inline void check_folds(const std::vector<std::vector<std::size_t>>& folds, std::size_t n) {
  std::vector<int> seen(n, 0);
  for (const auto& fold : folds) {
    for (std::size_t i : fold) {
      if (i >= n) throw DataError("fold references item " + std::to_string(i) + " of " + std::to_string(n));
      if (seen[i]++) throw DataError("item " + std::to_string(i) + " appears in more than one fold");
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen[i]) throw DataError("item " + std::to_string(i) + " is not in any fold");
  }
}

inline std::vector<std::vector<std::size_t>> parse_folds(std::string_view text) {
  std::vector<std::vector<std::size_t>> folds;
  for (std::string_view line : detail::split_lines(text)) {
    std::vector<std::size_t> fold;
    if (!detail::trim(line).empty()) {
      while (true) {
        const std::size_t comma = line.find(',');
        std::size_t index = 0;
        if (!detail::parse_number(line.substr(0, comma), index)) {
          throw ParseError("fold " + std::to_string(folds.size()) + ": bad item index");
        }
        fold.push_back(index);
        if (comma == std::string_view::npos) break;
        line.remove_prefix(comma + 1);
      }
    }
    folds.push_back(std::move(fold));
  }
  return folds;
}

inline std::string format_folds(const std::vector<std::vector<std::size_t>>& folds) {
  std::string out;
  for (const auto& fold : folds) {
    for (std::size_t i = 0; i < fold.size(); ++i) {
      if (i) out.push_back(',');
      out += std::to_string(fold[i]);
    }
    out.push_back('\n');
  }
  return out;
}

/// Throws DataError unless every item is aligned, finite and shares d and C.
inline void check_dataset(const Dataset& ds) {
  if (ds.items.empty()) throw DataError("dataset is empty");
  const Eigen::Index d = ds.items.front().features.cols();
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    const auto& item = ds.items[i];
    if (item.features.rows() < 1 || item.features.cols() < 1) {
      throw DataError("item " + std::to_string(i) + " has an empty feature matrix");
    }
    if (item.features.cols() != d) {
      throw DataError("item " + std::to_string(i) + " has " + std::to_string(item.features.cols()) +
                      " channels, expected " + std::to_string(d));
    }
    if (static_cast<std::size_t>(item.features.rows()) != item.labels.size()) {
      throw DataError("item " + std::to_string(i) + ": " + std::to_string(item.features.rows()) +
                      " frames but " + std::to_string(item.labels.size()) + " labels");
    }
    for (int y : item.labels) {
      if (y < 0 || y >= ds.classes) throw DataError("item " + std::to_string(i) + ": label out of range");
    }
  }
  check_folds(ds.folds, ds.items.size());
}

struct SynthParams {
  std::uint64_t seed = 1;
  std::size_t sequences = 50;
  std::size_t frames = 200;
  std::size_t channels = 8;
  std::size_t min_segment = 10;
  std::size_t max_segment = 20;
  double rho = 0.9;
  std::size_t folds = 5;
};

/// Two-class data with matching first-order statistics: every channel is
/// zero-mean with unit variance, and channels (2i, 2i+1) are correlated
/// with +rho in class 0 and -rho in class 1. An odd last channel is
/// independent noise. Segments alternate strictly between the classes.
inline Dataset synth_covariance_dataset(const SynthParams& p) {
  if (!(p.rho > 0.0 && p.rho < 1.0)) throw ConfigError("rho must lie in (0, 1)");
  if (p.channels < 2) throw ConfigError("synthetic data needs at least 2 channels");
  if (p.frames < 1 || p.sequences < 1) throw ConfigError("synthetic data needs frames >= 1 and sequences >= 1");
  if (p.min_segment < 1 || p.min_segment > p.max_segment) throw ConfigError("bad segment length range");
  if (p.folds < 1 || p.folds > p.sequences) throw ConfigError("fold count must lie in [1, sequences]");

  Dataset ds;
  ds.classes = 2;
  const double residual = std::sqrt(1.0 - p.rho * p.rho);
  for (std::size_t n = 0; n < p.sequences; ++n) {
    CounterRng rng(p.seed, n);
    LabeledSequence item;
    item.features.resize(static_cast<Eigen::Index>(p.frames), static_cast<Eigen::Index>(p.channels));
    item.labels.resize(p.frames);
    int cls = static_cast<int>(rng.below(2));
    std::size_t t = 0;
    while (t < p.frames) {
      const std::size_t len = p.min_segment + rng.below(p.max_segment - p.min_segment + 1);
      const std::size_t end = std::min(p.frames, t + len);
      const double sign = cls == 0 ? 1.0 : -1.0;
      for (; t < end; ++t) {
        item.labels[t] = cls;
        std::size_t c = 0;
        for (; c + 1 < p.channels; c += 2) {
          const double a = rng.normal();
          const double b = rng.normal();
          item.features(t, c) = a;
          item.features(t, c + 1) = sign * p.rho * a + residual * b;
        }
        if (c < p.channels) item.features(t, c) = rng.normal();
      }
      cls = 1 - cls;
    }
    ds.items.push_back(std::move(item));
  }
  ds.folds.resize(p.folds);
  for (std::size_t n = 0; n < p.sequences; ++n) ds.folds[n * p.folds / p.sequences].push_back(n);
  return ds;
}

/// Keeps frames 0, factor, 2*factor, ... together with their labels.
inline std::pair<Sequence, Labels> downsample(const Sequence& x, const Labels& y, std::size_t factor) {
  if (factor < 1) throw ConfigError("downsample factor must be >= 1");
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw ShapeError("downsample: frames and labels differ in length");
  const Eigen::Index kept = (x.rows() + static_cast<Eigen::Index>(factor) - 1) / static_cast<Eigen::Index>(factor);
  Sequence xs(kept, x.cols());
  Labels ys(static_cast<std::size_t>(kept));
  for (Eigen::Index i = 0; i < kept; ++i) {
    xs.row(i) = x.row(i * static_cast<Eigen::Index>(factor));
    ys[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i) * factor];
  }
  return {std::move(xs), std::move(ys)};
}

// On-disk dataset directory: seq_NNNN.{tpf|csv} feature files, matching
// seq_NNNN.labels files and a folds.txt. Items are indexed in file-name order.

inline std::string item_stem(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%04zu", index);
  return buf;
}

inline void store_dataset(const std::filesystem::path& dir, const Dataset& ds,
                          FeatureFormat format = FeatureFormat::binary) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw DataError("cannot create directory '" + dir.string() + "'");
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    const std::string stem = item_stem(i);
    store_features(dir / (stem + (format == FeatureFormat::csv ? ".csv" : ".tpf")), ds.items[i].features, format);
    store_labels(dir / (stem + ".labels"), ds.items[i].labels);
  }
  detail::write_file(dir / "folds.txt", format_folds(ds.folds));
}

/// Lists feature files of a dataset directory in item order.
inline std::vector<std::filesystem::path> list_feature_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory '" + dir.string() + "' does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".tpf" || ext == ".csv")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no feature files (*.tpf, *.csv) in '" + dir.string() + "'");
  return files;
}

/// Feature files that a label file in dir refers to but that do not exist.
inline std::vector<std::filesystem::path> missing_feature_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> missing;
  if (!std::filesystem::is_directory(dir)) return {dir};
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".labels") continue;
    auto tpf = entry.path(), csv = entry.path();
    tpf.replace_extension(".tpf");
    csv.replace_extension(".csv");
    if (!std::filesystem::exists(tpf) && !std::filesystem::exists(csv)) missing.push_back(tpf);
  }
  std::sort(missing.begin(), missing.end());
  return missing;
}

/// Loads a dataset directory. Without folds.txt every item forms one fold.
inline Dataset load_dataset(const std::filesystem::path& dir, int classes) {
  if (const auto missing = missing_feature_files(dir); !missing.empty()) {
    throw DataError("missing feature file '" + missing.front().string() + "'");
  }
  Dataset ds;
  ds.classes = classes;
  for (const auto& file : list_feature_files(dir)) {
    LabeledSequence item;
    item.features = load_features(file);
    auto label_path = file;
    label_path.replace_extension(".labels");
    if (!std::filesystem::exists(label_path)) throw DataError("missing label file '" + label_path.string() + "'");
    item.labels = load_labels(label_path, classes);
    ds.items.push_back(std::move(item));
  }
  const auto fold_path = dir / "folds.txt";
  if (std::filesystem::exists(fold_path)) {
    ds.folds = parse_folds(detail::read_file(fold_path));
  } else {
    ds.folds.emplace_back();
    for (std::size_t i = 0; i < ds.items.size(); ++i) ds.folds.front().push_back(i);
  }
  check_dataset(ds);
  return ds;
}

}  // namespace tpool
