// SPDX-License-Identifier: Apache-2.0
//
// Frame accuracy, segmental edit score and segmental overlap F1.
// All scores are percentages in [0, 100].
#pragma once

#include <algorithm>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "tpool/error.hpp"
#include "tpool/types.hpp"

namespace tpool {

/// Maximal run of one class over frames [start, end).
struct Segment {
  int label;
  std::size_t start;
  std::size_t end;

  [[nodiscard]] std::size_t length() const { return end - start; }
  bool operator==(const Segment&) const = default;
};

using SegmentList = std::vector<Segment>;

inline SegmentList to_segments(const Labels& y) {
  SegmentList segments;
  for (std::size_t t = 0; t < y.size(); ++t) {
    if (segments.empty() || segments.back().label != y[t]) {
      segments.push_back({y[t], t, t + 1});
    } else {
      segments.back().end = t + 1;
    }
  }
  return segments;
}

namespace detail {
inline void check_same_length(const Labels& pred, const Labels& gt) {
  if (pred.size() != gt.size()) {
    throw ShapeError("prediction has " + std::to_string(pred.size()) + " frames, ground truth has " +
                     std::to_string(gt.size()));
  }
}
}  // namespace detail

/// Percentage of counted frames labelled correctly; frames whose ground
/// truth equals `ignore` are not counted.
inline double frame_accuracy(const Labels& pred, const Labels& gt, std::optional<int> ignore = std::nullopt) {
  detail::check_same_length(pred, gt);
  std::size_t counted = 0, correct = 0;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    if (ignore && gt[t] == *ignore) continue;
    ++counted;
    correct += pred[t] == gt[t];
  }
  if (counted == 0) throw DataError("frame_accuracy: no frames left to score");
  return 100.0 * static_cast<double>(correct) / static_cast<double>(counted);
}

/// Unit-cost Levenshtein distance, two-row dynamic program.
inline std::size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] != b[j - 1]);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::vector<int> segment_labels(const SegmentList& segments) {
  std::vector<int> out;
  out.reserve(segments.size());
  for (const auto& s : segments) out.push_back(s.label);
  return out;
}

/// 100 (1 - Levenshtein(segment labels) / max segment count), floored at 0.
inline double edit_score(const Labels& pred, const Labels& gt) {
  detail::check_same_length(pred, gt);
  const auto p = segment_labels(to_segments(pred));
  const auto g = segment_labels(to_segments(gt));
  const std::size_t longest = std::max(p.size(), g.size());
  if (longest == 0) return 100.0;
  const double score = 100.0 * (1.0 - static_cast<double>(levenshtein(p, g)) / static_cast<double>(longest));
  return std::max(0.0, score);
}

inline double segment_iou(const Segment& a, const Segment& b) {
  const std::size_t lo = std::max(a.start, b.start);
  const std::size_t hi = std::min(a.end, b.end);
  const std::size_t inter = hi > lo ? hi - lo : 0;
  const std::size_t uni = std::max(a.end, b.end) - std::min(a.start, b.start);
  return static_cast<double>(inter) / static_cast<double>(uni);
}

struct SegmentMatchCounts {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
};

/// F1 percentage from match counts; 0 when precision + recall is 0.
inline double f1_from_counts(const SegmentMatchCounts& c) {
  const double tp = static_cast<double>(c.true_positives);
  const double precision = tp + c.false_positives > 0 ? tp / (tp + c.false_positives) : 0.0;
  const double recall = tp + c.false_negatives > 0 ? tp / (tp + c.false_negatives) : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

/// Greedy matching: predicted segments in temporal order each take the
/// still-unmatched same-class ground-truth segment of highest IoU (earliest
/// on ties) and count as true positives when that IoU exceeds tau.
inline SegmentMatchCounts match_segments(const SegmentList& pred, const SegmentList& gt, double tau) {
  SegmentMatchCounts counts;
  std::vector<bool> used(gt.size(), false);
  for (const auto& p : pred) {
    double best = -1.0;
    std::size_t best_index = gt.size();
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (used[j] || gt[j].label != p.label) continue;
      const double iou = segment_iou(p, gt[j]);
      if (iou > best) {
        best = iou;
        best_index = j;
      }
    }
    if (best_index < gt.size() && best > tau) {
      used[best_index] = true;
      ++counts.true_positives;
    } else {
      ++counts.false_positives;
    }
  }
  counts.false_negatives = gt.size() - counts.true_positives;
  return counts;
}

inline double overlap_f1(const Labels& pred, const Labels& gt, double tau = 0.1) {
  detail::check_same_length(pred, gt);
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("overlap_f1: tau must lie in (0, 1)");
  return f1_from_counts(match_segments(to_segments(pred), to_segments(gt), tau));
}

struct MetricScores {
  double accuracy = 0.0;
  double edit = 0.0;
  double f1 = 0.0;
};

inline MetricScores score_sequence(const Labels& pred, const Labels& gt, std::optional<int> ignore = std::nullopt,
                                   double tau = 0.1) {
  return {frame_accuracy(pred, gt, ignore), edit_score(pred, gt), overlap_f1(pred, gt, tau)};
}

/// Unweighted mean over sequences.
inline MetricScores mean_scores(const std::vector<MetricScores>& scores) {
  MetricScores m;
  if (scores.empty()) return m;
  for (const auto& s : scores) {
    m.accuracy += s.accuracy;
    m.edit += s.edit;
    m.f1 += s.f1;
  }
  const double n = static_cast<double>(scores.size());
  return {m.accuracy / n, m.edit / n, m.f1 / n};
}

/// "accuracy/edit/F1" with one decimal each, e.g. "66.3/62.5/68.9".
inline std::string format_scores(const MetricScores& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f/%.1f/%.1f", s.accuracy, s.edit, s.f1);
  return buf;
}

}  // namespace tpool
