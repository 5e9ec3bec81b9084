// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <vector>

namespace tpool {

/// T x d feature matrix, one frame per row. Rows are contiguous.
using Sequence =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Per-frame class indices in [0, C).
using Labels = std::vector<int>;

struct LabeledSequence {
  Sequence features;
  Labels labels;
};

/// Sequences sharing channel count and class count, partitioned into folds.
struct Dataset {
  std::vector<LabeledSequence> items;
  int classes = 0;
  std::vector<std::vector<std::size_t>> folds;

  [[nodiscard]] std::size_t size() const { return items.size(); }
};

}  // namespace tpool
