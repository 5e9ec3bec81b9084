// SPDX-License-Identifier: Apache-2.0
//
// Temporal convolution, nearest-neighbour upsampling and the per-frame
// classifier, each with its backward pass.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tpool/error.hpp"
#include "tpool/tensor.hpp"
#include "tpool/types.hpp"

namespace tpool {

namespace detail {

/// Slice of the (out x in x k) kernel at tap j, laid out as in x out.
inline Matrix kernel_tap(const Tensor& kernel, std::size_t j) {
  const std::size_t out = kernel.shape[0], in = kernel.shape[1], k = kernel.shape[2];
  Matrix tap(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t c = 0; c < in; ++c) tap(c, o) = kernel[(o * in + c) * k + j];
  }
  return tap;
}

/// Rows [first, first+count) of the output read input rows shifted by offset.
struct TapRange {
  Eigen::Index first = 0;
  Eigen::Index count = 0;
};

inline TapRange tap_range(Eigen::Index frames, Eigen::Index offset) {
  const Eigen::Index first = std::max<Eigen::Index>(0, -offset);
  const Eigen::Index last = std::min(frames, frames - offset);
  return {first, std::max<Eigen::Index>(0, last - first)};
}

inline void check_conv_shapes(const Sequence& x, const Tensor& kernel, const Tensor& bias) {
  if (kernel.shape.size() != 3) throw ShapeError("conv1d: kernel must be rank 3 (out x in x k)");
  if (kernel.shape[2] % 2 == 0) throw ShapeError("conv1d: kernel size must be odd");
  if (static_cast<Eigen::Index>(kernel.shape[1]) != x.cols()) {
    throw ShapeError("conv1d: input has " + std::to_string(x.cols()) + " channels, kernel expects " +
                     std::to_string(kernel.shape[1]));
  }
  if (bias.shape.size() != 1 || bias.shape[0] != kernel.shape[0]) throw ShapeError("conv1d: bias length mismatch");
}

}  // namespace detail

/// Same-length cross-correlation with zero padding:
/// y[t][o] = bias[o] + sum_c sum_j kernel[o][c][j] x[t + j - r][c].
inline Sequence conv1d(const Sequence& x, const Tensor& kernel, const Tensor& bias) {
  detail::check_conv_shapes(x, kernel, bias);
  const auto out = static_cast<Eigen::Index>(kernel.shape[0]);
  const auto k = static_cast<Eigen::Index>(kernel.shape[2]);
  const Eigen::Index r = (k - 1) / 2;
  Sequence y(x.rows(), out);
  for (Eigen::Index o = 0; o < out; ++o) y.col(o).setConstant(bias[static_cast<std::size_t>(o)]);
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Index offset = j - r;
    const auto range = detail::tap_range(x.rows(), offset);
    if (range.count == 0) continue;
    const Matrix tap = detail::kernel_tap(kernel, static_cast<std::size_t>(j));
    y.middleRows(range.first, range.count).noalias() += x.middleRows(range.first + offset, range.count) * tap;
  }
  return y;
}

struct ConvGrads {
  Sequence x;
  Tensor kernel;
  Tensor bias;
};

inline ConvGrads conv1d_backward(const Sequence& x, const Tensor& kernel, const Tensor& bias,
                                 const Sequence& grad_out) {
  detail::check_conv_shapes(x, kernel, bias);
  const std::size_t out = kernel.shape[0], in = kernel.shape[1], k = kernel.shape[2];
  if (grad_out.rows() != x.rows() || grad_out.cols() != static_cast<Eigen::Index>(out)) {
    throw ShapeError("conv1d_backward: gradient shape mismatch");
  }
  const Eigen::Index r = static_cast<Eigen::Index>(k - 1) / 2;
  ConvGrads g{Sequence::Zero(x.rows(), x.cols()), Tensor(kernel.shape), Tensor(bias.shape)};
  for (std::size_t o = 0; o < out; ++o) g.bias[o] = grad_out.col(static_cast<Eigen::Index>(o)).sum();
  Matrix tap_grad(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
  for (std::size_t j = 0; j < k; ++j) {
    const Eigen::Index offset = static_cast<Eigen::Index>(j) - r;
    const auto range = detail::tap_range(x.rows(), offset);
    if (range.count == 0) continue;
    const Matrix tap = detail::kernel_tap(kernel, j);
    const auto gy = grad_out.middleRows(range.first, range.count);
    const auto xs = x.middleRows(range.first + offset, range.count);
    g.x.middleRows(range.first + offset, range.count).noalias() += gy * tap.transpose();
    tap_grad.noalias() = xs.transpose() * gy;
    for (std::size_t o = 0; o < out; ++o) {
      for (std::size_t c = 0; c < in; ++c) {
        g.kernel[(o * in + c) * k + j] = tap_grad(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(o));
      }
    }
  }
  return g;
}

/// Repeats each frame twice and crops to target_frames (2T-1 or 2T).
inline Sequence upsample_nn(const Sequence& x, Eigen::Index target_frames) {
  if (target_frames != 2 * x.rows() && target_frames != 2 * x.rows() - 1) {
    throw ShapeError("upsample_nn: target length " + std::to_string(target_frames) + " is not 2T or 2T-1 for T=" +
                     std::to_string(x.rows()));
  }
  Sequence y(target_frames, x.cols());
  for (Eigen::Index t = 0; t < target_frames; ++t) y.row(t) = x.row(t / 2);
  return y;
}

inline Sequence upsample_nn_backward(const Sequence& x, const Sequence& grad_out) {
  if (grad_out.cols() != x.cols() || (grad_out.rows() != 2 * x.rows() && grad_out.rows() != 2 * x.rows() - 1)) {
    throw ShapeError("upsample_nn_backward: gradient shape mismatch");
  }
  Sequence g = Sequence::Zero(x.rows(), x.cols());
  for (Eigen::Index t = 0; t < grad_out.rows(); ++t) g.row(t / 2) += grad_out.row(t);
  return g;
}

/// Per-frame logits W x + b with W stored C x d.
inline Sequence timedense(const Sequence& x, const Tensor& weight, const Tensor& bias) {
  if (weight.shape.size() != 2 || static_cast<Eigen::Index>(weight.shape[1]) != x.cols()) {
    throw ShapeError("timedense: weight does not match input width " + std::to_string(x.cols()));
  }
  if (bias.shape.size() != 1 || bias.shape[0] != weight.shape[0]) throw ShapeError("timedense: bias length mismatch");
  const auto classes = static_cast<Eigen::Index>(weight.shape[0]);
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w(
      weight.values.data(), classes, x.cols());
  Sequence logits = x * w.transpose();
  for (Eigen::Index c = 0; c < classes; ++c) logits.col(c).array() += bias[static_cast<std::size_t>(c)];
  return logits;
}

struct DenseGrads {
  Sequence x;
  Tensor weight;
  Tensor bias;
};

inline DenseGrads timedense_backward(const Sequence& x, const Tensor& weight, const Sequence& grad_logits) {
  const auto classes = static_cast<Eigen::Index>(weight.shape[0]);
  if (grad_logits.cols() != classes || grad_logits.rows() != x.rows()) {
    throw ShapeError("timedense_backward: gradient shape mismatch");
  }
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMat> w(weight.values.data(), classes, x.cols());
  DenseGrads g{grad_logits * w, Tensor(weight.shape), Tensor({weight.shape[0]})};
  Eigen::Map<RowMat>(g.weight.values.data(), classes, x.cols()).noalias() = grad_logits.transpose() * x;
  for (Eigen::Index c = 0; c < classes; ++c) g.bias[static_cast<std::size_t>(c)] = grad_logits.col(c).sum();
  return g;
}

/// Row-wise softmax, shifted by the row maximum.
inline Sequence softmax(const Sequence& logits) {
  Sequence p(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const double m = logits.row(t).maxCoeff();
    p.row(t) = (logits.row(t).array() - m).exp();
    p.row(t) /= p.row(t).sum();
  }
  return p;
}

inline Sequence timedense_softmax(const Sequence& x, const Tensor& weight, const Tensor& bias) {
  return softmax(timedense(x, weight, bias));
}

/// Mean frame-wise cross-entropy of probabilities against labels.
inline double cross_entropy(const Sequence& probs, const Labels& labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) throw ShapeError("cross_entropy: length mismatch");
  double total = 0.0;
  for (Eigen::Index t = 0; t < probs.rows(); ++t) total -= std::log(probs(t, labels[static_cast<std::size_t>(t)]));
  return total / static_cast<double>(probs.rows());
}

/// Gradient of the mean cross-entropy w.r.t. the logits feeding softmax.
inline Sequence cross_entropy_logit_grad(const Sequence& probs, const Labels& labels) {
  Sequence g = probs;
  for (Eigen::Index t = 0; t < probs.rows(); ++t) g(t, labels[static_cast<std::size_t>(t)]) -= 1.0;
  return g / static_cast<double>(probs.rows());
}

/// Per-frame argmax; ties resolve to the lowest class index.
inline Labels argmax_labels(const Sequence& probs) {
  Labels out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index t = 0; t < probs.rows(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probs.cols(); ++c) {
      if (probs(t, c) > probs(t, best)) best = c;
    }
    out[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace tpool
