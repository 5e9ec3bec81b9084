// SPDX-License-Identifier: Apache-2.0
//
// Local temporal pooling operators.
//
// Every pooler reads the window N(t) = {t-r, ..., t+r}, r = (window-1)/2,
// around centers t = stride * s and emits one output frame per center, so
// the pooled length is ceil(T / stride). Taps outside [0, T) are zero
// frames. Weights are indexed by tap position k = tau - t + r and shared
// across all centers.
//
// Second-order outputs come in two layouts: vec (row-major d x d, d^2
// values) and hvec (d diagonal entries followed by sqrt(2)-scaled upper
// off-diagonals in row order, d(d+1)/2 values). hvec preserves inner
// products between symmetric matrices, so the compact poolers induce the
// same kernel as their full-width counterparts.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tpool/error.hpp"
#include "tpool/types.hpp"

namespace tpool {

enum class PoolKind {
  max,
  coupled,
  decoupled,
  coupled_compact,
  decoupled_compact,
  first_order,
  second_order,
};

inline constexpr PoolKind kAllPoolKinds[] = {
    PoolKind::max,           PoolKind::coupled,     PoolKind::decoupled,    PoolKind::coupled_compact,
    PoolKind::decoupled_compact, PoolKind::first_order, PoolKind::second_order,
};

inline std::string_view to_string(PoolKind kind) {
  switch (kind) {
    case PoolKind::max: return "max";
    case PoolKind::coupled: return "coupled";
    case PoolKind::decoupled: return "decoupled";
    case PoolKind::coupled_compact: return "coupled_compact";
    case PoolKind::decoupled_compact: return "decoupled_compact";
    case PoolKind::first_order: return "first_order";
    case PoolKind::second_order: return "second_order";
  }
  return "?";
}

inline std::optional<PoolKind> parse_pool_kind(std::string_view name) {
  for (PoolKind k : kAllPoolKinds) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

/// True for kinds parameterised by the (p, q) pair rather than omega.
inline bool uses_decoupled_weights(PoolKind kind) {
  return kind == PoolKind::decoupled || kind == PoolKind::decoupled_compact || kind == PoolKind::first_order ||
         kind == PoolKind::second_order;
}

inline bool has_weights(PoolKind kind) { return kind != PoolKind::max; }

struct PoolingConfig {
  PoolKind kind = PoolKind::max;
  int window = 5;
  int stride = 2;
  /// When false the weights are pinned to the box filter 1/|N|.
  bool learnable = true;

  [[nodiscard]] int radius() const { return (window - 1) / 2; }

  void validate() const {
    if (window < 1 || window % 2 == 0) throw ConfigError("pooling window must be odd and >= 1");
    if (stride < 1) throw ConfigError("pooling stride must be >= 1");
  }
};

/// Tap weights shared by all neighborhoods. Coupled kinds read omega;
/// decoupled kinds read p (first order) and q (second order).
struct PoolingWeights {
  Vector omega;
  Vector p;
  Vector q;
};

inline PoolingWeights uniform_weights(int window) {
  const double w = 1.0 / static_cast<double>(window);
  return {Vector::Constant(window, w), Vector::Constant(window, w), Vector::Constant(window, w)};
}

/// Number of output channels produced from d input channels.
inline std::size_t output_dim(PoolKind kind, std::size_t d) {
  switch (kind) {
    case PoolKind::max: return d;
    case PoolKind::coupled: return d * d;
    case PoolKind::decoupled: return d * (d + 1);
    case PoolKind::coupled_compact: return d * (d + 1) / 2;
    case PoolKind::decoupled_compact: return d * (d + 3) / 2;
    case PoolKind::first_order: return d;
    case PoolKind::second_order: return d * d;
  }
  return 0;
}

inline Eigen::Index pooled_length(Eigen::Index frames, int stride) { return (frames + stride - 1) / stride; }

struct Tap {
  Eigen::Index index;
  bool valid;
};

/// Window around center t; out-of-range taps are flagged invalid (zero frames).
inline std::vector<Tap> neighborhood(Eigen::Index t, int window, Eigen::Index frames) {
  std::vector<Tap> taps;
  taps.reserve(static_cast<std::size_t>(window));
  const Eigen::Index r = (window - 1) / 2;
  for (Eigen::Index tau = t - r; tau <= t + r; ++tau) taps.push_back({tau, tau >= 0 && tau < frames});
  return taps;
}

// ---------------------------------------------------------------------------
// Half-vectorization

inline std::size_t hvec_size(std::size_t d) { return d * (d + 1) / 2; }

/// Writes hvec(m) into out[0, d(d+1)/2). m is read from its upper triangle.
inline void hvec_into(const Matrix& m, double* out) {
  const Eigen::Index d = m.rows();
  for (Eigen::Index i = 0; i < d; ++i) out[i] = m(i, i);
  Eigen::Index k = d;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i + 1; j < d; ++j) out[k++] = std::numbers::sqrt2 * m(i, j);
  }
}

/// hvec of a symmetric matrix; NumericError if asymmetric beyond 1e-9.
inline Vector hvec(const Matrix& m) {
  if (m.rows() != m.cols()) throw ShapeError("hvec: matrix must be square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < m.cols(); ++j) {
      if (std::abs(m(i, j) - m(j, i)) > 1e-9 * scale) {
        throw NumericError("hvec: matrix is not symmetric at (" + std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }
  Vector out(static_cast<Eigen::Index>(hvec_size(static_cast<std::size_t>(m.rows()))));
  hvec_into(m, out.data());
  return out;
}

/// Vectorized outer-product mean over a set of frames (rows of x).
inline Vector global_bilinear(const Sequence& x) {
  if (x.rows() < 1) throw DataError("global_bilinear: empty feature set");
  const Eigen::Index d = x.cols();
  Matrix acc = Matrix::Zero(d, d);
  for (Eigen::Index t = 0; t < x.rows(); ++t) acc.noalias() += x.row(t).transpose() * x.row(t);
  acc /= static_cast<double>(x.rows());
  Vector out(d * d);
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = 0; b < d; ++b) out(a * d + b) = acc(a, b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward

namespace detail {

inline void check_weights(const Vector& w, int window, const char* name) {
  if (w.size() != window) {
    throw ConfigError(std::string("pooling weight '") + name + "' has length " + std::to_string(w.size()) +
                      ", window is " + std::to_string(window));
  }
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    if (!std::isfinite(w(k))) throw ConfigError(std::string("pooling weight '") + name + "' is not finite");
  }
}

/// Weights actually applied: the box filter when the pooler is not learnable.
inline PoolingWeights effective_weights(const PoolingConfig& cfg, const PoolingWeights& w) {
  cfg.validate();
  if (!cfg.learnable) return uniform_weights(cfg.window);
  if (uses_decoupled_weights(cfg.kind)) {
    check_weights(w.p, cfg.window, "p");
    check_weights(w.q, cfg.window, "q");
  } else if (cfg.kind != PoolKind::max) {
    check_weights(w.omega, cfg.window, "omega");
  }
  return w;
}

/// Pointer to frame tau, or nullptr for a padded tap.
inline const double* frame_ptr(const Sequence& x, Eigen::Index tau) {
  return tau >= 0 && tau < x.rows() ? x.data() + tau * x.cols() : nullptr;
}

/// acc += w * v v^T on the upper triangle (or everything when full).
inline void add_outer(Matrix& acc, const double* v, double w, bool full) {
  const Eigen::Index d = acc.rows();
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = full ? 0 : a; b < d; ++b) acc(a, b) += w * (v[a] * v[b]);
  }
}

inline void write_vec(const Matrix& m, double* out) {
  const Eigen::Index d = m.rows();
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = 0; b < d; ++b) out[a * d + b] = m(a, b);
  }
}

/// Weighted mean and weighted scatter about that mean for one window.
struct WindowMoments {
  Vector mean;
  Matrix scatter;
};

inline WindowMoments decoupled_moments(const Sequence& x, Eigen::Index center, int window, const Vector& p,
                                       const Vector& q, bool full) {
  const Eigen::Index d = x.cols();
  const Eigen::Index r = (window - 1) / 2;
  WindowMoments m{Vector::Zero(d), Matrix::Zero(d, d)};
  for (int k = 0; k < window; ++k) {
    if (const double* v = frame_ptr(x, center - r + k)) {
      for (Eigen::Index a = 0; a < d; ++a) m.mean(a) += p(k) * v[a];
    }
  }
  Vector diff(d);
  for (int k = 0; k < window; ++k) {
    const double* v = frame_ptr(x, center - r + k);
    for (Eigen::Index a = 0; a < d; ++a) diff(a) = (v ? v[a] : 0.0) - m.mean(a);
    add_outer(m.scatter, diff.data(), q(k), full);
  }
  return m;
}

inline bool needs_full_matrix(PoolKind kind) {
  return kind == PoolKind::coupled || kind == PoolKind::decoupled || kind == PoolKind::second_order;
}

}  // namespace detail

/// Channel-wise maximum over each window; padded taps contribute 0.
inline Sequence max_pool(const Sequence& x, const PoolingConfig& cfg) {
  cfg.validate();
  const Eigen::Index d = x.cols();
  const Eigen::Index out_len = pooled_length(x.rows(), cfg.stride);
  const Eigen::Index r = cfg.radius();
  Sequence y(out_len, d);
  for (Eigen::Index s = 0; s < out_len; ++s) {
    const Eigen::Index center = s * cfg.stride;
    for (Eigen::Index c = 0; c < d; ++c) {
      double best = 0.0;
      bool first = true;
      for (Eigen::Index tau = center - r; tau <= center + r; ++tau) {
        const double* v = detail::frame_ptr(x, tau);
        const double value = v ? v[c] : 0.0;
        if (first || value > best) best = value;
        first = false;
      }
      y(s, c) = best;
    }
  }
  return y;
}

/// Any pooler by kind. Output has output_dim(kind, d) channels.
inline Sequence pool(const Sequence& x, const PoolingConfig& cfg, const PoolingWeights& weights) {
  if (cfg.kind == PoolKind::max) return max_pool(x, cfg);
  const PoolingWeights w = detail::effective_weights(cfg, weights);
  const Eigen::Index d = x.cols();
  const Eigen::Index out_len = pooled_length(x.rows(), cfg.stride);
  const Eigen::Index r = cfg.radius();
  const bool full = detail::needs_full_matrix(cfg.kind);
  Sequence y(out_len, static_cast<Eigen::Index>(output_dim(cfg.kind, static_cast<std::size_t>(d))));
  Matrix acc(d, d);
  for (Eigen::Index s = 0; s < out_len; ++s) {
    const Eigen::Index center = s * cfg.stride;
    double* out = y.data() + s * y.cols();
    switch (cfg.kind) {
      case PoolKind::coupled:
      case PoolKind::coupled_compact: {
        acc.setZero();
        for (int k = 0; k < cfg.window; ++k) {
          if (const double* v = detail::frame_ptr(x, center - r + k)) detail::add_outer(acc, v, w.omega(k), full);
        }
        if (full) {
          detail::write_vec(acc, out);
        } else {
          hvec_into(acc, out);
        }
        break;
      }
      case PoolKind::first_order: {
        const auto m = detail::decoupled_moments(x, center, cfg.window, w.p, w.q, false);
        std::copy(m.mean.data(), m.mean.data() + d, out);
        break;
      }
      case PoolKind::second_order: {
        const auto m = detail::decoupled_moments(x, center, cfg.window, w.p, w.q, true);
        detail::write_vec(m.scatter, out);
        break;
      }
      case PoolKind::decoupled:
      case PoolKind::decoupled_compact: {
        const auto m = detail::decoupled_moments(x, center, cfg.window, w.p, w.q, full);
        std::copy(m.mean.data(), m.mean.data() + d, out);
        if (full) {
          detail::write_vec(m.scatter, out + d);
        } else {
          hvec_into(m.scatter, out + d);
        }
        break;
      }
      case PoolKind::max:
        break;
    }
  }
  return y;
}

namespace detail {
inline Sequence pool_as(PoolKind kind, const Sequence& x, PoolingConfig cfg, const PoolingWeights& w) {
  cfg.kind = kind;
  return pool(x, cfg, w);
}
}  // namespace detail

/// vec(sum_k omega_k x_tau x_tau^T) per window.
inline Sequence bilinear_coupled(const Sequence& x, const PoolingConfig& cfg, const PoolingWeights& w) {
  return detail::pool_as(PoolKind::coupled, x, cfg, w);
}

/// (mu, vec(Sigma)) with mu = sum p_k x_tau, Sigma = sum q_k (x_tau - mu)(x_tau - mu)^T.
inline Sequence bilinear_decoupled(const Sequence& x, const PoolingConfig& cfg, const PoolingWeights& w) {
  return detail::pool_as(PoolKind::decoupled, x, cfg, w);
}

inline Sequence bilinear_coupled_compact(const Sequence& x, const PoolingConfig& cfg, const PoolingWeights& w) {
  return detail::pool_as(PoolKind::coupled_compact, x, cfg, w);
}

inline Sequence bilinear_decoupled_compact(const Sequence& x, const PoolingConfig& cfg, const PoolingWeights& w) {
  return detail::pool_as(PoolKind::decoupled_compact, x, cfg, w);
}

inline Sequence first_order_only(const Sequence& x, const PoolingConfig& cfg, const PoolingWeights& w) {
  return detail::pool_as(PoolKind::first_order, x, cfg, w);
}

inline Sequence second_order_only(const Sequence& x, const PoolingConfig& cfg, const PoolingWeights& w) {
  return detail::pool_as(PoolKind::second_order, x, cfg, w);
}

// ---------------------------------------------------------------------------
// Kernel oracles: inner products between pooled frames at centers i and j,
// evaluated from frame inner products only (no outer products formed).

inline double kernel_coupled(const Sequence& x, int window, const Vector& omega, Eigen::Index i, Eigen::Index j) {
  const Eigen::Index r = (window - 1) / 2;
  double total = 0.0;
  for (int a = 0; a < window; ++a) {
    const double* u = detail::frame_ptr(x, i - r + a);
    if (!u) continue;
    for (int b = 0; b < window; ++b) {
      const double* v = detail::frame_ptr(x, j - r + b);
      if (!v) continue;
      double dot = 0.0;
      for (Eigen::Index c = 0; c < x.cols(); ++c) dot += u[c] * v[c];
      total += omega(a) * omega(b) * dot * dot;
    }
  }
  return total;
}

inline double kernel_decoupled(const Sequence& x, int window, const Vector& p, const Vector& q, Eigen::Index i,
                               Eigen::Index j) {
  const Eigen::Index d = x.cols();
  const Eigen::Index r = (window - 1) / 2;
  auto mean_at = [&](Eigen::Index center) {
    Vector mu = Vector::Zero(d);
    for (int k = 0; k < window; ++k) {
      if (const double* v = detail::frame_ptr(x, center - r + k)) mu += p(k) * Eigen::Map<const Vector>(v, d);
    }
    return mu;
  };
  // Rows are the centered taps x_tau - mu of one window.
  auto centered = [&](Eigen::Index center, const Vector& mu) {
    Matrix rows(window, d);
    for (int k = 0; k < window; ++k) {
      const double* v = detail::frame_ptr(x, center - r + k);
      for (Eigen::Index c = 0; c < d; ++c) rows(k, c) = (v ? v[c] : 0.0) - mu(c);
    }
    return rows;
  };
  const Vector mu_i = mean_at(i);
  const Vector mu_j = mean_at(j);
  const Matrix u = centered(i, mu_i);
  const Matrix v = centered(j, mu_j);
  double total = mu_i.dot(mu_j);
  for (int a = 0; a < window; ++a) {
    for (int b = 0; b < window; ++b) {
      const double dot = u.row(a).dot(v.row(b));
      total += q(a) * q(b) * dot * dot;
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Backward

struct PoolGrads {
  Sequence x;
  PoolingWeights weights;
};

namespace detail {

/// Gradient w.r.t. the accumulated d x d matrix given the gradient of its
/// vec (full) or hvec (compact) encoding. The hvec adjoint only touches the
/// upper triangle, which is what the forward read.
inline void matrix_grad(const double* g, Eigen::Index d, bool full, Matrix& out) {
  if (full) {
    for (Eigen::Index a = 0; a < d; ++a) {
      for (Eigen::Index b = 0; b < d; ++b) out(a, b) = g[a * d + b];
    }
    return;
  }
  out.setZero();
  for (Eigen::Index i = 0; i < d; ++i) out(i, i) = g[i];
  Eigen::Index k = d;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = i + 1; j < d; ++j) out(i, j) = std::numbers::sqrt2 * g[k++];
  }
}

inline Sequence max_pool_backward(const Sequence& x, const PoolingConfig& cfg, const Sequence& grad_out) {
  const Eigen::Index r = cfg.radius();
  Sequence gx = Sequence::Zero(x.rows(), x.cols());
  for (Eigen::Index s = 0; s < grad_out.rows(); ++s) {
    const Eigen::Index center = s * cfg.stride;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      double best = 0.0;
      Eigen::Index arg = center - r;
      for (Eigen::Index tau = center - r; tau <= center + r; ++tau) {
        const double* v = frame_ptr(x, tau);
        const double value = v ? v[c] : 0.0;
        if (tau == center - r || value > best) {
          best = value;
          arg = tau;
        }
      }
      if (arg >= 0 && arg < x.rows()) gx(arg, c) += grad_out(s, c);
    }
  }
  return gx;
}

}  // namespace detail

/// Analytic gradients of pool() w.r.t. the input frames and the tap weights.
/// Weight gradients refer to the weights actually applied (box filter when
/// the pooler is not learnable); max pooling returns empty weight vectors.
/// Max-pool gradient goes to the earliest maximizing tap.
inline PoolGrads pool_backward(const Sequence& x, const PoolingConfig& cfg, const PoolingWeights& weights,
                               const Sequence& grad_out) {
  cfg.validate();
  const Eigen::Index d = x.cols();
  const Eigen::Index out_len = pooled_length(x.rows(), cfg.stride);
  if (grad_out.rows() != out_len ||
      grad_out.cols() != static_cast<Eigen::Index>(output_dim(cfg.kind, static_cast<std::size_t>(d)))) {
    throw ShapeError("pool_backward: grad_out is " + std::to_string(grad_out.rows()) + "x" +
                     std::to_string(grad_out.cols()) + ", expected " + std::to_string(out_len) + "x" +
                     std::to_string(output_dim(cfg.kind, static_cast<std::size_t>(d))));
  }
  if (cfg.kind == PoolKind::max) return {detail::max_pool_backward(x, cfg, grad_out), {}};

  const PoolingWeights w = detail::effective_weights(cfg, weights);
  const Eigen::Index r = cfg.radius();
  const bool full = detail::needs_full_matrix(cfg.kind);
  PoolGrads grads{Sequence::Zero(x.rows(), d), {}};
  grads.weights.omega = Vector::Zero(cfg.window);
  grads.weights.p = Vector::Zero(cfg.window);
  grads.weights.q = Vector::Zero(cfg.window);

  Matrix g_mat(d, d);
  Matrix sym(d, d);
  Vector g_mean(d);
  Vector diff(d);
  Vector tmp(d);
  for (Eigen::Index s = 0; s < out_len; ++s) {
    const Eigen::Index center = s * cfg.stride;
    const double* g = grad_out.data() + s * grad_out.cols();

    if (cfg.kind == PoolKind::coupled || cfg.kind == PoolKind::coupled_compact) {
      detail::matrix_grad(g, d, full, g_mat);
      sym = g_mat + g_mat.transpose();
      for (int k = 0; k < cfg.window; ++k) {
        const Eigen::Index tau = center - r + k;
        const double* v = detail::frame_ptr(x, tau);
        if (!v) continue;
        const Eigen::Map<const Vector> xv(v, d);
        grads.weights.omega(k) += xv.dot(g_mat * xv);
        grads.x.row(tau) += w.omega(k) * (sym * xv).transpose();
      }
      continue;
    }

    // Decoupled family: split the output gradient into its mean and scatter parts.
    const bool has_mean = cfg.kind != PoolKind::second_order;
    const bool has_scatter = cfg.kind != PoolKind::first_order;
    g_mean.setZero();
    if (has_mean) g_mean = Eigen::Map<const Vector>(g, d);
    Vector mu = Vector::Zero(d);
    for (int k = 0; k < cfg.window; ++k) {
      if (const double* v = detail::frame_ptr(x, center - r + k)) mu += w.p(k) * Eigen::Map<const Vector>(v, d);
    }
    if (has_scatter) {
      detail::matrix_grad(has_mean ? g + d : g, d, full, g_mat);
      sym = g_mat + g_mat.transpose();
      // Scatter depends on mu through every centered tap; collect that path.
      Vector weighted_diff_sum = Vector::Zero(d);
      for (int k = 0; k < cfg.window; ++k) {
        const Eigen::Index tau = center - r + k;
        const double* v = detail::frame_ptr(x, tau);
        for (Eigen::Index a = 0; a < d; ++a) diff(a) = (v ? v[a] : 0.0) - mu(a);
        tmp.noalias() = g_mat * diff;
        grads.weights.q(k) += diff.dot(tmp);
        weighted_diff_sum += w.q(k) * diff;
        if (v) {
          tmp.noalias() = sym * diff;
          grads.x.row(tau) += w.q(k) * tmp.transpose();
        }
      }
      g_mean.noalias() -= sym * weighted_diff_sum;
    }
    for (int k = 0; k < cfg.window; ++k) {
      const Eigen::Index tau = center - r + k;
      const double* v = detail::frame_ptr(x, tau);
      if (!v) continue;
      grads.weights.p(k) += Eigen::Map<const Vector>(v, d).dot(g_mean);
      grads.x.row(tau) += w.p(k) * g_mean.transpose();
    }
  }
  return grads;
}

}  // namespace tpool
