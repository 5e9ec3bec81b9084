// SPDX-License-Identifier: Apache-2.0
//
// Activations and per-frame vector normalization, with gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include "tpool/error.hpp"
#include "tpool/types.hpp"

namespace tpool {

enum class ActivationKind { relu, leaky_relu, swish, nrelu, rpn, linear };

inline constexpr ActivationKind kAllActivationKinds[] = {
    ActivationKind::relu, ActivationKind::leaky_relu, ActivationKind::swish,
    ActivationKind::nrelu, ActivationKind::rpn, ActivationKind::linear,
};

inline std::string_view to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::relu: return "relu";
    case ActivationKind::leaky_relu: return "leaky_relu";
    case ActivationKind::swish: return "swish";
    case ActivationKind::nrelu: return "nrelu";
    case ActivationKind::rpn: return "rpn";
    case ActivationKind::linear: return "linear";
  }
  return "?";
}

inline std::optional<ActivationKind> parse_activation_kind(std::string_view name) {
  for (ActivationKind k : kAllActivationKinds) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

struct ActivationSpec {
  ActivationKind kind = ActivationKind::relu;
  /// RPN regularizer; learned per layer, so the model stores the live value.
  double theta = 1.0;
  /// NReLU denominator offset.
  double epsilon = 1e-5;
  /// Leaky-ReLU negative slope.
  double alpha = 0.01;

  void validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("activation epsilon must be > 0");
    if (!std::isfinite(theta)) throw ConfigError("activation theta must be finite");
  }
};

enum class NormKind { none, l1, l2 };

inline std::string_view to_string(NormKind kind) {
  switch (kind) {
    case NormKind::none: return "none";
    case NormKind::l1: return "l1";
    case NormKind::l2: return "l2";
  }
  return "?";
}

inline std::optional<NormKind> parse_norm_kind(std::string_view name) {
  for (NormKind k : {NormKind::none, NormKind::l1, NormKind::l2}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

inline constexpr double kNormGuard = 1e-12;

// ---------------------------------------------------------------------------
// Elementwise scalar forms

inline double sign_of(double x) { return (x > 0.0) - (x < 0.0); }

/// sign(x) (sqrt(|x| + theta^2) - |theta|).
inline double rpn(double x, double theta) {
  const double t2 = theta * theta;
  return sign_of(x) * (std::sqrt(std::abs(x) + t2) - std::sqrt(t2));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double swish(double x) { return x * sigmoid(x); }

inline double leaky_relu(double x, double alpha) { return x >= 0.0 ? x : alpha * x; }

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

// ---------------------------------------------------------------------------
// Sequence forms (rows are frames)

/// Per-frame ReLU(x) / (max ReLU(x) + epsilon).
inline Sequence nrelu(const Sequence& x, double epsilon) {
  Sequence y(x.rows(), x.cols());
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    double m = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) m = std::max(m, relu(x(t, c)));
    const double denom = m + epsilon;
    for (Eigen::Index c = 0; c < x.cols(); ++c) y(t, c) = relu(x(t, c)) / denom;
  }
  return y;
}

inline Sequence activate(const Sequence& x, const ActivationSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case ActivationKind::relu: return x.unaryExpr([](double v) { return relu(v); });
    case ActivationKind::leaky_relu: return x.unaryExpr([a = spec.alpha](double v) { return leaky_relu(v, a); });
    case ActivationKind::swish: return x.unaryExpr([](double v) { return swish(v); });
    case ActivationKind::nrelu: return nrelu(x, spec.epsilon);
    case ActivationKind::rpn: return x.unaryExpr([th = spec.theta](double v) { return rpn(v, th); });
    case ActivationKind::linear: return x;
  }
  return x;
}

struct ActivationGrads {
  Sequence x;
  double theta = 0.0;
};

/// Gradients of activate() given the upstream gradient. Only RPN has a
/// nonzero theta gradient. NReLU routes its max path through the
/// earliest maximizing channel.
inline ActivationGrads activation_backward(const Sequence& x, const ActivationSpec& spec, const Sequence& grad_out) {
  if (grad_out.rows() != x.rows() || grad_out.cols() != x.cols()) {
    throw ShapeError("activation_backward: gradient shape differs from input");
  }
  ActivationGrads g{Sequence(x.rows(), x.cols()), 0.0};
  switch (spec.kind) {
    case ActivationKind::relu:
      g.x = grad_out.cwiseProduct(x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
      break;
    case ActivationKind::leaky_relu:
      g.x = grad_out.cwiseProduct(x.unaryExpr([a = spec.alpha](double v) { return v >= 0.0 ? 1.0 : a; }));
      break;
    case ActivationKind::swish:
      g.x = grad_out.cwiseProduct(x.unaryExpr([](double v) {
        const double s = sigmoid(v);
        return s + v * s * (1.0 - s);
      }));
      break;
    case ActivationKind::linear:
      g.x = grad_out;
      break;
    case ActivationKind::rpn: {
      const double t2 = spec.theta * spec.theta;
      const double sign_theta = sign_of(spec.theta);
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        const double root = std::sqrt(std::abs(v) + t2);
        g.x.data()[i] = grad_out.data()[i] * 0.5 / root;
        g.theta += grad_out.data()[i] * sign_of(v) * (spec.theta / root - sign_theta);
      }
      break;
    }
    case ActivationKind::nrelu: {
      for (Eigen::Index t = 0; t < x.rows(); ++t) {
        double m = 0.0;
        Eigen::Index arg = -1;
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
          if (x(t, c) > m) {
            m = x(t, c);
            arg = c;
          }
        }
        const double denom = m + spec.epsilon;
        double through_max = 0.0;
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
          const bool active = x(t, c) > 0.0;
          g.x(t, c) = active ? grad_out(t, c) / denom : 0.0;
          if (active) through_max += grad_out(t, c) * x(t, c);
        }
        if (arg >= 0) g.x(t, arg) -= through_max / (denom * denom);
      }
      break;
    }
  }
  return g;
}

inline double norm_of(const double* v, Eigen::Index n, NormKind kind) {
  double acc = 0.0;
  if (kind == NormKind::l1) {
    for (Eigen::Index i = 0; i < n; ++i) acc += std::abs(v[i]);
    return acc;
  }
  for (Eigen::Index i = 0; i < n; ++i) acc += v[i] * v[i];
  return std::sqrt(acc);
}

/// Per-frame x / (||x|| + 1e-12). NormKind::none is the identity.
inline Sequence normalize(const Sequence& x, NormKind kind) {
  if (kind == NormKind::none) return x;
  Sequence y(x.rows(), x.cols());
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const double n = norm_of(x.data() + t * x.cols(), x.cols(), kind);
    y.row(t) = x.row(t) / (n + kNormGuard);
  }
  return y;
}

inline Sequence normalize_backward(const Sequence& x, NormKind kind, const Sequence& grad_out) {
  if (grad_out.rows() != x.rows() || grad_out.cols() != x.cols()) {
    throw ShapeError("normalize_backward: gradient shape differs from input");
  }
  if (kind == NormKind::none) return grad_out;
  Sequence g(x.rows(), x.cols());
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const double n = norm_of(x.data() + t * x.cols(), x.cols(), kind);
    const double denom = n + kNormGuard;
    const double gx = grad_out.row(t).dot(x.row(t));
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      double dn = 0.0;
      if (kind == NormKind::l2) {
        dn = n > 0.0 ? x(t, c) / n : 0.0;
      } else {
        dn = sign_of(x(t, c));
      }
      g(t, c) = grad_out(t, c) / denom - gx * dn / (denom * denom);
    }
  }
  return g;
}

}  // namespace tpool
