// SPDX-License-Identifier: Apache-2.0
//
// Self-verification suite: kernel equivalence of the full and compact
// poolers, the hvec inner-product identity, pooled dimensions at d = 128,
// and an end-to-end finite-difference gradient audit.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "tpool/model.hpp"
#include "tpool/pooling.hpp"
#include "tpool/rng.hpp"

namespace tpool {

struct CheckResult {
  std::string name;
  double observed = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

inline std::string format_check(const CheckResult& c) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s max rel err %.3g <= %.0e: %s", c.name.c_str(), c.observed, c.tolerance,
                c.passed ? "PASS" : "FAIL");
  std::string line = buf;
  if (!c.detail.empty()) line += " (" + c.detail + ")";
  return line;
}

inline Sequence random_sequence(Eigen::Index frames, Eigen::Index channels, CounterRng& rng) {
  Sequence x(frames, channels);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  return x;
}

inline Vector random_vector(Eigen::Index n, double lo, double hi, CounterRng& rng) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.uniform(lo, hi);
  return v;
}

struct KernelInstance {
  Sequence x;
  int window = 1;
  PoolingWeights weights;
};

/// Random instance: T in [1, 64], d in [1, 16], window in {1, 5, 11},
/// weights uniform in [-1, 1].
inline KernelInstance random_kernel_instance(std::uint64_t seed) {
  CounterRng rng(seed, 0x4B45524EULL);
  constexpr int windows[] = {1, 5, 11};
  KernelInstance inst;
  const auto frames = static_cast<Eigen::Index>(1 + rng.below(64));
  const auto channels = static_cast<Eigen::Index>(1 + rng.below(16));
  inst.window = windows[rng.below(3)];
  inst.x = random_sequence(frames, channels, rng);
  inst.weights.omega = random_vector(inst.window, -1.0, 1.0, rng);
  inst.weights.p = random_vector(inst.window, -1.0, 1.0, rng);
  inst.weights.q = random_vector(inst.window, -1.0, 1.0, rng);
  return inst;
}

struct KernelDeviation {
  double coupled = 0.0;
  double decoupled = 0.0;
};

/// Largest |a - b| / (1 + |kernel|) over every center pair and every pair
/// drawn from {full-width inner product, compact inner product, kernel}.
/// `omega_fault` is added to the first compact-path weight (negative control).
inline KernelDeviation kernel_deviation(const KernelInstance& inst, double omega_fault = 0.0) {
  const PoolingConfig coupled{PoolKind::coupled, inst.window, 1, true};
  PoolingConfig compact = coupled;
  compact.kind = PoolKind::coupled_compact;
  PoolingWeights faulty = inst.weights;
  faulty.omega(0) += omega_fault;
  const Sequence bc = bilinear_coupled(inst.x, coupled, inst.weights);
  const Sequence phic = bilinear_coupled_compact(inst.x, compact, faulty);
  const Sequence bd = bilinear_decoupled(inst.x, coupled, inst.weights);
  const Sequence phid = bilinear_decoupled_compact(inst.x, compact, inst.weights);

  auto spread = [](double a, double b, double k) {
    return std::max({std::abs(a - b), std::abs(a - k), std::abs(b - k)}) / (1.0 + std::abs(k));
  };
  KernelDeviation dev;
  const Eigen::Index frames = inst.x.rows();
  for (Eigen::Index i = 0; i < frames; ++i) {
    for (Eigen::Index j = 0; j < frames; ++j) {
      const double kc = kernel_coupled(inst.x, inst.window, inst.weights.omega, i, j);
      dev.coupled = std::max(dev.coupled, spread(bc.row(i).dot(bc.row(j)), phic.row(i).dot(phic.row(j)), kc));
      const double kd = kernel_decoupled(inst.x, inst.window, inst.weights.p, inst.weights.q, i, j);
      dev.decoupled = std::max(dev.decoupled, spread(bd.row(i).dot(bd.row(j)), phid.row(i).dot(phid.row(j)), kd));
    }
  }
  return dev;
}

inline std::vector<CheckResult> verify_kernels(int instances, std::uint64_t base_seed = 1, double omega_fault = 0.0) {
  constexpr double tol = 1e-6;
  CheckResult coupled{"kernel_coupled", 0.0, tol, true, ""};
  CheckResult decoupled{"kernel_decoupled", 0.0, tol, true, ""};
  for (int n = 0; n < instances; ++n) {
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(n);
    const auto dev = kernel_deviation(random_kernel_instance(seed), omega_fault);
    if (dev.coupled > coupled.observed) {
      coupled.observed = dev.coupled;
      if (dev.coupled > tol) coupled.detail = "worst seed " + std::to_string(seed);
    }
    if (dev.decoupled > decoupled.observed) {
      decoupled.observed = dev.decoupled;
      if (dev.decoupled > tol) decoupled.detail = "worst seed " + std::to_string(seed);
    }
  }
  coupled.passed = coupled.observed <= tol;
  decoupled.passed = decoupled.observed <= tol;
  return {coupled, decoupled};
}

/// <hvec A, hvec B> against <vec A, vec B> on random symmetric matrices.
inline CheckResult verify_hvec_identity(int instances, std::uint64_t base_seed = 1) {
  constexpr double tol = 1e-12;
  CheckResult res{"hvec_frobenius", 0.0, tol, true, ""};
  for (int n = 0; n < instances; ++n) {
    CounterRng rng(base_seed + static_cast<std::uint64_t>(n), 0x48564543ULL);
    const auto d = static_cast<Eigen::Index>(1 + rng.below(16));
    Matrix a(d, d), b(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) {
        a(i, j) = a(j, i) = rng.normal();
        b(i, j) = b(j, i) = rng.normal();
      }
    }
    const double full = (a.array() * b.array()).sum();
    const double half = hvec(a).dot(hvec(b));
    res.observed = std::max(res.observed, std::abs(full - half) / (1.0 + std::abs(full)));
  }
  res.passed = res.observed <= tol;
  return res;
}

struct DimensionRow {
  PoolKind kind;
  std::size_t expected;
  std::size_t actual;
};

/// Pooled widths at d = 128 against the published figures.
inline std::vector<DimensionRow> dimension_table() {
  const std::pair<PoolKind, std::size_t> published[] = {
      {PoolKind::coupled, 16384},
      {PoolKind::coupled_compact, 8256},
      {PoolKind::decoupled, 16512},
      {PoolKind::decoupled_compact, 8384},
  };
  std::vector<DimensionRow> rows;
  for (const auto& [kind, expected] : published) rows.push_back({kind, expected, output_dim(kind, 128)});
  return rows;
}

// ---------------------------------------------------------------------------
// Gradient audit

struct GradientAuditResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t parameters_checked = 0;
};

/// Tiny model used by the audit: T=16, d=6, C=3, one encoder of 8 filters,
/// kernel 5, pooling window 5.
inline TrainConfig audit_config(PoolKind pooling, ActivationKind activation) {
  TrainConfig cfg;
  cfg.pooling = pooling;
  cfg.activation = activation;
  cfg.filters = {8};
  cfg.kernel_size = 5;
  cfg.window = 5;
  return cfg;
}

/// Relative error between an analytic and a numeric derivative. The floor
/// keeps derivatives that are zero up to roundoff from dividing by ~0.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares loss_and_grads against central differences (step 1e-5) for
/// every scalar parameter of the tiny model.
inline GradientAuditResult gradient_audit(PoolKind pooling, ActivationKind activation, std::uint64_t seed,
                                          NormKind norm = NormKind::none) {
  TrainConfig cfg = audit_config(pooling, activation);
  cfg.normalization = norm;
  cfg.seed = seed;
  ModelParams model = build_model(cfg, 6, 3);
  CounterRng rng(seed, 0x41554449ULL);
  // Move away from the symmetric initial point so every path carries signal.
  for (auto& e : model.params) {
    if (e.name.ends_with(".bias")) {
      for (auto& v : e.tensor.values) v = rng.uniform(-0.1, 0.1);
    } else if (e.name.ends_with(".omega") || e.name.ends_with(".p") || e.name.ends_with(".q")) {
      for (auto& v : e.tensor.values) v += rng.uniform(-0.1, 0.1);
    } else if (e.name.ends_with(".theta")) {
      e.tensor.values[0] = rng.uniform(0.5, 1.5);
    }
  }
  const Sequence x = random_sequence(16, 6, rng);
  Labels y(16);
  for (auto& label : y) label = static_cast<int>(rng.below(3));

  const LossAndGrads analytic = loss_and_grads(model, x, y);
  constexpr double step = 1e-5;
  GradientAuditResult result;
  for (auto& e : model.params) {
    const auto& g = analytic.grads.at(e.name).values;
    for (std::size_t i = 0; i < e.tensor.size(); ++i) {
      const double saved = e.tensor.values[i];
      e.tensor.values[i] = saved + step;
      const double up = cross_entropy(forward(model, x), y);
      e.tensor.values[i] = saved - step;
      const double down = cross_entropy(forward(model, x), y);
      e.tensor.values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(g[i], numeric);
      ++result.parameters_checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_parameter = e.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

/// Audit over every pooling kind and activation kind.
inline CheckResult verify_gradients(std::uint64_t seed = 1) {
  constexpr double tol = 1e-4;
  CheckResult res{"gradient_audit", 0.0, tol, true, ""};
  for (PoolKind pk : kAllPoolKinds) {
    for (ActivationKind ak : kAllActivationKinds) {
      const auto r = gradient_audit(pk, ak, seed);
      if (r.max_rel_error > res.observed) {
        res.observed = r.max_rel_error;
        res.detail = std::string(to_string(pk)) + "/" + std::string(to_string(ak)) + " " + r.worst_parameter +
                     " seed " + std::to_string(seed);
      }
    }
  }
  res.passed = res.observed <= tol;
  return res;
}

}  // namespace tpool
