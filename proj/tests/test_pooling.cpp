// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "test_util.hpp"
#include "tpool/pooling.hpp"

namespace tpool {
namespace {

using test::rows;
using test::vec;

const double kSqrt2 = std::sqrt(2.0);

PoolingConfig cfg_of(PoolKind kind, int window, int stride = 1) { return {kind, window, stride, true}; }

PoolingWeights coupled_weights(const Vector& omega) { return {omega, omega, omega}; }

PoolingWeights decoupled_weights(const Vector& p, const Vector& q) { return {p, p, q}; }

TEST(Neighborhood, PadsOutOfRangeTaps) {
  const auto left = neighborhood(0, 3, 5);
  ASSERT_EQ(left.size(), 3u);
  EXPECT_FALSE(left[0].valid);
  EXPECT_TRUE(left[1].valid);
  EXPECT_EQ(left[1].index, 0);
  EXPECT_EQ(left[2].index, 1);

  const auto full = neighborhood(2, 5, 5);
  for (std::size_t k = 0; k < full.size(); ++k) {
    EXPECT_TRUE(full[k].valid);
    EXPECT_EQ(full[k].index, static_cast<Eigen::Index>(k));
  }

  const auto right = neighborhood(4, 3, 5);
  EXPECT_EQ(right[0].index, 3);
  EXPECT_EQ(right[1].index, 4);
  EXPECT_FALSE(right[2].valid);
}

TEST(MaxPool, ChannelwiseMaximumOfWindow) {
  const Sequence x = rows({{1, 5}, {3, 2}, {0, 4}});
  const Sequence y = max_pool(x, cfg_of(PoolKind::max, 3));
  EXPECT_EQ(y(1, 0), 3.0);
  EXPECT_EQ(y(1, 1), 5.0);
}

TEST(MaxPool, PaddingCompetesAsZero) {
  const Sequence x = rows({{-1, -2}, {-3, -4}});
  const Sequence y = max_pool(x, cfg_of(PoolKind::max, 3, 2));
  EXPECT_EQ(y(0, 0), 0.0);
  EXPECT_EQ(y(0, 1), 0.0);
}

TEST(MaxPool, StrideTwoHalvesLength) {
  EXPECT_EQ(max_pool(Sequence::Ones(4, 3), cfg_of(PoolKind::max, 3, 2)).rows(), 2);
  EXPECT_EQ(max_pool(Sequence::Ones(5, 3), cfg_of(PoolKind::max, 3, 2)).rows(), 3);
  EXPECT_EQ(max_pool(Sequence::Ones(1, 3), cfg_of(PoolKind::max, 5, 2)).rows(), 1);
}

TEST(MaxPool, BackwardRoutesToEarliestMaximum) {
  const Sequence x = rows({{2}, {2}, {1}});
  const PoolingConfig cfg = cfg_of(PoolKind::max, 3, 2);
  const auto g = pool_backward(x, cfg, {}, Sequence::Ones(2, 1));
  EXPECT_EQ(g.x(0, 0), 1.0);  // center 0 sees pad, 2, 2: the earlier 2 wins
  EXPECT_EQ(g.x(1, 0), 1.0);  // center 2 sees 2, 1, pad
  EXPECT_EQ(g.x(2, 0), 0.0);
}

TEST(GlobalBilinear, MeanOuterProduct) {
  const Vector single = global_bilinear(rows({{1, 2}}));
  EXPECT_EQ(single, vec({1, 2, 2, 4}));
  EXPECT_EQ(global_bilinear(rows({{1, 0}, {0, 1}})), vec({0.5, 0, 0, 0.5}));
  EXPECT_EQ(global_bilinear(Sequence::Zero(2, 2)), Vector::Zero(4));
  EXPECT_THROW(global_bilinear(Sequence(0, 2)), DataError);
}

TEST(Coupled, DegenerateWindow) {
  const Sequence y = bilinear_coupled(rows({{1, 2}}), cfg_of(PoolKind::coupled, 1), coupled_weights(vec({1})));
  EXPECT_EQ(Vector(y.row(0).transpose()), vec({1, 2, 2, 4}));
}

TEST(Coupled, WeightedTwoFrameWindow) {
  // Two live taps (0.25, 0.75) and a padded third tap with weight 0.
  const Sequence x = rows({{2, 0}, {0, 2}});
  const Sequence y = bilinear_coupled(x, cfg_of(PoolKind::coupled, 3), coupled_weights(vec({0.25, 0.75, 0.0})));
  EXPECT_EQ(Vector(y.row(1).transpose()), vec({1, 0, 0, 3}));
}

TEST(Coupled, ZeroWeightsGiveZeroOutput) {
  CounterRng rng(3);
  const Sequence x = random_sequence(7, 3, rng);
  const Sequence y = bilinear_coupled(x, cfg_of(PoolKind::coupled, 5), coupled_weights(Vector::Zero(5)));
  EXPECT_EQ(y.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Coupled, WeightLengthMismatchIsConfigError) {
  EXPECT_THROW(bilinear_coupled(Sequence::Ones(3, 2), cfg_of(PoolKind::coupled, 3), coupled_weights(vec({1, 1}))),
               ConfigError);
  EXPECT_THROW(bilinear_decoupled(Sequence::Ones(3, 2), cfg_of(PoolKind::decoupled, 3),
                                  decoupled_weights(vec({1, 1, 1}), vec({1}))),
               ConfigError);
}

struct DecoupledExample {
  Sequence x = rows({{0, 0}, {2, 2}});
  PoolingConfig cfg = cfg_of(PoolKind::decoupled, 3);
  PoolingWeights w = decoupled_weights(vec({0.5, 0.5, 0.0}), vec({0.5, 0.5, 0.0}));
};

TEST(Decoupled, MeanAndScatter) {
  DecoupledExample ex;
  const Sequence y = bilinear_decoupled(ex.x, ex.cfg, ex.w);
  EXPECT_EQ(Vector(y.row(1).transpose()), vec({1, 1, 1, 1, 1, 1}));
}

TEST(Decoupled, ConstantWindowHasZeroScatter) {
  const Sequence x = Sequence::Constant(5, 3, 0.75);
  const Vector p = Vector::Constant(5, 0.2);
  const Sequence y = bilinear_decoupled(x, cfg_of(PoolKind::decoupled, 5), decoupled_weights(p, vec({1, -2, 3, 0.5, 1})));
  for (Eigen::Index c = 0; c < 3; ++c) EXPECT_NEAR(y(2, c), 0.75, 1e-15);
  EXPECT_LE(y.row(2).tail(9).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Decoupled, SingleTapWindow) {
  const Sequence x = rows({{1.5, -2}});
  const Sequence y = bilinear_decoupled(x, cfg_of(PoolKind::decoupled, 1), decoupled_weights(vec({1}), vec({1})));
  EXPECT_EQ(Vector(y.row(0).transpose()), vec({1.5, -2, 0, 0, 0, 0}));
}

TEST(Ablation, FirstAndSecondOrderSplitTheDecoupledOutput) {
  DecoupledExample ex;
  EXPECT_EQ(Vector(first_order_only(ex.x, ex.cfg, ex.w).row(1).transpose()), vec({1, 1}));
  EXPECT_EQ(Vector(second_order_only(ex.x, ex.cfg, ex.w).row(1).transpose()), vec({1, 1, 1, 1}));

  const Sequence same = Sequence::Constant(3, 2, 4.0);
  const PoolingWeights uniform = uniform_weights(3);
  EXPECT_NEAR(first_order_only(same, ex.cfg, uniform)(1, 0), 4.0, 1e-15);
  const Sequence one = second_order_only(rows({{3, 1}}), cfg_of(PoolKind::second_order, 1), uniform_weights(1));
  EXPECT_EQ(one.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Hvec, DiagonalsThenScaledUpperTriangle) {
  Matrix m(2, 2);
  m << 1, 2, 2, 3;
  const Vector h = hvec(m);
  EXPECT_EQ(h, vec({1, 3, 2 * kSqrt2}));
  EXPECT_NEAR(h.squaredNorm(), 18.0, 1e-12);
  EXPECT_EQ(hvec(Matrix::Identity(2, 2)), vec({1, 1, 0}));
  EXPECT_EQ(hvec(Matrix::Zero(3, 3)), Vector::Zero(6));

  Matrix three(3, 3);
  three << 1, 2, 3, 2, 4, 5, 3, 5, 6;
  EXPECT_EQ(hvec(three), vec({1, 4, 6, 2 * kSqrt2, 3 * kSqrt2, 5 * kSqrt2}));
}

TEST(Hvec, AsymmetricInputIsNumericError) {
  Matrix m(2, 2);
  m << 1, 2, 2.001, 3;
  EXPECT_THROW(hvec(m), NumericError);
}

TEST(CoupledCompact, HalfVectorisedExamples) {
  const PoolingConfig cfg = cfg_of(PoolKind::coupled_compact, 1);
  const Sequence phi = bilinear_coupled_compact(rows({{1, 2}}), cfg, coupled_weights(vec({1})));
  EXPECT_EQ(Vector(phi.row(0).transpose()), vec({1, 4, 2 * kSqrt2}));
  EXPECT_NEAR(phi.row(0).squaredNorm(), 25.0, 1e-12);

  const Sequence pair = bilinear_coupled_compact(rows({{1, 0}, {1, 1}}), cfg, coupled_weights(vec({1})));
  EXPECT_NEAR(pair.row(0).dot(pair.row(1)), 1.0, 1e-12);
  EXPECT_EQ(bilinear_coupled_compact(Sequence::Zero(1, 3), cfg, coupled_weights(vec({1}))).cwiseAbs().maxCoeff(),
            0.0);
}

TEST(DecoupledCompact, HalfVectorisedExamples) {
  DecoupledExample ex;
  ex.cfg.kind = PoolKind::decoupled_compact;
  const Sequence y = bilinear_decoupled_compact(ex.x, ex.cfg, ex.w);
  ASSERT_EQ(y.cols(), 5);
  EXPECT_EQ(Vector(y.row(1).transpose()), vec({1, 1, 1, 1, kSqrt2}));

  const Sequence single =
      bilinear_decoupled_compact(rows({{2, -1, 3}}), cfg_of(PoolKind::decoupled_compact, 1), decoupled_weights(vec({1}), vec({1})));
  EXPECT_EQ(Vector(single.row(0).transpose()), vec({2, -1, 3, 0, 0, 0, 0, 0, 0}));
}

TEST(OutputDim, FormulasAndPublishedWidths) {
  EXPECT_EQ(output_dim(PoolKind::max, 128), 128u);
  EXPECT_EQ(output_dim(PoolKind::coupled, 128), 16384u);
  EXPECT_EQ(output_dim(PoolKind::decoupled, 128), 16512u);
  EXPECT_EQ(output_dim(PoolKind::coupled_compact, 128), 8256u);
  EXPECT_EQ(output_dim(PoolKind::decoupled_compact, 128), 8384u);
  EXPECT_EQ(output_dim(PoolKind::first_order, 7), 7u);
  EXPECT_EQ(output_dim(PoolKind::second_order, 7), 49u);
  for (std::size_t d = 1; d <= 32; ++d) {
    EXPECT_EQ(output_dim(PoolKind::coupled_compact, d), hvec_size(d));
    EXPECT_EQ(output_dim(PoolKind::decoupled_compact, d), d + hvec_size(d));
  }
}

TEST(KernelCoupled, HandValues) {
  EXPECT_DOUBLE_EQ(kernel_coupled(rows({{1, 2}}), 1, vec({1}), 0, 0), 25.0);
  EXPECT_EQ(kernel_coupled(rows({{1, 0}, {0, 3}}), 1, vec({1}), 0, 1), 0.0);
}

TEST(KernelCoupled, HomogeneousOfDegreeFour) {
  CounterRng rng(11);
  const Sequence x = random_sequence(9, 4, rng);
  const Vector omega = random_vector(5, -1, 1, rng);
  for (double c : {0.5, 2.0, -3.0}) {
    const double base = kernel_coupled(x, 5, omega, 2, 6);
    EXPECT_NEAR(kernel_coupled(c * x, 5, omega, 2, 6), std::pow(c, 4) * base, 1e-10 * (1 + std::abs(base)));
  }
}

TEST(KernelDecoupled, HandValues) {
  const Sequence same = Sequence::Constant(5, 2, 1.5);
  const Vector p = Vector::Constant(5, 0.2);
  EXPECT_NEAR(kernel_decoupled(same, 5, p, vec({1, 2, 3, 4, 5}), 2, 2), 4.5, 1e-12);

  DecoupledExample ex;
  EXPECT_NEAR(kernel_decoupled(ex.x, 3, ex.w.p, ex.w.q, 1, 1), 6.0, 1e-12);
  EXPECT_EQ(kernel_decoupled(Sequence::Zero(4, 3), 3, vec({1, 2, 3}), vec({1, 2, 3}), 0, 3), 0.0);
}

TEST(KernelEquivalence, RandomInstancesAgreeWithDirectSums) {
  for (const auto& check : verify_kernels(100)) EXPECT_TRUE(check.passed) << format_check(check);
}

TEST(KernelEquivalence, PerturbedCompactWeightsAreDetected) {
  EXPECT_FALSE(verify_kernels(5, 1, 0.25).front().passed);
}

TEST(Reduction, HvecOfCoupledFrameEqualsCompactOutput) {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    const auto inst = random_kernel_instance(seed);
    const PoolingConfig cfg = cfg_of(PoolKind::coupled, inst.window, 2);
    const Sequence full = bilinear_coupled(inst.x, cfg, inst.weights);
    const Sequence compact = bilinear_coupled_compact(inst.x, cfg, inst.weights);
    const Eigen::Index d = inst.x.cols();
    for (Eigen::Index s = 0; s < full.rows(); ++s) {
      const Matrix m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          full.row(s).data(), d, d);
      ASSERT_EQ(hvec(m), Vector(compact.row(s).transpose())) << "seed " << seed << " frame " << s;
    }
  }
}

// ---------------------------------------------------------------------------
// Averaging recovery

/// The textbook average: sum everything, divide once at the end.
Sequence sum_then_divide_coupled(const Sequence& x, int window) {
  const Eigen::Index d = x.cols(), r = (window - 1) / 2;
  Sequence y = Sequence::Zero(x.rows(), d * d);
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    Matrix acc = Matrix::Zero(d, d);
    for (Eigen::Index tau = std::max<Eigen::Index>(0, t - r); tau <= std::min(x.rows() - 1, t + r); ++tau) {
      acc += x.row(tau).transpose() * x.row(tau);
    }
    acc /= static_cast<double>(window);
    for (Eigen::Index a = 0; a < d; ++a) {
      for (Eigen::Index b = 0; b < d; ++b) y(t, a * d + b) = acc(a, b);
    }
  }
  return y;
}

TEST(AveragingRecovery, LearnableAtBoxFilterMatchesFixedFormsBitExactly) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    CounterRng rng(seed, 99);
    const int window = std::array{1, 3, 5, 11}[rng.below(4)];
    const Sequence x = random_sequence(static_cast<Eigen::Index>(1 + rng.below(20)), 1 + rng.below(5), rng);
    const PoolingWeights box = uniform_weights(window);
    const double w = 1.0 / window;
    for (PoolKind kind : {PoolKind::coupled, PoolKind::decoupled, PoolKind::coupled_compact,
                          PoolKind::decoupled_compact}) {
      PoolingConfig learn{kind, window, 1, true};
      PoolingConfig fixed{kind, window, 1, false};
      ASSERT_EQ(pool(x, learn, box), pool(x, fixed, PoolingWeights{})) << to_string(kind) << " seed " << seed;
    }
    ASSERT_EQ(bilinear_coupled(x, {PoolKind::coupled, window, 1, true}, box), oracle::reference_coupled(x, window, w));
    ASSERT_EQ(bilinear_decoupled(x, {PoolKind::decoupled, window, 1, true}, box), oracle::reference_decoupled(x, window, w));

    const Sequence literal = sum_then_divide_coupled(x, window);
    const Sequence ours = bilinear_coupled(x, {PoolKind::coupled, window, 1, true}, box);
    EXPECT_LE((ours - literal).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + literal.cwiseAbs().maxCoeff()));
  }
}

// ---------------------------------------------------------------------------
// Gradients

struct FdResult {
  double x = 0.0;
  double weights = 0.0;
};

/// Central differences of L = <G, pool(x)> with respect to x and the weights.
FdResult pool_fd_error(PoolKind kind, std::uint64_t seed) {
  CounterRng rng(seed, 0x9001);
  const PoolingConfig cfg{kind, 5, 2, true};
  Sequence x = random_sequence(12, 4, rng);
  if (kind == PoolKind::max) {
    // Max is piecewise linear; keep every pair of values (and the padding
    // zero) at least 0.025 apart so the stencil never crosses a switch.
    std::vector<double> grid(static_cast<std::size_t>(x.size()));
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = 0.05 * (static_cast<double>(i) - 24.0) + 0.025;
    for (std::size_t i = grid.size(); i > 1; --i) std::swap(grid[i - 1], grid[rng.below(i)]);
    std::copy(grid.begin(), grid.end(), x.data());
  }
  PoolingWeights w{random_vector(5, -1, 1, rng), random_vector(5, -1, 1, rng), random_vector(5, -1, 1, rng)};
  const Sequence probe = pool(x, cfg, w);
  const Sequence g = random_sequence(probe.rows(), probe.cols(), rng);
  const PoolGrads analytic = pool_backward(x, cfg, w, g);
  auto loss = [&] { return (pool(x, cfg, w).array() * g.array()).sum(); };
  constexpr double h = 1e-5;
  auto central = [&](double& v) {
    const double saved = v;
    v = saved + h;
    const double up = loss();
    v = saved - h;
    const double down = loss();
    v = saved;
    return (up - down) / (2 * h);
  };
  FdResult r;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    r.x = std::max(r.x, relative_error(analytic.x.data()[i], central(x.data()[i])));
  }
  auto check = [&](Vector& v, const Vector& grad) {
    for (Eigen::Index k = 0; k < v.size(); ++k) r.weights = std::max(r.weights, relative_error(grad(k), central(v(k))));
  };
  if (uses_decoupled_weights(kind)) {
    check(w.p, analytic.weights.p);
    check(w.q, analytic.weights.q);
  } else if (kind != PoolKind::max) {
    check(w.omega, analytic.weights.omega);
  }
  return r;
}

class PoolBackward : public ::testing::TestWithParam<PoolKind> {};

TEST_P(PoolBackward, MatchesCentralDifferencesOnHundredSeeds) {
  double worst_x = 0.0, worst_w = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto r = pool_fd_error(GetParam(), seed);
    worst_x = std::max(worst_x, r.x);
    worst_w = std::max(worst_w, r.weights);
  }
  EXPECT_LE(worst_x, 1e-4);
  EXPECT_LE(worst_w, 1e-4);
}

TEST_P(PoolBackward, ZeroUpstreamGivesZeroGradients) {
  CounterRng rng(5);
  const PoolingConfig cfg{GetParam(), 5, 2, true};
  const Sequence x = random_sequence(9, 3, rng);
  const PoolingWeights w = uniform_weights(5);
  const Sequence y = pool(x, cfg, w);
  const auto g = pool_backward(x, cfg, w, Sequence::Zero(y.rows(), y.cols()));
  EXPECT_EQ(g.x.cwiseAbs().maxCoeff(), 0.0);
  if (has_weights(GetParam())) {
    EXPECT_EQ(g.weights.omega.cwiseAbs().maxCoeff() + g.weights.p.cwiseAbs().maxCoeff() +
                  g.weights.q.cwiseAbs().maxCoeff(),
              0.0);
  }
}

TEST_P(PoolBackward, UpstreamShapeMismatchIsShapeError) {
  const PoolingConfig cfg{GetParam(), 3, 2, true};
  EXPECT_THROW(pool_backward(Sequence::Ones(6, 2), cfg, uniform_weights(3), Sequence::Ones(2, 1)), ShapeError);
}

INSTANTIATE_TEST_SUITE_P(AllKinds, PoolBackward, ::testing::ValuesIn(kAllPoolKinds),
                         [](const auto& info) { return std::string(to_string(info.param)); });

// ---------------------------------------------------------------------------
// Permutation covariance

TEST(PermutationCovariance, ChannelPermutationPermutesMomentsAndMaxima) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    CounterRng rng(seed, 0x5045524D);
    const Eigen::Index d = static_cast<Eigen::Index>(2 + rng.below(5));
    const Sequence x = random_sequence(10, d, rng);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(d));
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    Sequence xp(x.rows(), d);
    for (Eigen::Index c = 0; c < d; ++c) xp.col(c) = x.col(perm[static_cast<std::size_t>(c)]);

    const PoolingConfig cfg{PoolKind::decoupled, 5, 2, true};
    const PoolingWeights w{random_vector(5, -1, 1, rng), random_vector(5, -1, 1, rng), random_vector(5, -1, 1, rng)};
    const Sequence y = bilinear_decoupled(x, cfg, w);
    const Sequence yp = bilinear_decoupled(xp, cfg, w);
    const Sequence m = max_pool(x, {PoolKind::max, 5, 2, true});
    const Sequence mp = max_pool(xp, {PoolKind::max, 5, 2, true});
    for (Eigen::Index s = 0; s < y.rows(); ++s) {
      for (Eigen::Index a = 0; a < d; ++a) {
        const Eigen::Index pa = perm[static_cast<std::size_t>(a)];
        EXPECT_EQ(yp(s, a), y(s, pa));
        EXPECT_EQ(mp(s, a), m(s, pa));
        for (Eigen::Index b = 0; b < d; ++b) {
          const Eigen::Index pb = perm[static_cast<std::size_t>(b)];
          EXPECT_EQ(yp(s, d + a * d + b), y(s, d + pa * d + pb));
        }
      }
    }
  }
}

}  // namespace
}  // namespace tpool
