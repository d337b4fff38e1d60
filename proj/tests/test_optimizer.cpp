#include <gtest/gtest.h>

#include "cerase/optimizer.hpp"
#include "test_support.hpp"

namespace cerase {
namespace {

using testing::Mat;
using testing::Rng;
using testing::Vec;

TEST(NoiseGuideLoss, Basics) {
  Rng rng(1);
  const Vec e = rng.gaussian(32);
  EXPECT_EQ(noise_guide_loss(e, e), 0.0);
  Vec shifted = e;
  shifted(5) += 1.0;
  EXPECT_NEAR(noise_guide_loss(shifted, e), 1.0, 1e-12);

  const Vec f = rng.gaussian(32);
  double sum = 0;
  for (Index i = 0; i < 32; ++i) sum += (e(i) - f(i)) * (e(i) - f(i));
  EXPECT_NEAR(noise_guide_loss(e, f), sum, 1e-12 * sum);
  EXPECT_THROW(noise_guide_loss(e, Vec(Vec::Zero(31))), Error);
}

TEST(ProjectGradient, Cases) {
  Rng rng(2);
  const SubspaceBasis<double> b(rng.orthonormal(16, 4));
  const Mat in_span = rng.gaussian(5, 4) * b.vectors().transpose();
  EXPECT_LE(project_gradient(in_span, b).norm(), 1e-12 * in_span.norm());

  const Mat perp = rng.gaussian(5, 16) * (Mat::Identity(16, 16) - testing::explicit_projector(b.vectors()));
  EXPECT_LE((project_gradient(perp, b) - perp).norm(), 1e-12 * perp.norm());

  const Mat g = rng.gaussian(5, 16);
  const Mat want = g * (Mat::Identity(16, 16) - testing::explicit_projector(b.vectors()));
  EXPECT_LE((project_gradient(g, b) - want).norm(), 1e-12 * g.norm());

  EXPECT_THROW(project_gradient(Mat(Mat::Ones(2, 15)), b), Error);
}

TEST(ProjectGradient, RowsOrthogonalToBasis) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Index d = rng.uniform_int(2, 64);
    const Index k = rng.uniform_int(1, int(std::min<Index>(8, d - 1)));
    const SubspaceBasis<double> b(rng.orthonormal(d, k));
    const Mat g = rng.gaussian(rng.uniform_int(1, 8), d) * rng.uniform(1e-3, 1e3);
    const Mat p = project_gradient(g, b);
    for (Index i = 0; i < g.rows(); ++i) {
      const double worst = (p.row(i) * b.vectors()).cwiseAbs().maxCoeff();
      EXPECT_LE(worst, 1e-10 * g.row(i).norm());
    }
  }
}

TEST(ToySamplerStep, Arithmetic) {
  Rng rng(4);
  const Vec x = rng.gaussian(8);
  EXPECT_EQ(toy_sampler_step(x, Vec(Vec::Zero(8)), 3, 50), x);

  Vec e1 = Vec::Zero(8);
  e1(0) = 1.0;
  const Vec out = toy_sampler_step(Vec(Vec::Zero(8)), e1, 0, 50);
  EXPECT_NEAR(out(0), -1.0 / 50.0, 1e-16);
  EXPECT_EQ(out.tail(7).norm(), 0.0);

  const Vec eps = rng.gaussian(8);
  Vec y = x;
  for (int t = 0; t < 50; ++t) y = toy_sampler_step(y, eps, t, 50);
  EXPECT_LE((y - (x - eps)).norm(), 1e-13 * (x.norm() + eps.norm()));

  EXPECT_THROW(toy_sampler_step(x, Vec(Vec::Zero(7)), 0, 50), Error);
}

TEST(ToyDenoiser, DeterministicAndLinearInCondition) {
  const ToyDenoiser<double> den(42, {});
  Rng rng(5);
  const Vec x = rng.gaussian(32);
  const Mat c1 = rng.gaussian(4, 16);
  const Mat c2 = rng.gaussian(4, 16);
  EXPECT_TRUE(testing::bit_identical(den.predict(x, 30, c1), ToyDenoiser<double>(42, {}).predict(x, 30, c1)));
  const Vec lhs = den.predict(x, 30, Mat(c1 + 2.0 * c2)) - den.predict(x, 30, c1);
  const Vec rhs = 2.0 * (den.predict(x, 30, c2) - den.predict(x, 30, Mat(Mat::Zero(4, 16))));
  EXPECT_LE((lhs - rhs).norm(), 1e-12 * rhs.norm());
  EXPECT_FALSE(testing::bit_identical(den.coupling(30), den.coupling(31)));
  EXPECT_FALSE(testing::bit_identical(den.coupling(30), ToyDenoiser<double>(43, {}).coupling(30)));
}

TEST(ToyDenoiser, EntriesHaveUnitVarianceBeforeScaling) {
  const ToyDenoiser<double> den(7, {4, 16, 32, 256, 50});
  const Mat l = den.coupling(10) * std::sqrt(64.0);
  const double mean = l.mean();
  const double var = (l.array() - mean).square().mean();
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.03);
  EXPECT_LE(l.cwiseAbs().maxCoeff(), std::sqrt(3.0));
}

TEST(ToyDenoiser, ShapeErrors) {
  const ToyDenoiser<double> den(1, {});
  EXPECT_THROW(den.predict(Vec(Vec::Zero(31)), 0, Mat(Mat::Zero(4, 16))), Error);
  EXPECT_THROW(den.predict(Vec(Vec::Zero(32)), 0, Mat(Mat::Zero(3, 16))), Error);
  EXPECT_THROW(den.predict(Vec(Vec::Zero(32)), 51, Mat(Mat::Zero(4, 16))), Error);
  EXPECT_THROW(ToyDenoiser<double>(1, {0, 16, 32, 32, 50}), Error);
}

TEST(FiniteDifference, MatchesAnalyticGradient) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const ToyDenoiser<double> den(rng.next(), {rng.uniform_int(1, 6), rng.uniform_int(2, 16),
                                              rng.uniform_int(2, 24), rng.uniform_int(2, 24), 50});
    const auto& sh = den.shape();
    const Vec x = rng.gaussian(sh.state_dim);
    const Mat c = rng.gaussian(sh.n_tokens, sh.d_c);
    const Vec target = rng.gaussian(sh.noise_dim);
    const int t = rng.uniform_int(0, 50);
    const Mat analytic = den.loss_gradient(x, t, c, target);
    const Mat numeric = finite_diff_gradient(den, x, t, c, target);
    EXPECT_LE((analytic - numeric).norm(), 1e-5 * std::max(analytic.norm(), 1e-12));
  }
}

TEST(FiniteDifference, ZeroCouplingGivesZeroGradient) {
  const ToyDenoiser<double> den(3, {}, 0.0);
  Rng rng(7);
  const Vec x = rng.gaussian(32);
  const Mat c = rng.gaussian(4, 16);
  const Vec target = rng.gaussian(32);
  EXPECT_EQ(den.loss_gradient(x, 5, c, target).norm(), 0.0);
  EXPECT_EQ(finite_diff_gradient(den, x, 5, c, target).norm(), 0.0);
}

TEST(FiniteDifference, VanishesAtUnconstrainedMinimum) {
  // square coupling, so the minimizer c* = L⁻¹(target − A x − d) exists
  const ToyDenoiser<double> den(9, {2, 4, 6, 8, 50});
  Rng rng(8);
  const Vec x = rng.gaussian(6);
  const Vec target = rng.gaussian(8);
  const Vec rhs = target - den.state_map(3) * x - den.offset(3);
  const Vec flat = den.coupling(3).fullPivLu().solve(rhs);
  const Mat c = flat.reshaped(4, 2).transpose();
  EXPECT_LE(den.loss_gradient(x, 3, c, target).norm(), 1e-7);
  EXPECT_LE(finite_diff_gradient(den, x, 3, c, target).norm(), 1e-7);
}

class RunOptimizationTest : public ::testing::Test {
 protected:
  Rng rng{42};
  SemanticSubspace<double> s = build_semantic_subspace(testing::planted_concept(rng, 30, 16, 3), 3);
  ConditionTokens<double> original{rng.gaussian(4, 16) * 2.0, std::vector<TokenKind>(4, TokenKind::word), {}};
  SuppressedCondition<double> suppressed = suppress_condition(original, s, SuppressionConfig{3, false, {}});
  ToyDenoiser<double> den{42, {}};
  Vec x0 = rng.gaussian(32);
};

TEST_F(RunOptimizationTest, DefaultsFreezeSubspaceAndDescend) {
  OptimizationConfig cfg;
  EXPECT_EQ(cfg.t_start, 30);
  EXPECT_EQ(cfg.t_end, 50);
  EXPECT_EQ(cfg.learning_rate, 1e-3);

  // η must sit below the curvature bound 1/λ_max(LᵀL) of every step's quadratic
  for (int t = cfg.t_start; t < cfg.t_end; ++t) {
    const Mat h = den.coupling(t).transpose() * den.coupling(t);
    Vec v = Vec::Ones(h.rows()).normalized();
    double lambda = 0;
    for (int it = 0; it < 500; ++it) {
      const Vec w = h * v;
      lambda = w.norm();
      v = w / lambda;
    }
    EXPECT_LT(cfg.learning_rate, 1.0 / lambda);
  }

  const auto trace = run_optimization(original, suppressed, s, den, cfg, x0);
  ASSERT_EQ(trace.steps.size(), 20u);
  EXPECT_EQ(trace.steps.front().t, 30);
  EXPECT_EQ(trace.steps.back().t, 49);
  for (const auto& r : trace.steps) {
    EXPECT_LE(r.max_subspace_drift, 1e-8 * std::max(r.token_scale, 1.0));
    EXPECT_LE(r.loss_after, r.loss_before);
  }
  EXPECT_LT(trace.steps.back().loss_after, trace.steps.front().loss_before);

  // every accumulated change stays out of span(B)
  const Mat moved = trace.final_tokens - suppressed.tokens;
  EXPECT_LE((moved * s.basis.vectors()).norm(), 1e-8 * suppressed.tokens.norm());
}

TEST_F(RunOptimizationTest, BitIdenticalAcrossRuns) {
  const OptimizationConfig cfg;
  const auto a = run_optimization(original, suppressed, s, den, cfg, x0);
  const auto b = run_optimization(original, suppressed, s, ToyDenoiser<double>(42, {}), cfg, x0);
  EXPECT_TRUE(testing::bit_identical(a.final_tokens, b.final_tokens));
  EXPECT_TRUE(testing::bit_identical(a.final_state, b.final_state));
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    EXPECT_EQ(a.steps[i].loss_before, b.steps[i].loss_before);
    EXPECT_EQ(a.steps[i].loss_after, b.steps[i].loss_after);
    EXPECT_EQ(a.steps[i].max_subspace_drift, b.steps[i].max_subspace_drift);
    EXPECT_EQ(a.steps[i].grad_norm, b.steps[i].grad_norm);
  }
}

TEST_F(RunOptimizationTest, StationaryWhenAlreadyMatching) {
  SuppressedCondition<double> same{original.tokens, Vec::Zero(4), {}};
  const auto trace = run_optimization(original, same, s, den, OptimizationConfig{}, x0);
  EXPECT_EQ(trace.final_tokens, original.tokens);
  for (const auto& r : trace.steps) {
    EXPECT_EQ(r.loss_before, 0.0);
    EXPECT_EQ(r.grad_norm, 0.0);
  }
}

TEST_F(RunOptimizationTest, StateFollowsSuppressedBranch) {
  OptimizationConfig cfg;
  cfg.t_start = 30;
  cfg.t_end = 31;
  const auto trace = run_optimization(original, suppressed, s, den, cfg, x0);
  const Vec eps = den.predict(x0, 30, suppressed.tokens);
  EXPECT_TRUE(testing::bit_identical(trace.final_state, toy_sampler_step(x0, eps, 30, 50)));
}

TEST_F(RunOptimizationTest, AdamLikeKeepsFreeze) {
  OptimizationConfig cfg;
  cfg.optimizer = OptimizerKind::adam_like;
  cfg.updates_per_step = 3;
  const auto trace = run_optimization(original, suppressed, s, den, cfg, x0);
  for (const auto& r : trace.steps) {
    EXPECT_LE(r.max_subspace_drift, 1e-8 * std::max(r.token_scale, 1.0));
  }
  EXPECT_LT(trace.steps.back().loss_after, trace.steps.front().loss_before);
}

TEST_F(RunOptimizationTest, EmptyWindowIsNoOp) {
  OptimizationConfig cfg;
  cfg.t_start = 40;
  cfg.t_end = 40;
  const auto trace = run_optimization(original, suppressed, s, den, cfg, x0);
  EXPECT_TRUE(trace.steps.empty());
  EXPECT_EQ(trace.final_tokens, suppressed.tokens);
}

TEST_F(RunOptimizationTest, DivergentLearningRateIsReported) {
  auto code = [&](const OptimizationConfig& cfg) {
    try {
      run_optimization(original, suppressed, s, den, cfg, x0);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoFailure;
  };
  // 20 steps at η = 1e6 grow the tokens to ~1e130, finite in double but far
  // outside the f32 range the tokens are stored in
  OptimizationConfig cfg;
  cfg.learning_rate = 1e6;
  cfg.divergence_limit = double(std::numeric_limits<float>::max());
  EXPECT_EQ(code(cfg), ErrorCode::NonFiniteGradient);

  // a long enough window overflows double as well
  cfg.divergence_limit = std::numeric_limits<double>::infinity();
  cfg.t_start = 0;
  EXPECT_EQ(code(cfg), ErrorCode::NonFiniteGradient);
}

TEST_F(RunOptimizationTest, ConfigAndShapeErrors) {
  OptimizationConfig cfg;
  cfg.t_start = 45;
  cfg.t_end = 40;
  EXPECT_THROW(run_optimization(original, suppressed, s, den, cfg, x0), Error);
  cfg = {};
  cfg.t_end = 51;
  EXPECT_THROW(run_optimization(original, suppressed, s, den, cfg, x0), Error);
  cfg = {};
  cfg.learning_rate = 0;
  EXPECT_THROW(run_optimization(original, suppressed, s, den, cfg, x0), Error);
  cfg = {};
  EXPECT_THROW(run_optimization(original, suppressed, s, den, cfg, Vec(Vec::Zero(31))), Error);
  ConditionTokens<double> wrong{rng.gaussian(3, 16), {}, {}};
  try {
    run_optimization(wrong, suppressed, s, den, cfg, x0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

}  // namespace
}  // namespace cerase
