#include <gtest/gtest.h>

#include <cmath>

#include "crimgs/autodiff/gradcheck.hpp"
#include "crimgs/ode.hpp"
#include "oracles.hpp"

using namespace crimgs;
using namespace crimgs::ode;
using T = ad::Tensor<double>;

namespace {

OdeFunc<double> growth() {
  return [](const T& z, double) { return z; };
}

Eigen::Matrix4d test_matrix() {
  Eigen::Matrix4d a;
  a << -0.5, 1.0, 0.0, 0.2, -1.0, -0.5, 0.3, 0.0, 0.0, 0.1, -0.2, 0.8, 0.1, 0.0, -0.8, -0.3;
  return a;
}

/// z as a [1, 4] row; dz = z A^T.
OdeFunc<double> linear_system(const Eigen::Matrix4d& a) {
  std::vector<double> at(16);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) at[i * 4 + j] = a(j, i);
  T m({4, 4}, at);
  return [m](const T& z, double) { return ad::matmul(z, m); };
}

}  // namespace

TEST(Ode, EulerSingleStep) {
  SolverConfig cfg{Method::euler};
  cfg.initial_step = 0.25;
  auto zs = odeint<double>(growth(), T({1}, {2.0}), {0.0, 0.25}, cfg);
  ASSERT_EQ(zs.size(), 2u);
  EXPECT_DOUBLE_EQ(zs[1][0], 2.5);
}

TEST(Ode, StartTimeReturnsInitialState) {
  T z0({2}, {1.0, -1.0});
  auto zs = odeint<double>(growth(), z0, {0.3, 0.3, 0.5}, SolverConfig{});
  ASSERT_EQ(zs.size(), 3u);
  EXPECT_EQ(zs[0].values(), z0.values());
  EXPECT_EQ(zs[1].values(), z0.values());
}

TEST(Ode, RejectsDecreasingTimes) {
  EXPECT_THROW((void)odeint<double>(growth(), T({1}, {1.0}), {0.0, 1.0, 0.5}, SolverConfig{}),
               std::invalid_argument);
}

TEST(Ode, ParsesMethodNames) {
  EXPECT_EQ(parse_method("rk4"), Method::rk4);
  EXPECT_THROW((void)parse_method("heun"), ConfigError);
}

TEST(Ode, EulerIsFirstOrder) {
  auto pts = convergence_probe<double>(growth(), T({1}, {1.0}), 0.0, 1.0, T({1}, {std::exp(1.0)}), Method::euler,
                                       8, 5);
  EXPECT_NEAR(observed_order(pts), 1.0, 0.2);
}

TEST(Ode, Rk4IsFourthOrder) {
  auto pts = convergence_probe<double>(growth(), T({1}, {1.0}), 0.0, 1.0, T({1}, {std::exp(1.0)}), Method::rk4,
                                       4, 5);
  EXPECT_NEAR(observed_order(pts), 4.0, 0.5);
}

TEST(Ode, FixedStepDopri5IsFifthOrder) {
  auto pts = convergence_probe<double>(growth(), T({1}, {1.0}), 0.0, 1.0, T({1}, {std::exp(1.0)}),
                                       Method::dopri5, 2, 3);
  EXPECT_NEAR(observed_order(pts), 5.0, 0.6);
}

TEST(Ode, AdaptiveDopri5MatchesMatrixExponential) {
  const Eigen::Matrix4d a = test_matrix();
  const Eigen::Vector4d z0(1.0, -0.5, 0.25, 2.0);
  SolverConfig cfg;
  cfg.rtol = 1e-6;
  cfg.atol = 1e-9;
  const std::vector<double> ts{0.0, 0.35, 1.0, 1.7, 2.0};
  SolveStats stats;
  auto zs = odeint<double>(linear_system(a), T({1, 4}, {z0[0], z0[1], z0[2], z0[3]}), ts, cfg, &stats);
  ASSERT_EQ(zs.size(), ts.size());
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const Eigen::Vector4d expect = oracle::expm_series<4>(a * ts[k]) * z0;
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(zs[k][i], expect[i], 1e-6) << "t=" << ts[k];
  }
  EXPECT_GT(stats.steps, 1u);
  EXPECT_EQ(stats.evaluations, 1 + 6 * (stats.steps + stats.rejected));
}

TEST(Ode, DenseOutputIsAccurateInsideSteps) {
  SolverConfig cfg;
  cfg.rtol = 1e-8;
  cfg.atol = 1e-10;
  cfg.initial_step = 0.5;
  std::vector<double> ts{0.0};
  for (int i = 1; i <= 40; ++i) ts.push_back(i * 0.05);
  SolveStats stats;
  auto zs = odeint<double>(growth(), T({1}, {1.0}), ts, cfg, &stats);
  EXPECT_LT(stats.steps, ts.size() - 1);
  for (std::size_t k = 0; k < ts.size(); ++k) EXPECT_NEAR(zs[k][0], std::exp(ts[k]), 1e-7 * std::exp(ts[k]));
}

TEST(Ode, StepBudgetExhaustionReportsTime) {
  SolverConfig cfg{Method::rk4};
  cfg.initial_step = 0.01;
  cfg.max_steps = 10;
  try {
    (void)odeint<double>(growth(), T({1}, {1.0}), {0.0, 1.0}, cfg);
    FAIL() << "expected IntegrationError";
  } catch (const IntegrationError& e) {
    EXPECT_NEAR(e.last_time(), 0.1, 1e-12);
  }
}

TEST(Ode, StiffProblemExhaustsAdaptiveBudget) {
  SolverConfig cfg;
  cfg.max_steps = 50;
  OdeFunc<double> stiff = [](const T& z, double) { return ad::scale(z, -1e5); };
  EXPECT_THROW((void)odeint<double>(stiff, T({1}, {1.0}), {0.0, 1.0}, cfg), IntegrationError);
}

TEST(Ode, GradientsFlowThroughSolverSteps) {
  T rate = T::parameter({1, 3}, {0.3, -0.7, 1.1}, "rate");
  T z0 = T::parameter({1, 3}, {1.0, 0.5, -0.2}, "z0");
  for (Method m : {Method::euler, Method::rk4, Method::dopri5}) {
    SolverConfig cfg{m};
    cfg.initial_step = 0.1;
    cfg.adaptive = false;
    auto loss = [&] {
      OdeFunc<double> f = [&](const T& z, double t) { return ad::mul(ad::sin(z + t), rate); };
      auto zs = odeint<double>(f, z0, {0.0, 0.4, 1.0}, cfg);
      return ad::sum(ad::square(zs[1]) + zs[2]);
    };
    EXPECT_LT(ad::gradcheck<double>(loss, {rate, z0}, 1e-6).max_relative_error, 1e-5) << to_string(m);
  }
}

TEST(Ode, AdaptiveGradientOnLinearSystem) {
  // Step-size decisions are constants in backward; at tight tolerance their
  // influence on the finite differences is far below the check threshold.
  const Eigen::Matrix4d a = test_matrix();
  std::vector<double> at(16);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) at[i * 4 + j] = a(j, i);
  T m = T::parameter({4, 4}, at, "A");
  T z0 = T::parameter({1, 4}, {1.0, -0.5, 0.25, 2.0}, "z0");
  for (double rtol : {1e-3, 1e-7}) {
    SolverConfig cfg;
    cfg.rtol = rtol;
    cfg.atol = rtol * 1e-3;
    auto loss = [&] {
      OdeFunc<double> f = [&](const T& z, double) { return ad::matmul(z, m); };
      auto zs = odeint<double>(f, z0, {0.0, 0.5, 1.0}, cfg);
      return ad::sum(ad::square(zs[2]) + zs[1]);
    };
    const double err = ad::gradcheck<double>(loss, {m, z0}, 1e-6).max_relative_error;
    EXPECT_LT(err, rtol < 1e-6 ? 1e-6 : 1e-2) << "rtol " << rtol;
  }
}

TEST(Ode, ZeroDynamicsKeepsState) {
  OdeFunc<double> zero = [](const T& z, double) { return ad::scale(z, 0.0); };
  for (Method m : {Method::euler, Method::rk4, Method::dopri5}) {
    auto zs = odeint<double>(zero, T({2}, {0.7, -3.0}), {0.0, 0.5, 2.0}, SolverConfig{m});
    for (const auto& z : zs) {
      EXPECT_EQ(z[0], 0.7);
      EXPECT_EQ(z[1], -3.0);
    }
  }
}

TEST(Ode, Dopri5GrowthWithinTolerance) {
  SolverConfig loose, tight;
  tight.rtol = 1e-6;
  tight.atol = 1e-9;
  const double e_loose = std::abs(odeint<double>(growth(), T({1}, {1.0}), {0.0, 1.0}, loose)[1][0] - std::exp(1.0));
  const double e_tight = std::abs(odeint<double>(growth(), T({1}, {1.0}), {0.0, 1.0}, tight)[1][0] - std::exp(1.0));
  EXPECT_LT(e_loose, 10 * loose.rtol * std::exp(1.0));
  EXPECT_LT(e_tight, e_loose);
}

TEST(Ode, FixedStepErrorDecreasesMonotonically) {
  for (Method m : {Method::euler, Method::rk4}) {
    auto pts = convergence_probe<double>(growth(), T({1}, {1.0}), 0.0, 1.0, T({1}, {std::exp(1.0)}), m, 4, 5);
    for (std::size_t i = 1; i < pts.size(); ++i) {
      EXPECT_LT(pts[i].error, pts[i - 1].error);
      const double ratio = pts[i - 1].error / pts[i].error;
      if (m == Method::euler) {
        EXPECT_GT(ratio, 1.8);
        EXPECT_LT(ratio, 2.2);
      } else {
        EXPECT_GT(ratio, 12.0);
        EXPECT_LT(ratio, 20.0);
      }
    }
  }
}

TEST(Ode, DifferentOutputGridsAgree) {
  SolverConfig cfg;
  const Eigen::Matrix4d a = test_matrix();
  T z0({1, 4}, {1.0, -0.5, 0.25, 2.0});
  auto coarse = odeint<double>(linear_system(a), z0, {0.0, 0.5, 1.0}, cfg);
  std::vector<double> fine{0.0};
  for (int i = 1; i <= 8; ++i) fine.push_back(i / 8.0);
  auto dense = odeint<double>(linear_system(a), z0, fine, cfg);
  for (int i = 0; i < 4; ++i) {
    double norm = 0;
    for (int j = 0; j < 4; ++j) norm += coarse[2][j] * coarse[2][j];
    const double tol = 10 * (cfg.atol + cfg.rtol * std::sqrt(norm));
    EXPECT_NEAR(coarse[1][i], dense[4][i], tol);
    EXPECT_NEAR(coarse[2][i], dense[8][i], tol);
  }
}
