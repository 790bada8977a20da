#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include <cmath>
#include <limits>
#include <numbers>

#include "dfbsde/penalties.hpp"
#include "dfbsde/rng.hpp"
#include "dfbsde/schedule.hpp"

using namespace dfbsde;
using namespace dfbsde::cost;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double unit(std::uint64_t a, std::uint64_t b) { return rng::uniform(77, rng::kTest, a, b); }

CostSpec cartpole_costs() {
  CostSpec c;
  c.q = Eigen::Vector4d(0.5, 1.0, 0.1, 0.1).asDiagonal();
  c.q_final = c.q;
  c.target = Eigen::Vector4d(0, std::numbers::pi, 0, 0);
  c.r_diag = Eigen::VectorXd::Constant(1, 0.1);
  c.u_max = Eigen::VectorXd::Constant(1, 10.0);
  return c;
}

PenaltySpec scalar_penalty(PenaltyKind kind, double k) {
  PenaltySpec p;
  p.kind = kind;
  p.c_map = Eigen::MatrixXd::Ones(1, 1);
  p.b_min = Eigen::VectorXd::Constant(1, 1.0);
  p.b_max = Eigen::VectorXd::Constant(1, 5.0);
  p.height = 5.0;
  p.k = k;
  return p;
}

double p1(double x, const PenaltySpec& p) { return penalty(std::array<double, 1>{x}, p); }

// Numerical integral of c * sig^-1(v / U) from 0 to u.
double control_cost_quadrature(double u, double c, double u_max) {
  auto f = [&](double v) {
    const double w = v / u_max;
    return std::log((1.0 + w) / (1.0 - w));
  };
  boost::math::quadrature::tanh_sinh<double> integrator;
  const double lo = std::min(0.0, u);
  const double hi = std::max(0.0, u);
  const double val = integrator.integrate(f, lo, hi);
  return c * (u >= 0.0 ? val : -val);
}

}  // namespace

// ---- state cost ---------------------------------------------------------------

TEST(StateCost, ZeroAtTarget) {
  const auto c = cartpole_costs();
  PenaltySpec none;
  EXPECT_EQ(state_cost(std::array<double, 4>{0, std::numbers::pi, 0, 0}, c, none), 0.0);
}

TEST(StateCost, CartPoleAtRest) {
  const auto c = cartpole_costs();
  PenaltySpec none;
  const double v = state_cost(std::array<double, 4>{0, 0, 0, 0}, c, none);
  EXPECT_NEAR(v, 0.5 * std::numbers::pi * std::numbers::pi, 1e-12);
  EXPECT_NEAR(v, 4.9348, 1e-4);
}

TEST(StateCost, BipedIsFiveTimesSquaredDistance) {
  CostSpec c;
  c.q = 10.0 * Eigen::MatrixXd::Identity(10, 10);
  c.q_final = 10.0 * c.q;
  c.target = Eigen::VectorXd::LinSpaced(10, -1.0, 1.0);
  c.r_diag = Eigen::Vector4d(2, 0.2, 0.2, 2);
  c.u_max = Eigen::Vector4d::Constant(100);
  PenaltySpec none;
  std::array<double, 10> x;
  double d2 = 0.0;
  for (int i = 0; i < 10; ++i) {
    x[i] = 0.3 * i - 1.0;
    d2 += (x[i] - c.target(i)) * (x[i] - c.target(i));
  }
  EXPECT_NEAR(state_cost(x, c, none), 5.0 * d2, 1e-12);
  EXPECT_NEAR(terminal_cost(x, c), 50.0 * d2, 1e-12);
}

TEST(StateCost, OffDiagonalWeights) {
  CostSpec c = cartpole_costs();
  c.q(0, 1) = c.q(1, 0) = 0.2;
  c.target.setZero();
  const std::array<double, 4> x{1.0, 2.0, 0.5, -1.0};
  Eigen::Vector4d e(1.0, 2.0, 0.5, -1.0);
  EXPECT_NEAR(quadratic_form(x, c.q, c.target), 0.5 * e.dot(c.q * e), 1e-14);
}

TEST(CostSpec, ValidationRejectsBadShapes) {
  auto c = cartpole_costs();
  EXPECT_NO_THROW(c.validate(4, 1));
  EXPECT_THROW(c.validate(5, 1), ConfigError);
  c.r_diag(0) = 0.0;
  EXPECT_THROW(c.validate(4, 1), ConfigError);
}

// ---- control cost -----------------------------------------------------------------

TEST(ControlCost, ZeroAtZero) {
  EXPECT_EQ(saturating_cost(0.0, 0.1, 10.0), 0.0);
}

TEST(ControlCost, MatchesQuadratureAtFive) {
  EXPECT_NEAR(saturating_cost(5.0, 0.1, 10.0), control_cost_quadrature(5.0, 0.1, 10.0), 1e-10);
}

TEST(ControlCost, MatchesQuadratureAtRandomPoints) {
  for (std::uint64_t i = 0; i < 200; ++i) {
    const double um = 0.5 + 20.0 * unit(i, 0);
    const double c = 0.01 + 2.0 * unit(i, 1);
    const double u = um * 0.999 * (2.0 * unit(i, 2) - 1.0);
    EXPECT_NEAR(saturating_cost(u, c, um), control_cost_quadrature(u, c, um), 1e-10) << "u=" << u;
  }
}

TEST(ControlCost, SmallControlIsQuadratic) {
  const double c = 0.1;
  const double um = 10.0;
  for (double u : {1e-4, 0.01, 0.05, 0.1, -0.1}) {
    const double approx = c / um * u * u;
    EXPECT_NEAR(saturating_cost(u, c, um) / approx, 1.0, 0.01);
  }
}

TEST(ControlCost, DerivativeIsScaledInverseSigmoid) {
  const double c = 0.3;
  const double um = 4.0;
  for (double u : {-3.5, -1.0, 0.2, 2.0, 3.9}) {
    const double h = 1e-6;
    const double fd = (saturating_cost(u + h, c, um) - saturating_cost(u - h, c, um)) / (2 * h);
    EXPECT_NEAR(fd, c * sig_inverse(u / um), 1e-8);
  }
}

TEST(ControlCost, EvenAndConvex) {
  const double c = 0.5;
  const double um = 3.0;
  for (int i = 1; i < 30; ++i) {
    const double u = um * i / 30.0 * 0.999;
    EXPECT_EQ(saturating_cost(u, c, um), saturating_cost(-u, c, um));
    const double h = 1e-3;
    const double second = saturating_cost(u + h, c, um) - 2 * saturating_cost(u, c, um) +
                          saturating_cost(std::max(0.0, u - h), c, um);
    EXPECT_GT(second, 0.0);
  }
}

TEST(ControlCost, SaturationIsDomainError) {
  EXPECT_THROW(saturating_cost(10.0, 0.1, 10.0), NumericalError);
  EXPECT_THROW(saturating_cost(-12.0, 0.1, 10.0), NumericalError);
}

TEST(ControlCost, LogitFormMatchesClosedForm) {
  const double c = 0.1;
  const double um = 10.0;
  for (double s : {-20.0, -5.0, -0.3, 0.0, 1e-6, 0.7, 3.0, 12.0}) {
    const double u = um * sig(s);
    EXPECT_NEAR(saturating_cost_from_logit(s, c, um), saturating_cost(u, c, um), 1e-9) << "s=" << s;
  }
  // Finite ceiling as |s| grows.
  EXPECT_NEAR(saturating_cost_from_logit(1e4, c, um), c * um * 2.0 * std::numbers::ln2, 1e-12);
}

// ---- control law ----------------------------------------------------------------------

TEST(ControlLaw, ZeroGradientGivesZeroControl) {
  const auto spec = cartpole_costs();
  const auto r = control_from_gradient<double, 1>({0.0}, spec);
  EXPECT_EQ(r.u[0], 0.0);
  EXPECT_NEAR(r.cost, 0.0, 1e-15);
}

TEST(ControlLaw, LargePositiveGradientSaturatesLow) {
  const auto spec = cartpole_costs();
  const auto r = control_from_gradient<double, 1>({1e6}, spec);
  EXPECT_LT(r.u[0], -9.999999);
  EXPECT_GT(r.u[0], -10.0);
}

TEST(ControlLaw, StationarityAndStrictSaturation) {
  const auto spec = cartpole_costs();
  // |s| <= 15: beyond that sig^-1(u / U) cannot be recovered from u in double.
  for (std::uint64_t i = 0; i < 20000; ++i) {
    const double g = 1.5 * (2.0 * unit(i, 3) - 1.0);
    const auto r = control_from_gradient<double, 1>({g}, spec);
    ASSERT_LT(std::abs(r.u[0]), 10.0);
    EXPECT_LT(std::abs(g + 0.1 * sig_inverse(r.u[0] / 10.0)), 1e-9);
  }
}

TEST(ControlLaw, OddAndMonotone) {
  const auto spec = cartpole_costs();
  double prev = 1e9;
  for (int i = -50; i <= 50; ++i) {
    const double g = 0.1 * i;
    const double u = control_from_gradient<double, 1>({g}, spec).u[0];
    const double um = control_from_gradient<double, 1>({-g}, spec).u[0];
    EXPECT_EQ(u, -um);
    EXPECT_LE(u, prev);
    prev = u;
  }
}

TEST(ControlLaw, QuadraticMode) {
  CostSpec spec;
  spec.r_diag = Eigen::Vector2d(2.0, 0.5);
  spec.u_max = Eigen::Vector2d(1.0, 1.0);
  spec.control = ControlCostKind::Quadratic;
  const auto r = control_from_gradient<double, 2>({4.0, -1.0}, spec);
  EXPECT_DOUBLE_EQ(r.u[0], -2.0);
  EXPECT_DOUBLE_EQ(r.u[1], 2.0);
  EXPECT_DOUBLE_EQ(r.cost, 0.5 * 2.0 * 4.0 + 0.5 * 0.5 * 4.0);
}

TEST(ControlLaw, DualDerivativeMatchesFiniteDifference) {
  const auto spec = cartpole_costs();
  for (double g : {-2.0, -0.1, 0.4, 1.5}) {
    const auto d = control_from_gradient<Dual<1>, 1>({Dual<1>::variable(g, 0)}, spec);
    const double h = 1e-6;
    const auto p = control_from_gradient<double, 1>({g + h}, spec);
    const auto m = control_from_gradient<double, 1>({g - h}, spec);
    EXPECT_NEAR(d.u[0].d[0], (p.u[0] - m.u[0]) / (2 * h), 1e-6);
    EXPECT_NEAR(d.cost.d[0], (p.cost - m.cost) / (2 * h), 1e-6);
  }
}

// ---- logistic penalty -----------------------------------------------------------------

TEST(LogisticPenalty, ZeroAtMidpoint) {
  for (double k : {0.5, 1.0, 2.0, 5.0}) EXPECT_NEAR(p1(3.0, scalar_penalty(PenaltyKind::Logistic, k)), 0.0, 1e-15);
}

TEST(LogisticPenalty, LimitAtInfinity) {
  const double k = 1.0;
  const auto spec = scalar_penalty(PenaltyKind::Logistic, k);
  const double a = k * (3.0 - 5.0);
  const double limit = 5.0 * (1.0 - 2.0 / (1.0 + std::exp(-a)));
  EXPECT_NEAR(p1(1e6, spec), limit, 1e-12);
  EXPECT_NEAR(p1(-1e6, spec), limit, 1e-12);
  double prev = p1(3.0, spec);
  for (int i = 1; i < 200; ++i) {
    const double v = p1(3.0 + 0.05 * i, spec);
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(LogisticPenalty, BoundedAndSymmetric) {
  for (double k : {0.3, 1.0, 2.0, 5.0, 20.0}) {
    const auto spec = scalar_penalty(PenaltyKind::Logistic, k);
    for (int i = 0; i <= 400; ++i) {
      const double a = 0.05 * i;
      const double lo = p1(3.0 - a, spec);
      const double hi = p1(3.0 + a, spec);
      EXPECT_GE(hi, -1e-14);
      EXPECT_LT(hi, 2.0 * spec.height);
      EXPECT_LT(std::abs(lo - hi), 1e-12);
    }
  }
}

TEST(LogisticPenalty, SteeperOutsideBounds) {
  EXPECT_GT(p1(6.0, scalar_penalty(PenaltyKind::Logistic, 2.0)), p1(6.0, scalar_penalty(PenaltyKind::Logistic, 1.0)));
}

TEST(LogisticPenalty, OneSidedLimits) {
  auto spec = scalar_penalty(PenaltyKind::Logistic, 2.0);
  spec.b_min(0) = -kInf;
  EXPECT_NEAR(p1(5.0, spec), 2.5, 1e-15);
  EXPECT_LT(p1(-20.0, spec), 1e-12);
  // Agrees with the two-sided formula as b_min recedes.
  auto far = scalar_penalty(PenaltyKind::Logistic, 2.0);
  far.b_min(0) = -1e3;
  EXPECT_NEAR(p1(4.0, far), p1(4.0, spec), 1e-12);

  auto upper = scalar_penalty(PenaltyKind::Logistic, 2.0);
  upper.b_max(0) = kInf;
  EXPECT_NEAR(p1(1.0, upper), 2.5, 1e-15);
  EXPECT_LT(p1(30.0, upper), 1e-12);
}

// ---- ReLU penalty --------------------------------------------------------------------

TEST(ReluPenalty, ZeroInsideBounds) {
  const auto spec = scalar_penalty(PenaltyKind::Relu, 2.0);
  for (int i = 0; i <= 100; ++i) EXPECT_EQ(p1(1.0 + 0.04 * i, spec), 0.0);
}

TEST(ReluPenalty, LinearOutside) {
  const auto spec = scalar_penalty(PenaltyKind::Relu, 2.0);
  EXPECT_DOUBLE_EQ(p1(6.0, spec), 2.0);
  EXPECT_DOUBLE_EQ(p1(0.0, spec), 2.0);
  // Positive homogeneity in the violation distance.
  EXPECT_DOUBLE_EQ(p1(5.0 + 3.0, spec), 3.0 * p1(5.0 + 1.0, spec));
}

TEST(ReluPenalty, BipedKnee) {
  PenaltySpec spec;
  spec.kind = PenaltyKind::Relu;
  spec.c_map = Eigen::MatrixXd::Zero(1, 10);
  spec.c_map(0, 3) = 1.0;
  spec.c_map(0, 4) = -1.0;
  spec.b_min = Eigen::VectorXd::Zero(1);
  spec.b_max = Eigen::VectorXd::Constant(1, kInf);
  spec.k = 1.0;
  spec.alpha = 10.0;
  std::array<double, 10> x{};
  x[3] = -0.45;
  x[4] = -0.35;
  EXPECT_NEAR(penalty(x, spec), 1.0, 1e-12);
  x[3] = -0.25;
  EXPECT_EQ(penalty(x, spec), 0.0);
  EXPECT_FALSE(violates(x, spec));
  x[3] = -0.36;
  EXPECT_TRUE(violates(x, spec));
}

TEST(Penalty, ValidationRejectsInvertedBounds) {
  auto spec = scalar_penalty(PenaltyKind::Logistic, 1.0);
  spec.b_min(0) = 6.0;
  EXPECT_THROW(spec.validate(1), ConfigError);
}

// ---- schedule ------------------------------------------------------------------------------

TEST(Schedule, ConstantCostsTriggerUpdateAtEta) {
  ScheduleConfig cfg;
  cfg.beta = 1.0;
  cfg.eta = 500;
  cfg.eta_max = 100000;
  auto s = initial_schedule(cfg);
  for (int i = 1; i < 500; ++i) {
    auto step = schedule_update(cfg, s, 7.0, false);
    EXPECT_FALSE(step.updated);
    s = step.state;
  }
  auto step = schedule_update(cfg, s, 7.0, false);
  EXPECT_TRUE(step.updated);
  EXPECT_DOUBLE_EQ(step.state.k, 2.0);
  EXPECT_DOUBLE_EQ(step.state.delta, 0.25);
  EXPECT_DOUBLE_EQ(step.state.beta, 0.9);
  EXPECT_DOUBLE_EQ(step.state.gamma, 0.92);
}

TEST(Schedule, DeltaClampsAtZero) {
  ScheduleConfig cfg;
  cfg.delta = 0.1;
  cfg.delta_step = -0.25;
  cfg.beta = 1.0;
  cfg.eta = 1;
  auto step = schedule_update(cfg, initial_schedule(cfg), 1.0, false);
  EXPECT_TRUE(step.updated);
  EXPECT_EQ(step.state.delta, 0.0);
}

TEST(Schedule, GammaClampsAtOne) {
  ScheduleConfig cfg;
  cfg.gamma = 0.99;
  cfg.gamma_step = 0.02;
  cfg.beta = 1.0;
  cfg.eta = 1;
  auto step = schedule_update(cfg, initial_schedule(cfg), 1.0, false);
  EXPECT_EQ(step.state.gamma, 1.0);
  EXPECT_DOUBLE_EQ(step.state.beta, 0.99);
}

TEST(Schedule, ForcedUpdateAtMaxInterval) {
  ScheduleConfig cfg;
  cfg.beta = 0.0;  // never converges
  cfg.eta = 2;
  cfg.eta_max = 6;
  auto s = initial_schedule(cfg);
  std::vector<int> updated_at;
  for (int i = 1; i <= 12; ++i) {
    auto step = schedule_update(cfg, s, static_cast<double>(i % 3), false);
    if (step.updated) updated_at.push_back(i);
    s = step.state;
  }
  EXPECT_EQ(updated_at, (std::vector<int>{6, 12}));
}

TEST(Schedule, BetaFromFirstWindow) {
  ScheduleConfig cfg;
  cfg.eta = 4;
  cfg.eta_max = 1000;
  cfg.beta_scale = 2.0;
  auto s = initial_schedule(cfg);
  for (double c : {1.0, 3.0, 1.0, 3.0}) s = schedule_update(cfg, s, c, false).state;
  EXPECT_TRUE(s.beta_set);
  EXPECT_DOUBLE_EQ(s.beta, 1.8);  // 2 * std, then the update (1 < 2) applies gamma
  EXPECT_DOUBLE_EQ(s.k, 2.0);
}

TEST(Schedule, FreezesOnceSatisfied) {
  ScheduleConfig cfg;
  cfg.beta = 10.0;
  cfg.eta = 1;
  auto s = initial_schedule(cfg);
  s = schedule_update(cfg, s, 1.0, true).state;
  EXPECT_TRUE(s.frozen);
  const double k = s.k;
  for (int i = 0; i < 5; ++i) s = schedule_update(cfg, s, 1.0, false).state;
  EXPECT_EQ(s.k, k);

  cfg.on_satisfied = OnSatisfied::Refresh;
  auto r = initial_schedule(cfg);
  r = schedule_update(cfg, r, 1.0, true).state;
  EXPECT_FALSE(r.frozen);
  r = schedule_update(cfg, r, 1.0, false).state;
  EXPECT_GT(r.k, k);
}

TEST(Schedule, MonotoneUnderRandomCosts) {
  ScheduleConfig cfg;
  cfg.eta = 3;
  cfg.eta_max = 7;
  cfg.delta_step = 0.1;
  auto s = initial_schedule(cfg);
  double k = s.k;
  double beta = 1e300;
  for (std::uint64_t i = 0; i < 500; ++i) {
    s = schedule_update(cfg, s, unit(i, 9), unit(i, 10) < 0.1).state;
    EXPECT_GE(s.k, k);
    if (s.beta_set) {
      EXPECT_LE(s.beta, beta);
      beta = s.beta;
    }
    EXPECT_LE(static_cast<int>(s.window.size()), 3);
    EXPECT_GE(s.delta, 0.0);
    EXPECT_LE(s.gamma, 1.0);
    k = s.k;
  }
}
