#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <array>
#include <bit>
#include <cmath>
#include <numbers>

#include "dfbsde/biped.hpp"
#include "dfbsde/cartpole.hpp"
#include "dfbsde/lq_toy.hpp"
#include "dfbsde/rng.hpp"
#include "support/biped_oracle.hpp"

using namespace dfbsde;
using namespace dfbsde::dyn;
using namespace dfbsde::testing;

namespace {

double unit(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) { return rng::uniform(4242, rng::kTest, a, b, c); }
double sym(std::uint64_t a, std::uint64_t b, double half, std::uint64_t c = 0) {
  return half * (2.0 * unit(a, b, c) - 1.0);
}

// Scalar drift F = 1, no control, no noise.
struct ConstantDrift {
  static constexpr int kStateDim = 1;
  static constexpr int kControlDim = 1;
  static constexpr int kNoiseDim = 1;
  template <class T>
  SdeTerms<T, 1, 1, 1> terms(const std::array<T, 1>&) const {
    SdeTerms<T, 1, 1, 1> t;
    t.drift = {T(1.0)};
    t.control = {T(0.0)};
    t.diffusion = {T(0.0)};
    return t;
  }
  std::vector<std::string> state_names() const { return {"x"}; }
  std::vector<std::string> control_names() const { return {"u"}; }
};

// Nonlinear drift with identity diffusion.
struct IdentityNoise {
  static constexpr int kStateDim = 2;
  static constexpr int kControlDim = 2;
  static constexpr int kNoiseDim = 2;
  template <class T>
  SdeTerms<T, 2, 2, 2> terms(const std::array<T, 2>& x) const {
    using std::sin;
    SdeTerms<T, 2, 2, 2> t;
    t.drift = {sin(x[1]), x[0] * x[1]};
    t.control = {T(1.0), T(0.0), T(0.0), T(1.0)};
    t.diffusion = {T(1.0), T(0.0), T(0.0), T(1.0)};
    return t;
  }
  std::vector<std::string> state_names() const { return {"a", "b"}; }
  std::vector<std::string> control_names() const { return {"ua", "ub"}; }
};

// Non-finite drift for the divergence path.
struct Exploding {
  static constexpr int kStateDim = 1;
  static constexpr int kControlDim = 1;
  static constexpr int kNoiseDim = 1;
  template <class T>
  SdeTerms<T, 1, 1, 1> terms(const std::array<T, 1>& x) const {
    SdeTerms<T, 1, 1, 1> t;
    t.drift = {x[0] * 1e308};
    t.control = {T(0.0)};
    t.diffusion = {T(0.0)};
    return t;
  }
  std::vector<std::string> state_names() const { return {"x"}; }
  std::vector<std::string> control_names() const { return {"u"}; }
};

double biped_energy(const BipedParams& p, const std::array<double, 10>& x) {
  const auto k = biped_kinematics(p, x);
  double e = 0.0;
  for (int i = 0; i < 5; ++i) {
    e += 0.5 * p.mass[i] * (k.vel[i][0] * k.vel[i][0] + k.vel[i][1] * k.vel[i][1]);
    e += 0.5 * p.inertia[i] * x[5 + i] * x[5 + i];
    e += p.mass[i] * p.gravity * k.pos[i][1];
  }
  return e;
}

const std::array<double, 10> kBipedTarget{0.10, 0.50, -0.10, -0.35, -0.40, -1.50, -0.50, 0.00, -0.55, -2.00};

std::array<double, 10> random_biped_state(std::uint64_t i) {
  std::array<double, 10> x;
  for (int j = 0; j < 10; ++j) x[j] = kBipedTarget[j] + sym(i, static_cast<std::uint64_t>(j), j < 5 ? 0.3 : 1.0, 7);
  return x;
}

}  // namespace

// ---- integrator -------------------------------------------------------------

TEST(EulerMaruyama, NoDriftNoNoiseIsIdentity) {
  LqToy model;
  std::array<double, 2> x{0.3, 0.0};
  auto out = em_step<LqToy, double>(model, x, {0.0}, {0.0}, 0.01);
  EXPECT_EQ(out, x);
}

TEST(EulerMaruyama, PureDrift) {
  ConstantDrift model;
  auto out = em_step<ConstantDrift, double>(model, {0.0}, {0.0}, {0.0}, 0.01);
  EXPECT_DOUBLE_EQ(out[0], 0.01);
}

TEST(EulerMaruyama, AdditiveNoiseIsExact) {
  IdentityNoise model;
  const std::array<double, 2> x{0.4, -0.2};
  const std::array<double, 2> u{0.5, 1.0};
  const double dt = 0.02;
  auto zero = em_step<IdentityNoise, double>(model, x, u, {0.0, 0.0}, dt);
  auto noisy = em_step<IdentityNoise, double>(model, x, u, {0.1, 0.1}, dt);
  EXPECT_NEAR(noisy[0] - zero[0], 0.1, 1e-15);
  EXPECT_NEAR(noisy[1] - zero[1], 0.1, 1e-15);
}

TEST(EulerMaruyama, LinearInNoise) {
  CartPole model;
  const std::array<double, 4> x{0.1, 2.0, -0.3, 0.7};
  const std::array<double, 1> u{1.5};
  auto base = em_step<CartPole, double>(model, x, u, {0.0}, 0.01);
  auto one = em_step<CartPole, double>(model, x, u, {0.2}, 0.01);
  auto two = em_step<CartPole, double>(model, x, u, {0.4}, 0.01);
  auto neg = em_step<CartPole, double>(model, x, u, {-0.2}, 0.01);
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(two[i] - base[i], 2.0 * (one[i] - base[i]), 1e-14);
    EXPECT_NEAR(neg[i] - base[i], -(one[i] - base[i]), 1e-14);
  }
}

TEST(EulerMaruyama, NonFiniteResultCarriesStep) {
  Exploding model;
  try {
    em_step_checked(model, {10.0}, {0.0}, {0.0}, 1.0, 17);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.step(), 17);
  }
}

TEST(EulerMaruyama, RejectsNonPositiveStep) {
  LqToy model;
  EXPECT_THROW(em_step_checked(model, {0.0, 0.0}, {0.0}, {0.0}, 0.0, 0), ConfigError);
}

// ---- cart-pole --------------------------------------------------------------

TEST(CartPole, DownwardEquilibrium) {
  CartPole cp;
  auto [xdd, tdd] = cp.accel<double>({0, 0, 0, 0}, 0.0);
  EXPECT_EQ(xdd, 0.0);
  EXPECT_EQ(tdd, 0.0);
}

TEST(CartPole, UnitForceAtRest) {
  CartPole cp;
  auto [xdd, tdd] = cp.accel<double>({0, 0, 0, 0}, 1.0);
  EXPECT_NEAR(xdd, 1.0, 1e-12);
  EXPECT_NEAR(tdd, -2.0, 1e-12);
}

TEST(CartPole, UprightEquilibriumIsUnstable) {
  CartPole cp;
  const std::array<double, 4> up{0, std::numbers::pi, 0, 0};
  auto [xdd, tdd] = cp.accel<double>(up, 0.0);
  EXPECT_NEAR(xdd, 0.0, 1e-12);
  EXPECT_NEAR(tdd, 0.0, 1e-12);
  Eigen::Matrix4d a;
  const double h = 1e-6;
  for (int j = 0; j < 4; ++j) {
    auto xp = up;
    auto xm = up;
    xp[j] += h;
    xm[j] -= h;
    const auto fp = cp.terms<double>(xp).drift;
    const auto fm = cp.terms<double>(xm).drift;
    for (int i = 0; i < 4; ++i) a(i, j) = (fp[i] - fm[i]) / (2 * h);
  }
  const auto ev = a.eigenvalues();
  double max_re = -1e9;
  for (int i = 0; i < 4; ++i) max_re = std::max(max_re, ev(i).real());
  EXPECT_GT(max_re, 0.1);
}

TEST(CartPole, ResidualOfEquationsOfMotion) {
  CartPoleParams p;
  CartPole cp(p);
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const std::array<double, 4> s{sym(i, 0, 2.0), sym(i, 1, 4.0), sym(i, 2, 3.0), sym(i, 3, 10.0)};
    const double u = sym(i, 4, 10.0);
    auto [xdd, tdd] = cp.accel<double>(s, u);
    const double st = std::sin(s[1]);
    const double ct = std::cos(s[1]);
    const double m = p.pole_mass;
    const double l = p.pole_length;
    const double e1 = (p.cart_mass + m) * xdd - m * l * st * s[3] * s[3] + m * l * ct * tdd - u;
    const double e2 = m * l * l * tdd + m * l * ct * xdd + m * p.gravity * l * st;
    EXPECT_LT(std::abs(e1), 1e-12);
    EXPECT_LT(std::abs(e2), 1e-12);
  }
}

TEST(CartPole, ControlColumnMatchesUnitForceResponse) {
  CartPole cp;
  const std::array<double, 4> s{0.2, 1.1, 0.3, -0.4};
  auto [x0, t0] = cp.accel<double>(s, 0.0);
  auto [x1, t1] = cp.accel<double>(s, 1.0);
  const auto t = cp.terms<double>(s);
  EXPECT_NEAR(t.control[2], x1 - x0, 1e-12);
  EXPECT_NEAR(t.control[3], t1 - t0, 1e-12);
  EXPECT_DOUBLE_EQ(t.diffusion[2], cp.params().sigma * t.control[2]);
}

TEST(CartPole, RejectsNonPositiveParameters) {
  CartPoleParams p;
  p.pole_length = 0.0;
  EXPECT_THROW(CartPole{p}, ConfigError);
}

// ---- noise range --------------------------------------------------------------

TEST(NoiseRange, ControlLiesInDiffusionRange) {
  CartPole cp;
  Biped bp;
  LqToy lq;
  for (std::uint64_t i = 0; i < 50; ++i) {
    EXPECT_LT(noise_range_residual(cp, std::array<double, 4>{sym(i, 0, 1), sym(i, 1, 3), sym(i, 2, 2), sym(i, 3, 5)}),
              1e-9);
    EXPECT_LT(noise_range_residual(bp, random_biped_state(i)), 1e-9);
    EXPECT_LT(noise_range_residual(lq, std::array<double, 2>{sym(i, 0, 1), sym(i, 1, 1)}), 1e-9);
  }
}

// ---- biped --------------------------------------------------------------------

TEST(Biped, MassMatrixSymmetricPositiveDefinite) {
  Biped bp;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    std::array<double, 5> q;
    for (int j = 0; j < 5; ++j) q[j] = sym(i, static_cast<std::uint64_t>(j), std::numbers::pi, 1);
    const auto m = bp.mass_matrix<double>(q);
    Eigen::Matrix<double, 5, 5> mm;
    for (int k = 0; k < 25; ++k) mm(k / 5, k % 5) = m[k];
    ASSERT_LT((mm - mm.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    Eigen::LLT<Eigen::Matrix<double, 5, 5>> llt(mm);
    ASSERT_EQ(llt.info(), Eigen::Success) << "configuration " << i;
  }
}

TEST(Biped, MassMatrixMatchesKineticEnergy) {
  BipedParams p;
  Biped bp(p);
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto x = random_biped_state(i);
    std::array<double, 5> q;
    for (int j = 0; j < 5; ++j) q[j] = x[j];
    const auto m = bp.mass_matrix<double>(q);
    double quad = 0.0;
    for (int j = 0; j < 5; ++j) {
      for (int k = 0; k < 5; ++k) quad += 0.5 * x[5 + j] * m[j * 5 + k] * x[5 + k];
    }
    const auto kin = biped_kinematics(p, x);
    double ke = 0.0;
    for (int j = 0; j < 5; ++j) {
      ke += 0.5 * p.mass[j] * (kin.vel[j][0] * kin.vel[j][0] + kin.vel[j][1] * kin.vel[j][1]);
      ke += 0.5 * p.inertia[j] * x[5 + j] * x[5 + j];
    }
    EXPECT_NEAR(quad, ke, 1e-12 * std::max(1.0, ke));
  }
}

TEST(Biped, GravityCompensationHolds) {
  Biped bp;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto x = random_biped_state(i);
    std::array<double, 5> q;
    for (int j = 0; j < 5; ++j) q[j] = x[j];
    const auto g = bp.gravity<double>(q);
    const auto qdd = bp.accel(q, {0, 0, 0, 0, 0}, g);
    for (double v : qdd) EXPECT_NEAR(v, 0.0, 1e-12);
  }
}

TEST(Biped, UnactuatedEnergyIsConserved) {
  BipedParams p;
  Biped bp(p);
  std::array<double, 10> x = kBipedTarget;
  const double e0 = biped_energy(p, x);
  const double dt = 1e-3;
  for (int k = 0; k < 500; ++k) x = rk4_step(bp, x, {0, 0, 0, 0}, dt);
  const double e1 = biped_energy(p, x);
  EXPECT_LT(std::abs(e1 - e0) / std::abs(e0), 1e-3);
}

TEST(Biped, MdotMinusTwoCIsSkewSymmetric) {
  Biped bp;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto x = random_biped_state(i);
    std::array<double, 5> q;
    std::array<double, 5> qd;
    std::array<double, 5> v;
    for (int j = 0; j < 5; ++j) {
      q[j] = x[j];
      qd[j] = x[5 + j];
      v[j] = sym(i, static_cast<std::uint64_t>(j), 1.0, 9);
    }
    const double h = 1e-6;
    std::array<double, 5> qp;
    std::array<double, 5> qm;
    for (int j = 0; j < 5; ++j) {
      qp[j] = q[j] + h * qd[j];
      qm[j] = q[j] - h * qd[j];
    }
    const auto mp = bp.mass_matrix<double>(qp);
    const auto mm = bp.mass_matrix<double>(qm);
    const auto c = bp.coriolis<double>(q, qd);
    double s = 0.0;
    for (int j = 0; j < 5; ++j) {
      for (int k = 0; k < 5; ++k) s += v[j] * ((mp[j * 5 + k] - mm[j * 5 + k]) / (2 * h) - 2.0 * c[j * 5 + k]) * v[k];
    }
    EXPECT_LT(std::abs(s), 1e-9);
  }
}

TEST(Biped, IllConditionedMassMatrixThrows) {
  BipedParams p;
  p.inertia = {0, 0, 0, 0, 0};
  p.mass = {1e-20, 1e-20, 1.0, 1e-20, 1e-20};
  Biped bp(p);
  EXPECT_THROW(bp.accel({0, 0, 0, 0, 0}, {0, 0, 0, 0, 0}, {0, 0, 0, 0, 0}), NumericalError);
}

TEST(Biped, StanceAnkleIsUnactuated) {
  Biped bp;
  const auto t = bp.terms<double>(kBipedTarget);
  // Control column a drives generalized torque a+1 only: M * (G rows 5..9) = T.
  std::array<double, 5> q;
  for (int j = 0; j < 5; ++j) q[j] = kBipedTarget[j];
  const auto m = bp.mass_matrix<double>(q);
  for (int a = 0; a < 4; ++a) {
    for (int j = 0; j < 5; ++j) {
      double s = 0.0;
      for (int k = 0; k < 5; ++k) s += m[j * 5 + k] * t.control[(5 + k) * 4 + a];
      EXPECT_NEAR(s, j == a + 1 ? 1.0 : 0.0, 1e-12);
    }
  }
}

TEST(Biped, DualJacobianMatchesFiniteDifferences) {
  Biped bp;
  const auto x = random_biped_state(3);
  std::array<Dual<10>, 10> xd;
  for (int i = 0; i < 10; ++i) xd[i] = Dual<10>::variable(x[i], i);
  const auto td = bp.terms<Dual<10>>(xd);
  const auto t0 = bp.terms<double>(x);
  const double h = 1e-6;
  for (int j = 0; j < 10; ++j) {
    auto xp = x;
    auto xm = x;
    xp[j] += h;
    xm[j] -= h;
    const auto fp = bp.terms<double>(xp);
    const auto fm = bp.terms<double>(xm);
    for (int i = 0; i < 10; ++i) {
      EXPECT_NEAR(td.drift[i].d[j], (fp.drift[i] - fm.drift[i]) / (2 * h), 1e-5);
      EXPECT_EQ(td.drift[i].v, t0.drift[i]);
    }
    for (int i = 0; i < 40; ++i) EXPECT_NEAR(td.control[i].d[j], (fp.control[i] - fm.control[i]) / (2 * h), 1e-6);
  }
}

// ---- heel strike ------------------------------------------------------------------

TEST(HeelStrike, AnglesAreReversed) {
  Biped bp;
  const auto x = kBipedTarget;
  const auto xp = bp.heel_strike(x);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(xp[i], x[4 - i]);
}

TEST(HeelStrike, AngleMapIsAnInvolution) {
  const std::array<double, 5> q{0.1, 0.2, 0.3, 0.4, 0.5};
  EXPECT_EQ(reverse_angles(reverse_angles(q)), q);
}

TEST(HeelStrike, ConservesAngularMomentumAboutImpactPoint) {
  BipedParams p;
  Biped bp(p);
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto x = random_biped_state(i);
    std::array<double, 5> q;
    for (int j = 0; j < 5; ++j) q[j] = x[j];
    const auto contact = biped_swing_foot(p, q);
    const double before = biped_momentum(p, x, contact);
    const auto xp = bp.heel_strike(x);
    // After the swap the new stance foot is the origin of the new frame.
    const double after = biped_momentum(p, xp, {0.0, 0.0});
    EXPECT_NEAR(after, before, 1e-9 * std::max(1.0, std::abs(before))) << "state " << i;
  }
}

// No impulsive joint torques: the angular momentum of every sub-chain above a
// joint, about that joint, is conserved through the impact.
TEST(HeelStrike, ConservesSubchainMomentaAboutJoints) {
  BipedParams p;
  Biped bp(p);
  auto subchain = [&](const Kinematics& k, const std::array<double, 10>& s, const std::vector<int>& links,
                      std::array<double, 2> o) {
    double h = 0.0;
    for (int i : links) {
      const double rx = k.pos[i][0] - o[0];
      const double ry = k.pos[i][1] - o[1];
      h += p.mass[i] * (rx * k.vel[i][1] - ry * k.vel[i][0]) + p.inertia[i] * s[5 + i];
    }
    return h;
  };
  for (std::uint64_t n = 0; n < 20; ++n) {
    const auto x = random_biped_state(n);
    const auto xp = bp.heel_strike(x);
    std::array<double, 5> q;
    for (int j = 0; j < 5; ++j) q[j] = x[j];
    const auto contact = biped_swing_foot(p, q);
    const auto pre = biped_kinematics(p, x);
    const auto post = biped_kinematics(p, xp);
    // Joints in the post-impact frame: new stance knee, hip, new swing knee.
    const double l0 = p.length[0];
    const double l1 = p.length[1];
    const std::array<double, 2> knee{-l0 * std::sin(xp[0]), l0 * std::cos(xp[0])};
    const std::array<double, 2> hip{knee[0] - l1 * std::sin(xp[1]), knee[1] + l1 * std::cos(xp[1])};
    const std::array<double, 2> swing_knee{hip[0] + p.length[3] * std::sin(xp[3]),
                                           hip[1] - p.length[3] * std::cos(xp[3])};
    struct Case {
      std::vector<int> links;  // post-impact indices
      std::array<double, 2> joint;
    };
    const std::vector<Case> cases{{{1, 2, 3, 4}, knee}, {{2, 3, 4}, hip}, {{2}, hip}, {{3, 4}, hip}, {{4}, swing_knee}};
    for (const auto& c : cases) {
      std::vector<int> old_links;
      for (int i : c.links) old_links.push_back(4 - i);
      const std::array<double, 2> old_joint{c.joint[0] + contact[0], c.joint[1] + contact[1]};
      const double before = subchain(pre, x, old_links, old_joint);
      const double after = subchain(post, xp, c.links, c.joint);
      EXPECT_NEAR(after, before, 1e-9 * std::max(1.0, std::abs(before)));
    }
  }
}

TEST(HeelStrike, IsDeterministic) {
  Biped bp;
  const auto x = random_biped_state(5);
  const auto a = bp.heel_strike(x);
  const auto b = bp.heel_strike(x);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(std::bit_cast<std::uint64_t>(a[i]), std::bit_cast<std::uint64_t>(b[i]));
}

TEST(HeelStrike, DualJacobianMatchesFiniteDifferences) {
  Biped bp;
  const auto x = random_biped_state(8);
  std::array<Dual<10>, 10> xd;
  for (int i = 0; i < 10; ++i) xd[i] = Dual<10>::variable(x[i], i);
  const auto yd = bp.heel_strike(xd);
  const auto y0 = bp.heel_strike(x);
  const double h = 1e-6;
  for (int j = 0; j < 10; ++j) {
    auto xp = x;
    auto xm = x;
    xp[j] += h;
    xm[j] -= h;
    const auto fp = bp.heel_strike(xp);
    const auto fm = bp.heel_strike(xm);
    for (int i = 0; i < 10; ++i) {
      EXPECT_NEAR(yd[i].d[j], (fp[i] - fm[i]) / (2 * h), 1e-5);
      EXPECT_EQ(yd[i].v, y0[i]);
    }
  }
}
