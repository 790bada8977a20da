#pragma once

// Planar five-link biped in single support.
//
// Links: 1 stance tibia, 2 stance femur, 3 torso, 4 swing femur, 5 swing tibia.
// Each q_i is the absolute link angle from the vertical, counterclockwise
// positive, with unit direction u(q) = (-sin q, cos q). Geometry, with the stance
// foot at the origin:
//   stance knee P1 = l1 u1,  hip P2 = P1 + l2 u2,  torso CoM = P2 + d3 u3
//   swing knee P4 = P2 - l4 u4,  swing foot P5 = P4 - l5 u5
//   CoMs: tibia d1 u1 from the stance foot, femur P1 + d2 u2,
//         swing femur P4 + d4 u4, swing tibia P5 + d5 u5.
// Every CoM is sum_j a_ij u(q_j), so with A_jk = sum_i m_i a_ij a_ik:
//   M_jk = A_jk cos(q_j - q_k) + delta_jk I_j
//   C_jk = A_jk sin(q_j - q_k) qd_k
//   G_j  = -g sin(q_j) sum_i m_i a_ij
// Control enters as u = [0, ut] (no stance-ankle torque).

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "dfbsde/dynamics.hpp"

namespace dfbsde::dyn {

struct BipedParams {
  std::array<double, 5> mass{3.2, 6.8, 20.0, 6.8, 3.2};
  std::array<double, 5> inertia{0.93, 1.08, 2.22, 1.08, 0.93};
  std::array<double, 5> length{0.4, 0.4, 0.625, 0.4, 0.4};
  std::array<double, 5> com{0.128, 0.163, 0.2, 0.163, 0.128};
  double gravity = 9.81;
  double sigma = 0.5;  // diffusion = sigma * G
};

template <class T>
using Vec5 = std::array<T, 5>;
template <class T>
using Mat5 = std::array<T, 25>;

class Biped {
 public:
  static constexpr int kStateDim = 10;
  static constexpr int kControlDim = 4;
  static constexpr int kNoiseDim = 4;
  static constexpr double kMaxCondition = 1e12;

  Biped() : Biped(BipedParams{}) {}
  explicit Biped(BipedParams p) : p_(p) {
    for (int i = 0; i < 5; ++i) {
      if (!(p.mass[i] > 0.0 && p.inertia[i] >= 0.0 && p.length[i] > 0.0)) {
        throw ConfigError("biped masses and lengths must be positive, inertias non-negative");
      }
    }
    const auto& l = p.length;
    const auto& d = p.com;
    coef_ = {};
    coef_[0 * 5 + 0] = d[0];
    coef_[1 * 5 + 0] = l[0];
    coef_[1 * 5 + 1] = d[1];
    coef_[2 * 5 + 0] = l[0];
    coef_[2 * 5 + 1] = l[1];
    coef_[2 * 5 + 2] = d[2];
    coef_[3 * 5 + 0] = l[0];
    coef_[3 * 5 + 1] = l[1];
    coef_[3 * 5 + 3] = d[3] - l[3];
    coef_[4 * 5 + 0] = l[0];
    coef_[4 * 5 + 1] = l[1];
    coef_[4 * 5 + 3] = -l[3];
    coef_[4 * 5 + 4] = d[4] - l[4];
    for (int j = 0; j < 5; ++j) {
      mass_moment_[j] = 0.0;
      for (int i = 0; i < 5; ++i) mass_moment_[j] += p.mass[i] * coef_[i * 5 + j];
      for (int k = 0; k < 5; ++k) {
        double s = 0.0;
        for (int i = 0; i < 5; ++i) s += p.mass[i] * coef_[i * 5 + j] * coef_[i * 5 + k];
        a_[j * 5 + k] = s;
      }
    }
    total_mass_ = 0.0;
    for (double m : p.mass) total_mass_ += m;
    foot_ = {l[0], l[1], 0.0, -l[3], -l[4]};
  }

  const BipedParams& params() const { return p_; }
  /// CoM_i = sum_j coef(i, j) u(q_j)
  double coef(int i, int j) const { return coef_[i * 5 + j]; }
  double total_mass() const { return total_mass_; }

  template <class T>
  Mat5<T> mass_matrix(const Vec5<T>& q) const {
    using std::cos;
    Mat5<T> m;
    for (int j = 0; j < 5; ++j) {
      m[j * 5 + j] = T(a_[j * 5 + j] + p_.inertia[j]);
      for (int k = j + 1; k < 5; ++k) {
        m[j * 5 + k] = a_[j * 5 + k] * cos(q[j] - q[k]);
        m[k * 5 + j] = m[j * 5 + k];
      }
    }
    return m;
  }

  template <class T>
  Mat5<T> coriolis(const Vec5<T>& q, const Vec5<T>& qd) const {
    using std::sin;
    Mat5<T> c;
    for (int j = 0; j < 5; ++j) {
      for (int k = 0; k < 5; ++k) c[j * 5 + k] = j == k ? T(0.0) : a_[j * 5 + k] * sin(q[j] - q[k]) * qd[k];
    }
    return c;
  }

  template <class T>
  Vec5<T> gravity(const Vec5<T>& q) const {
    using std::sin;
    Vec5<T> g;
    for (int j = 0; j < 5; ++j) g[j] = -p_.gravity * mass_moment_[j] * sin(q[j]);
    return g;
  }

  /// Throws NumericalError if cond(M(q)) exceeds kMaxCondition.
  void check_condition(const Vec5<double>& q) const {
    const auto m = mass_matrix<double>(q);
    Eigen::Matrix<double, 5, 5> mm;
    for (int i = 0; i < 25; ++i) mm(i / 5, i % 5) = m[i];
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 5, 5>> es(mm, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > kMaxCondition) throw NumericalError("biped inertia matrix is ill-conditioned");
  }

  /// qdd = M^-1 (u - C qd - G) with u the full 5-vector of generalized torques.
  Vec5<double> accel(const Vec5<double>& q, const Vec5<double>& qd, const Vec5<double>& u) const {
    check_condition(q);
    const auto m = mass_matrix<double>(q);
    const auto c = coriolis<double>(q, qd);
    const auto g = gravity<double>(q);
    std::array<double, 5> rhs{};
    for (int j = 0; j < 5; ++j) {
      rhs[j] = u[j] - g[j];
      for (int k = 0; k < 5; ++k) rhs[j] -= c[j * 5 + k] * qd[k];
    }
    cholesky_solve<double, 5, 1>(m, rhs);
    return rhs;
  }

  template <class T>
  SdeTerms<T, 10, 4, 4> terms(const std::array<T, 10>& x) const {
    Vec5<T> q;
    Vec5<T> qd;
    for (int i = 0; i < 5; ++i) {
      q[i] = x[i];
      qd[i] = x[5 + i];
    }
    const auto m = mass_matrix<T>(q);
    const auto c = coriolis<T>(q, qd);
    const auto g = gravity<T>(q);
    // Right-hand sides: column 0 is -C qd - G, columns 1..4 are T = [0 | I].
    std::array<T, 25> rhs;
    for (int j = 0; j < 5; ++j) {
      T r = -g[j];
      for (int k = 0; k < 5; ++k) r -= c[j * 5 + k] * qd[k];
      rhs[j * 5 + 0] = r;
      for (int a = 0; a < 4; ++a) rhs[j * 5 + 1 + a] = T(j == a + 1 ? 1.0 : 0.0);
    }
    cholesky_solve<T, 5, 5>(m, rhs);
    SdeTerms<T, 10, 4, 4> t;
    for (int i = 0; i < 5; ++i) {
      t.drift[i] = qd[i];
      t.drift[5 + i] = rhs[i * 5 + 0];
      for (int a = 0; a < 4; ++a) {
        t.control[i * 4 + a] = T(0.0);
        t.control[(5 + i) * 4 + a] = rhs[i * 5 + 1 + a];
        t.diffusion[i * 4 + a] = T(0.0);
        t.diffusion[(5 + i) * 4 + a] = p_.sigma * rhs[i * 5 + 1 + a];
      }
    }
    return t;
  }

  /// Heel strike: the swing foot lands and becomes the new stance foot, the old
  /// stance foot lifts off. Angles are reversed (q+ = reverse(q-)); velocities
  /// follow from a perfectly inelastic impulse at the landing foot.
  template <class T>
  std::array<T, 10> heel_strike(const std::array<T, 10>& x) const {
    using std::cos;
    using std::sin;
    Vec5<T> q;
    for (int i = 0; i < 5; ++i) q[i] = x[i];
    // Extended coordinates [q; p0] with p0 the old stance foot position.
    constexpr int ne = 7;
    constexpr int nk = 9;
    std::array<T, ne * ne> me{};
    const auto m = mass_matrix<T>(q);
    for (int j = 0; j < 5; ++j) {
      for (int k = 0; k < 5; ++k) me[j * ne + k] = m[j * 5 + k];
      // d(CoM)/dq_j = a_ij u'(q_j) with u'(q) = (-cos q, -sin q)
      const T bx = -mass_moment_[j] * cos(q[j]);
      const T by = -mass_moment_[j] * sin(q[j]);
      me[j * ne + 5] = bx;
      me[j * ne + 6] = by;
      me[5 * ne + j] = bx;
      me[6 * ne + j] = by;
    }
    me[5 * ne + 5] = T(total_mass_);
    me[6 * ne + 6] = T(total_mass_);

    // Swing-foot Jacobian (2 x 7).
    std::array<T, 2 * ne> jf{};
    for (int j = 0; j < 5; ++j) {
      jf[0 * ne + j] = -foot_[j] * cos(q[j]);
      jf[1 * ne + j] = -foot_[j] * sin(q[j]);
    }
    jf[0 * ne + 5] = T(1.0);
    jf[1 * ne + 6] = T(1.0);

    // [Me  -J^T] [qd+]   [Me qd-]
    // [J    0  ] [F  ] = [0     ]
    std::array<T, nk * nk> kkt{};
    std::array<T, nk> rhs{};
    for (int r = 0; r < ne; ++r) {
      for (int c = 0; c < ne; ++c) kkt[r * nk + c] = me[r * ne + c];
      for (int c = 0; c < 2; ++c) kkt[r * nk + ne + c] = -jf[c * ne + r];
    }
    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < ne; ++c) kkt[(ne + r) * nk + c] = jf[r * ne + c];
    }
    for (int r = 0; r < ne; ++r) {
      T s(0.0);
      for (int c = 0; c < 5; ++c) s += me[r * ne + c] * x[5 + c];
      rhs[r] = s;
    }
    lu_solve<T, nk, 1>(kkt, rhs);

    std::array<T, 10> out;
    for (int i = 0; i < 5; ++i) {
      out[i] = q[4 - i];
      out[5 + i] = rhs[4 - i];
    }
    return out;
  }

  std::vector<std::string> state_names() const {
    return {"q1", "q2", "q3", "q4", "q5", "dq1", "dq2", "dq3", "dq4", "dq5"};
  }
  std::vector<std::string> control_names() const { return {"u1", "u2", "u3", "u4"}; }

 private:
  BipedParams p_;
  std::array<double, 25> coef_{};
  std::array<double, 25> a_{};
  std::array<double, 5> mass_moment_{};
  std::array<double, 5> foot_{};
  double total_mass_ = 0.0;
};

/// The reversal applied to angles at heel strike.
template <class T>
Vec5<T> reverse_angles(const Vec5<T>& q) {
  return {q[4], q[3], q[2], q[1], q[0]};
}

}  // namespace dfbsde::dyn
