#pragma once

// Cart-pole on a rail. State [x, theta, xdot, thetadot] with theta = 0 when the
// pole hangs straight down. Equations of motion:
//   (M + m) xdd - m l sin(theta) thetad^2 + m l cos(theta) thetadd = u
//   m l^2 thetadd + m l cos(theta) xdd + m g l sin(theta) = 0

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dfbsde/dynamics.hpp"

namespace dfbsde::dyn {

struct CartPoleParams {
  double cart_mass = 1.0;
  double pole_mass = 0.01;
  double pole_length = 0.5;
  double gravity = 9.81;
  double sigma = 1.0;  // diffusion = sigma * G
};

class CartPole {
 public:
  static constexpr int kStateDim = 4;
  static constexpr int kControlDim = 1;
  static constexpr int kNoiseDim = 1;

  CartPole() = default;
  explicit CartPole(CartPoleParams p) : p_(p) {
    if (!(p.cart_mass > 0.0 && p.pole_mass > 0.0 && p.pole_length > 0.0)) {
      throw ConfigError("cart-pole masses and pole length must be positive");
    }
  }

  const CartPoleParams& params() const { return p_; }

  /// (xdd, thetadd) from the 2x2 mass-matrix solve.
  template <class T>
  std::pair<T, T> accel(const std::array<T, 4>& s, const T& u) const {
    using std::cos;
    using std::sin;
    const double mc = p_.cart_mass;
    const double mp = p_.pole_mass;
    const double l = p_.pole_length;
    const T st = sin(s[1]);
    const T ct = cos(s[1]);
    // [a b; b d] [xdd; thetadd] = [r1; r2]
    const T a = T(mc + mp);
    const T b = mp * l * ct;
    const double d = mp * l * l;
    const T r1 = u + mp * l * st * s[3] * s[3];
    const T r2 = -mp * p_.gravity * l * st;
    const T det = a * d - b * b;
    if (!(value_of(det) > 0.0)) throw NumericalError("cart-pole mass matrix is singular");
    return {(r1 * d - b * r2) / det, (a * r2 - b * r1) / det};
  }

  template <class T>
  SdeTerms<T, 4, 1, 1> terms(const std::array<T, 4>& s) const {
    using std::cos;
    using std::sin;
    const double mc = p_.cart_mass;
    const double mp = p_.pole_mass;
    const double l = p_.pole_length;
    const T ct = cos(s[1]);
    const T b = mp * l * ct;
    const double d = mp * l * l;
    const T det = (mc + mp) * d - b * b;
    if (!(value_of(det) > 0.0)) throw NumericalError("cart-pole mass matrix is singular");
    auto [xdd, tdd] = accel<T>(s, T(0.0));
    SdeTerms<T, 4, 1, 1> t;
    t.drift = {s[2], s[3], xdd, tdd};
    // Response to a unit force: column 1 of the inverse mass matrix.
    const T gx = d / det;
    const T gt = -b / det;
    t.control = {T(0.0), T(0.0), gx, gt};
    t.diffusion = {T(0.0), T(0.0), p_.sigma * gx, p_.sigma * gt};
    return t;
  }

  std::vector<std::string> state_names() const { return {"x", "theta", "xdot", "thetadot"}; }
  std::vector<std::string> control_names() const { return {"force"}; }

 private:
  CartPoleParams p_;
};

}  // namespace dfbsde::dyn
