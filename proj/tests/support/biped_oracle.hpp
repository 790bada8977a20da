#pragma once

// Independent biped kinematics for tests: CoM positions and velocities built
// link by link, and angular momentum about a point.

#include <array>

#include "dfbsde/biped.hpp"
#include "dfbsde/dual.hpp"

namespace dfbsde::testing {

using dyn::BipedParams;

// Independent forward kinematics of the biped: CoM positions with the stance
// foot at the origin, built link by link.
template <class T>
std::array<std::array<T, 2>, 5> biped_coms(const BipedParams& p, const std::array<T, 5>& q) {
  using std::cos;
  using std::sin;
  auto dir = [&](int i) { return std::array<T, 2>{-sin(q[i]), cos(q[i])}; };
  auto add = [](std::array<T, 2> a, const std::array<T, 2>& b, double s) {
    a[0] += s * b[0];
    a[1] += s * b[1];
    return a;
  };
  const std::array<T, 2> foot{T(0.0), T(0.0)};
  const auto knee = add(foot, dir(0), p.length[0]);
  const auto hip = add(knee, dir(1), p.length[1]);
  const auto swing_knee = add(hip, dir(3), -p.length[3]);
  const auto swing_foot = add(swing_knee, dir(4), -p.length[4]);
  return {add(foot, dir(0), p.com[0]), add(knee, dir(1), p.com[1]), add(hip, dir(2), p.com[2]),
          add(swing_knee, dir(3), p.com[3]), add(swing_foot, dir(4), p.com[4])};
}

template <class T>
std::array<T, 2> biped_swing_foot(const BipedParams& p, const std::array<T, 5>& q) {
  using std::cos;
  using std::sin;
  T x(0.0);
  T y(0.0);
  const double s[5] = {p.length[0], p.length[1], 0.0, -p.length[3], -p.length[4]};
  for (int i = 0; i < 5; ++i) {
    x += s[i] * -sin(q[i]);
    y += s[i] * cos(q[i]);
  }
  return {x, y};
}

struct Kinematics {
  std::array<std::array<double, 2>, 5> pos;
  std::array<std::array<double, 2>, 5> vel;
};

// Positions and velocities via a one-direction dual seeded with qd.
Kinematics biped_kinematics(const BipedParams& p, const std::array<double, 10>& x) {
  std::array<Dual<1>, 5> q;
  for (int i = 0; i < 5; ++i) {
    q[i] = Dual<1>(x[i]);
    q[i].d[0] = x[5 + i];
  }
  const auto c = biped_coms(p, q);
  Kinematics k;
  for (int i = 0; i < 5; ++i) {
    for (int a = 0; a < 2; ++a) {
      k.pos[i][a] = c[i][a].v;
      k.vel[i][a] = c[i][a].d[0];
    }
  }
  return k;
}

// Angular momentum about `origin`, with link angular rates qd.
double biped_momentum(const BipedParams& p, const std::array<double, 10>& x, std::array<double, 2> origin) {
  const auto k = biped_kinematics(p, x);
  double h = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double rx = k.pos[i][0] - origin[0];
    const double ry = k.pos[i][1] - origin[1];
    h += p.mass[i] * (rx * k.vel[i][1] - ry * k.vel[i][0]) + p.inertia[i] * x[5 + i];
  }
  return h;
}

}  // namespace dfbsde::testing
