#pragma once

// Forward-mode dual numbers with a fixed number of tangent directions.
//
// Physics, costs and the control law are written once as templates over the
// scalar type. Instantiated with `double` they give plain values; instantiated
// with `Dual<N>` they give the value plus the full N-column Jacobian in one pass.
// Values are computed with exactly the same double operations as the `double`
// instantiation, so both paths agree bit-for-bit on the primal.

#include <array>
#include <cmath>

namespace dfbsde {

template <int N>
struct Dual {
  double v = 0.0;
  std::array<double, N> d{};

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT(google-explicit-constructor)

  static Dual variable(double value, int index) {
    Dual r(value);
    r.d[index] = 1.0;
    return r;
  }

  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (int i = 0; i < N; ++i) d[i] += o.d[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (int i = 0; i < N; ++i) d[i] -= o.d[i];
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    for (int i = 0; i < N; ++i) d[i] = d[i] * o.v + v * o.d[i];
    v *= o.v;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.v;
    const double q = v / o.v;
    for (int i = 0; i < N; ++i) d[i] = (d[i] - q * o.d[i]) * inv;
    v = q;
    return *this;
  }
};

/// Applies the chain rule for a unary function with value `fv` and slope `df`.
template <int N>
inline Dual<N> chain(const Dual<N>& a, double fv, double df) {
  Dual<N> r(fv);
  for (int i = 0; i < N; ++i) r.d[i] = df * a.d[i];
  return r;
}

template <int N>
inline Dual<N> operator-(const Dual<N>& a) {
  Dual<N> r(-a.v);
  for (int i = 0; i < N; ++i) r.d[i] = -a.d[i];
  return r;
}

template <int N>
inline Dual<N> operator+(Dual<N> a, const Dual<N>& b) { return a += b; }
template <int N>
inline Dual<N> operator-(Dual<N> a, const Dual<N>& b) { return a -= b; }
template <int N>
inline Dual<N> operator*(Dual<N> a, const Dual<N>& b) { return a *= b; }
template <int N>
inline Dual<N> operator/(Dual<N> a, const Dual<N>& b) { return a /= b; }

template <int N>
inline Dual<N> operator+(Dual<N> a, double b) { a.v += b; return a; }
template <int N>
inline Dual<N> operator+(double a, Dual<N> b) { b.v = a + b.v; return b; }
template <int N>
inline Dual<N> operator-(Dual<N> a, double b) { a.v -= b; return a; }
template <int N>
inline Dual<N> operator-(double a, const Dual<N>& b) {
  Dual<N> r(a - b.v);
  for (int i = 0; i < N; ++i) r.d[i] = -b.d[i];
  return r;
}
template <int N>
inline Dual<N> operator*(Dual<N> a, double b) {
  a.v *= b;
  for (int i = 0; i < N; ++i) a.d[i] *= b;
  return a;
}
template <int N>
inline Dual<N> operator*(double a, Dual<N> b) {
  b.v = a * b.v;
  for (int i = 0; i < N; ++i) b.d[i] = a * b.d[i];
  return b;
}
template <int N>
inline Dual<N> operator/(Dual<N> a, double b) {
  a.v /= b;
  for (int i = 0; i < N; ++i) a.d[i] /= b;
  return a;
}
template <int N>
inline Dual<N> operator/(double a, const Dual<N>& b) {
  const double q = a / b.v;
  return chain(b, q, -q / b.v);
}

template <int N>
inline bool operator<(const Dual<N>& a, const Dual<N>& b) { return a.v < b.v; }
template <int N>
inline bool operator>(const Dual<N>& a, const Dual<N>& b) { return a.v > b.v; }

template <int N>
inline Dual<N> sin(const Dual<N>& a) { return chain(a, std::sin(a.v), std::cos(a.v)); }
template <int N>
inline Dual<N> cos(const Dual<N>& a) { return chain(a, std::cos(a.v), -std::sin(a.v)); }
template <int N>
inline Dual<N> exp(const Dual<N>& a) {
  const double e = std::exp(a.v);
  return chain(a, e, e);
}
template <int N>
inline Dual<N> log(const Dual<N>& a) { return chain(a, std::log(a.v), 1.0 / a.v); }
template <int N>
inline Dual<N> log1p(const Dual<N>& a) { return chain(a, std::log1p(a.v), 1.0 / (1.0 + a.v)); }
template <int N>
inline Dual<N> sqrt(const Dual<N>& a) {
  const double s = std::sqrt(a.v);
  return chain(a, s, 0.5 / s);
}
template <int N>
inline Dual<N> tanh(const Dual<N>& a) {
  const double t = std::tanh(a.v);
  return chain(a, t, 1.0 - t * t);
}
template <int N>
inline Dual<N> abs(const Dual<N>& a) { return a.v < 0.0 ? -a : a; }

/// Primal value of a scalar, for branching in templated code.
inline double value_of(double x) { return x; }
template <int N>
inline double value_of(const Dual<N>& x) { return x.v; }

// Numerically stable scalar helpers shared by every scalar type.

/// Logistic function 1 / (1 + e^-z), stable for |z| large.
inline double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}
template <int N>
inline Dual<N> logistic(const Dual<N>& z) {
  const double s = logistic(z.v);
  return chain(z, s, s * (1.0 - s));
}

/// log(1 + e^z) without overflow.
inline double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}
template <int N>
inline Dual<N> softplus(const Dual<N>& z) {
  return chain(z, softplus(z.v), logistic(z.v));
}

/// max(z, 0); subgradient 0 at the kink.
inline double relu(double z) { return z > 0.0 ? z : 0.0; }
template <int N>
inline Dual<N> relu(const Dual<N>& z) {
  return z.v > 0.0 ? z : Dual<N>(0.0);
}

}  // namespace dfbsde
