#pragma once

// Controlled SDE models dx = (F(x) + G(x)u)dt + Sigma(x)dw and their
// Euler-Maruyama discretization.
//
// A model exposes fixed dimensions and a `terms<T>(x)` template returning F, G
// and Sigma for any scalar type T (double or Dual<N>). Matrices are stored
// row-major in std::array.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <string>
#include <vector>

#include "dfbsde/dual.hpp"
#include "dfbsde/errors.hpp"

namespace dfbsde::dyn {

template <class T, int N, int M, int Nu>
struct SdeTerms {
  std::array<T, N> drift{};
  std::array<T, N * M> control{};    // N x M
  std::array<T, N * Nu> diffusion{};  // N x Nu
};

template <class Model>
concept SdeModel = requires(const Model& model, const std::array<double, Model::kStateDim>& x) {
  { Model::kStateDim } -> std::convertible_to<int>;
  { Model::kControlDim } -> std::convertible_to<int>;
  { Model::kNoiseDim } -> std::convertible_to<int>;
  { model.template terms<double>(x) } -> std::same_as<SdeTerms<double, Model::kStateDim, Model::kControlDim, Model::kNoiseDim>>;
  { model.state_names() } -> std::convertible_to<std::vector<std::string>>;
  { model.control_names() } -> std::convertible_to<std::vector<std::string>>;
};

template <class Model, class T>
using StateOf = std::array<T, Model::kStateDim>;
template <class Model, class T>
using ControlOf = std::array<T, Model::kControlDim>;
template <class Model, class T>
using NoiseOf = std::array<T, Model::kNoiseDim>;

/// x' = x + (F(x) + G(x)u)dt + Sigma(x)dw
template <SdeModel Model, class T>
StateOf<Model, T> em_step(const Model& model, const StateOf<Model, T>& x, const ControlOf<Model, T>& u,
                          const NoiseOf<Model, double>& dw, double dt) {
  constexpr int n = Model::kStateDim;
  constexpr int m = Model::kControlDim;
  constexpr int nu = Model::kNoiseDim;
  const auto terms = model.template terms<T>(x);
  StateOf<Model, T> out = x;
  for (int i = 0; i < n; ++i) {
    T f = terms.drift[i];
    for (int j = 0; j < m; ++j) f += terms.control[i * m + j] * u[j];
    T noise(0.0);
    for (int j = 0; j < nu; ++j) noise += terms.diffusion[i * nu + j] * dw[j];
    out[i] += f * dt + noise;
  }
  return out;
}

/// em_step on doubles that throws DivergenceError when the result is non-finite.
template <SdeModel Model>
StateOf<Model, double> em_step_checked(const Model& model, const StateOf<Model, double>& x,
                                       const ControlOf<Model, double>& u, const NoiseOf<Model, double>& dw,
                                       double dt, int step) {
  if (!(dt > 0.0)) throw ConfigError("em_step: dt must be positive");
  auto out = em_step<Model, double>(model, x, u, dw, dt);
  for (double v : out) {
    if (!std::isfinite(v)) throw DivergenceError("state became non-finite during integration", step);
  }
  return out;
}

/// Noise-free classical Runge-Kutta step with u held constant. Test oracle only.
template <SdeModel Model>
StateOf<Model, double> rk4_step(const Model& model, const StateOf<Model, double>& x,
                                const ControlOf<Model, double>& u, double dt) {
  constexpr int n = Model::kStateDim;
  constexpr int m = Model::kControlDim;
  auto f = [&](const StateOf<Model, double>& s) {
    const auto t = model.template terms<double>(s);
    StateOf<Model, double> d{};
    for (int i = 0; i < n; ++i) {
      d[i] = t.drift[i];
      for (int j = 0; j < m; ++j) d[i] += t.control[i * m + j] * u[j];
    }
    return d;
  };
  auto axpy = [](const StateOf<Model, double>& a, double h, const StateOf<Model, double>& b) {
    StateOf<Model, double> r{};
    for (int i = 0; i < n; ++i) r[i] = a[i] + h * b[i];
    return r;
  };
  const auto k1 = f(x);
  const auto k2 = f(axpy(x, dt / 2, k1));
  const auto k3 = f(axpy(x, dt / 2, k2));
  const auto k4 = f(axpy(x, dt, k3));
  StateOf<Model, double> out{};
  for (int i = 0; i < n; ++i) out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return out;
}

/// Largest least-squares residual of fitting each column of G(x) by columns of
/// Sigma(x), relative to the column norm. Zero when range(G) lies in range(Sigma).
template <SdeModel Model>
double noise_range_residual(const Model& model, const StateOf<Model, double>& x) {
  constexpr int n = Model::kStateDim;
  constexpr int m = Model::kControlDim;
  constexpr int nu = Model::kNoiseDim;
  const auto t = model.template terms<double>(x);
  Eigen::MatrixXd g(n, m);
  Eigen::MatrixXd s(n, nu);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) g(i, j) = t.control[i * m + j];
    for (int j = 0; j < nu; ++j) s(i, j) = t.diffusion[i * nu + j];
  }
  double worst = 0.0;
  const auto qr = s.colPivHouseholderQr();
  for (int j = 0; j < m; ++j) {
    const Eigen::VectorXd col = g.col(j);
    const Eigen::VectorXd w = qr.solve(col);
    const double r = (s * w - col).norm() / std::max(1.0, col.norm());
    worst = std::max(worst, r);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Small dense solves over a generic scalar type.
// ---------------------------------------------------------------------------

/// Solves A X = B in place (A is N x N, B is N x K, both row-major) by Gaussian
/// elimination with partial pivoting. Throws NumericalError on a zero pivot.
template <class T, int N, int K>
void lu_solve(std::array<T, N * N>& a, std::array<T, N * K>& b) {
  for (int col = 0; col < N; ++col) {
    int piv = col;
    double best = std::abs(value_of(a[col * N + col]));
    for (int r = col + 1; r < N; ++r) {
      const double v = std::abs(value_of(a[r * N + col]));
      if (v > best) {
        best = v;
        piv = r;
      }
    }
    if (!(best > 1e-300)) throw NumericalError("singular linear system");
    if (piv != col) {
      for (int c = 0; c < N; ++c) std::swap(a[col * N + c], a[piv * N + c]);
      for (int c = 0; c < K; ++c) std::swap(b[col * K + c], b[piv * K + c]);
    }
    const T inv = 1.0 / a[col * N + col];
    for (int r = col + 1; r < N; ++r) {
      const T f = a[r * N + col] * inv;
      if (value_of(f) == 0.0) continue;
      for (int c = col; c < N; ++c) a[r * N + c] -= f * a[col * N + c];
      for (int c = 0; c < K; ++c) b[r * K + c] -= f * b[col * K + c];
    }
  }
  for (int row = N - 1; row >= 0; --row) {
    for (int c = 0; c < K; ++c) {
      T s = b[row * K + c];
      for (int j = row + 1; j < N; ++j) s -= a[row * N + j] * b[j * K + c];
      b[row * K + c] = s / a[row * N + row];
    }
  }
}

/// Solves A X = B for symmetric positive definite A via Cholesky.
template <class T, int N, int K>
void cholesky_solve(std::array<T, N * N> a, std::array<T, N * K>& b) {
  for (int j = 0; j < N; ++j) {
    T d = a[j * N + j];
    for (int k = 0; k < j; ++k) d -= a[j * N + k] * a[j * N + k];
    if (!(value_of(d) > 0.0)) throw NumericalError("matrix is not positive definite");
    using std::sqrt;
    a[j * N + j] = sqrt(d);
    for (int i = j + 1; i < N; ++i) {
      T s = a[i * N + j];
      for (int k = 0; k < j; ++k) s -= a[i * N + k] * a[j * N + k];
      a[i * N + j] = s / a[j * N + j];
    }
  }
  for (int c = 0; c < K; ++c) {
    for (int i = 0; i < N; ++i) {
      T s = b[i * K + c];
      for (int k = 0; k < i; ++k) s -= a[i * N + k] * b[k * K + c];
      b[i * K + c] = s / a[i * N + i];
    }
    for (int i = N - 1; i >= 0; --i) {
      T s = b[i * K + c];
      for (int k = i + 1; k < N; ++k) s -= a[k * N + i] * b[k * K + c];
      b[i * K + c] = s / a[i * N + i];
    }
  }
}

}  // namespace dfbsde::dyn
