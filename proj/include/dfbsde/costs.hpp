#pragma once

// Quadratic state costs and the control law / control cost pair.
//
// Saturating mode. sig(v) = 2/(1 + e^-v) - 1 = tanh(v/2) and
//   r(u) = sum_i c_i int_0^{u_i} sig^-1(v / U_i) dv
//        = sum_i c_i U_i [(1 + w) log(1 + w) + (1 - w) log(1 - w)],  w = u_i / U_i.
// Minimizing r(u) + V_x^T G u gives u_i = U_i sig(s_i) with s = -R^-1 G^T V_x.
// Along the control law the cost is evaluated from the logit s directly:
//   r_i = c_i U_i [2 log 2 - 2 sigma(s) softplus(-s) - 2 sigma(-s) softplus(s)]
// which stays finite and accurate when |u| approaches U.
//
// Quadratic mode. r(u) = 1/2 u^T R u and u = -R^-1 G^T V_x.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "dfbsde/dual.hpp"
#include "dfbsde/errors.hpp"

namespace dfbsde::cost {

enum class ControlCostKind { Saturating, Quadratic };

struct CostSpec {
  Eigen::MatrixXd q;         // n x n running state weight
  Eigen::MatrixXd q_final;   // n x n terminal weight
  Eigen::VectorXd target;    // n
  Eigen::VectorXd r_diag;    // m, c_i > 0
  Eigen::VectorXd u_max;     // m, saturation levels (saturating mode)
  ControlCostKind control = ControlCostKind::Saturating;

  void validate(int n, int m) const {
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError(what);
    };
    need(q.rows() == n && q.cols() == n, "cost.Q must be " + std::to_string(n) + "x" + std::to_string(n));
    need(q_final.rows() == n && q_final.cols() == n,
         "cost.Q_N must be " + std::to_string(n) + "x" + std::to_string(n));
    need(target.size() == n, "cost.target must have " + std::to_string(n) + " entries");
    need(r_diag.size() == m, "cost.R must have " + std::to_string(m) + " entries");
    need(u_max.size() == m, "cost.U_max must have " + std::to_string(m) + " entries");
    need((r_diag.array() > 0.0).all(), "cost.R entries must be positive");
    need((u_max.array() > 0.0).all(), "cost.U_max entries must be positive");
    for (const Eigen::MatrixXd* mat : {&q, &q_final}) {
      need((*mat - mat->transpose()).cwiseAbs().maxCoeff() <= 1e-12, "cost.Q and cost.Q_N must be symmetric");
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(*mat, Eigen::EigenvaluesOnly);
      need(es.eigenvalues().minCoeff() >= -1e-12, "cost.Q and cost.Q_N must be positive semidefinite");
    }
  }
};

/// 1/2 (x - target)^T W (x - target)
template <class T, std::size_t N>
T quadratic_form(const std::array<T, N>& x, const Eigen::MatrixXd& w, const Eigen::VectorXd& target) {
  std::array<T, N> e;
  for (std::size_t i = 0; i < N; ++i) e[i] = x[i] - target(static_cast<Eigen::Index>(i));
  T s(0.0);
  for (std::size_t i = 0; i < N; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    if (w(ii, ii) != 0.0) s += 0.5 * w(ii, ii) * e[i] * e[i];
    for (std::size_t j = i + 1; j < N; ++j) {
      const double wij = w(ii, static_cast<Eigen::Index>(j));
      if (wij != 0.0) s += wij * e[i] * e[j];
    }
  }
  return s;
}

template <class T, std::size_t N>
T terminal_cost(const std::array<T, N>& x, const CostSpec& spec) {
  return quadratic_form(x, spec.q_final, spec.target);
}

inline double sig(double v) { return std::tanh(0.5 * v); }

/// sig^-1(w) = log((1 + w) / (1 - w)) for |w| < 1.
inline double sig_inverse(double w) {
  if (!(std::abs(w) < 1.0)) throw NumericalError("sig^-1 argument must lie in (-1, 1)");
  return std::log1p(w) - std::log1p(-w);
}

/// Closed-form saturating control cost of one channel. |u| < u_max required.
inline double saturating_cost(double u, double c, double u_max) {
  const double w = u / u_max;
  if (!(std::abs(w) < 1.0)) {
    throw NumericalError("control cost undefined at or beyond saturation (|u| >= U_max)");
  }
  if (w == 0.0) return 0.0;
  return c * u_max * ((1.0 + w) * std::log1p(w) + (1.0 - w) * std::log1p(-w));
}

/// r(u) for a full control vector in the configured mode.
inline double control_cost(const Eigen::VectorXd& u, const CostSpec& spec) {
  if (u.size() != spec.r_diag.size()) throw ConfigError("control_cost: dimension mismatch");
  double r = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    r += spec.control == ControlCostKind::Saturating ? saturating_cost(u(i), spec.r_diag(i), spec.u_max(i))
                                                     : 0.5 * spec.r_diag(i) * u(i) * u(i);
  }
  return r;
}

/// Saturating cost as a function of the logit s (u = U sig(s)).
template <class T>
T saturating_cost_from_logit(const T& s, double c, double u_max) {
  const T sp = softplus(s);
  const T sn = softplus(-s);
  const T ps = logistic(s);
  const T ns = logistic(-s);
  return c * u_max * (2.0 * std::numbers::ln2 - 2.0 * ps * sn - 2.0 * ns * sp);
}

/// Largest representable magnitude strictly below u_max.
inline double strict_bound(double u_max) { return std::nextafter(u_max, 0.0); }

template <class T, std::size_t M>
struct ControlResult {
  std::array<T, M> u;
  T cost;
};

/// Optimal control and its cost from g = G(x)^T V_x.
template <class T, std::size_t M>
ControlResult<T, M> control_from_gradient(const std::array<T, M>& g, const CostSpec& spec) {
  ControlResult<T, M> out;
  out.cost = T(0.0);
  for (std::size_t i = 0; i < M; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double c = spec.r_diag(ii);
    if (spec.control == ControlCostKind::Quadratic) {
      out.u[i] = -g[i] / c;
      out.cost += 0.5 * c * out.u[i] * out.u[i];
      continue;
    }
    const double um = spec.u_max(ii);
    const T s = -g[i] / c;
    using std::tanh;
    T u = um * tanh(0.5 * s);
    // tanh rounds to +-1 for |s| > ~38; keep the control strictly inside.
    const double lim = strict_bound(um);
    if (value_of(u) >= lim) u = T(lim);
    if (value_of(u) <= -lim) u = T(-lim);
    out.u[i] = u;
    out.cost += saturating_cost_from_logit(s, c, um);
  }
  return out;
}

}  // namespace dfbsde::cost
