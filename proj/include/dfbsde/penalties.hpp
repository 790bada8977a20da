#pragma once

// State-constraint penalties on a linear constraint map c(x) = C x.
//
// Logistic (two-sided, per row):
//   p = L s(k(c - b_max)) - L s(k(c - b_min)) + L - 2L s(k(mu - b_max)),
//   s(z) = 1/(1 + e^-z),  mu = (b_min + b_max)/2.
// One-sided rows use the limits of that expression:
//   b_min = -inf:  p = L s(k(c - b_max))
//   b_max = +inf:  p = L s(-k(c - b_min))
// ReLU (per row): p = k alpha (relu(b_min - c) + relu(c - b_max)).

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "dfbsde/costs.hpp"
#include "dfbsde/dual.hpp"
#include "dfbsde/errors.hpp"

namespace dfbsde::cost {

enum class PenaltyKind { None, Logistic, Relu };

struct PenaltySpec {
  PenaltyKind kind = PenaltyKind::None;
  Eigen::MatrixXd c_map;  // r x n
  Eigen::VectorXd b_min;  // r, -inf allowed
  Eigen::VectorXd b_max;  // r, +inf allowed
  double height = 5.0;    // L, logistic only
  double k = 1.5;
  double alpha = 1.0;     // ReLU weight

  int rows() const { return static_cast<int>(c_map.rows()); }

  void validate(int n) const {
    if (kind == PenaltyKind::None) return;
    if (c_map.cols() != n) throw ConfigError("penalty.c_map must have " + std::to_string(n) + " columns");
    if (b_min.size() != c_map.rows() || b_max.size() != c_map.rows()) {
      throw ConfigError("penalty.b_min and penalty.b_max need one entry per c_map row");
    }
    for (Eigen::Index i = 0; i < b_min.size(); ++i) {
      if (!(b_min(i) < b_max(i))) throw ConfigError("penalty bounds need b_min < b_max in every row");
      if (std::isinf(b_min(i)) && std::isinf(b_max(i))) throw ConfigError("penalty row has no finite bound");
    }
    if (!(k > 0.0)) throw ConfigError("penalty.k must be positive");
    if (kind == PenaltyKind::Logistic && !(height > 0.0)) throw ConfigError("penalty.L must be positive");
    if (!(alpha >= 0.0)) throw ConfigError("penalty.alpha must be non-negative");
  }
};

template <class T>
T logistic_penalty_row(const T& c, double b_min, double b_max, double height, double k) {
  const bool lower = std::isfinite(b_min);
  const bool upper = std::isfinite(b_max);
  if (lower && upper) {
    const double mu = 0.5 * (b_min + b_max);
    return height * logistic(k * (c - b_max)) - height * logistic(k * (c - b_min)) + height -
           2.0 * height * logistic(k * (mu - b_max));
  }
  if (upper) return height * logistic(k * (c - b_max));
  return height * logistic(-k * (c - b_min));
}

template <class T>
T relu_penalty_row(const T& c, double b_min, double b_max, double slope) {
  T p(0.0);
  if (std::isfinite(b_min)) p += slope * relu(b_min - c);
  if (std::isfinite(b_max)) p += slope * relu(c - b_max);
  return p;
}

template <class T, std::size_t N>
T constraint_row(const std::array<T, N>& x, const PenaltySpec& spec, int row) {
  T c(0.0);
  for (std::size_t j = 0; j < N; ++j) {
    const double a = spec.c_map(row, static_cast<Eigen::Index>(j));
    if (a != 0.0) c += a * x[j];
  }
  return c;
}

/// Total penalty p(x), summed over constraint rows.
template <class T, std::size_t N>
T penalty(const std::array<T, N>& x, const PenaltySpec& spec) {
  T p(0.0);
  if (spec.kind == PenaltyKind::None) return p;
  for (int r = 0; r < spec.rows(); ++r) {
    const T c = constraint_row(x, spec, r);
    if (spec.kind == PenaltyKind::Logistic) {
      p += logistic_penalty_row(c, spec.b_min(r), spec.b_max(r), spec.height, spec.k);
    } else {
      p += relu_penalty_row(c, spec.b_min(r), spec.b_max(r), spec.k * spec.alpha);
    }
  }
  return p;
}

/// True when any constraint row lies outside [b_min, b_max]. Independent of
/// the penalty kind, so it also reports violations for unpenalized runs.
template <std::size_t N>
bool violates(const std::array<double, N>& x, const PenaltySpec& spec) {
  for (int r = 0; r < spec.rows(); ++r) {
    const double c = constraint_row(x, spec, r);
    if (c < spec.b_min(r) || c > spec.b_max(r)) return true;
  }
  return false;
}

/// Running state cost 1/2 (x - target)^T Q (x - target) + p(x).
template <class T, std::size_t N>
T state_cost(const std::array<T, N>& x, const CostSpec& cost, const PenaltySpec& pen) {
  return quadratic_form(x, cost.q, cost.target) + penalty(x, pen);
}

}  // namespace dfbsde::cost
