#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dfbsde/autodiff.hpp"

namespace dfbsde::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam moment estimates; one array per parameter, shaped like it.
struct OptimizerState {
  AdamConfig config;
  std::vector<ad::Matrix> first_moment;
  std::vector<ad::Matrix> second_moment;
  std::int64_t step_count = 0;

  explicit OptimizerState(const ad::ParamStore& store, AdamConfig cfg = {}) : config(cfg) {
    first_moment = ad::zero_gradients(store);
    second_moment = ad::zero_gradients(store);
  }
};

inline double global_norm(const ad::Gradients& grads) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_global_norm(ad::Gradients& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) g *= s;
  }
  return norm;
}

/// Bias-corrected adaptive moment update.
inline void optimizer_step(ad::ParamStore& store, const ad::Gradients& grads, OptimizerState& state) {
  if (grads.size() != static_cast<std::size_t>(store.size()) ||
      state.first_moment.size() != grads.size()) {
    throw ConfigError("optimizer_step: parameter/gradient count mismatch");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto& p = store.value(static_cast<int>(i));
    if (grads[i].rows() != p.rows() || grads[i].cols() != p.cols() ||
        state.first_moment[i].rows() != p.rows() || state.first_moment[i].cols() != p.cols()) {
      throw ConfigError("optimizer_step: shape mismatch for " + store.name(static_cast<int>(i)));
    }
  }
  const AdamConfig& c = state.config;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * grads[i];
    v = c.beta2 * v + (1.0 - c.beta2) * grads[i].cwiseProduct(grads[i]);
    auto& p = store.value(static_cast<int>(i));
    p.array() -= c.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon);
  }
}

}  // namespace dfbsde::nn
