#pragma once

// Adaptive penalty steepness. Every `eta` iterations while trajectories still
// violate the constraints, the spread of the last `eta` episode costs is
// compared with beta; k grows when the costs have settled (sqrt(var) < beta)
// or when the iteration is a multiple of `eta_max`:
//   k += delta, delta += delta_step, beta *= gamma, gamma += gamma_step
// followed by the clamps delta >= 0 and gamma <= 1.

#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <optional>
#include <string>

#include "dfbsde/errors.hpp"

namespace dfbsde::cost {

enum class OnSatisfied {
  Freeze,   // stop growing k for the rest of training
  Refresh,  // skip this iteration only; growth resumes on later violations
};

struct ScheduleConfig {
  bool enabled = true;
  double k = 1.5;
  double delta = 0.5;
  std::optional<double> beta;  // empty: set from the first window
  double beta_scale = 1.0;
  double gamma = 0.9;
  double gamma_step = 0.02;
  double delta_step = -0.25;
  std::int64_t eta = 500;
  std::int64_t eta_max = 1000;
  OnSatisfied on_satisfied = OnSatisfied::Freeze;

  void validate() const {
    if (!(k > 0.0)) throw ConfigError("penalty_schedule.k must be positive");
    if (!(delta >= 0.0)) throw ConfigError("penalty_schedule.delta must be non-negative");
    if (beta && !(*beta >= 0.0)) throw ConfigError("penalty_schedule.beta must be non-negative");
    if (!(beta_scale > 0.0)) throw ConfigError("penalty_schedule.beta_scale must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("penalty_schedule.gamma must lie in (0, 1]");
    if (!(gamma_step >= 0.0)) throw ConfigError("penalty_schedule.gamma_step must be non-negative");
    if (eta < 1) throw ConfigError("penalty_schedule.eta must be >= 1");
    if (eta_max < 1) throw ConfigError("penalty_schedule.eta_max must be >= 1");
  }
};

struct ScheduleState {
  double k = 1.5;
  double delta = 0.5;
  double beta = 0.0;
  bool beta_set = false;
  double gamma = 0.9;
  std::int64_t iteration = 0;
  std::deque<double> window;
  bool frozen = false;
  int updates = 0;
};

inline ScheduleState initial_schedule(const ScheduleConfig& cfg) {
  ScheduleState s;
  s.k = cfg.k;
  s.delta = cfg.delta;
  s.beta = cfg.beta.value_or(0.0);
  s.beta_set = cfg.beta.has_value();
  s.gamma = cfg.gamma;
  return s;
}

/// Population standard deviation.
inline double window_std(const std::deque<double>& w) {
  if (w.empty()) return 0.0;
  const double n = static_cast<double>(w.size());
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / n;
  double ss = 0.0;
  for (double c : w) ss += (c - mean) * (c - mean);
  return std::sqrt(ss / n);
}

struct ScheduleStep {
  ScheduleState state;
  bool checked = false;  // a convergence check ran this iteration
  bool updated = false;  // k changed this iteration
  double spread = 0.0;   // sqrt(variance) at the check
};

/// One training iteration's worth of scheduling. Pure: returns the next state.
inline ScheduleStep schedule_update(const ScheduleConfig& cfg, ScheduleState s, double episode_cost,
                                    bool constraints_satisfied) {
  ScheduleStep out;
  s.iteration += 1;
  s.window.push_back(episode_cost);
  while (static_cast<std::int64_t>(s.window.size()) > cfg.eta) s.window.pop_front();

  if (!cfg.enabled || s.frozen) {
    out.state = std::move(s);
    return out;
  }
  if (constraints_satisfied) {
    if (cfg.on_satisfied == OnSatisfied::Freeze) s.frozen = true;
    out.state = std::move(s);
    return out;
  }
  if (s.iteration % cfg.eta == 0) {
    out.checked = true;
    out.spread = window_std(s.window);
    if (!s.beta_set) {
      s.beta = cfg.beta_scale * out.spread;
      s.beta_set = true;
    }
    if (out.spread < s.beta || s.iteration % cfg.eta_max == 0) {
      s.k += s.delta;
      s.delta += cfg.delta_step;
      s.beta *= s.gamma;
      s.gamma += cfg.gamma_step;
      s.updates += 1;
      out.updated = true;
    }
  }
  if (s.delta < 0.0) s.delta = 0.0;
  if (s.gamma > 1.0) s.gamma = 1.0;
  out.state = std::move(s);
  return out;
}

}  // namespace dfbsde::cost
