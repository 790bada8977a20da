#pragma once

// Training loop, evaluation metrics and the counter-keyed samplers both use.
//
// Noise for training iteration i, batch row b, step k, channel j is
//   sqrt(dt) * normal(seed, kTrainNoise, i, b, k * nu + j)
// and the initial state of row b is nominal + half_width * (2 U - 1) with
//   U = uniform(seed, kInitialState, i, b, dim).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfbsde/fbsde.hpp"
#include "dfbsde/optimizer.hpp"
#include "dfbsde/rng.hpp"
#include "dfbsde/schedule.hpp"

namespace dfbsde::trainer {

using ad::Matrix;
using ad::ParamStore;
using fbsde::Problem;
using fbsde::ValueNet;

struct InitialStateSpec {
  Eigen::VectorXd nominal;
  Eigen::VectorXd half_width;  // zero: every row starts at the nominal state

  bool fixed() const { return half_width.size() == 0 || (half_width.array() == 0.0).all(); }

  void validate(int n) const {
    if (nominal.size() != n) throw ConfigError("initial_state.nominal must have " + std::to_string(n) + " entries");
    if (half_width.size() != 0 && half_width.size() != n) {
      throw ConfigError("initial_state.half_width must have " + std::to_string(n) + " entries");
    }
    if (!nominal.allFinite()) throw ConfigError("initial_state.nominal must be finite");
    if (half_width.size() != 0 && !(half_width.array() >= 0.0).all()) {
      throw ConfigError("initial_state.half_width entries must be non-negative");
    }
  }
};

struct TrainConfig {
  int iterations = 4000;
  int batch = 128;
  std::uint64_t seed = 0;
  nn::AdamConfig adam;
  double clip_norm = 10.0;
  double lambda = 1.0;
  fbsde::Reduction reduction = fbsde::Reduction::Sum;
  bool detach_dynamics = false;
  bool v0_auto = true;              // warm-start y0 from one rollout of the untrained net
  std::optional<double> fixed_k;    // instability reproduction: constant k, no schedule
  double max_drop_fraction = 0.5;
  int checkpoint_every = 0;
  int eval_trials = 256;

  void validate() const {
    if (iterations < 0) throw ConfigError("train.N_I must be >= 0");
    if (batch < 1) throw ConfigError("train.M must be >= 1");
    if (!(adam.learning_rate > 0.0)) throw ConfigError("train.lr must be positive");
    if (!(clip_norm >= 0.0)) throw ConfigError("train.clip_norm must be non-negative");
    if (!(lambda >= 0.0)) throw ConfigError("train.lambda must be non-negative");
    if (fixed_k && !(*fixed_k > 0.0)) throw ConfigError("train.fixed_k must be positive");
    if (!(max_drop_fraction >= 0.0 && max_drop_fraction <= 1.0)) {
      throw ConfigError("train.max_drop_fraction must lie in [0, 1]");
    }
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
    if (eval_trials < 1) throw ConfigError("train.eval_trials must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

inline Matrix sample_initial_states(const InitialStateSpec& spec, int rows, std::uint64_t seed, std::uint64_t stream,
                                    std::uint64_t index) {
  const auto n = spec.nominal.size();
  Matrix x(rows, n);
  for (int r = 0; r < rows; ++r) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double v = spec.nominal(i);
      if (!spec.fixed() && spec.half_width(i) > 0.0) {
        const double u = rng::uniform(seed, stream, index, static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(i));
        v += spec.half_width(i) * (2.0 * u - 1.0);
      }
      x(r, i) = v;
    }
  }
  return x;
}

inline std::vector<Matrix> sample_noise(int rows, int steps, int nu, double dt, std::uint64_t seed,
                                        std::uint64_t stream, std::uint64_t index, double scale = 1.0) {
  std::vector<Matrix> w;
  w.reserve(static_cast<std::size_t>(steps));
  const double sd = std::sqrt(dt) * scale;
  for (int k = 0; k < steps; ++k) {
    Matrix m(rows, nu);
    for (int r = 0; r < rows; ++r) {
      for (int j = 0; j < nu; ++j) {
        m(r, j) = scale == 0.0 ? 0.0
                               : sd * rng::normal(seed, stream, index, static_cast<std::uint64_t>(r),
                                                  static_cast<std::uint64_t>(k) * static_cast<std::uint64_t>(nu) +
                                                      static_cast<std::uint64_t>(j));
      }
    }
    w.push_back(std::move(m));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Violation bookkeeping
// ---------------------------------------------------------------------------

/// Distance of constraint row `c` outside [b_min, b_max] at state row `r` (0 inside).
inline double excursion(const cost::PenaltySpec& pen, const Matrix& x, Eigen::Index r, int c) {
  double v = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) v += pen.c_map(c, j) * x(r, j);
  if (v < pen.b_min(c)) return pen.b_min(c) - v;
  if (v > pen.b_max(c)) return v - pen.b_max(c);
  return 0.0;
}

/// Rows whose trajectory leaves the constraint set at any of x_0..x_N.
inline std::vector<bool> violating_rows(const cost::PenaltySpec& pen, const fbsde::RolloutBatch& b) {
  std::vector<bool> out(static_cast<std::size_t>(b.rows), false);
  for (const auto& x : b.x) {
    for (int r = 0; r < b.rows; ++r) {
      if (out[static_cast<std::size_t>(r)]) continue;
      for (int c = 0; c < pen.rows(); ++c) {
        if (excursion(pen, x, r, c) > 0.0) {
          out[static_cast<std::size_t>(r)] = true;
          break;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct IterationRecord {
  int iteration = 0;
  double loss = 0.0;
  double mean_episode_cost = 0.0;
  double k = 0.0;  // steepness used for this iteration's costs
  int violations = 0;
  int dropped = 0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
  cost::ScheduleStep schedule;
};

/// Deterministic log line. Wall time is reported separately.
inline nlohmann::json to_json(const IterationRecord& r) {
  nlohmann::json j;
  j["iteration"] = r.iteration;
  j["loss"] = r.loss;
  j["mean_episode_cost"] = r.mean_episode_cost;
  j["k"] = r.k;
  j["violations"] = r.violations;
  j["dropped"] = r.dropped;
  j["grad_norm"] = r.grad_norm;
  j["schedule"] = {{"checked", r.schedule.checked},
                   {"updated", r.schedule.updated},
                   {"spread", r.schedule.spread},
                   {"k_next", r.schedule.state.k},
                   {"delta", r.schedule.state.delta},
                   {"beta", r.schedule.state.beta},
                   {"gamma", r.schedule.state.gamma},
                   {"frozen", r.schedule.state.frozen}};
  return j;
}

struct TrainResult {
  std::vector<IterationRecord> log;
  cost::ScheduleState schedule;
  bool aborted = false;
  std::string abort_reason;
  int abort_iteration = -1;
  int divergence_events = 0;  // iterations with at least one dropped row
  double v0_initial = 0.0;
};

struct TrainHooks {
  std::function<void(const IterationRecord&)> on_iteration;
  std::function<void(int iteration, const ParamStore&, const cost::ScheduleState&)> on_checkpoint;
};

inline double mean_live(const fbsde::RolloutBatch& b, const Eigen::VectorXd& v) {
  double s = 0.0;
  int n = 0;
  for (int r = 0; r < b.rows; ++r) {
    if (b.alive(r)) {
      s += v(r);
      ++n;
    }
  }
  return n > 0 ? s / n : std::numeric_limits<double>::quiet_NaN();
}

/// Sets the initial value head to the mean cost-to-go of one rollout.
template <dyn::SdeModel Model>
double warm_start_value(ParamStore& store, const ValueNet& net, const Problem<Model>& prob,
                        const InitialStateSpec& init, const TrainConfig& cfg) {
  const Matrix x0 = sample_initial_states(init, cfg.batch, cfg.seed, rng::kInitialState, 0);
  const auto noise =
      sample_noise(cfg.batch, prob.steps, Model::kNoiseDim, prob.dt, cfg.seed, rng::kTrainNoise, 0);
  const auto b = fbsde::simulate(store, net, prob, x0, noise);
  const double v = mean_live(b, fbsde::episode_costs(b));
  if (!std::isfinite(v)) return 0.0;
  if (net.init == fbsde::InitMode::Fixed) {
    store.value(net.v0_scalar)(0, 0) = v;
  } else {
    store.value(net.v0_mlp.layers.back().bias)(0, 0) = v;
  }
  return v;
}

/// Algorithm 1. `prob.penalty.k` is overwritten by the schedule (or fixed_k).
template <dyn::SdeModel Model>
TrainResult train(ParamStore& store, const ValueNet& net, Problem<Model>& prob, const InitialStateSpec& init,
                  const TrainConfig& cfg, const cost::ScheduleConfig& sched_cfg, const TrainHooks& hooks = {}) {
  prob.validate();
  init.validate(Model::kStateDim);
  cfg.validate();
  sched_cfg.validate();

  TrainResult res;
  cost::ScheduleConfig sched = sched_cfg;
  if (cfg.fixed_k) {
    sched.enabled = false;
    sched.k = *cfg.fixed_k;
  }
  res.schedule = cost::initial_schedule(sched);
  prob.penalty.k = res.schedule.k;
  if (cfg.iterations == 0) return res;

  if (cfg.v0_auto) res.v0_initial = warm_start_value(store, net, prob, init, cfg);
  nn::OptimizerState opt(store, cfg.adam);
  fbsde::RolloutOptions ropt;
  ropt.detach_dynamics = cfg.detach_dynamics;
  const bool hybrid = net.init == fbsde::InitMode::Network && cfg.lambda > 0.0;

  for (int it = 0; it < cfg.iterations; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto key = static_cast<std::uint64_t>(it);
    const Matrix x0 = sample_initial_states(init, cfg.batch, cfg.seed, rng::kInitialState, key);
    const auto noise = sample_noise(cfg.batch, prob.steps, Model::kNoiseDim, prob.dt, cfg.seed, rng::kTrainNoise, key);

    IterationRecord rec;
    rec.iteration = it;
    rec.k = prob.penalty.k;
    ad::Tape tape;
    const auto tr = fbsde::rollout(tape, store, net, prob, x0, noise, ropt);
    ad::Var loss = hybrid ? fbsde::hybrid_loss(tape, store, net, tr, cfg.lambda, cfg.reduction)
                          : fbsde::fbsde_loss(tape, tr, cfg.reduction);
    rec.loss = tape.scalar(loss);
    rec.dropped = cfg.batch - tr.batch.alive_count();
    if (rec.dropped > 0) ++res.divergence_events;

    auto abort = [&](const std::string& why) {
      res.aborted = true;
      res.abort_reason = why;
      res.abort_iteration = it;
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      res.log.push_back(rec);
      if (hooks.on_iteration) hooks.on_iteration(rec);
    };
    if (rec.dropped > cfg.max_drop_fraction * cfg.batch) {
      abort("more than " + std::to_string(cfg.max_drop_fraction * 100.0) + "% of rollouts diverged");
      return res;
    }
    if (!std::isfinite(rec.loss)) {
      abort("loss is not finite");
      return res;
    }

    auto grads = tape.backward(loss, store);
    rec.grad_norm = nn::clip_global_norm(grads, cfg.clip_norm);
    if (!std::isfinite(rec.grad_norm)) {
      abort("gradient is not finite");
      return res;
    }
    nn::optimizer_step(store, grads, opt);

    rec.mean_episode_cost = mean_live(tr.batch, fbsde::episode_costs(tr.batch));
    const auto viol = violating_rows(prob.penalty, tr.batch);
    rec.violations = static_cast<int>(std::count(viol.begin(), viol.end(), true));
    rec.schedule = cost::schedule_update(sched, res.schedule, rec.mean_episode_cost, rec.violations == 0);
    res.schedule = rec.schedule.state;
    prob.penalty.k = res.schedule.k;

    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(rec);
    if (hooks.on_iteration) hooks.on_iteration(rec);
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && hooks.on_checkpoint) {
      hooks.on_checkpoint(it + 1, store, res.schedule);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct ConstraintStats {
  double trial_rate = 0.0;      // fraction of trials with any excursion
  double step_fraction = 0.0;   // fraction of (trial, time point) pairs outside
  double max_excursion = 0.0;   // largest distance outside the bounds
  double mean_max_excursion = 0.0;
};

struct Metrics {
  int trials = 0;
  double mean_cost = 0.0;  // realized sum (q + p + r) dt + q_N
  double std_cost = 0.0;
  double terminal_error = 0.0;  // mean |x_N - target|
  double violation_rate = 0.0;
  double violation_step_fraction = 0.0;
  std::vector<ConstraintStats> constraints;
  int diverged = 0;
  double latency_median_ms = 0.0;
  double latency_mean_ms = 0.0;
  int latency_samples = 0;
};

inline nlohmann::json to_json(const Metrics& m) {
  nlohmann::json j;
  j["trials"] = m.trials;
  j["mean_cost"] = m.mean_cost;
  j["std_cost"] = m.std_cost;
  j["terminal_error"] = m.terminal_error;
  j["violation_rate"] = m.violation_rate;
  j["violation_step_fraction"] = m.violation_step_fraction;
  j["diverged"] = m.diverged;
  j["constraints"] = nlohmann::json::array();
  for (const auto& c : m.constraints) {
    j["constraints"].push_back({{"trial_rate", c.trial_rate},
                                {"step_fraction", c.step_fraction},
                                {"max_excursion", c.max_excursion},
                                {"mean_max_excursion", c.mean_max_excursion}});
  }
  j["latency_ms"] = {{"median", m.latency_median_ms}, {"mean", m.latency_mean_ms}, {"samples", m.latency_samples}};
  return j;
}

struct EvalOptions {
  int trials = 256;
  std::uint64_t seed = 0;
  double noise_scale = 1.0;  // 0 for noise-free evaluation
  int latency_calls = 0;
};

struct Evaluation {
  Metrics metrics;
  fbsde::RolloutBatch batch;
  std::vector<bool> violating;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

/// Wall time of `calls` single-step controller invocations (network + control law).
template <dyn::SdeModel Model>
std::vector<double> measure_latency(const ParamStore& store, const ValueNet& net, const Problem<Model>& prob,
                                    const fbsde::RolloutBatch& b, int calls) {
  std::vector<double> ms;
  ms.reserve(static_cast<std::size_t>(calls));
  fbsde::Controller<Model> ctl(store, net, prob);
  dyn::StateOf<Model, double> x{};
  for (int c = 0; c < calls; ++c) {
    const int k = c % prob.steps;
    const int r = (c / prob.steps) % b.rows;
    for (int i = 0; i < Model::kStateDim; ++i) x[i] = b.x[static_cast<std::size_t>(k)](r, i);
    if (k == 0) ctl.reset(x);
    const auto t0 = std::chrono::steady_clock::now();
    const auto u = ctl.control(x);
    const auto t1 = std::chrono::steady_clock::now();
    if (!std::isfinite(u[0])) throw NumericalError("controller produced a non-finite control");
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return ms;
}

template <dyn::SdeModel Model>
Evaluation evaluate(const ParamStore& store, const ValueNet& net, const Problem<Model>& prob,
                    const InitialStateSpec& init, const EvalOptions& opt) {
  if (opt.trials < 1) throw ConfigError("eval: trials must be >= 1");
  Evaluation ev;
  const Matrix x0 = sample_initial_states(init, opt.trials, opt.seed, rng::kEvalInitialState, 0);
  const auto noise = sample_noise(opt.trials, prob.steps, Model::kNoiseDim, prob.dt, opt.seed, rng::kEvalNoise, 0,
                                  opt.noise_scale);
  ev.batch = fbsde::simulate(store, net, prob, x0, noise);
  const auto& b = ev.batch;
  Metrics& m = ev.metrics;
  m.trials = opt.trials;

  Eigen::VectorXd costs = b.terminal_cost;
  for (int k = 0; k < b.steps; ++k) costs += b.run_cost[static_cast<std::size_t>(k)].col(0) * b.dt;
  std::vector<double> live;
  double terr = 0.0;
  for (int r = 0; r < b.rows; ++r) {
    if (!b.alive(r)) {
      ++m.diverged;
      continue;
    }
    live.push_back(costs(r));
    terr += (b.terminal_state.row(r).transpose() - prob.cost.target).norm();
  }
  if (!live.empty()) {
    const double n = static_cast<double>(live.size());
    m.mean_cost = std::accumulate(live.begin(), live.end(), 0.0) / n;
    double ss = 0.0;
    for (double c : live) ss += (c - m.mean_cost) * (c - m.mean_cost);
    m.std_cost = std::sqrt(ss / n);
    m.terminal_error = terr / n;
  }

  const auto& pen = prob.penalty;
  ev.violating = violating_rows(pen, b);
  for (int r = 0; r < b.rows; ++r) {
    if (!b.alive(r)) ev.violating[static_cast<std::size_t>(r)] = true;  // divergent trials count as violations
  }
  m.violation_rate = static_cast<double>(std::count(ev.violating.begin(), ev.violating.end(), true)) / b.rows;
  const double points = static_cast<double>(b.rows) * static_cast<double>(b.x.size());
  long any_outside = 0;
  m.constraints.resize(static_cast<std::size_t>(pen.rows()));
  std::vector<std::vector<double>> row_max(static_cast<std::size_t>(pen.rows()),
                                           std::vector<double>(static_cast<std::size_t>(b.rows), 0.0));
  for (const auto& x : b.x) {
    for (int r = 0; r < b.rows; ++r) {
      bool outside = false;
      for (int c = 0; c < pen.rows(); ++c) {
        const double e = excursion(pen, x, r, c);
        if (e > 0.0) {
          outside = true;
          m.constraints[static_cast<std::size_t>(c)].step_fraction += 1.0;
          auto& mx = row_max[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)];
          mx = std::max(mx, e);
        }
      }
      if (outside) ++any_outside;
    }
  }
  m.violation_step_fraction = static_cast<double>(any_outside) / points;
  for (int c = 0; c < pen.rows(); ++c) {
    auto& cs = m.constraints[static_cast<std::size_t>(c)];
    cs.step_fraction /= points;
    const auto& mx = row_max[static_cast<std::size_t>(c)];
    cs.trial_rate = static_cast<double>(std::count_if(mx.begin(), mx.end(), [](double e) { return e > 0.0; })) / b.rows;
    cs.max_excursion = *std::max_element(mx.begin(), mx.end());
    cs.mean_max_excursion = std::accumulate(mx.begin(), mx.end(), 0.0) / b.rows;
  }

  if (opt.latency_calls > 0) {
    const auto ms = measure_latency(store, net, prob, b, opt.latency_calls);
    m.latency_samples = static_cast<int>(ms.size());
    m.latency_median_ms = median(ms);
    m.latency_mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
  }
  return ev;
}

}  // namespace dfbsde::trainer
