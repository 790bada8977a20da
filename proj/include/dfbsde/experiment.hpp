#pragma once

// Run orchestration shared by the command-line tool and the acceptance run.
//
// Output directory layout:
//   config.resolved.json   the fully resolved configuration of this run
//   train_log.jsonl        one deterministic record per iteration
//   train_timing.jsonl     {"iteration", "wall_ms"} per iteration
//   train_summary.json     abort status, final schedule state
//   model.json / .bin      final checkpoint (metadata carries k)
//   checkpoints/iter_<i>.json / .bin
//   ensemble/              ensemble.json manifest, member_<id>.json/.bin,
//                          member_<id>_log.jsonl
//   eval/metrics.json, eval/trajectories.csv
//   walk/walk.csv, walk/walk.json

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include <json.hpp>

#include "dfbsde/checkpoint.hpp"
#include "dfbsde/config.hpp"
#include "dfbsde/ensemble.hpp"
#include "dfbsde/fbsde.hpp"
#include "dfbsde/io.hpp"
#include "dfbsde/trainer.hpp"

namespace dfbsde::experiment {

namespace fs = std::filesystem;
using config::Environment;
using config::ExperimentConfig;
using nlohmann::json;

template <dyn::SdeModel Model>
fbsde::Problem<Model> make_problem(const ExperimentConfig& c, Model model) {
  fbsde::Problem<Model> p;
  p.model = std::move(model);
  p.cost = c.cost;
  p.penalty = c.penalty;
  p.dt = c.dt;
  p.steps = c.steps;
  p.reset_terminal = c.hybrid;
  p.validate();
  return p;
}

/// Calls `f(problem)` with the problem type of the configured environment.
template <class F>
decltype(auto) dispatch(const ExperimentConfig& c, F&& f) {
  switch (c.environment) {
    case Environment::CartPole: return f(make_problem(c, dyn::CartPole(c.cartpole)));
    case Environment::Biped: return f(make_problem(c, dyn::Biped(c.biped)));
    case Environment::LqToy: break;
  }
  return f(make_problem(c, dyn::LqToy(c.lq_toy)));
}

inline json checkpoint_metadata(const ExperimentConfig& c, double k, int iterations) {
  return {{"environment", config::environment_name(c.environment)},
          {"state_dim", c.n()},
          {"k", k},
          {"iterations", iterations}};
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOutcome {
  bool aborted = false;
  std::string reason;
  int iterations = 0;
  double final_k = 0.0;
  fs::path checkpoint;  // model.json, or the ensemble manifest
};

struct RunOptions {
  std::function<void(const std::string&)> progress;  // status lines; may be empty
  int progress_every = 100;
};

namespace detail {

inline json schedule_json(const cost::ScheduleState& s) {
  return {{"k", s.k},           {"delta", s.delta},       {"beta", s.beta},     {"gamma", s.gamma},
          {"updates", s.updates}, {"frozen", s.frozen}, {"iteration", s.iteration}};
}

/// Streams the log and timing files and forwards progress.
struct LogSink {
  std::ofstream log;
  std::ofstream timing;
  const RunOptions* opt = nullptr;
  std::string label;

  LogSink(const fs::path& log_path, const fs::path& timing_path, const RunOptions& o, std::string l)
      : log(io::open_output(log_path)), timing(io::open_output(timing_path)), opt(&o), label(std::move(l)) {}

  void operator()(const trainer::IterationRecord& r) {
    io::write_jsonl(log, trainer::to_json(r));
    io::write_jsonl(timing, json{{"iteration", r.iteration}, {"wall_ms", r.wall_ms}});
    if (opt->progress && opt->progress_every > 0 && (r.iteration + 1) % opt->progress_every == 0) {
      opt->progress(label + "iteration " + std::to_string(r.iteration + 1) + " loss " + io::format_number(r.loss) +
                    " cost " + io::format_number(r.mean_episode_cost) + " k " + io::format_number(r.k) +
                    " violations " + std::to_string(r.violations));
    }
  }
};

}  // namespace detail

inline void write_resolved_config(const ExperimentConfig& c) {
  auto os = io::open_output(fs::path(c.output_dir) / "config.resolved.json");
  os << config::to_json(c).dump(2) << '\n';
}

template <dyn::SdeModel Model>
TrainOutcome train_single(const ExperimentConfig& c, fbsde::Problem<Model> prob, const RunOptions& opt) {
  const fs::path out(c.output_dir);
  ad::ParamStore store;
  const auto net = fbsde::make_value_net(store, Model::kStateDim, c.network, c.train.seed);
  detail::LogSink sink(out / "train_log.jsonl", out / "train_timing.jsonl", opt, "");
  trainer::TrainHooks hooks;
  hooks.on_iteration = std::ref(sink);
  hooks.on_checkpoint = [&](int it, const ad::ParamStore& s, const cost::ScheduleState& st) {
    io::save_checkpoint(out / "checkpoints" / ("iter_" + std::to_string(it) + ".json"), s,
                        checkpoint_metadata(c, st.k, it));
  };
  const auto res = trainer::train(store, net, prob, c.initial_state, c.train, c.schedule, hooks);

  TrainOutcome o;
  o.aborted = res.aborted;
  o.reason = res.abort_reason;
  o.iterations = static_cast<int>(res.log.size());
  o.final_k = res.schedule.k;
  o.checkpoint = out / "model.json";
  io::save_checkpoint(o.checkpoint, store, checkpoint_metadata(c, res.schedule.k, o.iterations));
  json summary{{"aborted", res.aborted},
               {"abort_reason", res.abort_reason},
               {"abort_iteration", res.abort_iteration},
               {"iterations", o.iterations},
               {"divergence_events", res.divergence_events},
               {"v0_initial", res.v0_initial},
               {"schedule", detail::schedule_json(res.schedule)}};
  auto os = io::open_output(out / "train_summary.json");
  os << summary.dump(2) << '\n';
  return o;
}

template <dyn::SdeModel Model>
  requires fbsde::HasReset<Model>
TrainOutcome train_members(const ExperimentConfig& c, const fbsde::Problem<Model>& prob, const RunOptions& opt) {
  const fs::path dir = fs::path(c.output_dir) / "ensemble";
  ensemble::EnsembleConfig ens;
  ens.nominals = c.ensemble->nominals;
  ens.size = c.ensemble->size;
  ens.half_width = c.ensemble->half_width;

  std::vector<ensemble::ManifestEntry> entries;
  std::unique_ptr<detail::LogSink> sink;
  int next_id = 0;
  auto open_sink = [&](int id) {
    sink = std::make_unique<detail::LogSink>(dir / ("member_" + std::to_string(id) + "_log.jsonl"),
                                             dir / ("member_" + std::to_string(id) + "_timing.jsonl"), opt,
                                             "member " + std::to_string(id) + ": ");
  };
  open_sink(next_id);
  ensemble::EnsembleHooks hooks;
  hooks.train.on_iteration = [&](const trainer::IterationRecord& r) { (*sink)(r); };
  hooks.on_member = [&](const ensemble::Member& m, const trainer::TrainResult& r) {
    // Aborted members are not written; earlier members stay usable.
    if (!r.aborted) {
      const auto name = ensemble::member_checkpoint_name(m.id);
      io::save_checkpoint(dir / name, m.store, checkpoint_metadata(c, r.schedule.k, static_cast<int>(r.log.size())));
      entries.push_back({m.id, m.nominal, name});
      ensemble::write_manifest(dir / "ensemble.json", entries);
    }
    open_sink(++next_id);
  };
  const auto res = ensemble::train_ensemble(prob, c.network, c.train, c.schedule, ens, hooks);
  sink.reset();
  fs::remove(dir / ("member_" + std::to_string(next_id) + "_log.jsonl"));
  fs::remove(dir / ("member_" + std::to_string(next_id) + "_timing.jsonl"));

  TrainOutcome o;
  o.aborted = res.aborted;
  if (res.aborted) {
    o.reason = "member " + std::to_string(res.aborted_member) + ": " + res.results.back().abort_reason;
  }
  for (const auto& r : res.results) o.iterations += static_cast<int>(r.log.size());
  if (!res.results.empty()) o.final_k = res.results.back().schedule.k;
  o.checkpoint = dir / "ensemble.json";
  json summary{{"aborted", res.aborted}, {"aborted_member", res.aborted_member}, {"members", json::array()}};
  for (std::size_t i = 0; i < res.results.size(); ++i) {
    const auto& r = res.results[i];
    summary["members"].push_back({{"id", res.members[i].id},
                                  {"aborted", r.aborted},
                                  {"abort_reason", r.abort_reason},
                                  {"iterations", r.log.size()},
                                  {"divergence_events", r.divergence_events},
                                  {"schedule", detail::schedule_json(r.schedule)}});
  }
  auto os = io::open_output(fs::path(c.output_dir) / "train_summary.json");
  os << summary.dump(2) << '\n';
  return o;
}

/// Trains a single controller, or the ensemble when the config has one.
inline TrainOutcome run_train(const ExperimentConfig& c, const RunOptions& opt = {}) {
  write_resolved_config(c);
  return dispatch(c, [&](auto prob) -> TrainOutcome {
    using Model = decltype(prob.model);
    if constexpr (fbsde::HasReset<Model>) {
      if (c.ensemble) return train_members(c, prob, opt);
    }
    return train_single(c, std::move(prob), opt);
  });
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOutcome {
  trainer::Metrics metrics;
  fs::path metrics_path;
  fs::path trajectories_path;
};

/// Loads a checkpoint built from `c`'s network settings, evaluates it and
/// writes metrics.json plus trajectories.csv under `<output_dir>/eval`. The
/// penalty steepness is taken from the checkpoint metadata when present.
inline EvalOutcome run_eval(const ExperimentConfig& c, const fs::path& checkpoint, const config::EvalSettings& es) {
  return dispatch(c, [&](auto prob) -> EvalOutcome {
    using Model = decltype(prob.model);
    ad::ParamStore store;
    const auto net = fbsde::make_value_net(store, Model::kStateDim, c.network, 0);
    const json meta = io::load_checkpoint(checkpoint, store);
    if (meta.contains("state_dim") && meta["state_dim"].get<int>() != Model::kStateDim) {
      throw CheckpointError("checkpoint state dimension does not match the config", true);
    }
    if (meta.contains("k")) prob.penalty.k = meta["k"].get<double>();
    trainer::EvalOptions eo;
    eo.trials = es.trials;
    eo.seed = es.seed;
    eo.noise_scale = es.noise_scale;
    eo.latency_calls = es.latency_calls;
    const auto ev = trainer::evaluate(store, net, prob, c.initial_state, eo);

    EvalOutcome o;
    o.metrics = ev.metrics;
    const fs::path dir = fs::path(c.output_dir) / "eval";
    o.metrics_path = dir / "metrics.json";
    o.trajectories_path = dir / "trajectories.csv";
    json mj = trainer::to_json(ev.metrics);
    mj["checkpoint"] = checkpoint.string();
    mj["seed"] = es.seed;
    mj["noise_scale"] = es.noise_scale;
    mj["k"] = prob.penalty.k;
    {
      auto os = io::open_output(o.metrics_path);
      os << mj.dump(2) << '\n';
    }
    auto os = io::open_output(o.trajectories_path);
    io::write_trajectories(os, ev.batch, prob.model.state_names(), prob.model.control_names(), prob.penalty);
    return o;
  });
}

// ---------------------------------------------------------------------------
// walk
// ---------------------------------------------------------------------------

struct WalkOutcome {
  ensemble::WalkTrace trace;
  fs::path csv_path;
};

/// Multi-footstep walk from the configured nominal initial state. With an
/// empty manifest path, untrained members are built at the configured
/// nominals (a mechanics check of the harness).
inline WalkOutcome run_walk(const ExperimentConfig& c, const fs::path& manifest) {
  if (c.environment != Environment::Biped) throw ConfigError("walk requires the biped environment");
  if (!c.ensemble) throw ConfigError("walk requires an ensemble section");
  const auto prob = make_problem(c, dyn::Biped(c.biped));
  std::vector<ensemble::Member> members;
  if (manifest.empty()) {
    for (std::size_t i = 0; i < c.ensemble->nominals.size(); ++i) {
      ensemble::Member m;
      m.id = static_cast<int>(i);
      m.nominal = c.ensemble->nominals[i];
      m.net = fbsde::make_value_net(m.store, dyn::Biped::kStateDim, c.network,
                                    c.train.seed + static_cast<std::uint64_t>(i));
      members.push_back(std::move(m));
    }
  } else {
    members = ensemble::load_members(manifest, dyn::Biped::kStateDim, c.network);
  }
  ensemble::WalkOptions wo;
  wo.footsteps = c.ensemble->walk.footsteps;
  wo.noise_scale = c.ensemble->walk.noise_scale;
  wo.seed = c.ensemble->walk.seed;

  WalkOutcome o;
  o.trace = ensemble::multi_step_rollout(members, prob, c.initial_state.nominal, wo);
  const fs::path dir = fs::path(c.output_dir) / "walk";
  o.csv_path = dir / "walk.csv";
  {
    auto os = io::open_output(o.csv_path);
    std::vector<std::string> names;
    for (Eigen::Index i = 0; i < c.penalty.c_map.rows(); ++i) names.push_back(i == 0 ? "knee" : "c" + std::to_string(i));
    ensemble::write_walk_csv(os, o.trace, prob.model.state_names(), prob.model.control_names(), c.penalty.c_map, names);
  }
  json summary{{"footsteps", o.trace.footsteps.size()},
               {"failed", o.trace.failed},
               {"failed_footstep", o.trace.failed_footstep},
               {"failed_step", o.trace.failed_step},
               {"members", json::array()}};
  double min_knee = std::numeric_limits<double>::infinity();
  for (const auto& f : o.trace.footsteps) {
    summary["members"].push_back(f.member);
    for (Eigen::Index k = 0; k < f.x.rows(); ++k) min_knee = std::min(min_knee, f.x(k, 3) - f.x(k, 4));
  }
  summary["min_knee"] = min_knee;
  auto os = io::open_output(dir / "walk.json");
  os << summary.dump(2) << '\n';
  return o;
}

}  // namespace dfbsde::experiment
