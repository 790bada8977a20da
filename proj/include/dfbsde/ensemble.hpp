#pragma once

// Multi-footstep walking with an ensemble of single-footstep controllers.
//
// Each member is a network-mode value net trained around its own nominal
// initial state. At the start of every footstep the member whose nominal is
// closest to the current state (whitened Euclidean distance) runs one
// fixed-horizon rollout; the heel-strike map then gives the next start state.

#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfbsde/checkpoint.hpp"
#include "dfbsde/fbsde.hpp"
#include "dfbsde/io.hpp"
#include "dfbsde/trainer.hpp"

namespace dfbsde::ensemble {

using ad::Matrix;
using ad::ParamStore;
using fbsde::Problem;
using fbsde::ValueNet;

struct Member {
  int id = 0;
  Eigen::VectorXd nominal;
  ParamStore store;
  ValueNet net;
};

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

/// Squared whitened distance sum_i ((x_i - nominal_i) / scale_i)^2.
inline double distance(const Eigen::VectorXd& x, const Eigen::VectorXd& nominal, const Eigen::VectorXd& scales) {
  if (x.size() != nominal.size() || x.size() != scales.size()) {
    throw UsageError("ensemble distance: dimension mismatch");
  }
  return ((x - nominal).array() / scales.array()).square().sum();
}

/// Position in `members` of the nearest nominal; ties go to the lowest id.
inline std::size_t select_index(const std::vector<Member>& members, const Eigen::VectorXd& x0,
                                const Eigen::VectorXd& scales) {
  if (members.empty()) throw UsageError("select_controller: ensemble is empty");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < members.size(); ++i) {
    const double d = distance(x0, members[i].nominal, scales);
    if (d < best_d || (d == best_d && members[i].id < members[best].id)) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

inline const Member& select_controller(const std::vector<Member>& members, const Eigen::VectorXd& x0,
                                       const Eigen::VectorXd& scales) {
  return members[select_index(members, x0, scales)];
}

/// Scales taken from the first member's input whitening.
inline Eigen::VectorXd whitening_scales(const std::vector<Member>& members) {
  if (members.empty()) throw UsageError("ensemble is empty");
  return members.front().net.inv_scales.transpose().cwiseInverse();
}

// ---------------------------------------------------------------------------
// Multi-step rollout
// ---------------------------------------------------------------------------

struct Footstep {
  int member = -1;
  Matrix x;                   // (N+1) x n before the heel strike; fewer rows when truncated
  Matrix u;                   // N x m
  Eigen::VectorXd post;       // heel_strike(x_N); empty when the footstep failed
  double terminal_cost = 0.0;
};

struct WalkTrace {
  double dt = 0.0;
  int steps_per_footstep = 0;
  std::vector<Footstep> footsteps;
  bool failed = false;
  int failed_footstep = -1;
  int failed_step = -1;  // step index within the failed footstep
};

struct WalkOptions {
  int footsteps = 3;
  double noise_scale = 1.0;  // 0 for a noise-free walk
  std::uint64_t seed = 0;
  std::optional<Eigen::VectorXd> scales;  // defaults to the members' whitening scales
};

template <dyn::SdeModel Model>
  requires fbsde::HasReset<Model>
WalkTrace multi_step_rollout(const std::vector<Member>& members, const Problem<Model>& prob, const Eigen::VectorXd& x0,
                             const WalkOptions& opt) {
  constexpr int n = Model::kStateDim;
  if (members.empty()) throw UsageError("multi_step_rollout: ensemble is empty");
  if (x0.size() != n) throw UsageError("multi_step_rollout: x0 has the wrong dimension");
  if (opt.footsteps < 1) throw UsageError("multi_step_rollout: need at least one footstep");
  const Eigen::VectorXd scales = opt.scales ? *opt.scales : whitening_scales(members);
  Problem<Model> p = prob;
  p.reset_terminal = true;

  WalkTrace trace;
  trace.dt = p.dt;
  trace.steps_per_footstep = p.steps;
  Eigen::VectorXd start = x0;
  for (int s = 0; s < opt.footsteps; ++s) {
    const Member& mem = select_controller(members, start, scales);
    const auto noise = trainer::sample_noise(1, p.steps, Model::kNoiseDim, p.dt, opt.seed, rng::kWalkNoise,
                                             static_cast<std::uint64_t>(s), opt.noise_scale);
    const auto b = fbsde::simulate(mem.store, mem.net, p, Matrix(start.transpose()), noise);

    Footstep fs;
    fs.member = mem.id;
    const int stop = b.alive(0) ? p.steps : b.diverged_at[0];
    fs.x.resize(stop + 1, n);
    for (int k = 0; k <= stop; ++k) fs.x.row(k) = b.x[static_cast<std::size_t>(k)].row(0);
    fs.u.resize(stop, Model::kControlDim);
    for (int k = 0; k < stop; ++k) fs.u.row(k) = b.u[static_cast<std::size_t>(k)].row(0);
    if (!b.alive(0)) {
      trace.failed = true;
      trace.failed_footstep = s;
      trace.failed_step = stop;
      trace.footsteps.push_back(std::move(fs));
      return trace;
    }
    std::array<double, n> xn;
    for (int i = 0; i < n; ++i) xn[static_cast<std::size_t>(i)] = fs.x(stop, i);
    const auto xp = p.model.template heel_strike<double>(xn);
    fs.post = Eigen::Map<const Eigen::VectorXd>(xp.data(), n);
    fs.terminal_cost = b.terminal_cost(0);
    start = fs.post;
    trace.footsteps.push_back(std::move(fs));
  }
  return trace;
}

/// Columns: footstep, step, t, member, states..., controls..., then one
/// column per row of `constraint_map` (e.g. the knee angle q4 - q5). Time runs
/// continuously across footsteps; controls are empty on each terminal row.
inline void write_walk_csv(std::ostream& os, const WalkTrace& trace, const std::vector<std::string>& states,
                           const std::vector<std::string>& controls, const Matrix& constraint_map,
                           const std::vector<std::string>& constraint_names) {
  if (constraint_map.rows() != static_cast<Eigen::Index>(constraint_names.size())) {
    throw UsageError("write_walk_csv: one name per constraint row");
  }
  std::vector<std::string> header{"footstep", "step", "t", "member"};
  header.insert(header.end(), states.begin(), states.end());
  header.insert(header.end(), controls.begin(), controls.end());
  header.insert(header.end(), constraint_names.begin(), constraint_names.end());
  io::write_row(os, header);
  const double footstep_time = trace.dt * trace.steps_per_footstep;
  std::vector<std::string> cells;
  for (std::size_t s = 0; s < trace.footsteps.size(); ++s) {
    const auto& fs = trace.footsteps[s];
    for (Eigen::Index k = 0; k < fs.x.rows(); ++k) {
      cells.clear();
      cells.push_back(std::to_string(s));
      cells.push_back(std::to_string(k));
      cells.push_back(io::format_number(static_cast<double>(s) * footstep_time + static_cast<double>(k) * trace.dt));
      cells.push_back(std::to_string(fs.member));
      for (Eigen::Index j = 0; j < fs.x.cols(); ++j) cells.push_back(io::format_number(fs.x(k, j)));
      for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(controls.size()); ++j) {
        cells.push_back(k < fs.u.rows() ? io::format_number(fs.u(k, j)) : std::string());
      }
      const Eigen::VectorXd c = constraint_map * fs.x.row(k).transpose();
      for (Eigen::Index j = 0; j < c.size(); ++j) cells.push_back(io::format_number(c(j)));
      io::write_row(os, cells);
    }
  }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------
//
// {
//   "format": "dfbsde-ensemble", "version": 1,
//   "members": [ {"id": 0, "nominal": [...], "checkpoint": "member_0.json"}, ... ]
// }
// Checkpoint paths are relative to the manifest's directory.

struct ManifestEntry {
  int id = 0;
  Eigen::VectorXd nominal;
  std::string checkpoint;
};

inline std::string member_checkpoint_name(int id) { return "member_" + std::to_string(id) + ".json"; }

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  nlohmann::json j;
  j["format"] = "dfbsde-ensemble";
  j["version"] = 1;
  j["members"] = nlohmann::json::array();
  for (const auto& e : entries) {
    j["members"].push_back({{"id", e.id},
                            {"nominal", std::vector<double>(e.nominal.data(), e.nominal.data() + e.nominal.size())},
                            {"checkpoint", e.checkpoint}});
  }
  auto os = io::open_output(path);
  os << j.dump(2) << '\n';
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw CheckpointError("cannot open ensemble manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed ensemble manifest: " + std::string(e.what()));
  }
  if (j.value("format", "") != "dfbsde-ensemble" || j.value("version", 0) != 1) {
    throw CheckpointError("not a dfbsde ensemble manifest: " + path.string());
  }
  std::vector<ManifestEntry> out;
  for (const auto& m : j.at("members")) {
    ManifestEntry e;
    e.id = m.at("id").get<int>();
    const auto v = m.at("nominal").get<std::vector<double>>();
    e.nominal = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    e.checkpoint = m.at("checkpoint").get<std::string>();
    out.push_back(std::move(e));
  }
  return out;
}

/// Rebuilds every member's network from `cfg` and loads its checkpoint.
inline std::vector<Member> load_members(const std::filesystem::path& manifest, int state_dim,
                                        const fbsde::NetConfig& cfg) {
  std::vector<Member> members;
  for (const auto& e : read_manifest(manifest)) {
    if (e.nominal.size() != state_dim) {
      throw CheckpointError("ensemble member " + std::to_string(e.id) + " nominal has the wrong dimension", true);
    }
    Member m;
    m.id = e.id;
    m.nominal = e.nominal;
    m.net = fbsde::make_value_net(m.store, state_dim, cfg, 0);
    io::load_checkpoint(manifest.parent_path() / e.checkpoint, m.store);
    members.push_back(std::move(m));
  }
  return members;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EnsembleConfig {
  std::vector<Eigen::VectorXd> nominals;  // explicit nominal states
  int size = 1;                           // members to train; extra nominals are generated
  Eigen::VectorXd half_width;             // sampling box around each nominal
};

struct EnsembleHooks {
  std::function<void(const Member&, const trainer::TrainResult&)> on_member;
  trainer::TrainHooks train;
};

struct EnsembleResult {
  std::vector<Member> members;
  std::vector<trainer::TrainResult> results;
  bool aborted = false;
  int aborted_member = -1;
};

/// Trains one hybrid-mode controller per nominal state, in id order. When
/// fewer nominals than `size` are given, member i's noise-free footstep from
/// its own nominal, followed by the heel strike, supplies nominal i+1.
template <dyn::SdeModel Model>
  requires fbsde::HasReset<Model>
EnsembleResult train_ensemble(const Problem<Model>& prob, const fbsde::NetConfig& net_cfg,
                              const trainer::TrainConfig& train_cfg, const cost::ScheduleConfig& sched_cfg,
                              const EnsembleConfig& ens, const EnsembleHooks& hooks = {}) {
  constexpr int n = Model::kStateDim;
  if (ens.nominals.empty()) throw ConfigError("ensemble.nominals must list at least one state");
  if (ens.size < 1) throw ConfigError("ensemble.size must be >= 1");
  if (static_cast<int>(ens.nominals.size()) > ens.size) {
    throw ConfigError("ensemble.nominals has more entries than ensemble.size");
  }
  if (net_cfg.init != fbsde::InitMode::Network) throw ConfigError("ensemble members need network.init = \"network\"");
  for (const auto& nom : ens.nominals) {
    if (nom.size() != n || !nom.allFinite()) throw ConfigError("ensemble nominal states must be finite with n entries");
  }

  EnsembleResult res;
  std::vector<Eigen::VectorXd> nominals = ens.nominals;
  for (int id = 0; id < ens.size; ++id) {
    if (static_cast<int>(nominals.size()) <= id) {
      const Member& prev = res.members.back();
      WalkOptions w;
      w.footsteps = 1;
      w.noise_scale = 0.0;
      const auto trace = multi_step_rollout(std::vector<Member>{prev}, prob, prev.nominal, w);
      if (trace.failed) throw DivergenceError("ensemble: nominal generation diverged", trace.failed_step);
      nominals.push_back(trace.footsteps.front().post);
    }
    Member m;
    m.id = id;
    m.nominal = nominals[static_cast<std::size_t>(id)];
    // Member 0 keeps the configured seed, so a one-member ensemble is plain hybrid training.
    const std::uint64_t seed =
        id == 0 ? train_cfg.seed : rng::hash(train_cfg.seed, rng::kParamInit, static_cast<std::uint64_t>(id));
    m.net = fbsde::make_value_net(m.store, n, net_cfg, seed);
    trainer::TrainConfig cfg = train_cfg;
    cfg.seed = seed;
    trainer::InitialStateSpec init;
    init.nominal = m.nominal;
    init.half_width = ens.half_width;
    Problem<Model> p = prob;
    p.reset_terminal = true;
    auto r = trainer::train(m.store, m.net, p, init, cfg, sched_cfg, hooks.train);
    if (hooks.on_member) hooks.on_member(m, r);
    const bool aborted = r.aborted;
    res.results.push_back(std::move(r));
    res.members.push_back(std::move(m));
    if (aborted) {
      res.aborted = true;
      res.aborted_member = id;
      return res;
    }
  }
  return res;
}

}  // namespace dfbsde::ensemble
