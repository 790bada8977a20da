#pragma once

// Experiment configuration: one JSON document per run.
//
// Parsing is strict. Every key listed in `to_json` must be present, unknown
// keys are rejected, and errors name the full key path (e.g. "cost.Q").
// Square weight matrices accept either a diagonal list or a nested row list;
// infinite penalty bounds are written as null. `--set a.b.c=value` overrides
// edit the raw document before parsing, so they obey the same rules.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfbsde/biped.hpp"
#include "dfbsde/cartpole.hpp"
#include "dfbsde/costs.hpp"
#include "dfbsde/errors.hpp"
#include "dfbsde/fbsde.hpp"
#include "dfbsde/lq_toy.hpp"
#include "dfbsde/penalties.hpp"
#include "dfbsde/schedule.hpp"
#include "dfbsde/trainer.hpp"

namespace dfbsde::config {

using nlohmann::json;

enum class Environment { CartPole, Biped, LqToy };

inline const char* environment_name(Environment e) {
  switch (e) {
    case Environment::CartPole: return "cartpole";
    case Environment::Biped: return "biped";
    case Environment::LqToy: return "lq_toy";
  }
  return "?";
}

inline Environment parse_environment(const std::string& s) {
  if (s == "cartpole") return Environment::CartPole;
  if (s == "biped") return Environment::Biped;
  if (s == "lq_toy") return Environment::LqToy;
  throw ConfigError("environment must be one of cartpole, biped, lq_toy (got \"" + s + "\")");
}

inline int state_dim(Environment e) {
  switch (e) {
    case Environment::CartPole: return dyn::CartPole::kStateDim;
    case Environment::Biped: return dyn::Biped::kStateDim;
    case Environment::LqToy: return dyn::LqToy::kStateDim;
  }
  return 0;
}

inline int control_dim(Environment e) {
  switch (e) {
    case Environment::CartPole: return dyn::CartPole::kControlDim;
    case Environment::Biped: return dyn::Biped::kControlDim;
    case Environment::LqToy: return dyn::LqToy::kControlDim;
  }
  return 0;
}

struct EvalSettings {
  int trials = 256;
  std::uint64_t seed = 1;
  double noise_scale = 1.0;
  int latency_calls = 0;
};

struct WalkSettings {
  int footsteps = 3;
  double noise_scale = 1.0;
  std::uint64_t seed = 2;
};

struct EnsembleSettings {
  int size = 3;
  std::vector<Eigen::VectorXd> nominals;
  Eigen::VectorXd half_width;
  WalkSettings walk;
};

struct ExperimentConfig {
  Environment environment = Environment::CartPole;
  std::string output_dir = "runs/cartpole";
  dyn::CartPoleParams cartpole;
  dyn::BipedParams biped;
  dyn::LqToyParams lq_toy;
  cost::CostSpec cost;
  cost::PenaltySpec penalty;
  cost::ScheduleConfig schedule;
  trainer::TrainConfig train;
  double dt = 0.01;
  int steps = 100;
  bool hybrid = false;
  trainer::InitialStateSpec initial_state;
  fbsde::NetConfig network;
  EvalSettings eval;
  std::optional<EnsembleSettings> ensemble;

  int n() const { return state_dim(environment); }
  int m() const { return control_dim(environment); }
};

// ---------------------------------------------------------------------------
// Strict reader
// ---------------------------------------------------------------------------

namespace detail {

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

/// One JSON object being consumed; every key must be read exactly once.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError((path_.empty() ? "config" : path_) + " must be an object");
  }

  const json& at(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) throw ConfigError("missing key: " + join(path_, key));
    used_.insert(key);
    return *it;
  }

  std::string where(const std::string& key) const { return join(path_, key); }

  double number(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number()) throw ConfigError(where(key) + " must be a number");
    return v.get<double>();
  }

  std::optional<double> nullable(const std::string& key) {
    const json& v = at(key);
    if (v.is_null()) return std::nullopt;
    if (!v.is_number()) throw ConfigError(where(key) + " must be a number or null");
    return v.get<double>();
  }

  std::int64_t integer(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number_integer()) throw ConfigError(where(key) + " must be an integer");
    return v.get<std::int64_t>();
  }

  int small_int(const std::string& key) {
    const auto v = integer(key);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
      throw ConfigError(where(key) + " is out of range");
    }
    return static_cast<int>(v);
  }

  std::uint64_t unsigned_int(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ConfigError(where(key) + " must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key) {
    const json& v = at(key);
    if (!v.is_boolean()) throw ConfigError(where(key) + " must be true or false");
    return v.get<bool>();
  }

  std::string text(const std::string& key) {
    const json& v = at(key);
    if (!v.is_string()) throw ConfigError(where(key) + " must be a string");
    return v.get<std::string>();
  }

  Eigen::VectorXd vector(const std::string& key, std::optional<int> size = std::nullopt) {
    return to_vector(at(key), where(key), size);
  }

  std::vector<int> ints(const std::string& key) {
    const json& v = at(key);
    if (!v.is_array()) throw ConfigError(where(key) + " must be a list of integers");
    std::vector<int> out;
    for (const auto& e : v) {
      if (!e.is_number_integer()) throw ConfigError(where(key) + " must be a list of integers");
      out.push_back(e.get<int>());
    }
    return out;
  }

  /// Square n x n matrix from a diagonal list or a nested row list.
  Eigen::MatrixXd square(const std::string& key, int n) {
    const json& v = at(key);
    if (v.is_array() && !v.empty() && v.front().is_array()) return to_matrix(v, where(key), n);
    return to_vector(v, where(key), n).asDiagonal();
  }

  /// r x n matrix from a nested row list; r may be 0.
  Eigen::MatrixXd rows(const std::string& key, int n) { return to_matrix(at(key), where(key), n); }

  /// List where null maps to `null_value`.
  Eigen::VectorXd bounds(const std::string& key, double null_value) {
    const json& v = at(key);
    if (!v.is_array()) throw ConfigError(where(key) + " must be a list of numbers or null");
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i].is_null()) {
        out(static_cast<Eigen::Index>(i)) = null_value;
      } else if (v[i].is_number()) {
        out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
      } else {
        throw ConfigError(where(key) + " must be a list of numbers or null");
      }
    }
    return out;
  }

  Section sub(const std::string& key) { return Section(at(key), where(key)); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError("unknown key: " + join(path_, it.key()));
    }
  }

 private:
  static Eigen::VectorXd to_vector(const json& v, const std::string& where, std::optional<int> size) {
    if (!v.is_array()) throw ConfigError(where + " must be a list of numbers");
    if (size && static_cast<int>(v.size()) != *size) {
      throw ConfigError(where + " must have " + std::to_string(*size) + " entries (got " + std::to_string(v.size()) +
                        ")");
    }
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(where + " must be a list of numbers");
      out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
    }
    return out;
  }

  static Eigen::MatrixXd to_matrix(const json& v, const std::string& where, int n) {
    if (!v.is_array()) throw ConfigError(where + " must be a list of rows");
    Eigen::MatrixXd out(static_cast<Eigen::Index>(v.size()), n);
    for (std::size_t r = 0; r < v.size(); ++r) {
      out.row(static_cast<Eigen::Index>(r)) =
          to_vector(v[r], where + "[" + std::to_string(r) + "]", n).transpose();
    }
    return out;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json square_json(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd off = m - Eigen::MatrixXd(m.diagonal().asDiagonal());
  if (off.size() == 0 || off.cwiseAbs().maxCoeff() == 0.0) return vec_json(m.diagonal());
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
  return rows;
}

inline json rows_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
  return rows;
}

inline json bounds_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isinf(v(i))) {
      out.push_back(nullptr);
    } else {
      out.push_back(v(i));
    }
  }
  return out;
}

template <std::size_t K>
std::array<double, K> to_array(const Eigen::VectorXd& v) {
  std::array<double, K> a;
  for (std::size_t i = 0; i < K; ++i) a[i] = v(static_cast<Eigen::Index>(i));
  return a;
}

template <std::size_t K>
json array_json(const std::array<double, K>& a) {
  return std::vector<double>(a.begin(), a.end());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline json to_json(const ExperimentConfig& c) {
  using detail::bounds_json;
  using detail::square_json;
  using detail::vec_json;
  json j;
  j["environment"] = environment_name(c.environment);
  j["seed"] = c.train.seed;
  j["output_dir"] = c.output_dir;

  switch (c.environment) {
    case Environment::CartPole:
      j["dynamics"] = {{"M", c.cartpole.cart_mass},
                       {"m", c.cartpole.pole_mass},
                       {"l", c.cartpole.pole_length},
                       {"g", c.cartpole.gravity},
                       {"sigma", c.cartpole.sigma}};
      break;
    case Environment::Biped:
      j["dynamics"] = {{"mass", detail::array_json(c.biped.mass)},
                       {"inertia", detail::array_json(c.biped.inertia)},
                       {"length", detail::array_json(c.biped.length)},
                       {"com", detail::array_json(c.biped.com)},
                       {"g", c.biped.gravity},
                       {"sigma", c.biped.sigma}};
      break;
    case Environment::LqToy:
      j["dynamics"] = {{"sigma", c.lq_toy.sigma}};
      break;
  }

  j["cost"] = {{"Q", square_json(c.cost.q)},
               {"Q_N", square_json(c.cost.q_final)},
               {"R", vec_json(c.cost.r_diag)},
               {"target", vec_json(c.cost.target)},
               {"U_max", vec_json(c.cost.u_max)},
               {"control", c.cost.control == cost::ControlCostKind::Saturating ? "saturating" : "quadratic"}};

  const char* kind = c.penalty.kind == cost::PenaltyKind::Logistic ? "logistic"
                     : c.penalty.kind == cost::PenaltyKind::Relu   ? "relu"
                                                                   : "none";
  j["penalty"] = {{"kind", kind},
                  {"c_map", detail::rows_json(c.penalty.c_map)},
                  {"b_min", bounds_json(c.penalty.b_min)},
                  {"b_max", bounds_json(c.penalty.b_max)},
                  {"L", c.penalty.height},
                  {"alpha", c.penalty.alpha}};

  const auto& s = c.schedule;
  j["penalty_schedule"] = {{"enabled", s.enabled},
                           {"k", s.k},
                           {"delta", s.delta},
                           {"beta", s.beta ? json(*s.beta) : json(nullptr)},
                           {"beta_scale", s.beta_scale},
                           {"gamma", s.gamma},
                           {"gamma_step", s.gamma_step},
                           {"delta_step", s.delta_step},
                           {"eta", s.eta},
                           {"eta_max", s.eta_max},
                           {"on_satisfied", s.on_satisfied == cost::OnSatisfied::Freeze ? "freeze" : "refresh"}};

  const auto& t = c.train;
  j["train"] = {{"N_I", t.iterations},
                {"M", t.batch},
                {"dt", c.dt},
                {"N", c.steps},
                {"hybrid", c.hybrid},
                {"lr", t.adam.learning_rate},
                {"beta1", t.adam.beta1},
                {"beta2", t.adam.beta2},
                {"epsilon", t.adam.epsilon},
                {"clip_norm", t.clip_norm},
                {"lambda", t.lambda},
                {"reduction", t.reduction == fbsde::Reduction::Sum ? "sum" : "mean"},
                {"detach_dynamics", t.detach_dynamics},
                {"v0_auto", t.v0_auto},
                {"fixed_k", t.fixed_k ? json(*t.fixed_k) : json(nullptr)},
                {"max_drop_fraction", t.max_drop_fraction},
                {"checkpoint_every", t.checkpoint_every}};

  j["initial_state"] = {{"nominal", vec_json(c.initial_state.nominal)},
                        {"half_width", vec_json(c.initial_state.half_width)}};

  const auto& nw = c.network;
  j["network"] = {{"lstm_hidden", nw.lstm_hidden},
                  {"init", nw.init == fbsde::InitMode::Fixed ? "fixed" : "network"},
                  {"v0_layers", nw.v0_layers},
                  {"h0_hidden", nw.h0_hidden},
                  {"input_scales", nw.input_scales},
                  {"output_scales", nw.output_scales},
                  {"v0_init", nw.v0_init}};

  j["eval"] = {{"trials", c.eval.trials},
               {"seed", c.eval.seed},
               {"noise_scale", c.eval.noise_scale},
               {"latency_calls", c.eval.latency_calls}};

  if (c.ensemble) {
    json nominals = json::array();
    for (const auto& v : c.ensemble->nominals) nominals.push_back(vec_json(v));
    j["ensemble"] = {{"size", c.ensemble->size},
                     {"nominals", nominals},
                     {"half_width", vec_json(c.ensemble->half_width)},
                     {"walk",
                      {{"footsteps", c.ensemble->walk.footsteps},
                       {"noise_scale", c.ensemble->walk.noise_scale},
                       {"seed", c.ensemble->walk.seed}}}};
  } else {
    j["ensemble"] = nullptr;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

inline void validate(const ExperimentConfig& c) {
  const int n = c.n();
  const int m = c.m();
  c.cost.validate(n, m);
  c.penalty.validate(n);
  if (c.penalty.c_map.cols() != n) throw ConfigError("penalty.c_map must have " + std::to_string(n) + " columns");
  c.schedule.validate();
  c.train.validate();
  if (!(c.dt > 0.0)) throw ConfigError("train.dt must be positive");
  if (c.steps < 1) throw ConfigError("train.N must be >= 1");
  if (c.hybrid && c.environment != Environment::Biped) throw ConfigError("train.hybrid requires the biped environment");
  c.initial_state.validate(n);
  if (static_cast<int>(c.network.input_scales.size()) != n) {
    throw ConfigError("network.input_scales must have " + std::to_string(n) + " entries");
  }
  if (static_cast<int>(c.network.output_scales.size()) != n) {
    throw ConfigError("network.output_scales must have " + std::to_string(n) + " entries");
  }
  if (c.eval.trials < 1) throw ConfigError("eval.trials must be >= 1");
  if (!(c.eval.noise_scale >= 0.0)) throw ConfigError("eval.noise_scale must be non-negative");
  if (c.eval.latency_calls < 0) throw ConfigError("eval.latency_calls must be >= 0");
  if (c.ensemble) {
    if (c.environment != Environment::Biped) throw ConfigError("ensemble requires the biped environment");
    if (c.ensemble->size < 1) throw ConfigError("ensemble.size must be >= 1");
    if (c.ensemble->nominals.empty()) throw ConfigError("ensemble.nominals must list at least one state");
    if (static_cast<int>(c.ensemble->nominals.size()) > c.ensemble->size) {
      throw ConfigError("ensemble.nominals has more entries than ensemble.size");
    }
    if (c.ensemble->walk.footsteps < 1) throw ConfigError("ensemble.walk.footsteps must be >= 1");
    if (!(c.ensemble->walk.noise_scale >= 0.0)) throw ConfigError("ensemble.walk.noise_scale must be non-negative");
    if (!(c.ensemble->half_width.array() >= 0.0).all()) {
      throw ConfigError("ensemble.half_width entries must be non-negative");
    }
  }
  // Model constructors check physical parameters.
  switch (c.environment) {
    case Environment::CartPole: dyn::CartPole{c.cartpole}; break;
    case Environment::Biped: dyn::Biped{c.biped}; break;
    case Environment::LqToy: dyn::LqToy{c.lq_toy}; break;
  }
}

inline ExperimentConfig from_json(const json& j) {
  detail::Section root(j, "");
  ExperimentConfig c;
  c.environment = parse_environment(root.text("environment"));
  const int n = c.n();
  const int m = c.m();
  c.train.seed = root.unsigned_int("seed");
  c.output_dir = root.text("output_dir");

  {
    auto d = root.sub("dynamics");
    switch (c.environment) {
      case Environment::CartPole:
        c.cartpole.cart_mass = d.number("M");
        c.cartpole.pole_mass = d.number("m");
        c.cartpole.pole_length = d.number("l");
        c.cartpole.gravity = d.number("g");
        c.cartpole.sigma = d.number("sigma");
        break;
      case Environment::Biped:
        c.biped.mass = detail::to_array<5>(d.vector("mass", 5));
        c.biped.inertia = detail::to_array<5>(d.vector("inertia", 5));
        c.biped.length = detail::to_array<5>(d.vector("length", 5));
        c.biped.com = detail::to_array<5>(d.vector("com", 5));
        c.biped.gravity = d.number("g");
        c.biped.sigma = d.number("sigma");
        break;
      case Environment::LqToy:
        c.lq_toy.sigma = d.number("sigma");
        break;
    }
    d.finish();
  }

  {
    auto s = root.sub("cost");
    c.cost.q = s.square("Q", n);
    c.cost.q_final = s.square("Q_N", n);
    c.cost.r_diag = s.vector("R", m);
    c.cost.target = s.vector("target", n);
    c.cost.u_max = s.vector("U_max", m);
    const auto kind = s.text("control");
    if (kind == "saturating") {
      c.cost.control = cost::ControlCostKind::Saturating;
    } else if (kind == "quadratic") {
      c.cost.control = cost::ControlCostKind::Quadratic;
    } else {
      throw ConfigError("cost.control must be \"saturating\" or \"quadratic\"");
    }
    s.finish();
  }

  {
    auto s = root.sub("penalty");
    const auto kind = s.text("kind");
    if (kind == "logistic") {
      c.penalty.kind = cost::PenaltyKind::Logistic;
    } else if (kind == "relu") {
      c.penalty.kind = cost::PenaltyKind::Relu;
    } else if (kind == "none") {
      c.penalty.kind = cost::PenaltyKind::None;
    } else {
      throw ConfigError("penalty.kind must be \"logistic\", \"relu\" or \"none\"");
    }
    c.penalty.c_map = s.rows("c_map", n);
    c.penalty.b_min = s.bounds("b_min", -std::numeric_limits<double>::infinity());
    c.penalty.b_max = s.bounds("b_max", std::numeric_limits<double>::infinity());
    if (c.penalty.b_min.size() != c.penalty.c_map.rows() || c.penalty.b_max.size() != c.penalty.c_map.rows()) {
      throw ConfigError("penalty.b_min and penalty.b_max need one entry per c_map row");
    }
    c.penalty.height = s.number("L");
    c.penalty.alpha = s.number("alpha");
    s.finish();
  }

  {
    auto s = root.sub("penalty_schedule");
    c.schedule.enabled = s.boolean("enabled");
    c.schedule.k = s.number("k");
    c.schedule.delta = s.number("delta");
    c.schedule.beta = s.nullable("beta");
    c.schedule.beta_scale = s.number("beta_scale");
    c.schedule.gamma = s.number("gamma");
    c.schedule.gamma_step = s.number("gamma_step");
    c.schedule.delta_step = s.number("delta_step");
    c.schedule.eta = s.integer("eta");
    c.schedule.eta_max = s.integer("eta_max");
    const auto on = s.text("on_satisfied");
    if (on == "freeze") {
      c.schedule.on_satisfied = cost::OnSatisfied::Freeze;
    } else if (on == "refresh") {
      c.schedule.on_satisfied = cost::OnSatisfied::Refresh;
    } else {
      throw ConfigError("penalty_schedule.on_satisfied must be \"freeze\" or \"refresh\"");
    }
    s.finish();
  }
  c.penalty.k = c.schedule.k;

  {
    auto s = root.sub("train");
    c.train.iterations = s.small_int("N_I");
    c.train.batch = s.small_int("M");
    c.dt = s.number("dt");
    c.steps = s.small_int("N");
    c.hybrid = s.boolean("hybrid");
    c.train.adam.learning_rate = s.number("lr");
    c.train.adam.beta1 = s.number("beta1");
    c.train.adam.beta2 = s.number("beta2");
    c.train.adam.epsilon = s.number("epsilon");
    c.train.clip_norm = s.number("clip_norm");
    c.train.lambda = s.number("lambda");
    const auto red = s.text("reduction");
    if (red == "sum") {
      c.train.reduction = fbsde::Reduction::Sum;
    } else if (red == "mean") {
      c.train.reduction = fbsde::Reduction::Mean;
    } else {
      throw ConfigError("train.reduction must be \"sum\" or \"mean\"");
    }
    c.train.detach_dynamics = s.boolean("detach_dynamics");
    c.train.v0_auto = s.boolean("v0_auto");
    c.train.fixed_k = s.nullable("fixed_k");
    c.train.max_drop_fraction = s.number("max_drop_fraction");
    c.train.checkpoint_every = s.small_int("checkpoint_every");
    s.finish();
  }

  {
    auto s = root.sub("initial_state");
    c.initial_state.nominal = s.vector("nominal", n);
    c.initial_state.half_width = s.vector("half_width", n);
    s.finish();
  }

  {
    auto s = root.sub("network");
    c.network.lstm_hidden = s.ints("lstm_hidden");
    const auto init = s.text("init");
    if (init == "fixed") {
      c.network.init = fbsde::InitMode::Fixed;
    } else if (init == "network") {
      c.network.init = fbsde::InitMode::Network;
    } else {
      throw ConfigError("network.init must be \"fixed\" or \"network\"");
    }
    c.network.v0_layers = s.ints("v0_layers");
    c.network.h0_hidden = s.small_int("h0_hidden");
    const Eigen::VectorXd sc = s.vector("input_scales", n);
    c.network.input_scales.assign(sc.data(), sc.data() + sc.size());
    const Eigen::VectorXd os = s.vector("output_scales", n);
    c.network.output_scales.assign(os.data(), os.data() + os.size());
    c.network.v0_init = s.number("v0_init");
    s.finish();
  }

  {
    auto s = root.sub("eval");
    c.eval.trials = s.small_int("trials");
    c.eval.seed = s.unsigned_int("seed");
    c.eval.noise_scale = s.number("noise_scale");
    c.eval.latency_calls = s.small_int("latency_calls");
    s.finish();
  }
  c.train.eval_trials = c.eval.trials;

  if (root.at("ensemble").is_null()) {
    c.ensemble.reset();
  } else {
    auto s = root.sub("ensemble");
    EnsembleSettings e;
    e.size = s.small_int("size");
    const json& noms = s.at("nominals");
    if (!noms.is_array()) throw ConfigError("ensemble.nominals must be a list of states");
    for (std::size_t i = 0; i < noms.size(); ++i) {
      const json wrapped{{"v", noms[i]}};
      detail::Section holder(wrapped, "ensemble.nominals[" + std::to_string(i) + "]");
      e.nominals.push_back(holder.vector("v", n));
    }
    e.half_width = s.vector("half_width", n);
    auto w = s.sub("walk");
    e.walk.footsteps = w.small_int("footsteps");
    e.walk.noise_scale = w.number("noise_scale");
    e.walk.seed = w.unsigned_int("seed");
    w.finish();
    s.finish();
    c.ensemble = std::move(e);
  }
  root.finish();
  validate(c);
  return c;
}

// ---------------------------------------------------------------------------
// Defaults
// ---------------------------------------------------------------------------

inline ExperimentConfig default_config(Environment env) {
  constexpr double kPi = std::numbers::pi;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  constexpr double kDeg = kPi / 180.0;
  ExperimentConfig c;
  c.environment = env;
  c.output_dir = std::string("runs/") + environment_name(env);
  switch (env) {
    case Environment::CartPole: {
      c.cost.q = Eigen::Vector4d(0.5, 1.0, 0.1, 0.1).asDiagonal();
      c.cost.q_final = c.cost.q;
      c.cost.r_diag = Eigen::VectorXd::Constant(1, 0.1);
      c.cost.target = Eigen::Vector4d(0.0, kPi, 0.0, 0.0);
      c.cost.u_max = Eigen::VectorXd::Constant(1, 10.0);
      c.penalty.kind = cost::PenaltyKind::Logistic;
      c.penalty.c_map = Eigen::MatrixXd::Zero(2, 4);
      c.penalty.c_map(0, 0) = 1.0;
      c.penalty.c_map(1, 2) = 1.0;
      c.penalty.b_min = Eigen::Vector2d(-1.5, -2.5);
      c.penalty.b_max = Eigen::Vector2d(1.5, 2.5);
      c.penalty.height = 5.0;
      c.dt = 1.0 / 110.0;
      c.steps = 275;
      c.initial_state.nominal = Eigen::VectorXd::Zero(4);
      c.initial_state.half_width = Eigen::VectorXd::Zero(4);
      c.network.lstm_hidden = {16, 16};
      c.network.init = fbsde::InitMode::Fixed;
      c.network.input_scales = {1.5, kPi, 2.5, 2.0 * kPi};
      c.network.output_scales.assign(4, 1.0);
      break;
    }
    case Environment::Biped: {
      c.cost.q = 10.0 * Eigen::MatrixXd::Identity(10, 10);
      c.cost.q_final = 10.0 * c.cost.q;
      c.cost.r_diag = Eigen::Vector4d(2.0, 0.2, 0.2, 2.0);
      c.cost.target.resize(10);
      c.cost.target << 0.10, 0.50, -0.10, -0.35, -0.40, -1.50, -0.50, 0.00, -0.55, -2.00;
      c.cost.u_max = Eigen::VectorXd::Constant(4, 1e3);
      c.cost.control = cost::ControlCostKind::Quadratic;
      c.penalty.kind = cost::PenaltyKind::Relu;
      c.penalty.c_map = Eigen::MatrixXd::Zero(1, 10);
      c.penalty.c_map(0, 3) = 1.0;
      c.penalty.c_map(0, 4) = -1.0;
      c.penalty.b_min = Eigen::VectorXd::Zero(1);
      c.penalty.b_max = Eigen::VectorXd::Constant(1, kInf);
      c.penalty.alpha = 10.0;
      c.schedule.enabled = false;
      c.schedule.k = 1.0;
      c.dt = 0.01;
      c.steps = 40;
      c.hybrid = true;
      c.train.iterations = 6000;
      c.train.batch = 64;
      c.initial_state.nominal = c.cost.target;
      c.initial_state.half_width.resize(10);
      c.initial_state.half_width << Eigen::VectorXd::Constant(5, 3.0 * kDeg), Eigen::VectorXd::Constant(5, 9.5 * kDeg);
      c.network.lstm_hidden = {32, 32};
      c.network.init = fbsde::InitMode::Network;
      c.network.input_scales = {0.5, 0.5, 0.5, 0.5, 0.5, 2.0, 2.0, 2.0, 2.0, 2.0};
      c.network.output_scales.assign(10, 300.0);
      break;
    }
    case Environment::LqToy: {
      c.cost.q = Eigen::MatrixXd::Identity(2, 2);
      c.cost.q_final = Eigen::MatrixXd::Identity(2, 2);
      c.cost.r_diag = Eigen::VectorXd::Constant(1, 50.0);
      c.cost.target = Eigen::VectorXd::Zero(2);
      c.cost.u_max = Eigen::VectorXd::Constant(1, 100.0);
      c.penalty.kind = cost::PenaltyKind::None;
      c.penalty.c_map = Eigen::MatrixXd::Zero(0, 2);
      c.penalty.b_min.resize(0);
      c.penalty.b_max.resize(0);
      c.schedule.enabled = false;
      c.dt = 0.05;
      c.steps = 20;
      c.train.iterations = 2000;
      c.train.batch = 64;
      c.initial_state.nominal = Eigen::Vector2d(1.0, 0.0);
      c.initial_state.half_width = Eigen::VectorXd::Zero(2);
      c.network.lstm_hidden = {16, 16};
      c.network.init = fbsde::InitMode::Fixed;
      c.network.input_scales = {1.0, 1.0};
      c.network.output_scales.assign(2, 1.0);
      break;
    }
  }
  c.penalty.k = c.schedule.k;
  c.train.eval_trials = c.eval.trials;
  return c;
}

/// Biped defaults plus a three-member ensemble seeded at the target state;
/// the other two nominals are generated during training.
inline ExperimentConfig default_ensemble_config() {
  ExperimentConfig c = default_config(Environment::Biped);
  c.output_dir = "runs/biped_ensemble";
  EnsembleSettings e;
  e.size = 3;
  e.nominals = {c.cost.target};
  e.half_width = c.initial_state.half_width;
  c.ensemble = e;
  return c;
}

// ---------------------------------------------------------------------------
// Loading and overrides
// ---------------------------------------------------------------------------

/// Applies "a.b.c=value". The value is parsed as JSON when possible and
/// otherwise taken as a string. The target key must already exist.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects path=value (got \"" + assignment + "\")");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  std::string walked;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    walked = detail::join(walked, key);
    if (node->is_object()) {
      auto it = node->find(key);
      if (it == node->end()) throw ConfigError("unknown key: " + walked);
      node = &*it;
    } else if (node->is_array()) {
      std::size_t idx = 0;
      try {
        std::size_t used = 0;
        idx = std::stoul(key, &used);
        if (used != key.size()) throw std::invalid_argument(key);
      } catch (const std::exception&) {
        throw ConfigError("list index expected at " + walked);
      }
      if (idx >= node->size()) throw ConfigError("index out of range: " + walked);
      node = &(*node)[idx];
    } else {
      throw ConfigError("cannot descend into " + walked);
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

/// Reads, overrides, applies DFBSDE_OUTPUT_DIR when set, parses and validates.
inline ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  json doc = read_json_file(path);
  for (const auto& o : overrides) apply_override(doc, o);
  if (const char* env = std::getenv("DFBSDE_OUTPUT_DIR"); env != nullptr && *env != '\0') {
    if (doc.is_object() && doc.contains("output_dir")) doc["output_dir"] = env;
  }
  return from_json(doc);
}

}  // namespace dfbsde::config
