// dfbsde: train, evaluate and inspect constrained FBSDE controllers.
//
// Exit codes: 0 ok, 1 failed check or internal error, 2 config or usage
// error (including a checkpoint whose shapes do not match the config),
// 3 training abort, 4 checkpoint I/O error.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dfbsde/dfbsde.hpp"

namespace {

using namespace dfbsde;

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitAbort = 3;
constexpr int kExitCheckpoint = 4;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "experiment config (JSON)")->required();
  cmd->add_option("--set", c.overrides, "override a config value, e.g. --set train.N_I=10");
}

int cmd_train(const Common& c, bool quiet) {
  const auto cfg = config::load_config(c.config, c.overrides);
  experiment::RunOptions opt;
  if (!quiet) opt.progress = [](const std::string& line) { std::cerr << line << '\n'; };
  const auto out = experiment::run_train(cfg, opt);
  std::cout << "iterations: " << out.iterations << "\nfinal k: " << out.final_k
            << "\ncheckpoint: " << out.checkpoint.string() << '\n';
  if (out.aborted) {
    std::cerr << "training aborted: " << out.reason << '\n';
    return kExitAbort;
  }
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::optional<int> trials;
  std::optional<std::uint64_t> seed;
  std::optional<double> noise_scale;
  std::optional<int> latency_calls;
};

int cmd_eval(const Common& c, const EvalArgs& a) {
  const auto cfg = config::load_config(c.config, c.overrides);
  auto es = cfg.eval;
  if (a.trials) es.trials = *a.trials;
  if (a.seed) es.seed = *a.seed;
  if (a.noise_scale) es.noise_scale = *a.noise_scale;
  if (a.latency_calls) es.latency_calls = *a.latency_calls;
  if (es.trials < 1) throw ConfigError("--trials must be >= 1");
  const auto out = experiment::run_eval(cfg, a.checkpoint, es);
  std::cout << trainer::to_json(out.metrics).dump(2) << "\nmetrics: " << out.metrics_path.string()
            << "\ntrajectories: " << out.trajectories_path.string() << '\n';
  return kExitOk;
}

int cmd_walk(const Common& c, const std::string& manifest) {
  const auto cfg = config::load_config(c.config, c.overrides);
  const auto out = experiment::run_walk(cfg, manifest);
  std::cout << "footsteps: " << out.trace.footsteps.size() << "\nmembers:";
  for (const auto& f : out.trace.footsteps) std::cout << ' ' << f.member;
  std::cout << "\ncsv: " << out.csv_path.string() << '\n';
  if (out.trace.failed) {
    std::cerr << "walk diverged in footstep " << out.trace.failed_footstep << " at step " << out.trace.failed_step
              << '\n';
    return kExitFailed;
  }
  return kExitOk;
}

struct PenaltyArgs {
  std::string kind = "logistic";
  double b_min = 1.0;
  double b_max = 5.0;
  double height = 5.0;
  double alpha = 1.0;
  std::vector<double> ks{1.0, 2.0, 5.0};
  double lo = -1.0;
  double hi = 7.0;
  int samples = 801;
  std::string out = "-";
};

int cmd_penalty_plot(const PenaltyArgs& a) {
  cost::PenaltySpec spec;
  if (a.kind == "logistic") {
    spec.kind = cost::PenaltyKind::Logistic;
  } else if (a.kind == "relu") {
    spec.kind = cost::PenaltyKind::Relu;
  } else {
    throw UsageError("--kind must be logistic or relu");
  }
  spec.c_map = Eigen::MatrixXd::Ones(1, 1);
  spec.b_min = Eigen::VectorXd::Constant(1, a.b_min);
  spec.b_max = Eigen::VectorXd::Constant(1, a.b_max);
  spec.height = a.height;
  spec.alpha = a.alpha;
  for (double k : a.ks) {
    spec.k = k;
    spec.validate(1);
  }
  if (a.out == "-") {
    io::write_penalty_curves(std::cout, spec, a.ks, a.lo, a.hi, a.samples);
  } else {
    auto os = io::open_output(a.out);
    io::write_penalty_curves(os, spec, a.ks, a.lo, a.hi, a.samples);
  }
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& subset, bool corrupt) {
  check::GradCheckOptions opt;
  opt.corrupt = corrupt;
  const auto results = check::run_gradcheck_suite(seed, check::parse_subset(subset), opt);
  double worst = 0.0;
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed() ? "PASS " : "FAIL ") << r.name << "  params " << r.checked << "  max rel "
              << io::format_number(r.max_rel_error) << "  max abs " << io::format_number(r.max_abs_error) << '\n';
    worst = std::max(worst, r.max_rel_error);
    ok = ok && r.passed();
  }
  std::cout << "max relative error: " << io::format_number(worst) << '\n';
  return ok ? kExitOk : kExitFailed;
}

int cmd_export_config(const std::string& env, const std::string& out) {
  const auto cfg = env == "biped_ensemble" ? config::default_ensemble_config()
                                           : config::default_config(config::parse_environment(env));
  const std::string text = config::to_json(cfg).dump(2) + "\n";
  if (out == "-") {
    std::cout << text;
  } else {
    auto os = io::open_output(out);
    os << text;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained stochastic optimal control with deep FBSDE controllers"};
  app.require_subcommand(1);

  Common train_common;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "train a controller (or an ensemble) from a config");
  add_common(train, train_common);
  train->add_flag("-q,--quiet", quiet, "no progress lines on stderr");

  Common eval_common;
  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint; writes metrics and trajectories");
  add_common(eval, eval_common);
  eval->add_option("--checkpoint", eval_args.checkpoint, "checkpoint manifest (model.json)")->required();
  eval->add_option("--trials", eval_args.trials, "number of evaluation trials");
  eval->add_option("--seed", eval_args.seed, "evaluation seed");
  eval->add_option("--noise-scale", eval_args.noise_scale, "noise multiplier; 0 for noise-free rollouts");
  eval->add_option("--latency-calls", eval_args.latency_calls, "single-step controller calls to time");

  Common walk_common;
  std::string manifest;
  auto* walk = app.add_subcommand("walk", "multi-footstep biped walk with a controller ensemble");
  add_common(walk, walk_common);
  walk->add_option("--manifest", manifest, "ensemble manifest; omit to walk with untrained members");

  PenaltyArgs pen;
  auto* plot = app.add_subcommand("penalty-plot", "sample p(x) for c(x) = x as CSV (kind,k,x,p)");
  plot->add_option("--kind", pen.kind, "logistic or relu")->capture_default_str();
  plot->add_option("--b-min", pen.b_min, "lower bound")->capture_default_str();
  plot->add_option("--b-max", pen.b_max, "upper bound")->capture_default_str();
  plot->add_option("--L", pen.height, "logistic height")->capture_default_str();
  plot->add_option("--alpha", pen.alpha, "ReLU weight")->capture_default_str();
  plot->add_option("--k", pen.ks, "steepness values")->delimiter(',')->capture_default_str();
  plot->add_option("--lo", pen.lo, "range start")->capture_default_str();
  plot->add_option("--hi", pen.hi, "range end")->capture_default_str();
  plot->add_option("--samples", pen.samples, "samples per curve")->capture_default_str();
  plot->add_option("-o,--out", pen.out, "output file, - for stdout")->capture_default_str();

  std::uint64_t gc_seed = 0;
  std::string gc_subset = "all";
  bool gc_corrupt = false;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--seed", gc_seed, "seed for random graphs")->capture_default_str();
  gc->add_option("--subset", gc_subset, "all, dense, lstm or rollout")->capture_default_str();
  gc->add_flag("--corrupt", gc_corrupt, "perturb one analytic gradient per check (must fail)");

  std::string ex_env = "cartpole";
  std::string ex_out = "-";
  auto* ex = app.add_subcommand("export-config", "print a default config");
  ex->add_option("--env", ex_env, "cartpole, biped, biped_ensemble or lq_toy")->capture_default_str();
  ex->add_option("-o,--out", ex_out, "output file, - for stdout")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_common, quiet);
    if (*eval) return cmd_eval(eval_common, eval_args);
    if (*walk) return cmd_walk(walk_common, manifest);
    if (*plot) return cmd_penalty_plot(pen);
    if (*gc) return cmd_gradcheck(gc_seed, gc_subset, gc_corrupt);
    if (*ex) return cmd_export_config(ex_env, ex_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return e.shape_mismatch() ? kExitConfig : kExitCheckpoint;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailed;
  }
  return kExitFailed;
}
