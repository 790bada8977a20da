#pragma once

// Finite-difference gradient suite: random dense graphs, stacked LSTMs and
// short end-to-end FBSDE rollouts. Every check compares each parameter
// gradient with a central difference (see gradcheck.hpp).

#include <string>
#include <vector>

#include "dfbsde/config.hpp"
#include "dfbsde/experiment.hpp"
#include "dfbsde/gradcheck.hpp"
#include "dfbsde/layers.hpp"
#include "dfbsde/rng.hpp"

namespace dfbsde::check {

enum class Subset { All, Dense, Lstm, Rollout };

inline Subset parse_subset(const std::string& s) {
  if (s == "all") return Subset::All;
  if (s == "dense") return Subset::Dense;
  if (s == "lstm") return Subset::Lstm;
  if (s == "rollout") return Subset::Rollout;
  throw UsageError("gradcheck subset must be all, dense, lstm or rollout");
}

namespace detail {

using ad::Matrix;
using ad::ParamStore;
using ad::Tape;
using ad::Var;

inline Matrix random_input(int rows, int cols, std::uint64_t seed, std::uint64_t key, double scale = 1.0) {
  return nn::uniform_init(rows, cols, scale, seed, key);
}

/// MLP with a random activation per layer, followed by a mix of elementwise,
/// shape and reduction ops.
inline GradCheckResult dense_graph(std::uint64_t seed, int index, const GradCheckOptions& opt) {
  static const nn::Activation kActs[] = {nn::Activation::Tanh, nn::Activation::Sigmoid, nn::Activation::Identity};
  const auto key = static_cast<std::uint64_t>(index);
  const int in = 2 + static_cast<int>(rng::uniform(seed, rng::kTest, key, 0) * 3);
  std::vector<int> sizes;
  const int depth = 1 + static_cast<int>(rng::uniform(seed, rng::kTest, key, 1) * 3);
  for (int l = 0; l < depth; ++l) sizes.push_back(2 + static_cast<int>(rng::uniform(seed, rng::kTest, key, 2 + l) * 4));
  const auto act = kActs[static_cast<int>(rng::uniform(seed, rng::kTest, key, 9) * 3)];

  ParamStore store;
  const auto mlp = nn::make_mlp(store, "mlp", in, sizes, act, seed + key);
  const int extra = store.add("extra", random_input(sizes.back(), 2, seed, 100 + key));
  const Matrix x = random_input(3, in, seed, 200 + key, 1.5);
  auto loss = [&](Tape& t) {
    Var h = mlp.forward(t, store, t.constant(x));
    Var w = t.matmul(h, t.param(store, extra));
    Var pos = t.add_scalar(t.square(w), 1.0);
    Var mixed = t.concat_cols({t.log(pos), t.exp(t.scale(w, 0.3)), t.div(h, t.add_scalar(t.square(h), 2.0))});
    Var part = t.slice_cols(mixed, 1, 2);
    return t.add(t.sum(t.mul(part, part)), t.sum(t.row_sum(mixed)));
  };
  return finite_difference_check("dense[" + std::to_string(index) + "]", store, loss, opt);
}

inline GradCheckResult lstm_graph(std::uint64_t seed, int index, const GradCheckOptions& opt) {
  const auto key = static_cast<std::uint64_t>(index);
  ParamStore store;
  const std::vector<int> hidden = index % 2 == 0 ? std::vector<int>{4, 3} : std::vector<int>{5};
  const auto stack = nn::make_lstm_stack(store, "lstm", 3, hidden, 2, seed + key);
  const Matrix x = random_input(3, 3, seed, 300 + key, 1.5);
  const Matrix h0 = random_input(3, hidden.front(), seed, 400 + key, 0.5);
  auto loss = [&](Tape& t) {
    std::vector<nn::LstmState> states;
    for (std::size_t l = 0; l < hidden.size(); ++l) {
      const Matrix init = l == 0 ? h0 : Matrix::Zero(3, hidden[l]);
      states.push_back({t.constant(init), t.constant(init)});
    }
    Var total = t.scalar_constant(0.0);
    Var xv = t.constant(x);
    for (int step = 0; step < 4; ++step) {
      Var y = stack.forward(t, store, xv, states);
      total = t.add(total, t.sum(t.square(y)));
      xv = t.tanh(t.concat_cols({y, t.slice_cols(xv, 0, 1)}));
    }
    return total;
  };
  return finite_difference_check("lstm[" + std::to_string(index) + "]", store, loss, opt);
}

inline fbsde::NetConfig small_net(const config::ExperimentConfig& c) {
  fbsde::NetConfig n = c.network;
  n.lstm_hidden = {3, 2};
  n.v0_layers = {3, 1};
  n.h0_hidden = 2;
  return n;
}

/// Two-step rollout of `c`'s environment through the FBSDE loss. In network
/// init mode a second check covers the value loss on a frozen batch, since
/// its targets are detached and a difference through the rollout would
/// also move them.
inline std::vector<GradCheckResult> rollout_graph(config::ExperimentConfig c, const std::string& name,
                                                  std::uint64_t seed, GradCheckOptions opt) {
  c.steps = 2;
  // Rollout losses carry more roundoff than the small graphs.
  opt.step = 3e-5;
  return experiment::dispatch(c, [&](auto prob) {
    using Model = decltype(prob.model);
    constexpr int n = Model::kStateDim;
    ParamStore store;
    const auto net = fbsde::make_value_net(store, n, small_net(c), seed);
    trainer::InitialStateSpec init = c.initial_state;
    if (init.fixed()) init.half_width = Eigen::VectorXd::Constant(n, 0.1);
    const Matrix x0 = trainer::sample_initial_states(init, 2, seed, rng::kTest, 0);
    const auto noise = trainer::sample_noise(2, 2, Model::kNoiseDim, prob.dt, seed, rng::kTest, 1, 4.0);
    std::vector<GradCheckResult> out;
    out.push_back(finite_difference_check(
        name, store,
        [&](ad::Tape& t) { return fbsde::fbsde_loss(t, fbsde::rollout(t, store, net, prob, x0, noise)); }, opt));
    if (net.init == fbsde::InitMode::Network) {
      const auto batch = fbsde::simulate(store, net, prob, x0, noise);
      out.push_back(finite_difference_check(
          name + ".value", store, [&](ad::Tape& t) { return fbsde::value_loss(t, store, net, batch, 1e-3); }, opt));
    }
    return out;
  });
}

}  // namespace detail

/// Runs the selected checks. `opt.corrupt` perturbs one analytic gradient
/// entry in every check (negative control).
inline std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, Subset subset,
                                                        const GradCheckOptions& opt = {}) {
  std::vector<GradCheckResult> out;
  const bool all = subset == Subset::All;
  if (all || subset == Subset::Dense) {
    for (int i = 0; i < 4; ++i) out.push_back(detail::dense_graph(seed, i, opt));
  }
  if (all || subset == Subset::Lstm) {
    for (int i = 0; i < 2; ++i) out.push_back(detail::lstm_graph(seed, i, opt));
  }
  if (all || subset == Subset::Rollout) {
    auto append = [&](std::vector<GradCheckResult> r) { out.insert(out.end(), r.begin(), r.end()); };
    append(detail::rollout_graph(config::default_config(config::Environment::CartPole), "rollout.cartpole", seed,
                                 opt));
    append(detail::rollout_graph(config::default_config(config::Environment::LqToy), "rollout.lq_toy", seed, opt));
    // O(1) state weights keep finite-difference roundoff below the comparison floor.
    auto biped = config::default_config(config::Environment::Biped);
    biped.cost.q = 0.1 * Eigen::MatrixXd::Identity(10, 10);
    biped.cost.q_final = biped.cost.q;
    append(detail::rollout_graph(biped, "rollout.biped_hybrid", seed, opt));
  }
  return out;
}

}  // namespace dfbsde::check
