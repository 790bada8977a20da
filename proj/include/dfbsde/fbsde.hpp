#pragma once

// Joint forward rollout of the state SDE and the value process, and the losses
// built on it.
//
// For k = 0..N-1, per batch row:
//   V_x = vx_net(x_k / scales, t_k / T, H_k)
//   u_k = control law from G(x_k)^T V_x
//   y_{k+1} = y_k - (q(x_k) + p(x_k) + r(u_k)) dt + V_x^T Sigma(x_k) dw_k
//   x_{k+1} = x_k + (F + G u_k) dt + Sigma dw_k
// The per-step physics, costs and control law form one tape node per step whose
// row Jacobians come from forward-mode duals over [x_k, V_x].

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "dfbsde/dual.hpp"
#include "dfbsde/dynamics.hpp"
#include "dfbsde/penalties.hpp"
#include "dfbsde/value_net.hpp"

namespace dfbsde::fbsde {

enum class Reduction { Sum, Mean };

template <class Model>
concept HasReset = requires(const Model& m, const std::array<double, Model::kStateDim>& x) {
  { m.template heel_strike<double>(x) } -> std::same_as<std::array<double, Model::kStateDim>>;
};

template <dyn::SdeModel Model>
struct Problem {
  Model model;
  cost::CostSpec cost;
  cost::PenaltySpec penalty;
  double dt = 0.01;
  int steps = 100;
  bool reset_terminal = false;  // terminal cost evaluated after the reset map

  double horizon() const { return dt * steps; }

  void validate() const {
    if (!(dt > 0.0)) throw ConfigError("train.dt must be positive");
    if (steps < 1) throw ConfigError("train.N must be >= 1");
    cost.validate(Model::kStateDim, Model::kControlDim);
    penalty.validate(Model::kStateDim);
    if constexpr (!HasReset<Model>) {
      if (reset_terminal) throw ConfigError("hybrid mode needs a model with a reset map");
    }
  }
};

struct RolloutOptions {
  bool strict = false;           // throw DivergenceError instead of dropping rows
  bool detach_dynamics = false;  // stop gradients through x_{k+1}
  double divergence_bound = 1e6;
};

/// Stored per-step quantities. Each entry of the step vectors is M x (width).
struct RolloutBatch {
  int rows = 0;
  int steps = 0;
  double dt = 0.0;
  std::vector<Matrix> x;            // N+1, M x n
  std::vector<Matrix> y;            // N+1, M x 1
  std::vector<Matrix> vx;           // N,   M x n
  std::vector<Matrix> u;            // N,   M x m
  std::vector<Matrix> dw;           // N,   M x nu
  std::vector<Matrix> run_cost;     // N,   M x 1, q + p + r
  std::vector<Matrix> penalty;      // N,   M x 1, p alone
  std::vector<Matrix> vx_sigma_dw;  // N,   M x 1
  Matrix terminal_state;            // M x n, after the reset map in hybrid mode
  Eigen::VectorXd terminal_cost;    // M
  std::vector<int> diverged_at;     // per row; -1 when the row stayed finite

  bool alive(int r) const { return diverged_at[static_cast<std::size_t>(r)] < 0; }
  int alive_count() const {
    return static_cast<int>(std::count(diverged_at.begin(), diverged_at.end(), -1));
  }
};

// ---------------------------------------------------------------------------
// Per-row step
// ---------------------------------------------------------------------------

template <dyn::SdeModel Model, class T>
struct StepRow {
  static constexpr int n = Model::kStateDim;
  static constexpr int m = Model::kControlDim;
  static constexpr int kWidth = n + m + 4;  // [x', u, run, p, r, noise]
  std::array<T, kWidth> out;
};

template <dyn::SdeModel Model, class T>
StepRow<Model, T> step_row(const Problem<Model>& prob, const dyn::StateOf<Model, T>& x,
                           const dyn::StateOf<Model, T>& vx, const dyn::NoiseOf<Model, double>& dw) {
  constexpr int n = Model::kStateDim;
  constexpr int m = Model::kControlDim;
  constexpr int nu = Model::kNoiseDim;
  const auto terms = prob.model.template terms<T>(x);

  std::array<T, m> g;
  for (int j = 0; j < m; ++j) {
    T s(0.0);
    for (int i = 0; i < n; ++i) s += terms.control[i * m + j] * vx[i];
    g[j] = s;
  }
  const auto ctrl = cost::control_from_gradient<T, m>(g, prob.cost);

  StepRow<Model, T> row;
  for (int i = 0; i < n; ++i) {
    T f = terms.drift[i];
    for (int j = 0; j < m; ++j) f += terms.control[i * m + j] * ctrl.u[j];
    T noise(0.0);
    for (int j = 0; j < nu; ++j) noise += terms.diffusion[i * nu + j] * dw[j];
    row.out[i] = x[i] + (f * prob.dt + noise);
  }
  for (int j = 0; j < m; ++j) row.out[n + j] = ctrl.u[j];
  const T p = cost::penalty(x, prob.penalty);
  row.out[n + m] = cost::quadratic_form(x, prob.cost.q, prob.cost.target) + p + ctrl.cost;
  row.out[n + m + 1] = p;
  row.out[n + m + 2] = ctrl.cost;
  T corr(0.0);
  for (int i = 0; i < n; ++i) {
    T sdw(0.0);
    for (int j = 0; j < nu; ++j) sdw += terms.diffusion[i * nu + j] * dw[j];
    corr += vx[i] * sdw;
  }
  row.out[n + m + 3] = corr;
  return row;
}

/// q_N at the terminal state, after the reset map when the problem asks for it.
template <dyn::SdeModel Model, class T>
T terminal_row(const Problem<Model>& prob, const dyn::StateOf<Model, T>& x, dyn::StateOf<Model, T>* reset_out) {
  dyn::StateOf<Model, T> xr = x;
  if constexpr (HasReset<Model>) {
    if (prob.reset_terminal) xr = prob.model.template heel_strike<T>(x);
  }
  if (reset_out != nullptr) *reset_out = xr;
  return cost::terminal_cost(xr, prob.cost);
}

namespace detail {

template <std::size_t K>
bool finite_bounded(const std::array<double, K>& v, std::size_t count, double bound) {
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::isfinite(v[i]) || std::abs(v[i]) > bound) return false;
  }
  return true;
}

template <int N>
std::array<double, N> row_array(const Matrix& m, Eigen::Index r, Eigen::Index offset = 0) {
  std::array<double, N> a;
  for (int i = 0; i < N; ++i) a[i] = m(r, offset + i);
  return a;
}

}  // namespace detail

/// Advances every live row one step. Rows that leave the finite region (or
/// whose physics throws) are frozen in place and flagged; strict mode throws.
/// When `jac` is non-null it receives the row Jacobians w.r.t. [x, V_x].
template <dyn::SdeModel Model>
Matrix advance(const Problem<Model>& prob, const Matrix& x, const Matrix& vx, const Matrix& dw, int step,
               std::vector<int>& diverged_at, const RolloutOptions& opt, Matrix* jac) {
  constexpr int n = Model::kStateDim;
  constexpr int nu = Model::kNoiseDim;
  constexpr int width = StepRow<Model, double>::kWidth;
  constexpr int in = 2 * n;
  const Eigen::Index rows = x.rows();
  Matrix out = Matrix::Zero(rows, width);
  if (jac != nullptr) *jac = Matrix::Zero(rows, width * in);

  for (Eigen::Index r = 0; r < rows; ++r) {
    auto& dead = diverged_at[static_cast<std::size_t>(r)];
    const auto xr = detail::row_array<n>(x, r);
    const auto wr = detail::row_array<nu>(dw, r);
    bool ok = dead < 0;
    if (ok) {
      try {
        if (jac != nullptr) {
          using D = Dual<in>;
          std::array<D, n> xd;
          std::array<D, n> vd;
          for (int i = 0; i < n; ++i) {
            xd[i] = D::variable(xr[i], i);
            vd[i] = D::variable(vx(r, i), n + i);
          }
          const auto res = step_row<Model, D>(prob, xd, vd, wr);
          std::array<double, width> vals;
          for (int o = 0; o < width; ++o) vals[o] = res.out[o].v;
          ok = detail::finite_bounded(vals, n, opt.divergence_bound) && detail::finite_bounded(vals, width, 1e300);
          if (ok) {
            for (int o = 0; o < width; ++o) {
              out(r, o) = vals[o];
              for (int i = 0; i < in; ++i) (*jac)(r, o * in + i) = res.out[o].d[i];
            }
          }
        } else {
          const auto vr = detail::row_array<n>(vx, r);
          const auto res = step_row<Model, double>(prob, xr, vr, wr);
          ok = detail::finite_bounded(res.out, n, opt.divergence_bound) &&
               detail::finite_bounded(res.out, width, 1e300);
          if (ok) {
            for (int o = 0; o < width; ++o) out(r, o) = res.out[o];
          }
        }
      } catch (const NumericalError&) {
        ok = false;
      }
      if (!ok) {
        if (opt.strict) throw DivergenceError("rollout diverged in batch row " + std::to_string(r), step);
        dead = step;
      }
    }
    if (!ok) {
      // Frozen row: x' = x, everything else zero.
      for (int i = 0; i < n; ++i) {
        out(r, i) = xr[i];
        if (jac != nullptr) (*jac)(r, i * in + i) = 1.0;
      }
    }
  }
  return out;
}

template <dyn::SdeModel Model>
Eigen::VectorXd terminal_values(const Problem<Model>& prob, const Matrix& x, std::vector<int>& diverged_at,
                                int step, const RolloutOptions& opt, Matrix& reset, Matrix* jac) {
  constexpr int n = Model::kStateDim;
  const Eigen::Index rows = x.rows();
  Eigen::VectorXd q = Eigen::VectorXd::Zero(rows);
  reset = x;
  if (jac != nullptr) *jac = Matrix::Zero(rows, n);
  for (Eigen::Index r = 0; r < rows; ++r) {
    auto& dead = diverged_at[static_cast<std::size_t>(r)];
    if (dead >= 0) continue;
    const auto xr = detail::row_array<n>(x, r);
    bool ok = true;
    try {
      if (jac != nullptr) {
        using D = Dual<n>;
        std::array<D, n> xd;
        for (int i = 0; i < n; ++i) xd[i] = D::variable(xr[i], i);
        std::array<D, n> xo;
        const D v = terminal_row<Model, D>(prob, xd, &xo);
        ok = std::isfinite(v.v);
        q(r) = v.v;
        for (int i = 0; i < n; ++i) {
          (*jac)(r, i) = v.d[i];
          reset(r, i) = xo[i].v;
        }
      } else {
        std::array<double, n> xo;
        q(r) = terminal_row<Model, double>(prob, xr, &xo);
        ok = std::isfinite(q(r));
        for (int i = 0; i < n; ++i) reset(r, i) = xo[i];
      }
    } catch (const NumericalError&) {
      ok = false;
    }
    if (!ok) {
      if (opt.strict) throw DivergenceError("terminal cost is not finite in batch row " + std::to_string(r), step);
      dead = step;
      q(r) = 0.0;
      reset.row(r) = x.row(r);
      if (jac != nullptr) jac->row(r).setZero();
    }
  }
  return q;
}

/// Tape handles for the pieces the losses need.
struct TapeRollout {
  RolloutBatch batch;
  Var y0;
  Var y_final;
  Var terminal;
};

template <dyn::SdeModel Model>
void check_rollout_inputs(const Problem<Model>& prob, const Matrix& x0, const std::vector<Matrix>& noise) {
  if (x0.cols() != Model::kStateDim) throw ConfigError("rollout: x0 has the wrong state dimension");
  if (static_cast<int>(noise.size()) != prob.steps) throw ConfigError("rollout: need one noise block per step");
  for (const auto& w : noise) {
    if (w.rows() != x0.rows() || w.cols() != Model::kNoiseDim) throw ConfigError("rollout: noise block shape mismatch");
  }
}

inline void unpack_step(RolloutBatch& b, const Matrix& out, int n, int m) {
  b.x.push_back(out.leftCols(n));
  b.u.push_back(out.middleCols(n, m));
  b.run_cost.push_back(out.col(n + m));
  b.penalty.push_back(out.col(n + m + 1));
  b.vx_sigma_dw.push_back(out.col(n + m + 3));
}

/// Full rollout recorded on the tape for backpropagation through time.
template <dyn::SdeModel Model>
TapeRollout rollout(Tape& tape, const ParamStore& store, const ValueNet& net, const Problem<Model>& prob,
                    const Matrix& x0, const std::vector<Matrix>& noise, const RolloutOptions& opt = {}) {
  constexpr int n = Model::kStateDim;
  constexpr int m = Model::kControlDim;
  check_rollout_inputs(prob, x0, noise);
  if (net.state_dim != n) throw ConfigError("rollout: network state dimension does not match the model");
  TapeRollout tr;
  RolloutBatch& b = tr.batch;
  b.rows = static_cast<int>(x0.rows());
  b.steps = prob.steps;
  b.dt = prob.dt;
  b.diverged_at.assign(static_cast<std::size_t>(b.rows), -1);
  b.x.push_back(x0);
  b.dw = noise;

  Var x = tape.constant(x0);
  tr.y0 = initial_value(tape, store, net, x);
  Var y = tr.y0;
  b.y.push_back(tape.value(y));
  auto states = initial_states(tape, store, net, x);
  const double horizon = prob.horizon();

  for (int k = 0; k < prob.steps; ++k) {
    Var vx = net.vx.forward(tape, store, network_input(tape, net, x, k * prob.dt / horizon), states);
    b.vx.push_back(tape.value(vx));
    Matrix jac;
    Matrix out = advance(prob, tape.value(x), tape.value(vx), noise[static_cast<std::size_t>(k)], k, b.diverged_at,
                         opt, &jac);
    unpack_step(b, out, n, m);
    Var node = tape.rowwise(tape.concat_cols({x, vx}), std::move(out), std::move(jac));
    Var run = tape.slice_cols(node, n + m, 1);
    Var corr = tape.slice_cols(node, n + m + 3, 1);
    y = tape.add(tape.sub(y, tape.scale(run, prob.dt)), corr);
    b.y.push_back(tape.value(y));
    Var x_next = tape.slice_cols(node, 0, n);
    x = opt.detach_dynamics ? tape.constant(tape.value(x_next)) : x_next;
  }
  tr.y_final = y;

  Matrix tjac;
  b.terminal_cost = terminal_values(prob, tape.value(x), b.diverged_at, prob.steps, opt, b.terminal_state, &tjac);
  tr.terminal = tape.rowwise(x, Matrix(b.terminal_cost), std::move(tjac));
  return tr;
}

/// Same arithmetic without a tape; values are bit-identical to `rollout`.
template <dyn::SdeModel Model>
RolloutBatch simulate(const ParamStore& store, const ValueNet& net, const Problem<Model>& prob, const Matrix& x0,
                      const std::vector<Matrix>& noise, const RolloutOptions& opt = {}) {
  constexpr int n = Model::kStateDim;
  constexpr int m = Model::kControlDim;
  check_rollout_inputs(prob, x0, noise);
  if (net.state_dim != n) throw ConfigError("simulate: network state dimension does not match the model");
  RolloutBatch b;
  b.rows = static_cast<int>(x0.rows());
  b.steps = prob.steps;
  b.dt = prob.dt;
  b.diverged_at.assign(static_cast<std::size_t>(b.rows), -1);
  b.x.push_back(x0);
  b.dw = noise;
  Matrix y = initial_value(store, net, x0);
  b.y.push_back(y);
  auto states = initial_states(store, net, x0);
  const double horizon = prob.horizon();
  for (int k = 0; k < prob.steps; ++k) {
    const Matrix& x = b.x.back();
    Matrix vx = net.vx.eval(store, network_input(net, x, k * prob.dt / horizon), states);
    Matrix out = advance(prob, x, vx, noise[static_cast<std::size_t>(k)], k, b.diverged_at, opt, nullptr);
    b.vx.push_back(std::move(vx));
    unpack_step(b, out, n, m);
    y = ((y - out.col(n + m) * prob.dt) + out.col(n + m + 3)).eval();
    b.y.push_back(y);
  }
  b.terminal_cost = terminal_values(prob, b.x.back(), b.diverged_at, prob.steps, opt, b.terminal_state, nullptr);
  return b;
}

// ---------------------------------------------------------------------------
// Losses and targets
// ---------------------------------------------------------------------------

inline Matrix live_mask(const RolloutBatch& b) {
  Matrix mask(b.rows, 1);
  for (int r = 0; r < b.rows; ++r) mask(r, 0) = b.alive(r) ? 1.0 : 0.0;
  return mask;
}

/// sum_j (q_N(x_N^j) - y_N^j)^2 over live rows; Mean divides by the live count.
inline Var fbsde_loss(Tape& tape, const TapeRollout& tr, Reduction red = Reduction::Sum) {
  const Matrix mask = live_mask(tr.batch);
  Var res = tape.sub(tr.terminal, tr.y_final);
  Var loss = tape.sum(tape.mul(tape.square(res), tape.constant(mask)));
  if (red == Reduction::Mean) loss = tape.scale(loss, 1.0 / std::max(1, tr.batch.alive_count()));
  return loss;
}

/// Cost-to-go targets V~(x_k, t_k), k = 0..N, each M x 1. Constants.
inline std::vector<Matrix> value_targets(const RolloutBatch& b) {
  std::vector<Matrix> v(static_cast<std::size_t>(b.steps) + 1);
  v[static_cast<std::size_t>(b.steps)] = Matrix(b.terminal_cost);
  for (int k = b.steps - 1; k >= 0; --k) {
    const auto ku = static_cast<std::size_t>(k);
    v[ku] = v[ku + 1] + (b.run_cost[ku] * b.dt - b.vx_sigma_dw[ku]);
  }
  return v;
}

/// Per-row episode cost, the cost-to-go target at t_0.
inline Eigen::VectorXd episode_costs(const RolloutBatch& b) {
  Eigen::VectorXd c = Eigen::VectorXd(b.terminal_cost);
  for (int k = b.steps - 1; k >= 0; --k) {
    const auto ku = static_cast<std::size_t>(k);
    c += (b.run_cost[ku] * b.dt - b.vx_sigma_dw[ku]).col(0);
  }
  return c;
}

/// lambda * sum_j sum_{k=0..N} (v0_head(x_k^j, t_k) - V~(x_k^j, t_k))^2 over live rows.
/// Inputs and targets are detached.
inline Var value_loss(Tape& tape, const ParamStore& store, const ValueNet& net, const RolloutBatch& b,
                      double lambda, Reduction red = Reduction::Sum) {
  const auto targets = value_targets(b);
  const double horizon = b.dt * b.steps;
  const Eigen::Index rows = b.rows;
  const Eigen::Index total = rows * (b.steps + 1);
  Matrix inputs(total, net.state_dim + 1);
  Matrix target(total, 1);
  Matrix mask(total, 1);
  const Matrix live = live_mask(b);
  for (int k = 0; k <= b.steps; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    inputs.middleRows(k * rows, rows) = network_input(net, b.x[ku], k * b.dt / horizon);
    target.middleRows(k * rows, rows) = targets[ku];
    mask.middleRows(k * rows, rows) = live;
  }
  Var pred = value_head(tape, store, net, inputs);
  Var res = tape.sub(pred, tape.constant(target));
  Var loss = tape.sum(tape.mul(tape.square(res), tape.constant(mask)));
  if (red == Reduction::Mean) loss = tape.scale(loss, 1.0 / std::max(1, b.alive_count()));
  return tape.scale(loss, lambda);
}

/// L_FBSDE + lambda L_V.
inline Var hybrid_loss(Tape& tape, const ParamStore& store, const ValueNet& net, const TapeRollout& tr,
                       double lambda, Reduction red = Reduction::Sum) {
  Var l = fbsde_loss(tape, tr, red);
  if (lambda == 0.0) return l;
  return tape.add(l, value_loss(tape, store, net, tr.batch, lambda, red));
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

/// Single-trajectory controller: one network step plus the control law per call.
template <dyn::SdeModel Model>
class Controller {
 public:
  Controller(const ParamStore& store, const ValueNet& net, const Problem<Model>& prob)
      : store_(&store), net_(&net), prob_(&prob) {}

  void reset(const dyn::StateOf<Model, double>& x0) {
    Matrix x(1, Model::kStateDim);
    for (int i = 0; i < Model::kStateDim; ++i) x(0, i) = x0[i];
    states_ = initial_states(*store_, *net_, x);
    step_ = 0;
  }

  dyn::ControlOf<Model, double> control(const dyn::StateOf<Model, double>& x) {
    constexpr int n = Model::kStateDim;
    constexpr int m = Model::kControlDim;
    if (states_.empty()) reset(x);
    Matrix xm(1, n);
    for (int i = 0; i < n; ++i) xm(0, i) = x[i];
    const Matrix vx = net_->vx.eval(*store_, network_input(*net_, xm, step_ * prob_->dt / prob_->horizon()), states_);
    ++step_;
    const auto terms = prob_->model.template terms<double>(x);
    std::array<double, m> g{};
    for (int j = 0; j < m; ++j) {
      for (int i = 0; i < n; ++i) g[j] += terms.control[i * m + j] * vx(0, i);
    }
    return cost::control_from_gradient<double, m>(g, prob_->cost).u;
  }

 private:
  const ParamStore* store_;
  const ValueNet* net_;
  const Problem<Model>* prob_;
  std::vector<nn::LstmValues> states_;
  int step_ = 0;
};

}  // namespace dfbsde::fbsde
