#pragma once

// Parameter bundle for the value-gradient network, the initial value head and
// the initial LSTM state head.
//
// Fixed-x0 mode: y0 is one trainable scalar and (H0, C0) are trainable rows.
// Network mode:  y0 = MLP([x / scales, t / T]) and (H0, C0) come from one small
//                MLP per LSTM layer and state (x0 / scales -> hidden).

#include <string>
#include <vector>

#include "dfbsde/autodiff.hpp"
#include "dfbsde/layers.hpp"

namespace dfbsde::fbsde {

using ad::Matrix;
using ad::ParamStore;
using ad::RowVector;
using ad::Tape;
using ad::Var;

enum class InitMode { Fixed, Network };

struct NetConfig {
  std::vector<int> lstm_hidden{16, 16};
  InitMode init = InitMode::Fixed;
  std::vector<int> v0_layers{8, 16, 8, 1};
  int h0_hidden = 8;
  std::vector<double> input_scales;   // one per state dimension
  std::vector<double> output_scales;  // V_x multipliers; empty means 1
  double v0_init = 0.0;
};

struct ValueNet {
  int state_dim = 0;
  InitMode init = InitMode::Fixed;
  nn::LstmStack vx;
  RowVector inv_scales;

  int v0_scalar = -1;
  nn::Mlp v0_mlp;

  std::vector<int> h0_rows;  // Fixed: 1 x hidden per layer
  std::vector<int> c0_rows;
  std::vector<nn::Mlp> h0_mlp;  // Network
  std::vector<nn::Mlp> c0_mlp;

  int layers() const { return static_cast<int>(vx.layers.size()); }
};

inline ValueNet make_value_net(ParamStore& store, int state_dim, const NetConfig& cfg, std::uint64_t seed) {
  if (state_dim < 1) throw ConfigError("value net: state dimension must be >= 1");
  if (cfg.lstm_hidden.empty()) throw ConfigError("network.lstm_hidden must list at least one layer");
  for (int h : cfg.lstm_hidden) {
    if (h < 1) throw ConfigError("network.lstm_hidden sizes must be >= 1");
  }
  if (static_cast<int>(cfg.input_scales.size()) != state_dim) {
    throw ConfigError("network.input_scales must have " + std::to_string(state_dim) + " entries");
  }
  ValueNet net;
  net.state_dim = state_dim;
  net.init = cfg.init;
  net.inv_scales.resize(state_dim);
  for (int i = 0; i < state_dim; ++i) {
    const double s = cfg.input_scales[static_cast<std::size_t>(i)];
    if (!(s > 0.0)) throw ConfigError("network.input_scales entries must be positive");
    net.inv_scales(i) = 1.0 / s;
  }
  RowVector out_scale;
  if (!cfg.output_scales.empty()) {
    if (static_cast<int>(cfg.output_scales.size()) != state_dim) {
      throw ConfigError("network.output_scales must have " + std::to_string(state_dim) + " entries");
    }
    out_scale.resize(state_dim);
    for (int i = 0; i < state_dim; ++i) {
      const double s = cfg.output_scales[static_cast<std::size_t>(i)];
      if (!(s > 0.0)) throw ConfigError("network.output_scales entries must be positive");
      out_scale(i) = s;
    }
  }
  net.vx = nn::make_lstm_stack(store, "vx", state_dim + 1, cfg.lstm_hidden, state_dim, seed);
  net.vx.output_scale = out_scale;

  if (cfg.init == InitMode::Fixed) {
    net.v0_scalar = store.add("v0", Matrix::Constant(1, 1, cfg.v0_init));
    for (std::size_t l = 0; l < cfg.lstm_hidden.size(); ++l) {
      const int h = cfg.lstm_hidden[l];
      net.h0_rows.push_back(store.add("h0.layer" + std::to_string(l) + ".h", Matrix::Zero(1, h)));
      net.c0_rows.push_back(store.add("h0.layer" + std::to_string(l) + ".c", Matrix::Zero(1, h)));
    }
    return net;
  }

  if (cfg.v0_layers.empty() || cfg.v0_layers.back() != 1) {
    throw ConfigError("network.v0_layers must end with an output of size 1");
  }
  if (cfg.h0_hidden < 1) throw ConfigError("network.h0_hidden must be >= 1");
  net.v0_mlp = nn::make_mlp(store, "v0", state_dim + 1, cfg.v0_layers, nn::Activation::Tanh, seed);
  store.value(net.v0_mlp.layers.back().bias)(0, 0) = cfg.v0_init;
  for (std::size_t l = 0; l < cfg.lstm_hidden.size(); ++l) {
    const int h = cfg.lstm_hidden[l];
    const std::string base = "h0.layer" + std::to_string(l);
    net.h0_mlp.push_back(nn::make_mlp(store, base + ".h", state_dim, {cfg.h0_hidden, h}, nn::Activation::Tanh, seed));
    net.c0_mlp.push_back(nn::make_mlp(store, base + ".c", state_dim, {cfg.h0_hidden, h}, nn::Activation::Tanh, seed));
  }
  return net;
}

/// Whitened state with the normalized time appended as the last column.
inline Matrix network_input(const ValueNet& net, const Matrix& x, double t_frac) {
  Matrix out(x.rows(), x.cols() + 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) out.row(r).head(x.cols()) = x.row(r).cwiseProduct(net.inv_scales);
  out.col(x.cols()).setConstant(t_frac);
  return out;
}

inline Var network_input(Tape& tape, const ValueNet& net, Var x, double t_frac) {
  const auto rows = tape.value(x).rows();
  return tape.concat_cols({tape.col_scale(x, net.inv_scales), tape.constant(Matrix::Constant(rows, 1, t_frac))});
}

inline Matrix whiten(const ValueNet& net, const Matrix& x) {
  Matrix out = x;
  for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) = out.row(r).cwiseProduct(net.inv_scales);
  return out;
}

/// y0 for every row of x0 (M x 1).
inline Var initial_value(Tape& tape, const ParamStore& store, const ValueNet& net, Var x0) {
  const auto rows = static_cast<int>(tape.value(x0).rows());
  if (net.init == InitMode::Fixed) return tape.broadcast_rows(tape.param(store, net.v0_scalar), rows);
  return net.v0_mlp.forward(tape, store, network_input(tape, net, x0, 0.0));
}

inline Matrix initial_value(const ParamStore& store, const ValueNet& net, const Matrix& x0) {
  if (net.init == InitMode::Fixed) return store.value(net.v0_scalar).replicate(x0.rows(), 1);
  return net.v0_mlp.eval(store, network_input(net, x0, 0.0));
}

/// V(x, t) from the network-mode value head; used by the value loss.
inline Var value_head(Tape& tape, const ParamStore& store, const ValueNet& net, const Matrix& inputs) {
  if (net.init != InitMode::Network) throw UsageError("value_head requires network init mode");
  return net.v0_mlp.forward(tape, store, tape.constant(inputs));
}

inline std::vector<nn::LstmState> initial_states(Tape& tape, const ParamStore& store, const ValueNet& net, Var x0) {
  const auto rows = static_cast<int>(tape.value(x0).rows());
  std::vector<nn::LstmState> s(static_cast<std::size_t>(net.layers()));
  if (net.init == InitMode::Fixed) {
    for (std::size_t l = 0; l < s.size(); ++l) {
      s[l].h = tape.broadcast_rows(tape.param(store, net.h0_rows[l]), rows);
      s[l].c = tape.broadcast_rows(tape.param(store, net.c0_rows[l]), rows);
    }
    return s;
  }
  Var in = tape.col_scale(x0, net.inv_scales);
  for (std::size_t l = 0; l < s.size(); ++l) {
    s[l].h = net.h0_mlp[l].forward(tape, store, in);
    s[l].c = net.c0_mlp[l].forward(tape, store, in);
  }
  return s;
}

inline std::vector<nn::LstmValues> initial_states(const ParamStore& store, const ValueNet& net, const Matrix& x0) {
  std::vector<nn::LstmValues> s(static_cast<std::size_t>(net.layers()));
  if (net.init == InitMode::Fixed) {
    for (std::size_t l = 0; l < s.size(); ++l) {
      s[l].h = store.value(net.h0_rows[l]).replicate(x0.rows(), 1);
      s[l].c = store.value(net.c0_rows[l]).replicate(x0.rows(), 1);
    }
    return s;
  }
  const Matrix in = whiten(net, x0);
  for (std::size_t l = 0; l < s.size(); ++l) {
    s[l].h = net.h0_mlp[l].eval(store, in);
    s[l].c = net.c0_mlp[l].eval(store, in);
  }
  return s;
}

}  // namespace dfbsde::fbsde
