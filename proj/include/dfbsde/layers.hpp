#pragma once

// Dense and LSTM layers over the batched tape, plus tape-free evaluation paths
// that share the same kernels (and therefore produce bit-identical forward
// values).

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dfbsde/autodiff.hpp"
#include "dfbsde/rng.hpp"

namespace dfbsde::nn {

using ad::Matrix;
using ad::RowVector;
using ad::ParamStore;
using ad::Tape;
using ad::Var;

enum class Activation { Identity, Tanh, Relu, Sigmoid };

/// Uniform(-bound, bound) matrix keyed by (seed, parameter index).
inline Matrix uniform_init(int rows, int cols, double bound, std::uint64_t seed, std::uint64_t key) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = bound * (2.0 * rng::uniform(seed, rng::kParamInit, key, static_cast<std::uint64_t>(i)) - 1.0);
  }
  return m;
}

inline Var activate(Tape& tape, Var x, Activation act) {
  switch (act) {
    case Activation::Tanh: return tape.tanh(x);
    case Activation::Relu: return tape.relu(x);
    case Activation::Sigmoid: return tape.sigmoid(x);
    case Activation::Identity: break;
  }
  return x;
}

inline void activate_inplace(Matrix& x, Activation act) {
  switch (act) {
    case Activation::Tanh: x = x.array().tanh().matrix(); break;
    case Activation::Relu: x = x.cwiseMax(0.0); break;
    case Activation::Sigmoid: x = x.unaryExpr([](double z) { return Tape::sigmoid_value(z); }); break;
    case Activation::Identity: break;
  }
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

struct DenseLayer {
  int weight = -1;  // out x in
  int bias = -1;    // 1 x out
  int in = 0;
  int out = 0;
  Activation act = Activation::Identity;
};

inline DenseLayer make_dense(ParamStore& store, const std::string& name, int in, int out, Activation act,
                             std::uint64_t seed) {
  DenseLayer d;
  d.in = in;
  d.out = out;
  d.act = act;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  const auto key = static_cast<std::uint64_t>(store.size());
  d.weight = store.add(name + ".W", uniform_init(out, in, bound, seed, key));
  d.bias = store.add(name + ".b", Matrix::Zero(1, out));
  return d;
}

inline Var dense_forward(Tape& tape, const ParamStore& store, const DenseLayer& d, Var x) {
  Var y = tape.linear(x, tape.param(store, d.weight), tape.param(store, d.bias));
  return activate(tape, y, d.act);
}

inline Matrix dense_eval(const ParamStore& store, const DenseLayer& d, const Matrix& x) {
  Matrix y = x * store.value(d.weight).transpose();
  y.rowwise() += store.value(d.bias).row(0);
  activate_inplace(y, d.act);
  return y;
}

/// Stack of dense layers applied in order.
struct Mlp {
  std::vector<DenseLayer> layers;

  Var forward(Tape& tape, const ParamStore& store, Var x) const {
    for (const auto& l : layers) x = dense_forward(tape, store, l, x);
    return x;
  }
  Matrix eval(const ParamStore& store, Matrix x) const {
    for (const auto& l : layers) x = dense_eval(store, l, x);
    return x;
  }
  int out() const { return layers.empty() ? 0 : layers.back().out; }
};

/// Hidden layers use `hidden_act`; the last layer is linear.
inline Mlp make_mlp(ParamStore& store, const std::string& name, int in, const std::vector<int>& sizes,
                    Activation hidden_act, std::uint64_t seed) {
  Mlp m;
  int prev = in;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const bool last = i + 1 == sizes.size();
    m.layers.push_back(make_dense(store, name + ".dense" + std::to_string(i), prev, sizes[i],
                                  last ? Activation::Identity : hidden_act, seed));
    prev = sizes[i];
  }
  return m;
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

enum Gate { kInput = 0, kForget = 1, kCandidate = 2, kOutput = 3 };

/// Four gates (input, forget, candidate, output), each with weights of shape
/// hidden x (input + hidden) applied to [x | h], plus a 1 x hidden bias.
struct LstmCell {
  int input_size = 0;
  int hidden_size = 0;
  std::array<int, 4> weight{-1, -1, -1, -1};
  std::array<int, 4> bias{-1, -1, -1, -1};
};

inline LstmCell make_lstm_cell(ParamStore& store, const std::string& name, int input_size, int hidden_size,
                               std::uint64_t seed) {
  static constexpr std::array<const char*, 4> kNames{"i", "f", "g", "o"};
  LstmCell cell;
  cell.input_size = input_size;
  cell.hidden_size = hidden_size;
  const int fan_in = input_size + hidden_size;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (int k = 0; k < 4; ++k) {
    const auto key = static_cast<std::uint64_t>(store.size());
    cell.weight[k] = store.add(name + ".W_" + kNames[k], uniform_init(hidden_size, fan_in, bound, seed, key));
  }
  for (int k = 0; k < 4; ++k) {
    const double b0 = k == kForget ? 1.0 : 0.0;
    cell.bias[k] = store.add(name + ".b_" + kNames[k], Matrix::Constant(1, hidden_size, b0));
  }
  return cell;
}

inline void check_lstm_dims(const LstmCell& cell, const Matrix& x, const Matrix& h, const Matrix& c) {
  if (x.cols() != cell.input_size || h.cols() != cell.hidden_size || c.cols() != cell.hidden_size ||
      h.rows() != x.rows() || c.rows() != x.rows()) {
    throw ConfigError("lstm_step: input/state dimensions do not match the cell (input " +
                      std::to_string(cell.input_size) + ", hidden " + std::to_string(cell.hidden_size) + ")");
  }
}

/// Shared forward kernel. When `cache` is non-null it receives [i|f|g|o|tanh(c')].
inline void lstm_kernel(const ParamStore& store, const LstmCell& cell, const Matrix& x, const Matrix& h,
                        const Matrix& c, Matrix& h_out, Matrix& c_out, Matrix* cache) {
  check_lstm_dims(cell, x, h, c);
  const int hs = cell.hidden_size;
  Matrix z(x.rows(), x.cols() + hs);
  z << x, h;
  std::array<Matrix, 4> gate;
  for (int k = 0; k < 4; ++k) {
    gate[k] = z * store.value(cell.weight[k]).transpose();
    gate[k].rowwise() += store.value(cell.bias[k]).row(0);
    activate_inplace(gate[k], k == kCandidate ? Activation::Tanh : Activation::Sigmoid);
  }
  c_out = (gate[kForget].cwiseProduct(c) + gate[kInput].cwiseProduct(gate[kCandidate]));
  Matrix tc = c_out.array().tanh().matrix();
  h_out = gate[kOutput].cwiseProduct(tc);
  if (cache != nullptr) {
    cache->resize(x.rows(), 5 * hs);
    for (int k = 0; k < 4; ++k) cache->middleCols(k * hs, hs) = gate[k];
    cache->middleCols(4 * hs, hs) = tc;
  }
}

struct LstmState {
  Var h;
  Var c;
};

struct LstmValues {
  Matrix h;
  Matrix c;
};

/// One LSTM step recorded on the tape as a single fused node.
inline LstmState lstm_step(Tape& tape, const ParamStore& store, const LstmCell& cell, Var x, LstmState s) {
  Matrix h_out;
  Matrix c_out;
  Matrix cache;
  lstm_kernel(store, cell, tape.value(x), tape.value(s.h), tape.value(s.c), h_out, c_out, &cache);
  std::vector<int> inputs{x.id, s.h.id, s.c.id};
  for (int k = 0; k < 4; ++k) inputs.push_back(tape.param(store, cell.weight[k]).id);
  for (int k = 0; k < 4; ++k) inputs.push_back(tape.param(store, cell.bias[k]).id);
  const int hs = cell.hidden_size;
  Matrix out(h_out.rows(), 2 * hs);
  out << h_out, c_out;
  Var node = tape.fused_lstm(std::move(inputs), std::move(out), std::move(cache), hs);
  return {tape.slice_cols(node, 0, hs), tape.slice_cols(node, hs, hs)};
}

/// Same step expressed with primitive tape ops only.
inline LstmState lstm_step_composed(Tape& tape, const ParamStore& store, const LstmCell& cell, Var x,
                                    LstmState s) {
  check_lstm_dims(cell, tape.value(x), tape.value(s.h), tape.value(s.c));
  Var z = tape.concat_cols({x, s.h});
  std::array<Var, 4> gate;
  for (int k = 0; k < 4; ++k) {
    Var pre = tape.linear(z, tape.param(store, cell.weight[k]), tape.param(store, cell.bias[k]));
    gate[k] = k == kCandidate ? tape.tanh(pre) : tape.sigmoid(pre);
  }
  Var c_new = tape.add(tape.mul(gate[kForget], s.c), tape.mul(gate[kInput], gate[kCandidate]));
  Var h_new = tape.mul(gate[kOutput], tape.tanh(c_new));
  return {h_new, c_new};
}

inline LstmValues lstm_step(const ParamStore& store, const LstmCell& cell, const Matrix& x, const LstmValues& s) {
  LstmValues out;
  lstm_kernel(store, cell, x, s.h, s.c, out.h, out.c, nullptr);
  return out;
}

/// Stacked LSTM cells followed by a linear head on the last hidden state.
struct LstmStack {
  std::vector<LstmCell> layers;
  DenseLayer head;
  RowVector output_scale;  // empty: unscaled head output

  int input_size() const { return layers.empty() ? 0 : layers.front().input_size; }
  int output_size() const { return head.out; }

  /// One time step. `states` holds per-layer (h, c) and is advanced in place.
  Var forward(Tape& tape, const ParamStore& store, Var x, std::vector<LstmState>& states) const {
    if (states.size() != layers.size()) throw ConfigError("LstmStack: state count mismatch");
    Var in = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      states[l] = lstm_step(tape, store, layers[l], in, states[l]);
      in = states[l].h;
    }
    Var out = dense_forward(tape, store, head, in);
    return output_scale.size() == 0 ? out : tape.col_scale(out, output_scale);
  }

  Matrix eval(const ParamStore& store, const Matrix& x, std::vector<LstmValues>& states) const {
    if (states.size() != layers.size()) throw ConfigError("LstmStack: state count mismatch");
    const Matrix* in = &x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      states[l] = lstm_step(store, layers[l], *in, states[l]);
      in = &states[l].h;
    }
    Matrix out = dense_eval(store, head, *in);
    if (output_scale.size() != 0) {
      for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) = out.row(r).cwiseProduct(output_scale);
    }
    return out;
  }
};

inline LstmStack make_lstm_stack(ParamStore& store, const std::string& name, int input_size,
                                 const std::vector<int>& hidden_sizes, int output_size, std::uint64_t seed) {
  LstmStack s;
  int prev = input_size;
  for (std::size_t l = 0; l < hidden_sizes.size(); ++l) {
    s.layers.push_back(make_lstm_cell(store, name + ".cell" + std::to_string(l), prev, hidden_sizes[l], seed));
    prev = hidden_sizes[l];
  }
  s.head = make_dense(store, name + ".head", prev, output_size, Activation::Identity, seed);
  return s;
}

}  // namespace dfbsde::nn
