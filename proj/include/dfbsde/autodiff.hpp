#pragma once

// Batched reverse-mode automatic differentiation.
//
// Every node holds a dense matrix whose rows are batch elements. Nodes are
// appended in evaluation order, so the node list is already topologically
// sorted and `backward` is a single reverse sweep. Parameters live outside the
// tape in a ParamStore; the tape references them by id and `backward` returns
// one gradient matrix per parameter (zero when the parameter does not reach the
// root).

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dfbsde/errors.hpp"

namespace dfbsde::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;
using Array = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
  std::string name;
  Matrix value;
};

/// Named trainable arrays. Ids are dense indices in insertion order.
class ParamStore {
 public:
  int add(std::string name, Matrix init) {
    if (find(name) >= 0) throw UsageError("duplicate parameter name: " + name);
    params_.push_back({std::move(name), std::move(init)});
    return static_cast<int>(params_.size()) - 1;
  }

  int find(std::string_view name) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

  int size() const { return static_cast<int>(params_.size()); }
  Matrix& value(int id) { return params_.at(static_cast<std::size_t>(id)).value; }
  const Matrix& value(int id) const { return params_.at(static_cast<std::size_t>(id)).value; }
  const std::string& name(int id) const { return params_.at(static_cast<std::size_t>(id)).name; }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

 private:
  std::vector<Parameter> params_;
};

/// One gradient matrix per parameter id, shaped like the parameter.
using Gradients = std::vector<Matrix>;

inline Gradients zero_gradients(const ParamStore& store) {
  Gradients g;
  g.reserve(static_cast<std::size_t>(store.size()));
  for (const auto& p : store.params()) g.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  return g;
}

/// Handle to a tape node.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class Op : std::uint8_t {
  Constant,
  Param,
  Add,
  Sub,
  Mul,
  Div,
  AddRow,
  BroadcastRows,
  Scale,
  AddScalar,
  ColScale,
  Linear,
  MatMul,
  Tanh,
  Sigmoid,
  Relu,
  Log,
  Exp,
  Square,
  ConcatCols,
  SliceCols,
  SumAll,
  RowSum,
  LstmCell,
  Rowwise,
};

class Tape {
 public:
  // ---- leaves ---------------------------------------------------------------

  Var constant(Matrix value) { return push(Op::Constant, {}, std::move(value), false); }

  Var scalar_constant(double v) { return constant(Matrix::Constant(1, 1, v)); }

  /// Leaf for parameter `pid`. Repeated calls return the same node.
  Var param(const ParamStore& store, int pid) {
    if (pid < 0 || pid >= store.size()) throw UsageError("unknown parameter id");
    if (static_cast<int>(param_nodes_.size()) <= pid) param_nodes_.resize(static_cast<std::size_t>(pid) + 1, -1);
    if (param_nodes_[static_cast<std::size_t>(pid)] >= 0) return Var{param_nodes_[static_cast<std::size_t>(pid)]};
    Var v = push(Op::Param, {}, store.value(pid), true);
    nodes_.back().iparam = pid;
    param_nodes_[static_cast<std::size_t>(pid)] = v.id;
    return v;
  }

  // ---- elementwise ----------------------------------------------------------

  Var add(Var a, Var b) {
    same_shape(a, b, "add");
    return push(Op::Add, {a.id, b.id}, value(a) + value(b));
  }
  Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    return push(Op::Sub, {a.id, b.id}, value(a) - value(b));
  }
  Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    return push(Op::Mul, {a.id, b.id}, value(a).cwiseProduct(value(b)));
  }
  Var div(Var a, Var b) {
    same_shape(a, b, "div");
    return push(Op::Div, {a.id, b.id}, value(a).cwiseQuotient(value(b)));
  }
  /// a (r x c) + row (1 x c), broadcast over rows.
  Var add_row(Var a, Var row) {
    if (value(row).rows() != 1 || value(row).cols() != value(a).cols()) throw ConfigError("add_row: shape mismatch");
    Matrix out = value(a);
    out.rowwise() += value(row).row(0);
    return push(Op::AddRow, {a.id, row.id}, std::move(out));
  }
  /// Repeats a 1 x c row `rows` times.
  Var broadcast_rows(Var row, int rows) {
    if (value(row).rows() != 1) throw ConfigError("broadcast_rows: input must have one row");
    Matrix out = value(row).replicate(rows, 1);
    return push(Op::BroadcastRows, {row.id}, std::move(out));
  }
  Var scale(Var a, double s) {
    Var v = push(Op::Scale, {a.id}, value(a) * s);
    nodes_.back().scalar = s;
    return v;
  }
  Var add_scalar(Var a, double s) {
    return push(Op::AddScalar, {a.id}, (value(a).array() + s).matrix());
  }
  /// Multiplies column j by the constant factors(j).
  Var col_scale(Var a, const RowVector& factors) {
    if (factors.size() != value(a).cols()) throw ConfigError("col_scale: shape mismatch");
    Matrix out = value(a);
    for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) = out.row(r).cwiseProduct(factors);
    Var v = push(Op::ColScale, {a.id}, std::move(out));
    nodes_.back().aux = factors;
    return v;
  }

  Var tanh(Var a) { return push(Op::Tanh, {a.id}, value(a).array().tanh().matrix()); }
  Var sigmoid(Var a) { return push(Op::Sigmoid, {a.id}, value(a).unaryExpr([](double z) { return sigmoid_value(z); })); }
  Var relu(Var a) { return push(Op::Relu, {a.id}, value(a).cwiseMax(0.0)); }
  Var log(Var a) { return push(Op::Log, {a.id}, value(a).array().log().matrix()); }
  Var exp(Var a) { return push(Op::Exp, {a.id}, value(a).array().exp().matrix()); }
  Var square(Var a) { return push(Op::Square, {a.id}, value(a).array().square().matrix()); }

  // ---- linear algebra -------------------------------------------------------

  /// x (r x in) * W^T (in x out) + b (1 x out). `b` may be invalid for no bias.
  Var linear(Var x, Var w, Var b = {}) {
    const Matrix& xv = value(x);
    const Matrix& wv = value(w);
    if (wv.cols() != xv.cols()) throw ConfigError("linear: weight/input mismatch");
    Matrix out = xv * wv.transpose();
    if (b.valid()) {
      if (value(b).rows() != 1 || value(b).cols() != wv.rows()) throw ConfigError("linear: bias mismatch");
      out.rowwise() += value(b).row(0);
      return push(Op::Linear, {x.id, w.id, b.id}, std::move(out));
    }
    return push(Op::Linear, {x.id, w.id}, std::move(out));
  }
  Var matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows()) throw ConfigError("matmul: inner dimension mismatch");
    return push(Op::MatMul, {a.id, b.id}, value(a) * value(b));
  }

  // ---- structural -----------------------------------------------------------

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw UsageError("concat_cols: no inputs");
    const Eigen::Index rows = value(parts[0]).rows();
    Eigen::Index cols = 0;
    std::vector<int> ids;
    for (Var p : parts) {
      if (value(p).rows() != rows) throw ConfigError("concat_cols: row mismatch");
      cols += value(p).cols();
      ids.push_back(p.id);
    }
    Matrix out(rows, cols);
    Eigen::Index c = 0;
    for (Var p : parts) {
      out.middleCols(c, value(p).cols()) = value(p);
      c += value(p).cols();
    }
    return push(Op::ConcatCols, std::move(ids), std::move(out));
  }
  Var slice_cols(Var a, int start, int len) {
    if (start < 0 || len < 0 || start + len > value(a).cols()) throw ConfigError("slice_cols: out of range");
    Var v = push(Op::SliceCols, {a.id}, value(a).middleCols(start, len));
    nodes_.back().istart = start;
    return v;
  }
  Var sum(Var a) { return push(Op::SumAll, {a.id}, Matrix::Constant(1, 1, value(a).sum())); }
  Var row_sum(Var a) { return push(Op::RowSum, {a.id}, value(a).rowwise().sum()); }

  // ---- fused / custom -------------------------------------------------------

  /// Registers a node whose forward value was computed by the caller along with
  /// `aux` data for the backward rule (used by the fused LSTM cell).
  Var fused_lstm(std::vector<int> inputs, Matrix out, Matrix cache, int hidden) {
    Var v = push(Op::LstmCell, std::move(inputs), std::move(out));
    nodes_.back().aux = std::move(cache);
    nodes_.back().istart = hidden;
    return v;
  }

  /// Row-local function node: output row r depends only on input row r, with
  /// Jacobian `jacobians.row(r)` holding the out x in matrix in row-major order.
  Var rowwise(Var in, Matrix out, Matrix jacobians) {
    const Eigen::Index rows = value(in).rows();
    if (out.rows() != rows || jacobians.rows() != rows ||
        jacobians.cols() != out.cols() * value(in).cols()) {
      throw ConfigError("rowwise: jacobian shape mismatch");
    }
    Var v = push(Op::Rowwise, {in.id}, std::move(out));
    nodes_.back().aux = std::move(jacobians);
    return v;
  }

  // ---- access ---------------------------------------------------------------

  const Matrix& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  double scalar(Var v) const {
    const Matrix& m = value(v);
    if (m.size() != 1) throw UsageError("scalar(): node is not 1x1");
    return m(0, 0);
  }
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Drops every node. Parameter leaves must be re-created afterwards.
  void clear() {
    nodes_.clear();
    param_nodes_.clear();
  }

  /// Reverse sweep from a 1x1 root. Returns d(root)/d(param) for every parameter
  /// in `store`; parameters not reached get zeros.
  Gradients backward(Var root, const ParamStore& store) const {
    if (!root.valid() || root.id >= static_cast<int>(nodes_.size())) throw UsageError("backward: invalid root");
    if (value(root).size() != 1) throw UsageError("backward: root must be a scalar node");
    Gradients out = zero_gradients(store);
    std::vector<Matrix> grad(nodes_.size());
    grad[static_cast<std::size_t>(root.id)] = Matrix::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      Matrix& g = grad[static_cast<std::size_t>(i)];
      if (g.size() == 0 || !n.requires_grad) continue;
      if (n.op == Op::Param) {
        out[static_cast<std::size_t>(n.iparam)] += g;
        continue;
      }
      propagate(n, g, grad);
      g.resize(0, 0);
    }
    return out;
  }

  static double sigmoid_value(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  }

 private:
  struct Node {
    Op op;
    std::vector<int> inputs;
    Matrix value;
    Matrix aux;
    double scalar = 0.0;
    int istart = 0;
    int iparam = -1;
    bool requires_grad = false;
  };

  Var push(Op op, std::vector<int> inputs, Matrix value, bool leaf_grad = false) {
    Node n;
    n.op = op;
    n.requires_grad = leaf_grad;
    for (int id : inputs) n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(id)].requires_grad;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void same_shape(Var a, Var b, const char* what) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
      throw ConfigError(std::string(what) + ": shape mismatch");
    }
  }

  void accumulate(std::vector<Matrix>& grad, int id, const Matrix& g) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    Matrix& dst = grad[static_cast<std::size_t>(id)];
    if (dst.size() == 0) {
      dst = g;
    } else {
      dst += g;
    }
  }

  // Backward rules. `g` is d(root)/d(node value).
  void propagate(const Node& n, const Matrix& g, std::vector<Matrix>& grad) const {
    auto in = [&](int k) -> const Matrix& { return nodes_[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(k)])].value; };
    auto needs = [&](int k) { return nodes_[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(k)])].requires_grad; };
    auto acc = [&](int k, const Matrix& m) { accumulate(grad, n.inputs[static_cast<std::size_t>(k)], m); };

    switch (n.op) {
      case Op::Constant:
      case Op::Param:
        break;
      case Op::Add:
        acc(0, g);
        acc(1, g);
        break;
      case Op::Sub:
        acc(0, g);
        if (needs(1)) acc(1, -g);
        break;
      case Op::Mul:
        if (needs(0)) acc(0, g.cwiseProduct(in(1)));
        if (needs(1)) acc(1, g.cwiseProduct(in(0)));
        break;
      case Op::Div:
        if (needs(0)) acc(0, g.cwiseQuotient(in(1)));
        if (needs(1)) acc(1, -g.cwiseProduct(n.value).cwiseQuotient(in(1)));
        break;
      case Op::AddRow:
        acc(0, g);
        if (needs(1)) acc(1, g.colwise().sum());
        break;
      case Op::BroadcastRows:
        acc(0, g.colwise().sum());
        break;
      case Op::Scale:
        acc(0, g * n.scalar);
        break;
      case Op::AddScalar:
        acc(0, g);
        break;
      case Op::ColScale: {
        Matrix d = g;
        for (Eigen::Index r = 0; r < d.rows(); ++r) d.row(r) = d.row(r).cwiseProduct(n.aux.row(0));
        acc(0, d);
        break;
      }
      case Op::Linear:
        if (needs(0)) acc(0, g * in(1));
        if (needs(1)) acc(1, g.transpose() * in(0));
        if (n.inputs.size() > 2 && needs(2)) acc(2, g.colwise().sum());
        break;
      case Op::MatMul:
        if (needs(0)) acc(0, g * in(1).transpose());
        if (needs(1)) acc(1, in(0).transpose() * g);
        break;
      case Op::Tanh:
        acc(0, g.cwiseProduct((1.0 - n.value.array().square()).matrix()));
        break;
      case Op::Sigmoid:
        acc(0, g.cwiseProduct((n.value.array() * (1.0 - n.value.array())).matrix()));
        break;
      case Op::Relu:
        acc(0, g.cwiseProduct((in(0).array() > 0.0).cast<double>().matrix()));
        break;
      case Op::Log:
        acc(0, g.cwiseQuotient(in(0)));
        break;
      case Op::Exp:
        acc(0, g.cwiseProduct(n.value));
        break;
      case Op::Square:
        acc(0, 2.0 * g.cwiseProduct(in(0)));
        break;
      case Op::ConcatCols: {
        Eigen::Index c = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const Eigen::Index w = in(static_cast<int>(k)).cols();
          if (needs(static_cast<int>(k))) acc(static_cast<int>(k), g.middleCols(c, w));
          c += w;
        }
        break;
      }
      case Op::SliceCols: {
        Matrix d = Matrix::Zero(in(0).rows(), in(0).cols());
        d.middleCols(n.istart, g.cols()) = g;
        acc(0, d);
        break;
      }
      case Op::SumAll:
        acc(0, Matrix::Constant(in(0).rows(), in(0).cols(), g(0, 0)));
        break;
      case Op::RowSum:
        acc(0, g.replicate(1, in(0).cols()));
        break;
      case Op::LstmCell:
        lstm_backward(n, g, grad);
        break;
      case Op::Rowwise: {
        const Matrix& x = in(0);
        const Eigen::Index nin = x.cols();
        const Eigen::Index nout = g.cols();
        Matrix d = Matrix::Zero(x.rows(), nin);
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
          Eigen::Map<const Matrix> jac(n.aux.row(r).data(), nout, nin);
          d.row(r).noalias() = g.row(r) * jac;
        }
        acc(0, d);
        break;
      }
    }
  }

  // Fused LSTM cell. Inputs: x, h, c, W_i, W_f, W_g, W_o, b_i, b_f, b_g, b_o.
  // Output value is [h' | c']; aux caches [i | f | g | o | tanh(c')].
  void lstm_backward(const Node& n, const Matrix& g, std::vector<Matrix>& grad) const {
    const int hs = n.istart;
    auto in = [&](int k) -> const Matrix& { return nodes_[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(k)])].value; };
    auto needs = [&](int k) { return nodes_[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(k)])].requires_grad; };
    auto acc = [&](int k, const Matrix& m) { accumulate(grad, n.inputs[static_cast<std::size_t>(k)], m); };

    const Matrix& x = in(0);
    const Matrix& c = in(2);
    const auto gi = n.aux.middleCols(0, hs).array();
    const auto gf = n.aux.middleCols(hs, hs).array();
    const auto gg = n.aux.middleCols(2 * hs, hs).array();
    const auto go = n.aux.middleCols(3 * hs, hs).array();
    const auto tc = n.aux.middleCols(4 * hs, hs).array();
    const auto dh = g.middleCols(0, hs).array();
    const auto dc_out = g.middleCols(hs, hs).array();

    const Array dc = dc_out + dh * go * (1.0 - tc.square());
    std::array<Matrix, 4> dz;
    dz[0] = (dc * gg * gi * (1.0 - gi)).matrix();
    dz[1] = (dc * c.array() * gf * (1.0 - gf)).matrix();
    dz[2] = (dc * gi * (1.0 - gg.square())).matrix();
    dz[3] = (dh * tc * go * (1.0 - go)).matrix();

    const Eigen::Index nin = x.cols();
    Matrix z(x.rows(), nin + hs);
    z << x, in(1);
    Matrix dzin = Matrix::Zero(x.rows(), nin + hs);
    for (int k = 0; k < 4; ++k) {
      dzin.noalias() += dz[static_cast<std::size_t>(k)] * in(3 + k);
      if (needs(3 + k)) acc(3 + k, dz[static_cast<std::size_t>(k)].transpose() * z);
      if (needs(7 + k)) acc(7 + k, dz[static_cast<std::size_t>(k)].colwise().sum());
    }
    if (needs(0)) acc(0, dzin.leftCols(nin));
    if (needs(1)) acc(1, dzin.rightCols(hs));
    if (needs(2)) acc(2, (dc * gf).matrix());
  }

  std::vector<Node> nodes_;
  std::vector<int> param_nodes_;
};

}  // namespace dfbsde::ad
