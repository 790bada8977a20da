#include <gtest/gtest.h>

#include <cmath>

#include "dfbsde/autodiff.hpp"
#include "dfbsde/gradcheck.hpp"
#include "dfbsde/layers.hpp"

using dfbsde::ad::Matrix;
using dfbsde::ad::ParamStore;
using dfbsde::ad::Tape;
using dfbsde::ad::Var;

namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

Matrix random_matrix(int rows, int cols, std::uint64_t seed, std::uint64_t key, double scale = 1.0) {
  return dfbsde::nn::uniform_init(rows, cols, scale, seed, key);
}

}  // namespace

TEST(Backward, ProductRule) {
  ParamStore store;
  const int a = store.add("a", scalar(2.0));
  const int b = store.add("b", scalar(3.0));
  Tape tape;
  Var f = tape.mul(tape.param(store, a), tape.param(store, b));
  auto g = tape.backward(f, store);
  EXPECT_DOUBLE_EQ(g[0](0, 0), 3.0);
  EXPECT_DOUBLE_EQ(g[1](0, 0), 2.0);
}

TEST(Backward, TanhAtZero) {
  ParamStore store;
  const int x = store.add("x", scalar(0.0));
  Tape tape;
  auto g = tape.backward(tape.tanh(tape.param(store, x)), store);
  EXPECT_DOUBLE_EQ(g[0](0, 0), 1.0);
}

TEST(Backward, NonScalarRootIsUsageError) {
  ParamStore store;
  const int x = store.add("x", Matrix::Ones(2, 2));
  Tape tape;
  Var v = tape.tanh(tape.param(store, x));
  EXPECT_THROW(tape.backward(v, store), dfbsde::UsageError);
}

TEST(Backward, NonContributingLeafGetsZero) {
  ParamStore store;
  const int a = store.add("a", scalar(1.5));
  store.add("unused", Matrix::Ones(3, 2));
  Tape tape;
  auto g = tape.backward(tape.square(tape.param(store, a)), store);
  EXPECT_DOUBLE_EQ(g[0](0, 0), 3.0);
  ASSERT_EQ(g[1].rows(), 3);
  ASSERT_EQ(g[1].cols(), 2);
  EXPECT_EQ(g[1].cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, ShapeMismatchIsConfigError) {
  Tape tape;
  Var a = tape.constant(Matrix::Ones(2, 3));
  Var b = tape.constant(Matrix::Ones(3, 2));
  EXPECT_THROW(tape.add(a, b), dfbsde::ConfigError);
  EXPECT_THROW(tape.matmul(a, a), dfbsde::ConfigError);
}

TEST(Backward, TwoLayerDenseMatchesFiniteDifferences) {
  ParamStore store;
  auto l1 = dfbsde::nn::make_dense(store, "l1", 3, 5, dfbsde::nn::Activation::Tanh, 7);
  auto l2 = dfbsde::nn::make_dense(store, "l2", 5, 1, dfbsde::nn::Activation::Identity, 7);
  // Non-zero biases so every path is exercised.
  store.value(l1.bias) = random_matrix(1, 5, 11, 1);
  store.value(l2.bias) = random_matrix(1, 1, 11, 2);
  const Matrix x = random_matrix(4, 3, 13, 0, 2.0);
  auto loss = [&](Tape& t) {
    Var in = t.constant(x);
    Var h = dfbsde::nn::dense_forward(t, store, l1, in);
    Var y = dfbsde::nn::dense_forward(t, store, l2, h);
    return t.sum(t.square(y));
  };
  auto res = dfbsde::check::finite_difference_check("dense2", store, loss);
  EXPECT_TRUE(res.passed()) << "max rel " << res.max_rel_error;
  EXPECT_EQ(res.checked, store.scalar_count());
}

// Property: random composite graphs built from every primitive agree with
// central finite differences.
TEST(Backward, RandomCompositeGraphsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    ParamStore store;
    const int rows = 3;
    const int a = store.add("a", random_matrix(rows, 4, seed, 1));
    const int b = store.add("b", random_matrix(rows, 4, seed, 2));
    const int w = store.add("w", random_matrix(2, 4, seed, 3));
    const int bias = store.add("bias", random_matrix(1, 2, seed, 4));
    const int m = store.add("m", random_matrix(4, 3, seed, 5));
    const int row = store.add("row", random_matrix(1, 4, seed, 6));
    dfbsde::ad::RowVector factors(4);
    factors << 0.5, -1.5, 2.0, 0.25;
    const int variant = static_cast<int>(seed % 4);

    auto loss = [&](Tape& t) {
      Var va = t.param(store, a);
      Var vb = t.param(store, b);
      Var positive = t.add_scalar(t.exp(t.scale(vb, 0.3)), 0.5);
      Var e1 = t.add(t.mul(va, t.sigmoid(vb)), t.div(t.tanh(va), positive));
      Var e2 = t.sub(t.log(positive), t.relu(t.add_scalar(va, 0.1)));
      Var e3 = t.add_row(t.col_scale(e1, factors), t.param(store, row));
      Var cat = t.concat_cols({e2, e3});
      Var left = t.slice_cols(cat, 2, 4);
      Var lin = t.linear(left, t.param(store, w), t.param(store, bias));
      Var mm = t.matmul(e3, t.param(store, m));
      Var bc = t.broadcast_rows(t.slice_cols(t.param(store, row), 0, 2), rows);
      Var out = t.add(lin, bc);
      Var total = t.add(t.sum(t.square(out)), t.sum(t.row_sum(t.tanh(mm))));
      if (variant == 1) total = t.add(total, t.sum(t.exp(t.scale(e2, 0.2))));
      if (variant == 2) total = t.scale(total, 0.7);
      return total;
    };
    auto res = dfbsde::check::finite_difference_check("composite", store, loss);
    EXPECT_TRUE(res.passed()) << "seed " << seed << " max rel " << res.max_rel_error;
  }
}

TEST(Backward, Determinism) {
  ParamStore store;
  auto l1 = dfbsde::nn::make_dense(store, "l1", 3, 8, dfbsde::nn::Activation::Tanh, 3);
  const Matrix x = random_matrix(5, 3, 17, 0);
  auto run = [&]() {
    Tape t;
    Var y = t.sum(t.square(dfbsde::nn::dense_forward(t, store, l1, t.constant(x))));
    return std::make_pair(t.scalar(y), t.backward(y, store));
  };
  auto [v1, g1] = run();
  auto [v2, g2] = run();
  EXPECT_EQ(v1, v2);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_TRUE(g1[i] == g2[i]);
}

TEST(Backward, RowwiseNodeUsesSuppliedJacobian) {
  ParamStore store;
  const int p = store.add("p", (Matrix(2, 2) << 1.0, 2.0, 3.0, 4.0).finished());
  Tape t;
  Var in = t.param(store, p);
  // f(x0, x1) = (x0 * x1, x0 + 2 x1) per row
  Matrix out(2, 2);
  Matrix jac(2, 4);
  for (int r = 0; r < 2; ++r) {
    const double x0 = store.value(p)(r, 0);
    const double x1 = store.value(p)(r, 1);
    out(r, 0) = x0 * x1;
    out(r, 1) = x0 + 2 * x1;
    jac.row(r) << x1, x0, 1.0, 2.0;
  }
  Var y = t.rowwise(in, out, jac);
  auto g = t.backward(t.sum(y), store);
  EXPECT_DOUBLE_EQ(g[0](0, 0), 2.0 + 1.0);
  EXPECT_DOUBLE_EQ(g[0](0, 1), 1.0 + 2.0);
  EXPECT_DOUBLE_EQ(g[0](1, 0), 4.0 + 1.0);
  EXPECT_DOUBLE_EQ(g[0](1, 1), 3.0 + 2.0);
}
