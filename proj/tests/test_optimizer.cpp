#include <gtest/gtest.h>

#include <cmath>

#include "dfbsde/optimizer.hpp"

using dfbsde::ad::Gradients;
using dfbsde::ad::Matrix;
using dfbsde::ad::ParamStore;
namespace nn = dfbsde::nn;

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParamStore store;
  store.add("p", Matrix::Constant(2, 3, 0.7));
  nn::OptimizerState state(store);
  Gradients g{Matrix::Zero(2, 3)};
  for (int i = 0; i < 5; ++i) nn::optimizer_step(store, g, state);
  EXPECT_TRUE((store.value(0).array() == 0.7).all());
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore store;
  store.add("p", Matrix::Constant(1, 1, 1.0));
  nn::OptimizerState state(store, nn::AdamConfig{0.1, 0.9, 0.999, 1e-8});
  nn::optimizer_step(store, Gradients{Matrix::Constant(1, 1, 1.0)}, state);
  EXPECT_NEAR(store.value(0)(0, 0), 0.9, 1e-8);
}

TEST(Adam, OppositeGradientsGiveSmallSecondStep) {
  ParamStore store;
  store.add("p", Matrix::Constant(1, 1, 0.0));
  nn::OptimizerState state(store);
  nn::optimizer_step(store, Gradients{Matrix::Constant(1, 1, 1.0)}, state);
  const double after_first = store.value(0)(0, 0);
  nn::optimizer_step(store, Gradients{Matrix::Constant(1, 1, -1.0)}, state);
  const double step = store.value(0)(0, 0) - after_first;
  // m2 = 0.9*0.1 - 0.1 = -0.01, corrected -0.01/0.19; v2 corrected = 1.
  const double expected = 1e-3 * (0.01 / 0.19) / (1.0 + 1e-8);
  EXPECT_NEAR(step, expected, 1e-12);
  EXPECT_LT(std::abs(step), 1e-3);
}

TEST(Adam, ShapeMismatchIsConfigError) {
  ParamStore store;
  store.add("p", Matrix::Zero(2, 2));
  nn::OptimizerState state(store);
  EXPECT_THROW(nn::optimizer_step(store, Gradients{Matrix::Zero(2, 3)}, state), dfbsde::ConfigError);
  EXPECT_THROW(nn::optimizer_step(store, Gradients{}, state), dfbsde::ConfigError);
}

TEST(Clip, RescalesToMaxNorm) {
  Gradients g{Matrix::Constant(1, 2, 3.0), Matrix::Constant(1, 1, 4.0)};
  const double before = nn::clip_global_norm(g, 1.0);
  EXPECT_NEAR(before, std::sqrt(34.0), 1e-12);
  EXPECT_NEAR(nn::global_norm(g), 1.0, 1e-12);
  Gradients small{Matrix::Constant(1, 1, 0.5)};
  nn::clip_global_norm(small, 1.0);
  EXPECT_EQ(small[0](0, 0), 0.5);
}
