#include <gtest/gtest.h>

#include <cmath>

#include "ipose/error.hpp"
#include "ipose/ops.hpp"
#include "ipose/tensor.hpp"

using namespace ipose;

TEST(Tensor, FactoriesKeepShapeAndData) {
  auto t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_EQ(t.at(4), 5.0);
  EXPECT_THROW(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_EQ(Tensor::full({2}, 7.0).at(1), 7.0);
  EXPECT_EQ(Tensor::scalar(3.0).item(), 3.0);
}

TEST(Tensor, SumGradientIsOnes) {
  auto x = Tensor::from_data({3}, {1, -2, 5}, true);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Tensor, SquareGradient) {
  auto x = Tensor::from_data({2}, {1, 2}, true);
  sum(square(x)).backward();
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Tensor, NonScalarBackwardRejected) {
  auto x = Tensor::from_data({2}, {1, 2}, true);
  EXPECT_THROW(square(x).backward(), GraphError);
}

TEST(Tensor, SecondBackwardRejected) {
  auto x = Tensor::from_data({2}, {1, 2}, true);
  auto loss = sum(square(x));
  loss.backward();
  EXPECT_THROW(loss.backward(), GraphError);
}

TEST(Tensor, SharedSubexpressionAccumulates) {
  // y = x*x + x, reusing x twice and the product once more.
  auto x = Tensor::from_data({1}, {3.0}, true);
  auto p = mul(x, x);
  auto loss = sum(add(add(p, x), p));
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4 * 3.0 + 1);
}

TEST(Tensor, ChainMatchesJacobianProduct) {
  // d/dx sum(sigmoid(2x)) = 2 s (1-s).
  auto x = Tensor::from_data({3}, {-1.0, 0.0, 0.7}, true);
  sum(sigmoid(scale(x, 2.0))).backward();
  for (std::size_t i = 0; i < 3; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-2.0 * x.at(i)));
    EXPECT_NEAR(x.grad()[i], 2.0 * s * (1.0 - s), 1e-15);
  }
}

TEST(Tensor, NoGradGuardSkipsRecording) {
  auto x = Tensor::from_data({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_recording_enabled());
    y = square(x);
  }
  EXPECT_TRUE(grad_recording_enabled());
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
}

TEST(Tensor, ResultOfOpIsReadOnly) {
  auto x = Tensor::from_data({2}, {1, 2}, true);
  auto y = square(x);
  EXPECT_THROW(y.mutable_data(), GraphError);
  EXPECT_NO_THROW(x.mutable_data());
}

TEST(Tensor, DetachAndClone) {
  auto x = Tensor::from_data({2}, {1, 2}, true);
  auto d = square(x).detach();
  EXPECT_FALSE(d.requires_grad());
  EXPECT_EQ(d.at(1), 4.0);
  auto c = x.clone();
  EXPECT_TRUE(c.requires_grad());
  EXPECT_FALSE(c.same_storage(x));
}

TEST(Tensor, ZeroGradClears) {
  auto x = Tensor::from_data({2}, {1, 2}, true);
  sum(x).backward();
  EXPECT_TRUE(x.has_grad());
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, DeepChainDoesNotOverflowStack) {
  auto x = Tensor::from_data({1}, {0.5}, true);
  Tensor y = x;
  for (int i = 0; i < 100000; ++i) y = scale(y, 1.0);
  sum(y).backward();
  EXPECT_EQ(x.grad()[0], 1.0);
}
