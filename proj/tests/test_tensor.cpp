#include <gtest/gtest.h>

#include <cmath>

#include "cornerformer/gradcheck.hpp"
#include "cornerformer/params.hpp"
#include "cornerformer/tensor.hpp"

using namespace cornerformer;
using TD = Tensor<double>;

namespace {

TD leaf(Shape s, std::vector<double> v) { return TD::from_data(std::move(s), std::move(v), true); }

void expect_data(const TD& t, const std::vector<double>& want, double tol = 1e-12) {
  ASSERT_EQ(t.numel(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t.data()[i], want[i], tol) << "index " << i;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  auto i2 = TD::from_data({2, 2}, {1, 0, 0, 1});
  auto a = TD::from_data({2, 2}, {1, 2, 3, 4});
  expect_data(matmul(i2, a), {1, 2, 3, 4});
}

TEST(Matmul, RowTimesColumn) {
  expect_data(matmul(TD::from_data({1, 2}, {1, 0}), TD::from_data({2, 1}, {0, 5})), {0});
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(TD::zeros({2, 3}), TD::zeros({2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3] and [2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradOfSumIsRowSumsOfB) {
  auto a = leaf({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = leaf({3, 2}, {1, -1, 2, 0.5, 3, 2});
  sum(matmul(a, b)).backward();
  const std::vector<double> rows = {0, 2.5, 5};
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(a.grad()[i * 3 + k], rows[k], 1e-12);
}

TEST(Softmax, UniformForEqualInputs) {
  expect_data(softmax(TD::from_data({1, 3}, {0, 0, 0}), 1), {1.0 / 3, 1.0 / 3, 1.0 / 3});
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  auto s = softmax(TD::from_data({1, 2}, {1000, 0}), 1);
  EXPECT_TRUE(std::isfinite(s.data()[0]));
  expect_data(s, {1, 0});
}

TEST(Softmax, SlicesSumToOne) {
  std::mt19937_64 rng(3);
  auto x = detail::random_leaf(rng, {4, 5, 3}, -5, 5);
  auto s = softmax(x, 1);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 3; ++k) {
      double total = 0;
      for (std::size_t j = 0; j < 5; ++j) {
        EXPECT_GE(s.data()[(i * 5 + j) * 3 + k], 0.0);
        total += s.data()[(i * 5 + j) * 3 + k];
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
}

TEST(MaskedSoftmax, PaddedKeysGetExactlyZero) {
  std::vector<unsigned char> valid = {1, 0, 1};
  auto s = masked_softmax_rows(TD::from_data({3, 3}, {1, 9, 2, 0, 5, 0, -1, 3, 4}), valid);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(s.data()[i * 3 + 1], 0.0);
    EXPECT_NEAR(s.data()[i * 3] + s.data()[i * 3 + 2], 1.0, 1e-12);
  }
}

TEST(Bce, HalfAgainstOne) {
  std::vector<double> t = {1.0};
  EXPECT_NEAR(bce(TD::from_data({1}, {0.5}), std::span<const double>(t)).item(), std::log(2.0), 1e-12);
}

TEST(Bce, SoftTargetMinimumIsNotZero) {
  std::vector<double> t = {0.5};
  EXPECT_NEAR(bce(TD::from_data({1}, {0.5}), std::span<const double>(t)).item(), 0.6931, 1e-4);
}

TEST(Bce, ClampedPerfectPredictionIsNearZero) {
  std::vector<double> t = {1.0, 0.0};
  const double l = bce(TD::from_data({2}, {1.0, 0.0}), std::span<const double>(t)).item();
  EXPECT_GE(l, 0.0);
  EXPECT_LT(l, 1e-6);
}

TEST(Bce, ShapeMismatchThrows) {
  std::vector<double> t = {1.0};
  EXPECT_THROW(bce(TD::from_data({2}, {0.5, 0.5}), std::span<const double>(t)), DimensionError);
}

TEST(AddNorm, ZeroBranchNormalizesResidual) {
  auto r = TD::from_data({2, 4}, {1, 2, 3, 4, -2, 0, 5, 9});
  auto out = add_norm(r, TD::zeros({2, 4}), TD::full({4}, 1.0), TD::zeros({4}));
  for (std::size_t i = 0; i < 2; ++i) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 4; ++j) mu += out.data()[i * 4 + j] / 4;
    for (std::size_t j = 0; j < 4; ++j) var += std::pow(out.data()[i * 4 + j] - mu, 2) / 4;
    EXPECT_NEAR(mu, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(AddNorm, ConstantRowBecomesZeros) {
  auto out = add_norm(TD::full({1, 5}, 3.0), TD::zeros({1, 5}), TD::full({5}, 1.0), TD::zeros({5}));
  expect_data(out, {0, 0, 0, 0, 0});
}

TEST(AddNorm, ShapeMismatchThrows) {
  EXPECT_THROW(add_norm(TD::zeros({2, 3}), TD::zeros({3, 2}), TD::full({3}, 1.0), TD::zeros({3})), DimensionError);
}

TEST(Conv2d, IdentityPointwiseKernel) {
  std::mt19937_64 rng(1);
  auto x = detail::random_leaf(rng, {4, 4, 3});
  std::vector<double> k(9, 0.0);
  for (int c = 0; c < 3; ++c) k[c * 3 + c] = 1;
  auto y = conv2d(x, TD::from_data({1, 1, 3, 3}, k), TD::zeros({3}));
  expect_data(y, std::vector<double>(x.data().begin(), x.data().end()));
}

TEST(Conv2d, ShapesAreAPureFunctionOfInputs) {
  auto y = conv2d(TD::zeros({7, 6, 2}), TD::zeros({3, 3, 2, 5}), TD::zeros({5}), 2);
  EXPECT_EQ(y.shape(), (Shape{4, 3, 5}));
  EXPECT_THROW(conv2d(TD::zeros({4, 4, 2}), TD::zeros({3, 3, 3, 1}), TD::zeros({1})), DimensionError);
}

TEST(Upsample, SingleTexelBecomesTwoByTwo) {
  expect_data(upsample2x_nearest(TD::from_data({1, 1, 1}, {1})), {1, 1, 1, 1});
}

TEST(BilinearSample, IntegerPointReadsTexel) {
  auto map = TD::from_data({2, 3, 1}, {1, 2, 3, 4, 5, 6});
  expect_data(bilinear_sample(map, TD::from_data({1, 2}, {2, 1})), {6});
}

TEST(BilinearSample, MidpointIsMeanOfFourTexels) {
  auto map = TD::from_data({2, 2, 2}, {1, 10, 2, 20, 3, 30, 4, 40});
  expect_data(bilinear_sample(map, TD::from_data({1, 2}, {0.5, 0.5})), {2.5, 25});
}

TEST(BilinearSample, FarOutsideIsZero) {
  auto map = TD::full({3, 3, 2}, 7.0);
  expect_data(bilinear_sample(map, TD::from_data({1, 2}, {-10, -10})), {0, 0});
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  // f(x) = x * x + x via one shared leaf equals the sum of the partials taken
  // through two independent copies.
  auto x = leaf({3}, {0.5, -1.5, 2.0});
  sum(add(mul(x, x), x)).backward();
  auto a = leaf({3}, {0.5, -1.5, 2.0}), b = leaf({3}, {0.5, -1.5, 2.0}), c = leaf({3}, {0.5, -1.5, 2.0});
  sum(add(mul(a, b), c)).backward();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], a.grad()[i] + b.grad()[i] + c.grad()[i]);
}

TEST(Autograd, EachNodeVisitedOnce) {
  // A diamond: y = s + s with s = sigmoid(x). If s were visited twice its
  // gradient would be propagated to x twice.
  auto x = leaf({1}, {0.3});
  auto s = sigmoid(x);
  sum(add(s, s)).backward();
  const double sv = 1 / (1 + std::exp(-0.3));
  EXPECT_NEAR(x.grad()[0], 2 * sv * (1 - sv), 1e-14);
}

TEST(Autograd, GradientsAccumulateUntilZeroed) {
  auto x = leaf({1}, {2.0});
  sum(mul(x, x)).backward();
  sum(mul(x, x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

TEST(GradientSuite, EveryPrimitiveMatchesFiniteDifferences) {
  for (const auto& r : primitive_gradchecks(11)) EXPECT_LT(r.max_rel_error, 1e-4) << r.name;
}

TEST(GradientSuite, MatmulSoftmaxBceAddNormConvAtTighterTolerance) {
  for (const auto& r : primitive_gradchecks(5))
    if (r.name == "matmul" || r.name == "softmax" || r.name == "bce" || r.name == "add_norm" ||
        r.name == "conv2d_1x4x4")
      EXPECT_LT(r.max_rel_error, 1e-6) << r.name;
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore<double> ps;
  ps.constant("x", {1}, 1.0);
  ps.zero_grad();
  sum(ps.get("x")).backward();
  adam_step(ps, {0.1, 0.9, 0.999, 1e-8});
  EXPECT_NEAR(ps.get("x").data()[0], 0.9, 1e-6);
}

TEST(Adam, ZeroGradientLeavesParameter) {
  ParamStore<double> ps;
  ps.constant("x", {2}, 3.0);
  ps.zero_grad();
  adam_step(ps, {});
  EXPECT_EQ(ps.get("x").data()[0], 3.0);
  EXPECT_EQ(ps.get("x").data()[1], 3.0);
}

TEST(Adam, MissingGradientNamesParameter) {
  ParamStore<double> ps;
  ps.constant("encoder.w", {1}, 1.0);
  try {
    adam_step(ps, {});
    FAIL();
  } catch (const MissingGradientError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.w"), std::string::npos);
  }
}

TEST(Adam, MinimizesQuadraticBowl) {
  ParamStore<double> ps;
  ps.constant("x", {1}, 3.0);
  int steps = 0;
  for (; steps < 500 && std::abs(ps.get("x").data()[0]) >= 1e-3; ++steps) {
    ps.zero_grad();
    auto x = ps.get("x");
    sum(mul(x, x)).backward();
    adam_step(ps, {0.05, 0.9, 0.999, 1e-8});
  }
  EXPECT_LT(std::abs(ps.get("x").data()[0]), 1e-3);
  EXPECT_LE(steps, 500);
}
