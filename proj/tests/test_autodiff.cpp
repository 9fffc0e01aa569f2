#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "crimgs/autodiff/adam.hpp"
#include "crimgs/autodiff/conv.hpp"
#include "crimgs/autodiff/gradcheck.hpp"
#include "crimgs/autodiff/ops.hpp"

using namespace crimgs;
using namespace crimgs::ad;
using T = Tensor<double>;

namespace {

T random_param(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0, const char* name = "x") {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& e : v) e = u(rng);
  return T::parameter(shape, std::move(v), name);
}

T random_const(const Shape& shape, std::uint64_t seed) {
  T t = random_param(shape, seed);
  t.set_requires_grad(false);
  return t;
}

/// Contracts an arbitrary output with fixed random weights so every output
/// entry contributes a distinct cotangent.
T project(const T& y, std::uint64_t seed = 99) { return sum(mul(y, random_const(y.shape(), seed))); }

double check(const std::function<T()>& loss, const std::vector<T>& params) {
  return gradcheck<double>(loss, params, 1e-5).max_relative_error;
}

}  // namespace

TEST(Autodiff, ReluAtNegativeInputIsZero) {
  T x = T::parameter({1}, {-1.0});
  T y = relu(x);
  EXPECT_EQ(y.item(), 0.0);
  backward(y);
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Autodiff, KinksUseZeroSubgradient) {
  T x = T::parameter({3}, {0.0, 0.0, 0.0});
  backward(sum(relu(x) + abs(x) + ad::sqrt(x)));
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Autodiff, SoftmaxOfEqualLogitsIsUniform) {
  T s = softmax(T({2}, {0.0, 0.0}), 0);
  EXPECT_EQ(s[0], 0.5);
  EXPECT_EQ(s[1], 0.5);
}

TEST(Autodiff, SumOfSquaresGradient) {
  T w = T::parameter({2}, {1.0, 2.0});
  backward(sum(w * w));
  EXPECT_EQ(w.grad()[0], 2.0);
  EXPECT_EQ(w.grad()[1], 4.0);
}

TEST(Autodiff, DetachedTensorReceivesNoGradient) {
  T w = T::parameter({2}, {1.0, 2.0});
  T d = w.detach();
  backward(sum(w * d));
  EXPECT_FALSE(d.has_grad());
  EXPECT_EQ(w.grad()[1], 2.0);
}

TEST(Autodiff, NoGradGuardStopsRecording) {
  T w = T::parameter({2}, {1.0, 2.0});
  T y;
  {
    NoGradGuard guard;
    y = sum(w * w);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(grad_enabled());
}

TEST(Autodiff, RejectsNonScalarLoss) {
  T w = T::parameter({2}, {1.0, 2.0});
  EXPECT_THROW(backward(w * w), std::invalid_argument);
}

TEST(Autodiff, SecondBackwardOnSameGraphFails) {
  T w = T::parameter({2}, {1.0, 2.0});
  T loss = sum(w * w);
  backward(loss);
  EXPECT_THROW(backward(loss), std::logic_error);
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
  T x = T::parameter({1}, {3.0});
  T y = x * x;
  backward(sum(y + y * x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 3.0 + 3 * 9.0);
}

TEST(Autodiff, ShapeMismatchIsReported) {
  EXPECT_THROW((void)(T::zeros({2, 3}) + T::zeros({4})), ShapeError);
  EXPECT_THROW((void)matmul(T::zeros({2, 3}), T::zeros({2, 3})), ShapeError);
  EXPECT_THROW(T({2}, {1.0}), ShapeError);
}

TEST(Autodiff, MatmulValue) {
  T a({2, 2}, {1, 2, 3, 4}), b({2, 1}, {5, 6});
  T c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], 17.0);
  EXPECT_EQ(c[1], 39.0);
}

TEST(Autodiff, Det3Value) {
  T m({3, 3}, {2, 0, 0, 0, 3, 0, 1, 1, 4});
  EXPECT_DOUBLE_EQ(det3(m).item(), 24.0);
}

TEST(Autodiff, SoftmaxSumsToOneAlongAxis) {
  T x = random_param({3, 4, 5}, 1, -20, 20);
  T s = softmax(x, 1);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t c = 0; c < 5; ++c) {
      double total = 0;
      for (std::size_t b = 0; b < 4; ++b) total += s[(a * 4 + b) * 5 + c];
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(Autodiff, GaussianFilterPreservesConstants) {
  T c = T::full({2, 7, 9}, 0.3);
  T y = gaussian_filter(c, 1.5, 5);
  for (double v : y.data()) EXPECT_NEAR(v, 0.3, 1e-14);
}

TEST(Autodiff, ConvIdentityKernelCopiesInput) {
  T x = random_const({1, 2, 4, 5}, 3);
  std::vector<double> w(2 * 2 * 9, 0.0);
  w[0 * 18 + 0 * 9 + 4] = 1.0;
  w[1 * 18 + 1 * 9 + 4] = 1.0;
  T y = conv2d(x, T({2, 2, 3, 3}, w), T());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(GradCheck, UnaryPrimitives) {
  T x = random_param({4, 3}, 11, -2.0, 2.0);
  T pos = random_param({4, 3}, 12, 0.2, 2.0, "pos");
  EXPECT_LT(check([&] { return project(neg(x)); }, {x}), 1e-6);
  EXPECT_LT(check([&] { return project(relu(x)); }, {x}), 1e-6);
  EXPECT_LT(check([&] { return project(abs(x)); }, {x}), 1e-6);
  EXPECT_LT(check([&] { return project(square(x)); }, {x}), 1e-6);
  EXPECT_LT(check([&] { return project(ad::sqrt(pos)); }, {pos}), 1e-6);
  EXPECT_LT(check([&] { return project(ad::sin(x)); }, {x}), 1e-6);
  EXPECT_LT(check([&] { return project(ad::cos(x)); }, {x}), 1e-6);
  EXPECT_LT(check([&] { return project(ad::exp(x)); }, {x}), 1e-6);
  EXPECT_LT(check([&] { return project(ad::log(pos)); }, {pos}), 1e-6);
  EXPECT_LT(check([&] { return project(sigmoid(x)); }, {x}), 1e-6);
  EXPECT_LT(check([&] { return project(scale(x, 2.5)); }, {x}), 1e-6);
  EXPECT_LT(check([&] { return project(add_scalar(x, -0.7)); }, {x}), 1e-6);
}

TEST(GradCheck, BinaryWithBroadcast) {
  T a = random_param({2, 3, 4}, 21, -1, 1, "a");
  T b = random_param({3, 1}, 22, 0.5, 1.5, "b");
  EXPECT_LT(check([&] { return project(add(a, b)); }, {a, b}), 1e-6);
  EXPECT_LT(check([&] { return project(sub(b, a)); }, {a, b}), 1e-6);
  EXPECT_LT(check([&] { return project(mul(a, b)); }, {a, b}), 1e-6);
  EXPECT_LT(check([&] { return project(div(a, b)); }, {a, b}), 1e-6);
  EXPECT_LT(check([&] { return project(broadcast_to(b, {2, 3, 4})); }, {b}), 1e-6);
}

TEST(GradCheck, ShapeOps) {
  T a = random_param({3, 4}, 31, -1, 1, "a");
  T b = random_param({3, 2}, 32, -1, 1, "b");
  EXPECT_LT(check([&] { return project(reshape(a, {2, 6})); }, {a}), 1e-6);
  EXPECT_LT(check([&] { return project(transpose(a)); }, {a}), 1e-6);
  EXPECT_LT(check([&] { return project(slice(a, 1, 1, 2)); }, {a}), 1e-6);
  EXPECT_LT(check([&] { return project(concat<double>({a, b, a}, 1)); }, {a, b}), 1e-6);
  EXPECT_LT(check([&] { return project(stack<double>({a, a * a})); }, {a}), 1e-6);
}

TEST(GradCheck, Reductions) {
  T a = random_param({2, 3, 4}, 41);
  EXPECT_LT(check([&] { return square(sum(a)); }, {a}), 1e-6);
  EXPECT_LT(check([&] { return project(sum(a, 1)); }, {a}), 1e-6);
  EXPECT_LT(check([&] { return project(sum(a, -1, true)); }, {a}), 1e-6);
  EXPECT_LT(check([&] { return square(mean(a)); }, {a}), 1e-6);
  EXPECT_LT(check([&] { return project(mean(a, 0)); }, {a}), 1e-6);
  EXPECT_LT(check([&] { return project(softmax(a, 1)); }, {a}), 1e-6);
  EXPECT_LT(check([&] { return project(softmax(a, 0)); }, {a}), 1e-6);
}

TEST(GradCheck, MatmulDetAndCombination) {
  T a = random_param({3, 5}, 51, -1, 1, "a");
  T b = random_param({5, 2}, 52, -1, 1, "b");
  T m = random_param({3, 3}, 53, -1, 1, "m");
  EXPECT_LT(check([&] { return project(matmul(a, b)); }, {a, b}), 1e-6);
  EXPECT_LT(check([&] { return square(det3(m)); }, {m}), 1e-6);
  T c = random_param({3, 5}, 54, -1, 1, "c");
  EXPECT_LT(check([&] { return project(linear_combination<double>({a, c, a}, {0.5, -2.0, 1.5})); }, {a, c}), 1e-6);
}

TEST(GradCheck, Conv2dAndGaussianFilter) {
  T x = random_param({2, 3, 6, 5}, 61, -1, 1, "x");
  T w = random_param({4, 3, 3, 3}, 62, -0.5, 0.5, "w");
  T bias = random_param({4}, 63, -0.5, 0.5, "bias");
  EXPECT_LT(check([&] { return project(conv2d(x, w, bias)); }, {x, w, bias}), 1e-6);
  T narrow = random_param({1, 2, 3, 2}, 64, -1, 1, "narrow");
  T w5 = random_param({1, 2, 5, 5}, 65, -0.5, 0.5, "w5");
  EXPECT_LT(check([&] { return project(conv2d(narrow, w5, T())); }, {narrow, w5}), 1e-6);
  T img = random_param({3, 12, 9}, 66, 0, 1, "img");
  EXPECT_LT(check([&] { return project(gaussian_filter(img, 1.5, 5)); }, {img}), 1e-6);
}

TEST(Adam, ZeroGradientLeavesParameter) {
  std::vector<double> p{1.0, -2.0}, g{0.0, 0.0};
  AdamState<double> st;
  adam_step<double>(p, g, st, 0.1);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradient) {
  std::vector<double> p{1.0}, g{3.0};
  AdamState<double> st;
  adam_step<double>(p, g, st, 0.1);
  EXPECT_NEAR(p[0], 0.9, 1e-8);
}

TEST(Adam, ConvergesOnQuadratic) {
  T w = T::parameter({2}, {3.0, -4.0}, "w");
  T target({2}, {0.5, 1.5});
  Adam<double> opt;
  opt.add(w, "w", 0.05);
  for (int i = 0; i < 400; ++i) {
    opt.zero_grad();
    backward(sum(square(w - target)));
    opt.step();
  }
  EXPECT_NEAR(w[0], 0.5, 1e-2);
  EXPECT_NEAR(w[1], 1.5, 1e-2);
}

TEST(Adam, NonFiniteGradientAbortsWithoutUpdate) {
  T a = T::parameter({1}, {1.0}, "a");
  T b = T::parameter({1}, {2.0}, "b");
  Adam<double> opt;
  opt.add(a, "g", 0.1);
  opt.add(b, "g", 0.1);
  a.mutable_grad()[0] = 1.0;
  b.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    opt.step();
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
  }
  EXPECT_EQ(a[0], 1.0);
  EXPECT_EQ(b[0], 2.0);
}
