#include <gtest/gtest.h>

#include <random>

#include "crimgs/autodiff/gradcheck.hpp"
#include "crimgs/compositor.hpp"

using namespace crimgs;
using T = ad::Tensor<double>;

namespace {

T random_frame(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> v(3 * h * w);
  for (auto& e : v) e = u(rng);
  return T::parameter({3, h, w}, v, "frame" + std::to_string(seed));
}

}  // namespace

TEST(Compositor, IdenticalFramesReproduceTheFrame) {
  nn::Rng rng(1);
  WeightCnn<double> cnn(rng, 8);
  const T f = random_frame(6, 5, 2);
  const auto c = composite<double>({f, f, f}, cnn, true);
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_NEAR(c.image[i], f[i], 1e-14);
}

TEST(Compositor, InactiveModeAveragesUniformly) {
  nn::Rng rng(1);
  WeightCnn<double> cnn(rng, 8);
  const T a = random_frame(4, 4, 3), b = random_frame(4, 4, 4);
  const auto c = composite<double>({a, b}, cnn, false);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(c.image[i], 0.5 * (a[i] + b[i]), 1e-15);
  for (double w : c.weights.data()) EXPECT_EQ(w, 0.5);
}

TEST(Compositor, ZeroWeightCnnGivesUniformWeights) {
  nn::Rng rng(1);
  WeightCnn<double> cnn(rng, 8);
  for (std::size_t l = 0; l < 3; ++l)
    for (auto& v : cnn.layer(l).weight.mutable_data()) v = 0;
  const auto c = composite<double>({random_frame(5, 5, 1), random_frame(5, 5, 2), random_frame(5, 5, 3)}, cnn, true);
  for (double w : c.weights.data()) EXPECT_NEAR(w, 1.0 / 3.0, 1e-16);
}

TEST(Compositor, ConvexWeightsSumToOne) {
  nn::Rng rng(5);
  WeightCnn<double> cnn(rng);
  std::vector<T> frames;
  for (std::uint64_t s = 0; s < 9; ++s) frames.push_back(random_frame(12, 10, s));
  const auto c = composite<double>(frames, cnn, true);
  const std::size_t per = 3 * 12 * 10;
  double worst = 0;
  for (std::size_t p = 0; p < per; ++p) {
    double sum = 0, lo = 1e9, hi = -1e9;
    for (std::size_t n = 0; n < 9; ++n) {
      EXPECT_GE(c.weights[n * per + p], 0.0);
      sum += c.weights[n * per + p];
      lo = std::min(lo, frames[n][p]);
      hi = std::max(hi, frames[n][p]);
    }
    worst = std::max(worst, std::abs(sum - 1));
    EXPECT_GE(c.image[p], lo - 1e-12);
    EXPECT_LE(c.image[p], hi + 1e-12);
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Compositor, RejectsMismatchedFrames) {
  nn::Rng rng(1);
  WeightCnn<double> cnn(rng, 4);
  EXPECT_THROW((void)composite<double>({random_frame(4, 4, 1), random_frame(4, 5, 2)}, cnn, true), ShapeError);
  EXPECT_THROW((void)composite<double>({}, cnn, true), ShapeError);
}

TEST(Compositor, GradientsMatchFiniteDifferences) {
  nn::Rng rng(7);
  WeightCnn<double> cnn(rng, 8);
  std::vector<T> frames{random_frame(8, 8, 1), random_frame(8, 8, 2), random_frame(8, 8, 3)};
  const T target = random_frame(8, 8, 9);
  auto loss = [&] { return ad::sum(ad::square(ad::sub(composite<double>(frames, cnn, true).image, target))); };
  std::vector<T> params{frames[0], frames[2]};
  for (const auto& p : cnn.parameters()) params.push_back(p.tensor);
  const auto r = ad::gradcheck<double>(loss, params, 1e-6, 32);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst;
}
