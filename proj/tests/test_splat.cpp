#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <random>

#include "crimgs/autodiff/gradcheck.hpp"
#include "crimgs/splat.hpp"

using namespace crimgs;
using namespace crimgs::splat;
using T = ad::Tensor<double>;

namespace {

Intrinsics camera(std::size_t w = 32, std::size_t h = 24, double f = 30.0) {
  Intrinsics k;
  k.width = w;
  k.height = h;
  k.fx = k.fy = f;
  k.cx = 0.5 * double(w);
  k.cy = 0.5 * double(h);
  return k;
}

GaussianScene<double> make_scene(const std::vector<std::array<double, 3>>& means, const std::vector<double>& sigma,
                                 const std::vector<double>& opacity, const std::vector<std::array<double, 3>>& colors) {
  const std::size_t n = means.size();
  std::vector<double> mu, ls, q, ol, col;
  for (std::size_t i = 0; i < n; ++i) {
    mu.insert(mu.end(), means[i].begin(), means[i].end());
    for (int c = 0; c < 3; ++c) ls.push_back(std::log(sigma[i]));
    q.insert(q.end(), {1.0, 0.0, 0.0, 0.0});
    ol.push_back(std::log(opacity[i] / (1 - opacity[i])));
    col.insert(col.end(), colors[i].begin(), colors[i].end());
  }
  GaussianScene<double> s;
  s.means = T::parameter({n, 3}, mu, "means");
  s.log_scales = T::parameter({n, 3}, ls, "log_scales");
  s.quats = T::parameter({n, 4}, q, "quats");
  s.opacity_logits = T::parameter({n}, ol, "opacity");
  s.colors = T::parameter({n, 3}, col, "colors");
  return s;
}

GaussianScene<double> random_scene(std::size_t n, std::uint64_t seed, double spread = 0.6) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1), u01(0, 1);
  std::vector<double> mu, ls, q, ol, col;
  for (std::size_t i = 0; i < n; ++i) {
    mu.insert(mu.end(), {spread * u(rng), spread * u(rng), spread * u(rng)});
    ls.insert(ls.end(), {std::log(0.08 + 0.1 * u01(rng)), std::log(0.08 + 0.1 * u01(rng)), std::log(0.08 + 0.1 * u01(rng))});
    q.insert(q.end(), {u(rng), u(rng), u(rng), u(rng)});
    ol.push_back(2.0 * u(rng));
    col.insert(col.end(), {u01(rng), u01(rng), u01(rng)});
  }
  GaussianScene<double> s;
  s.means = T::parameter({n, 3}, mu, "means");
  s.log_scales = T::parameter({n, 3}, ls, "log_scales");
  s.quats = T::parameter({n, 4}, q, "quats");
  s.opacity_logits = T::parameter({n}, ol, "opacity");
  s.colors = T::parameter({n, 3}, col, "colors");
  s.background = {0.1, 0.2, 0.3};
  return s;
}

RigidTransform<double> front_view(double distance = 3.0) {
  return look_at<double>(Vec3<double>(0.3, -0.2, -distance), Vec3<double>::Zero(), Vec3<double>(0, -1, 0));
}

T weights(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(ad::numel(s));
  for (auto& e : v) e = u(rng);
  return T(s, v);
}

}  // namespace

TEST(Covariance, AxisAlignedCases) {
  EXPECT_LT((covariance_world(Eigen::Vector4d(1, 0, 0, 0), Eigen::Vector3d(1, 1, 1)) - Eigen::Matrix3d::Identity()).norm(),
            1e-15);
  const Eigen::Matrix3d expect = Eigen::Vector3d(4, 1, 1).asDiagonal();
  EXPECT_LT((covariance_world(Eigen::Vector4d(1, 0, 0, 0), Eigen::Vector3d(2, 1, 1)) - expect).norm(), 1e-15);
}

TEST(Covariance, EigenvaluesAreSquaredScales) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector4d q(n(rng), n(rng), n(rng), n(rng));
    const Eigen::Vector3d s(u(rng), u(rng), u(rng));
    const Eigen::Matrix3d cov = covariance_world(q, s);
    EXPECT_LT((cov - cov.transpose()).norm(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    Eigen::Vector3d expect = s.cwiseAbs2();
    std::sort(expect.data(), expect.data() + 3);
    EXPECT_LT((es.eigenvalues() - expect).cwiseAbs().maxCoeff(), 1e-9 * expect.maxCoeff());
  }
}

TEST(Project, OnAxisIsotropicMatchesPinholeLinearisation) {
  const Intrinsics k = camera(64, 64, 80.0);
  for (double depth : {2.0, 4.0}) {
    const double sigma = 0.01;
    auto s = make_scene({{0, 0, depth}}, {sigma}, {0.5}, {{1, 1, 1}});
    const auto p = project(s.means, s.log_scales, s.quats, to_tensor<double>(RigidTransform<double>{}), k);
    ASSERT_TRUE(p.visible[0]);
    const double expect = std::pow(k.fx * sigma / depth, 2);
    EXPECT_NEAR(p.packed[2] - 0.3, expect, 1e-12);
    EXPECT_NEAR(p.packed[4] - 0.3, expect, 1e-12);
    EXPECT_NEAR(p.packed[3], 0.0, 1e-15);
    EXPECT_NEAR(p.packed[0], 32.0, 1e-12);
    EXPECT_NEAR(p.packed[1], 32.0, 1e-12);
  }
}

TEST(Project, DoublingDepthHalvesFootprint) {
  const Intrinsics k = camera(64, 64, 80.0);
  auto s = make_scene({{0.05, -0.02, 2.0}, {0.1, -0.04, 4.0}}, {0.02, 0.02}, {0.5, 0.5}, {{1, 1, 1}, {1, 1, 1}});
  const auto p = project(s.means, s.log_scales, s.quats, to_tensor<double>(RigidTransform<double>{}), k);
  const double near_sd = std::sqrt(p.packed[2] - 0.3), far_sd = std::sqrt(p.packed[5 + 2] - 0.3);
  EXPECT_NEAR(far_sd / near_sd, 0.5, 0.005);
}

TEST(Project, BehindCameraIsCulled) {
  const Intrinsics k = camera();
  auto s = make_scene({{0, 0, 1.0}}, {0.1}, {0.5}, {{1, 0, 0}});
  RigidTransform<double> moved;
  moved.trans = Vec3<double>(0, 0, -2.0);
  const auto p = project(s.means, s.log_scales, s.quats, to_tensor<double>(moved), k);
  EXPECT_FALSE(p.visible[0]);
  T img = render(s, moved, k);
  for (double v : img.data()) EXPECT_EQ(v, 0.0);
}

TEST(Render, EmptyPixelsShowBackground) {
  const Intrinsics k = camera();
  auto s = make_scene({{0, 0, 3.0}}, {0.01}, {0.5}, {{1, 0, 0}});
  s.background = {0.25, 0.5, 0.75};
  T img = render(s, RigidTransform<double>{}, k);
  const std::size_t hw = k.width * k.height;
  for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(img[ch * hw], s.background[ch]);
}

TEST(Render, OpaqueGaussianShowsItsColor) {
  const Intrinsics k = camera(32, 32, 30.0);
  // Centered on pixel (16, 16): u = 30 x / z + 16 = 16.5.
  auto s = make_scene({{0.5 / 30 * 3, 0.5 / 30 * 3, 3.0}}, {0.2}, {0.999999}, {{0.2, 0.5, 0.8}});
  T img = render(s, RigidTransform<double>{}, k);
  const std::size_t hw = 32 * 32, pix = 16 * 32 + 16;
  for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(img[ch * hw + pix], 0.99 * s.colors[ch], 1e-9);
}

TEST(Render, TwoLayerBlendByHand) {
  const Intrinsics k = camera(32, 32, 30.0);
  const double off = 0.5 / 30;
  auto s = make_scene({{off * 2, off * 2, 2.0}, {off * 4, off * 4, 4.0}}, {0.1, 0.2}, {0.6, 0.999999},
                      {{1, 0, 0}, {0, 0, 1}});
  s.background = {0, 0, 1};
  T img = render(s, RigidTransform<double>{}, k);
  const std::size_t hw = 32 * 32, pix = 16 * 32 + 16;
  EXPECT_NEAR(img[pix], 0.6, 1e-12);
  EXPECT_NEAR(img[hw + pix], 0.0, 1e-12);
  EXPECT_NEAR(img[2 * hw + pix], 0.4, 1e-12);
}

TEST(Render, ValuesStayInUnitRangeAndWeightsSumToOne) {
  const Intrinsics k = camera(40, 30, 35.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto s = random_scene(60, seed);
    RenderAux aux;
    T img = render(s, front_view(), k, {}, &aux);
    for (double v : img.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0 + 1e-6);
    }
    double worst = 0;
    for (double wsum : aux.weight_sum) worst = std::max(worst, std::abs(wsum - 1.0));
    EXPECT_LT(worst, 1e-6);
  }
}

TEST(Render, InvariantToGaussianOrder) {
  const Intrinsics k = camera(40, 30, 35.0);
  auto s = random_scene(40, 9);
  std::vector<std::size_t> perm(40);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(4));
  auto permute = [&](const T& t) {
    const std::size_t row = t.numel() / 40;
    std::vector<double> v(t.numel());
    for (std::size_t i = 0; i < 40; ++i)
      for (std::size_t j = 0; j < row; ++j) v[i * row + j] = t[perm[i] * row + j];
    return T::parameter(t.shape(), v);
  };
  GaussianScene<double> p = s;
  p.means = permute(s.means);
  p.log_scales = permute(s.log_scales);
  p.quats = permute(s.quats);
  p.opacity_logits = permute(s.opacity_logits);
  p.colors = permute(s.colors);
  EXPECT_EQ(render(s, front_view(), k).values(), render(p, front_view(), k).values());
}

TEST(Render, GradientsMatchFiniteDifferences) {
  const Intrinsics k = camera(24, 20, 22.0);
  auto s = random_scene(3, 21, 0.3);
  for (auto& v : s.log_scales.mutable_data()) v += 0.5;
  T view = to_tensor<double>(front_view(2.5));
  view.set_requires_grad(true);
  view.set_name("view");
  const T w = weights({3, 20, 24}, 5);
  auto loss = [&] { return ad::sum(render(s, view, k) * w); };
  for (const T& p : {s.means, s.colors, s.opacity_logits, s.log_scales, s.quats, view}) {
    const auto r = ad::gradcheck<double>(loss, {p}, 1e-6);
    EXPECT_LT(r.max_relative_error, 1e-4) << p.name();
  }
}

TEST(Project, GradientsIncludingFrustumClamp) {
  const Intrinsics k = camera(24, 20, 22.0);
  // Second Gaussian lies far outside the image so its Jacobian is clamped.
  auto s = make_scene({{0.1, 0.05, 2.0}, {3.0, -2.5, 2.0}}, {0.1, 0.2}, {0.5, 0.5}, {{1, 0, 0}, {0, 1, 0}});
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (auto& v : s.quats.mutable_data()) v = n(rng);
  for (auto& v : s.log_scales.mutable_data()) v += 0.3 * n(rng);
  T view = to_tensor<double>(exp_se3(ScrewAxis<double>{Vec3<double>(0.2, 1, 0).normalized(), 0.1, Vec3<double>(0.1, 0, 0.2)}));
  view.set_requires_grad(true);
  view.set_name("view");
  const T w = weights({2, 5}, 6);
  auto loss = [&] { return ad::sum(project(s.means, s.log_scales, s.quats, view, k).packed * w); };
  const auto r = ad::gradcheck<double>(loss, {s.means, s.log_scales, s.quats, view}, 1e-6);
  EXPECT_LT(r.max_relative_error, 1e-7) << r.worst;
}

TEST(Render, ShadingWithSphericalHarmonics) {
  const Intrinsics k = camera(24, 20, 22.0);
  auto s = random_scene(4, 31, 0.3);
  s.sh_degree = 3;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 0.1);
  std::vector<double> rest(4 * 15 * 3);
  for (auto& v : rest) v = n(rng);
  s.sh_rest = T::parameter({4, 15, 3}, rest, "sh_rest");
  const T w = weights({3, 20, 24}, 8);
  auto loss = [&] { return ad::sum(render(s, front_view(2.5), k) * w); };
  EXPECT_LT(ad::gradcheck<double>(loss, {s.sh_rest, s.colors}, 1e-6).max_relative_error, 1e-4);
  // Zero higher bands reproduce the plain colour render.
  GaussianScene<double> plain = s;
  plain.sh_degree = 0;
  for (auto& v : s.sh_rest.mutable_data()) v = 0;
  EXPECT_EQ(render(s, front_view(2.5), k).values(), render(plain, front_view(2.5), k).values());
}

TEST(Render, RejectsEmptyScene) {
  GaussianScene<double> s;
  EXPECT_THROW((void)render(s, RigidTransform<double>{}, camera()), ShapeError);
}
