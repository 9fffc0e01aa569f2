#include <gtest/gtest.h>

#include <cmath>

#include "crimgs/autodiff/gradcheck.hpp"
#include "crimgs/blurkernel.hpp"
#include "oracles.hpp"

using namespace crimgs;
using T = ad::Tensor<double>;

namespace {

Eigen::Matrix<double, 3, 4> mat(const T& t) {
  Eigen::Matrix<double, 3, 4> m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = t[static_cast<std::size_t>(r * 4 + c)];
  return m;
}

KernelConfig small_config(std::size_t images = 3) {
  KernelConfig cfg;
  cfg.n_images = images;
  cfg.latent = 16;
  return cfg;
}

void zero(nn::Linear<double>& l) {
  for (auto& v : l.weight.mutable_data()) v = 0;
  for (auto& v : l.bias.mutable_data()) v = 0;
}

}  // namespace

TEST(SampleTimes, UniformWithEndpoints) {
  EXPECT_EQ(sample_times(2), (std::vector<double>{0.0, 1.0}));
  EXPECT_EQ(sample_times(3), (std::vector<double>{0.0, 0.5, 1.0}));
  const auto nine = sample_times(9);
  ASSERT_EQ(nine.size(), 9u);
  EXPECT_EQ(nine[1], 0.125);
  EXPECT_EQ(nine[8], 1.0);
  EXPECT_THROW((void)sample_times(1), std::invalid_argument);
}

TEST(KernelOps, ExpScrewMatchesClosedForm) {
  const Vec3<double> axis = Vec3<double>(0.3, -0.4, 0.5).normalized();
  const double angle = 0.8;
  const Vec3<double> v(0.1, 0.7, -0.2);
  T m = kernel_ops::exp_screw(T({1, 3}, {axis[0], axis[1], axis[2]}), T({1}, {angle}), T({1, 3}, {v[0], v[1], v[2]}));
  const Mat4<double> expect = exp_se3(ScrewAxis<double>{axis, angle, v}).matrix();
  EXPECT_LT((mat(m) - expect.topRows<3>()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(KernelOps, ExpTwistMatchesSeries) {
  for (double mag : {0.0, 1e-6, 0.05, 0.09, 0.11, 1.0, 2.5}) {
    const Eigen::Vector3d w = Eigen::Vector3d(0.2, -0.6, 0.3).normalized() * mag;
    const Eigen::Vector3d v(0.5, 0.1, -0.4);
    T m = kernel_ops::exp_twist(T({1, 6}, {w[0], w[1], w[2], v[0], v[1], v[2]}));
    const Eigen::Matrix4d expect = oracle::expm_series<4>(oracle::twist(w, v));
    EXPECT_LT((mat(m) - expect.topRows<3>()).cwiseAbs().maxCoeff(), 1e-13) << "magnitude " << mag;
  }
}

TEST(KernelOps, ExpTwistGradientIncludingZero) {
  for (double mag : {0.0, 0.08, 1.3}) {
    const Eigen::Vector3d w = Eigen::Vector3d(0.2, -0.6, 0.3).normalized() * mag;
    T xi = T::parameter({1, 6}, {w[0], w[1], w[2], 0.5, 0.1, -0.4}, "xi");
    T weights({3, 4}, {0.3, -1.0, 0.7, 0.2, 1.1, 0.4, -0.5, 0.9, -0.2, 0.6, 0.8, -1.3});
    auto loss = [&] { return ad::sum(kernel_ops::exp_twist(xi) * weights); };
    EXPECT_LT(ad::gradcheck<double>(loss, {xi}, 1e-6).max_relative_error, 1e-7) << "magnitude " << mag;
  }
}

TEST(KernelOps, ComposeMatchesMatrixProduct) {
  const RigidTransform<double> a = exp_se3(ScrewAxis<double>{Vec3<double>(0, 0, 1), 0.4, Vec3<double>(1, 2, 3)});
  const RigidTransform<double> b = exp_se3(ScrewAxis<double>{Vec3<double>(1, 0, 0), -1.1, Vec3<double>(0, 1, 0)});
  T c = kernel_ops::compose(to_tensor<double>(a), to_tensor<double>(b));
  EXPECT_LT((mat(c) - (a * b).matrix().topRows<3>()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(BlurKernel, RigidTransformsInSE3ForRandomWeights) {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    nn::Rng rng(seed);
    KernelConfig cfg = small_config();
    cfg.theta_gain = 3.0;
    BlurKernel<double> k(cfg, rng);
    for (std::size_t img = 0; img < cfg.n_images; ++img)
      for (const auto& t : k.rigid_transforms(img, sample_times(9))) {
        const Mat3<double> r = from_tensor<double>(t).rot;
        worst = std::max({worst, orthogonality_residual(r), std::abs(r.determinant() - 1)});
      }
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(BlurKernel, ZeroRigidDecoderGivesIdentity) {
  nn::Rng rng(1);
  BlurKernel<double> k(small_config(), rng);
  zero(k.rigid_decoder());
  for (const auto& t : k.rigid_transforms(0, sample_times(5))) {
    EXPECT_EQ(mat(t), (Eigen::Matrix<double, 3, 4>::Identity()));
  }
}

TEST(BlurKernel, ConstantDynamicsGiveEqualTransforms) {
  nn::Rng rng(2);
  BlurKernel<double> k(small_config(), rng);
  zero(k.f_output());
  const auto ts = k.rigid_transforms(1, sample_times(9));
  for (const auto& t : ts) EXPECT_EQ(mat(t), mat(ts[0]));
}

TEST(BlurKernel, DeformNearIdentityAtInit) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    nn::Rng rng(seed);
    KernelConfig cfg = small_config();
    cfg.latent = 64;
    BlurKernel<double> k(cfg, rng);
    for (const auto& t : k.deform_transforms(seed % 3, sample_times(9))) {
      EXPECT_LT((mat(t) - Eigen::Matrix<double, 3, 4>::Identity()).norm(), 1e-4);
    }
  }
}

TEST(BlurKernel, ZeroDeformDecoderIsExactIdentity) {
  nn::Rng rng(3);
  BlurKernel<double> k(small_config(), rng);
  zero(k.deform_decoder());
  for (const auto& t : k.deform_transforms(2, sample_times(3))) {
    EXPECT_EQ(mat(t), (Eigen::Matrix<double, 3, 4>::Identity()));
  }
}

TEST(BlurKernel, AngleOutputsDoNotAffectAxis) {
  nn::Rng rng(4);
  BlurKernel<double> k(small_config(), rng);
  const auto z = k.latents(0, sample_times(3), true);
  const auto before = k.decode_screw(z[2]);
  auto& dec = k.rigid_decoder();
  const std::size_t cols = dec.weight.dim(1);
  for (std::size_t r = 0; r < dec.weight.dim(0); ++r) dec.weight.mutable_data()[r * cols + 3] += 0.37;
  dec.bias.mutable_data()[3] -= 1.5;
  const auto after = k.decode_screw(z[2]);
  EXPECT_EQ(before.axis.values(), after.axis.values());
  EXPECT_NE(before.angle[0], after.angle[0]);
}

TEST(BlurKernel, IdentityKernelReturnsBase) {
  nn::Rng rng(5);
  BlurKernel<double> k(small_config(), rng);
  zero(k.rigid_decoder());
  zero(k.deform_decoder());
  const auto base = look_at<double>(Vec3<double>(0, -1, 3), Vec3<double>::Zero(), Vec3<double>(0, -1, 0));
  const auto sample = k.trajectory(to_tensor<double>(base), 0, sample_times(4));
  ASSERT_EQ(sample.poses.size(), 4u);
  for (const auto& p : sample.poses) EXPECT_LT((mat(p) - base.matrix().topRows<3>()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(BlurKernel, PureTranslationScrewTranslatesPose) {
  nn::Rng rng(6);
  KernelConfig cfg = small_config();
  cfg.deform = false;
  cfg.theta_gain = 1.0;
  BlurKernel<double> k(cfg, rng);
  auto& dec = k.rigid_decoder();
  zero(dec);
  const std::vector<double> bias{0, 0, 0, 0.5, 0.2, -0.4, 0.1};
  std::copy(bias.begin(), bias.end(), dec.bias.mutable_data().begin());
  const auto base = look_at<double>(Vec3<double>(1, 0, 2), Vec3<double>::Zero(), Vec3<double>(0, -1, 0));
  for (const auto& p : k.trajectory(to_tensor<double>(base), 1, sample_times(3)).poses) {
    const auto pose = from_tensor<double>(p);
    EXPECT_LT((pose.rot - base.rot).norm(), 1e-15);
    EXPECT_LT((pose.trans - (base.trans + base.rot * Vec3<double>(0.1, -0.2, 0.05))).norm(), 1e-15);
  }
}

TEST(BlurKernel, RefinedGridInterleavesNeighbours) {
  nn::Rng rng(7);
  KernelConfig cfg = small_config();
  cfg.theta_gain = 1.0;
  BlurKernel<double> k(cfg, rng);
  const auto coarse = k.rigid_transforms(0, sample_times(5));
  const auto fine = k.rigid_transforms(0, sample_times(9));
  for (std::size_t i = 0; i + 1 < coarse.size(); ++i) {
    const Mat3<double> a = from_tensor<double>(coarse[i]).rot, b = from_tensor<double>(coarse[i + 1]).rot;
    const Mat3<double> mid = from_tensor<double>(fine[2 * i + 1]).rot;
    const double span = rotation_distance(a, b);
    EXPECT_LE(rotation_distance(a, mid), span + 1e-6);
    EXPECT_LE(rotation_distance(mid, b), span + 1e-6);
  }
}

TEST(BlurKernel, TimeInputVariantRuns) {
  nn::Rng rng(8);
  KernelConfig cfg = small_config();
  cfg.time_input = true;
  BlurKernel<double> k(cfg, rng);
  EXPECT_EQ(k.rigid_transforms(0, sample_times(3)).size(), 3u);
}

TEST(BlurKernel, RejectsBadImageIndex) {
  nn::Rng rng(9);
  BlurKernel<double> k(small_config(2), rng);
  EXPECT_THROW((void)k.rigid_transforms(2, sample_times(3)), std::out_of_range);
}

TEST(BlurKernel, EmbeddingGradientThroughPoses) {
  nn::Rng rng(10);
  KernelConfig cfg = small_config();
  cfg.theta_gain = 0.5;
  cfg.solver.adaptive = false;
  cfg.solver.initial_step = 0.125;
  BlurKernel<double> k(cfg, rng);
  // Make the deform branch non-trivial so its path is exercised.
  for (auto& v : k.deform_decoder().weight.mutable_data()) v *= 1e3;
  const auto base = look_at<double>(Vec3<double>(0, -1, 3), Vec3<double>::Zero(), Vec3<double>(0, -1, 0));
  T weights({3, 4}, {0.3, -1.0, 0.7, 0.2, 1.1, 0.4, -0.5, 0.9, -0.2, 0.6, 0.8, -1.3});
  auto loss = [&] {
    const auto s = k.trajectory(to_tensor<double>(base), 1, sample_times(3));
    T acc = ad::sum(s.poses[0] * weights);
    for (std::size_t i = 1; i < s.poses.size(); ++i) acc = acc + ad::sum(ad::square(s.poses[i]) * weights);
    return acc;
  };
  auto params = k.parameters();
  std::vector<T> tensors;
  for (auto& p : params) tensors.push_back(p.tensor);
  const auto r = ad::gradcheck<double>(loss, tensors, 1e-6, 16);
  EXPECT_LT(r.max_relative_error, 1e-5) << r.worst;
}
