#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "crimgs/scenedata.hpp"

using namespace crimgs;
namespace fs = std::filesystem;

namespace {

RigidTransform<double> axis_aligned_camera() {
  return look_at<double>(Vec3<double>(0, 0, -4), Vec3<double>::Zero(), Vec3<double>(0, -1, 0));
}

GenerateConfig small_config() {
  GenerateConfig cfg;
  cfg.seed = 3;
  cfg.scene.n_gaussians = 40;
  cfg.n_images = 4;
  cfg.n_test = 2;
  cfg.width = 24;
  cfg.height = 20;
  cfg.sub_frames = 6;
  return cfg;
}

double energy_along(const ad::Tensor<double>& img, bool horizontal) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  double e = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y + 1 < h; ++y)
      for (std::size_t x = 0; x + 1 < w; ++x) {
        const double a = img[(c * h + y) * w + x];
        const double b = horizontal ? img[(c * h + y) * w + x + 1] : img[(c * h + y + 1) * w + x];
        e += (a - b) * (a - b);
      }
  return e;
}

double l1_distance(const ad::Tensor<double>& a, const ad::Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("crimgs_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(ToyScene, DeterministicAndWellFormed) {
  const auto a = make_toy_scene<double>(11), b = make_toy_scene<double>(11);
  EXPECT_EQ(a.means.values(), b.means.values());
  EXPECT_EQ(a.colors.values(), b.colors.values());
  EXPECT_EQ(a.opacity_logits.values(), b.opacity_logits.values());
  EXPECT_NE(make_toy_scene<double>(12).means.values(), a.means.values());
  EXPECT_EQ(a.size(), 200u);
  a.validate();
  for (double logit : a.opacity_logits.data()) {
    const double op = 1 / (1 + std::exp(-logit));
    EXPECT_GE(op, 0.3 - 1e-12);
    EXPECT_LE(op, 0.9 + 1e-12);
  }
  for (double m : a.means.data()) EXPECT_LE(std::abs(m), 1.0);
  ToySceneConfig one;
  one.n_gaussians = 1;
  EXPECT_EQ(make_toy_scene<double>(1, one).size(), 1u);
}

TEST(ToyScene, RendersSomething) {
  const auto s = make_toy_scene<double>(5);
  const auto img = splat::render(s, axis_aligned_camera(), Intrinsics::from_fov(48, 48, 50));
  EXPECT_GT(*std::max_element(img.data().begin(), img.data().end()), 0.1);
}

TEST(Synthesis, StaticTrajectoryGivesSharpImageExactly) {
  const auto s = make_toy_scene<double>(2);
  TrajectorySpec traj;
  traj.sub_frames = 7;
  const auto r = synthesize_blur(s, axis_aligned_camera(), traj, Intrinsics::from_fov(32, 32, 50));
  EXPECT_EQ(r.blur.values(), r.sharp.values());
}

TEST(Synthesis, TranslationSmearsAlongMotion) {
  const auto s = make_toy_scene<double>(2);
  TrajectorySpec traj;
  traj.screw = ScrewAxis<double>{Vec3<double>::Zero(), 1.0, Vec3<double>(0.25, 0, 0)};
  const auto r = synthesize_blur(s, axis_aligned_camera(), traj, Intrinsics::from_fov(48, 48, 50));
  const double sharp_h = energy_along(r.sharp, true), blur_h = energy_along(r.blur, true);
  const double sharp_v = energy_along(r.sharp, false), blur_v = energy_along(r.blur, false);
  EXPECT_LT(blur_h, 0.6 * sharp_h);
  EXPECT_LT(blur_h / sharp_h, blur_v / sharp_v);
}

TEST(Synthesis, SubFrameAverageConverges) {
  const auto s = make_toy_scene<double>(4);
  const auto base = axis_aligned_camera();
  const auto k = Intrinsics::from_fov(32, 32, 50);
  TrajectorySpec traj;
  traj.screw = screw_about_point<double>(Vec3<double>(0.2, 1, 0.1), 0.08, base.inverse().trans, Vec3<double>(0.05, 0, 0));
  auto blur = [&](std::size_t m) {
    traj.sub_frames = m;
    return synthesize_blur(s, base, traj, k).blur;
  };
  EXPECT_LT(l1_distance(blur(64), blur(32)), l1_distance(blur(4), blur(2)));
}

TEST(Synthesis, SubPosesAreRigid) {
  nn::Rng rng(1);
  for (auto kind : {TrajectoryKind::screw, TrajectoryKind::linear, TrajectoryKind::composite}) {
    GenerateConfig cfg;
    cfg.kind = kind;
    cfg.sub_frames = 8;
    const auto base = axis_aligned_camera();
    const auto traj = random_trajectory(rng, base, cfg);
    for (double t : traj.times()) {
      const auto p = base * traj.delta(t);
      EXPECT_LT(orthogonality_residual(p.rot), 1e-9);
      EXPECT_NEAR(p.rot.determinant(), 1.0, 1e-9);
    }
    // Mid-exposure sits on the base pose.
    EXPECT_LT((traj.delta(0.5).matrix() - Mat4<double>::Identity()).norm(), 1e-12) << to_string(kind);
  }
}

TEST(Srgb, RoundTripInFloat) {
  for (int i = 0; i <= 10000; ++i) {
    const float v = static_cast<float>(i) / 10000.0f;
    EXPECT_NEAR(linear_to_srgb(srgb_to_linear(v)), v, 1e-6f);
    EXPECT_NEAR(srgb_to_linear(linear_to_srgb(v)), v, 1e-6f);
  }
  EXPECT_EQ(srgb_to_linear(0.0), 0.0);
  EXPECT_NEAR(srgb_to_linear(1.0), 1.0, 1e-15);
}

TEST(Dataset, GeneratesRequestedSplits) {
  const auto d = generate_dataset(small_config());
  EXPECT_EQ(d.train.size(), 4u);
  EXPECT_EQ(d.test.size(), 2u);
  EXPECT_EQ(d.points.size(), 40u);
  for (const auto& v : d.train) {
    EXPECT_EQ(v.blur.shape(), (ad::Shape{3, 20, 24}));
    EXPECT_NE(v.blur.values(), v.sharp.values());
  }
}

TEST(Dataset, SaveLoadRoundTrip) {
  const auto d = generate_dataset(small_config());
  const fs::path dir = scratch("roundtrip");
  const fs::path manifest = save_dataset(dir, d);
  const auto png = load_dataset(manifest);
  const auto exact = load_dataset(manifest, LoadOptions{true});
  ASSERT_EQ(png.train.size(), d.train.size());
  ASSERT_EQ(png.test.size(), d.test.size());
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    EXPECT_LT((png.train[i].pose.matrix() - d.train[i].pose.matrix()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(png.train[i].trajectory.kind, d.train[i].trajectory.kind);
    EXPECT_LT((png.train[i].trajectory.screw.trans - d.train[i].trajectory.screw.trans).norm(), 1e-12);
    for (std::size_t p = 0; p < d.train[i].blur.numel(); ++p) {
      const double orig = linear_to_srgb(std::clamp(d.train[i].blur[p], 0.0, 1.0));
      EXPECT_LE(std::abs(linear_to_srgb(png.train[i].blur[p]) - orig), 1.0 / 255.0);
      EXPECT_NEAR(exact.train[i].blur[p], d.train[i].blur[p], 1e-6);
    }
  }
  EXPECT_EQ(png.intrinsics.width, 24u);
  EXPECT_DOUBLE_EQ(png.intrinsics.fx, d.intrinsics.fx);
  EXPECT_EQ(png.points, d.points);
}

TEST(Dataset, MissingImageNamesThePath) {
  const auto d = generate_dataset(small_config());
  const fs::path dir = scratch("missing");
  const fs::path manifest = save_dataset(dir, d);
  fs::remove(dir / "images" / "train_002_blur.png");
  try {
    (void)load_dataset(manifest);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("train_002_blur.png"), std::string::npos) << e.what();
  }
  EXPECT_THROW((void)load_dataset(dir / "nope.json"), DataError);
}

TEST(Dataset, RejectsNonRigidPose) {
  const auto d = generate_dataset(small_config());
  const fs::path dir = scratch("badpose");
  const fs::path manifest = save_dataset(dir, d);
  nlohmann::json j;
  std::ifstream(manifest) >> j;
  j["train"][1]["pose"] = "1 0 0 0  0 1.01 0 0  0 0 1 0  0 0 0 1";
  std::ofstream(manifest) << j.dump();
  try {
    (void)load_dataset(manifest);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("train[1].pose"), std::string::npos) << e.what();
  }
  j["train"][1]["pose"] = "1 0 0";
  std::ofstream(manifest) << j.dump();
  EXPECT_THROW((void)load_dataset(manifest), DataError);
}

TEST(Dataset, FloatSidecarRejectsGarbage) {
  const fs::path dir = scratch("sidecar");
  std::ofstream(dir / "bad.crmf") << "XXXXjunk";
  EXPECT_THROW((void)read_float_image<double>(dir / "bad.crmf"), DataError);
  std::ofstream(dir / "bad.png") << "not a png at all";
  EXPECT_THROW((void)read_png<double>(dir / "bad.png"), DataError);
}
