#pragma once

// Synthetic blur datasets: a random Gaussian scene, camera motion during the
// exposure, blurry images as the linear-RGB mean of sub-frame renders, and
// the manifest format that ties poses to image files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "crimgs/camera.hpp"
#include "crimgs/errors.hpp"
#include "crimgs/image.hpp"
#include "crimgs/liegroup.hpp"
#include "crimgs/nn.hpp"
#include "crimgs/splat.hpp"

namespace crimgs {

enum class TrajectoryKind { screw, linear, composite };

[[nodiscard]] inline TrajectoryKind parse_trajectory_kind(const std::string& s) {
  if (s == "screw") return TrajectoryKind::screw;
  if (s == "linear" || s == "linear-interp") return TrajectoryKind::linear;
  if (s == "composite") return TrajectoryKind::composite;
  throw ConfigError("unknown trajectory kind '" + s + "' (expected screw, linear or composite)");
}

[[nodiscard]] inline std::string to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::screw: return "screw";
    case TrajectoryKind::linear: return "linear";
    case TrajectoryKind::composite: return "composite";
  }
  return "?";
}

/// Camera motion over a normalised exposure t in [0, 1], centred on the base
/// pose at t = 0.5. Poses compose as base * delta(t).
///  screw:     delta(t) = exp((t - 1/2) * screw)
///  linear:    delta(t) = interpolate(start, end, t)
///  composite: linear * screw
struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::screw;
  ScrewAxis<double> screw;  ///< total motion over the exposure
  RigidTransform<double> start, end;
  std::size_t sub_frames = 32;

  void validate() const {
    if (sub_frames < 2) throw DataError("trajectory needs at least 2 sub-frames");
    const double n = screw.axis.norm();
    if (n != 0.0 && std::abs(n - 1.0) > 1e-9) throw DataError("screw axis must be unit or zero");
  }

  [[nodiscard]] RigidTransform<double> delta(double t) const {
    RigidTransform<double> d;
    if (kind != TrajectoryKind::screw) d = interpolate(start, end, t);
    if (kind != TrajectoryKind::linear) {
      d = d * exp_se3(ScrewAxis<double>{screw.axis, (t - 0.5) * screw.angle, screw.trans});
    }
    return d;
  }

  /// Sub-frame times m / (M - 1).
  [[nodiscard]] std::vector<double> times() const {
    std::vector<double> t(sub_frames);
    for (std::size_t m = 0; m < sub_frames; ++m) t[m] = static_cast<double>(m) / static_cast<double>(sub_frames - 1);
    return t;
  }
};

struct ToySceneConfig {
  std::size_t n_gaussians = 200;
  double extent = 1.0;  ///< means uniform in [-extent, extent]^3
  double min_scale = 0.016;
  double max_scale = 0.08;
  double min_opacity = 0.3;
  double max_opacity = 0.9;
  std::array<double, 3> background{0.0, 0.0, 0.0};
};

namespace detail {

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s, hp = h * 6.0, x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  std::array<double, 3> rgb{};
  const int seg = std::min(5, static_cast<int>(hp));
  const std::array<std::array<double, 3>, 6> table{{{c, x, 0}, {x, c, 0}, {0, c, x}, {0, x, c}, {x, 0, c}, {c, 0, x}}};
  for (int i = 0; i < 3; ++i) rgb[i] = table[seg][i] + (v - c);
  return rgb;
}

}  // namespace detail

/// Random scene: means in a box, anisotropic scales, random rotations,
/// opacities in [min, max] and saturated colours spread around the hue circle.
template <typename Real>
[[nodiscard]] splat::GaussianScene<Real> make_toy_scene(std::uint64_t seed, const ToySceneConfig& cfg = {}) {
  if (cfg.n_gaussians < 1) throw ConfigError("toy scene needs at least one Gaussian");
  nn::Rng rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> normal;
  const std::size_t g = cfg.n_gaussians;
  std::vector<Real> mu, ls, q, op, col;
  const double lo = std::log(cfg.min_scale), hi = std::log(cfg.max_scale);
  const double golden = 0.5 * (std::sqrt(5.0) - 1.0);
  const double hue0 = u01(rng);
  for (std::size_t i = 0; i < g; ++i) {
    for (int c = 0; c < 3; ++c) mu.push_back(static_cast<Real>(cfg.extent * (2 * u01(rng) - 1)));
    for (int c = 0; c < 3; ++c) ls.push_back(static_cast<Real>(lo + (hi - lo) * u01(rng)));
    Eigen::Vector4d quat(normal(rng), normal(rng), normal(rng), normal(rng));
    quat.normalize();
    for (int c = 0; c < 4; ++c) q.push_back(static_cast<Real>(quat[c]));
    const double a = cfg.min_opacity + (cfg.max_opacity - cfg.min_opacity) * u01(rng);
    op.push_back(static_cast<Real>(std::log(a / (1 - a))));
    const double hue = std::fmod(hue0 + golden * static_cast<double>(i), 1.0);
    const auto rgb = detail::hsv_to_rgb(hue, 0.5 + 0.5 * u01(rng), 0.4 + 0.6 * u01(rng));
    for (double c : rgb) col.push_back(static_cast<Real>(c));
  }
  splat::GaussianScene<Real> s;
  s.means = ad::Tensor<Real>::parameter({g, 3}, mu, "gaussians.means");
  s.log_scales = ad::Tensor<Real>::parameter({g, 3}, ls, "gaussians.log_scales");
  s.quats = ad::Tensor<Real>::parameter({g, 4}, q, "gaussians.quats");
  s.opacity_logits = ad::Tensor<Real>::parameter({g}, op, "gaussians.opacity");
  s.colors = ad::Tensor<Real>::parameter({g, 3}, col, "gaussians.colors");
  s.background = cfg.background;
  return s;
}

struct BlurResult {
  ad::Tensor<double> blur;
  ad::Tensor<double> sharp;
  std::vector<RigidTransform<double>> poses;
};

/// Renders the M sub-frames along `traj`, averages them in linear RGB and
/// renders the mid-exposure reference.
template <typename Real>
[[nodiscard]] BlurResult synthesize_blur(const splat::GaussianScene<Real>& scene, const RigidTransform<double>& base,
                                         const TrajectorySpec& traj, const Intrinsics& k,
                                         const splat::RenderSettings& rs = {}) {
  traj.validate();
  ad::NoGradGuard guard;
  BlurResult out;
  std::vector<double> acc;
  std::vector<double> first;
  for (double t : traj.times()) {
    out.poses.push_back(base * traj.delta(t));
    const auto img = splat::render(scene, out.poses.back(), k, rs);
    if (first.empty()) {
      first.assign(img.data().begin(), img.data().end());
      acc.assign(first.size(), 0.0);
      continue;
    }
    const auto v = img.data();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<double>(v[i]) - first[i];
  }
  // Mean as first + mean offset, so identical sub-frames reproduce the sharp image exactly.
  const double inv = 1.0 / static_cast<double>(traj.sub_frames);
  std::vector<double> blur(first.size());
  for (std::size_t i = 0; i < blur.size(); ++i) blur[i] = first[i] + acc[i] * inv;
  const ad::Shape shape{3, k.height, k.width};
  out.blur = ad::Tensor<double>(shape, std::move(blur));
  const auto sharp = splat::render(scene, base * traj.delta(0.5), k, rs);
  out.sharp = ad::Tensor<double>(shape, std::vector<double>(sharp.data().begin(), sharp.data().end()));
  return out;
}

struct ViewRecord {
  std::string blur_path;   ///< empty for held-out sharp views
  std::string sharp_path;
  RigidTransform<double> pose;  ///< world-to-camera at mid-exposure
  TrajectorySpec trajectory;
  std::array<double, 2> time_span{0.0, 1.0};
  ad::Tensor<double> blur;   ///< linear RGB [3, H, W], filled on load
  ad::Tensor<double> sharp;
};

struct Dataset {
  std::string name = "toy";
  Intrinsics intrinsics;
  std::array<double, 3> background{0.0, 0.0, 0.0};
  std::vector<ViewRecord> train;
  std::vector<ViewRecord> test;
  std::vector<std::array<double, 6>> points;  ///< initial point cloud: xyz, rgb
};

struct GenerateConfig {
  std::uint64_t seed = 0;
  ToySceneConfig scene;
  std::size_t n_images = 10;
  std::size_t n_test = 2;
  std::size_t width = 96;
  std::size_t height = 96;
  double fov_degrees = 50.0;
  double camera_distance = 4.0;
  std::size_t sub_frames = 32;
  TrajectoryKind kind = TrajectoryKind::screw;
  double blur_angle = 0.15;        ///< rotation over the exposure, radians
  double blur_translation = 0.1;   ///< translation over the exposure, world units
  double point_noise = 0.03;       ///< std of the initial point cloud jitter
};

namespace detail {

inline Vec3<double> random_unit(nn::Rng& rng) {
  std::normal_distribution<double> n;
  Vec3<double> v(n(rng), n(rng), n(rng));
  return v.normalized();
}

/// Cameras on a ring around the origin, elevation alternating, looking inward.
inline RigidTransform<double> ring_camera(std::size_t i, std::size_t count, double distance, double phase) {
  const double az = phase + 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(count);
  const double el = (i % 2 == 0 ? 0.35 : -0.2);
  const Vec3<double> eye(distance * std::cos(el) * std::cos(az), distance * std::sin(el),
                         distance * std::cos(el) * std::sin(az));
  return look_at<double>(eye, Vec3<double>::Zero(), Vec3<double>(0, -1, 0));
}

}  // namespace detail

/// Camera shake about the camera centre: a rotation about a random axis
/// through the eye plus a random translation, expressed in world coordinates.
[[nodiscard]] inline TrajectorySpec random_trajectory(nn::Rng& rng, const RigidTransform<double>& base,
                                                      const GenerateConfig& cfg) {
  std::uniform_real_distribution<double> mag(0.6, 1.0);
  TrajectorySpec spec;
  spec.kind = cfg.kind;
  spec.sub_frames = cfg.sub_frames;
  const Vec3<double> axis = detail::random_unit(rng);
  const double angle = cfg.blur_angle * mag(rng);
  const Vec3<double> offset = (cfg.blur_translation * mag(rng)) * detail::random_unit(rng);
  const Vec3<double> centre = base.inverse().trans;
  spec.screw = screw_about_point<double>(axis, angle, centre, offset);
  if (cfg.kind != TrajectoryKind::screw) {
    // Straight path of the same size: half the motion before and after mid-exposure.
    const RigidTransform<double> half_fwd = exp_se3(ScrewAxis<double>{spec.screw.axis, 0.5 * angle, spec.screw.trans});
    spec.start = RigidTransform<double>{half_fwd.rot.transpose(), -half_fwd.trans};
    spec.end = half_fwd;
    if (cfg.kind == TrajectoryKind::composite) {
      spec.screw = screw_about_point<double>(detail::random_unit(rng), 0.5 * angle, centre, Vec3<double>(0.5 * offset));
    }
  }
  return spec;
}

/// Generates the scene, views and images in memory. Test views are sharp
/// renders from cameras between the training views.
[[nodiscard]] inline Dataset generate_dataset(const GenerateConfig& cfg, const splat::RenderSettings& rs = {},
                                              splat::GaussianScene<double>* truth = nullptr) {
  if (cfg.n_images == 0) throw ConfigError("n_images must be positive");
  if (cfg.width == 0 || cfg.height == 0) throw ConfigError("image size must be positive");
  nn::Rng rng(cfg.seed);
  const std::uint64_t scene_seed = rng();
  const splat::GaussianScene<double> scene = make_toy_scene<double>(scene_seed, cfg.scene);
  if (truth) *truth = scene;
  Dataset d;
  d.intrinsics = Intrinsics::from_fov(cfg.width, cfg.height, cfg.fov_degrees);
  d.background = cfg.scene.background;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double phase = 2.0 * std::numbers::pi * u01(rng);
  for (std::size_t i = 0; i < cfg.n_images; ++i) {
    ViewRecord v;
    v.pose = detail::ring_camera(i, cfg.n_images, cfg.camera_distance, phase);
    v.trajectory = random_trajectory(rng, v.pose, cfg);
    auto r = synthesize_blur(scene, v.pose, v.trajectory, d.intrinsics, rs);
    v.blur = std::move(r.blur);
    v.sharp = std::move(r.sharp);
    d.train.push_back(std::move(v));
  }
  const double half_step = std::numbers::pi / static_cast<double>(cfg.n_images);
  for (std::size_t i = 0; i < cfg.n_test; ++i) {
    ViewRecord v;
    const std::size_t slot = (i * cfg.n_images) / cfg.n_test;
    v.pose = detail::ring_camera(slot, cfg.n_images, cfg.camera_distance * 1.05, phase + half_step);
    v.trajectory.sub_frames = 2;
    const auto img = splat::render(scene, v.pose, d.intrinsics, rs);
    v.sharp = ad::Tensor<double>({3, cfg.height, cfg.width}, img.values());
    d.test.push_back(std::move(v));
  }
  std::normal_distribution<double> jitter(0.0, cfg.point_noise);
  for (std::size_t g = 0; g < scene.size(); ++g) {
    std::array<double, 6> p{};
    for (std::size_t c = 0; c < 3; ++c) {
      p[c] = scene.means[g * 3 + c] + jitter(rng);
      p[3 + c] = scene.colors[g * 3 + c];
    }
    d.points.push_back(p);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Manifest I/O

namespace detail {

inline std::string format_pose(const RigidTransform<double>& t) {
  const Mat4<double> m = t.matrix();
  std::string out;
  char buf[40];
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
      if (!out.empty()) out += ' ';
      out += buf;
    }
  return out;
}

/// 16 row-major reals; the last row must be (0 0 0 1) and the rotation
/// block orthonormal with unit determinant within 1e-4.
inline RigidTransform<double> parse_pose(const std::string& text, const std::string& where) {
  std::istringstream in(text);
  std::vector<double> v;
  for (double x; in >> x;) v.push_back(x);
  if (!in.eof() || v.size() != 16) throw DataError(where + ": pose must be 16 whitespace-separated reals");
  RigidTransform<double> t;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) t.rot(r, c) = v[static_cast<std::size_t>(r * 4 + c)];
    t.trans(r) = v[static_cast<std::size_t>(r * 4 + 3)];
  }
  const double bottom = std::abs(v[12]) + std::abs(v[13]) + std::abs(v[14]) + std::abs(v[15] - 1.0);
  if (bottom > 1e-4 || !is_rotation(t.rot, 1e-4)) throw DataError(where + ": pose is not a rigid transform");
  return t;
}

inline nlohmann::json vec_json(const Vec3<double>& v) { return {v[0], v[1], v[2]}; }

inline Vec3<double> json_vec(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw DataError("expected a 3-vector in manifest");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json trajectory_json(const TrajectorySpec& t) {
  nlohmann::json j{{"kind", to_string(t.kind)}, {"sub_frames", t.sub_frames}};
  if (t.kind != TrajectoryKind::linear) {
    j["screw"] = {{"axis", vec_json(t.screw.axis)}, {"angle", t.screw.angle}, {"v", vec_json(t.screw.trans)}};
  }
  if (t.kind != TrajectoryKind::screw) {
    j["start"] = format_pose(t.start);
    j["end"] = format_pose(t.end);
  }
  return j;
}

inline TrajectorySpec json_trajectory(const nlohmann::json& j, const std::string& where) {
  TrajectorySpec t;
  t.kind = parse_trajectory_kind(j.at("kind").get<std::string>());
  t.sub_frames = j.at("sub_frames").get<std::size_t>();
  if (t.kind != TrajectoryKind::linear) {
    const auto& s = j.at("screw");
    t.screw.axis = json_vec(s.at("axis"));
    t.screw.angle = s.at("angle").get<double>();
    t.screw.trans = json_vec(s.at("v"));
  }
  if (t.kind != TrajectoryKind::screw) {
    t.start = parse_pose(j.at("start").get<std::string>(), where + ".start");
    t.end = parse_pose(j.at("end").get<std::string>(), where + ".end");
  }
  try {
    t.validate();
  } catch (const DataError& e) {
    throw DataError(where + ": " + e.what());
  }
  return t;
}

}  // namespace detail

/// Writes PNGs, float sidecars and manifest.json into `dir`.
inline std::filesystem::path save_dataset(const std::filesystem::path& dir, const Dataset& d) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  using nlohmann::json;
  json j;
  j["format"] = "crimgs-dataset";
  j["version"] = 1;
  j["name"] = d.name;
  const auto& k = d.intrinsics;
  j["intrinsics"] = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
  j["background"] = d.background;
  auto save_image = [&](const ad::Tensor<double>& img, const std::string& stem) {
    write_png(dir / "images" / (stem + ".png"), img);
    write_float_image(dir / "images" / (stem + ".crmf"), img);
    return "images/" + stem + ".png";
  };
  char stem[64];
  j["train"] = json::array();
  for (std::size_t i = 0; i < d.train.size(); ++i) {
    const auto& v = d.train[i];
    std::snprintf(stem, sizeof stem, "train_%03zu", i);
    json r;
    r["blur"] = save_image(v.blur, std::string(stem) + "_blur");
    r["sharp"] = save_image(v.sharp, std::string(stem) + "_sharp");
    r["pose"] = detail::format_pose(v.pose);
    r["trajectory"] = detail::trajectory_json(v.trajectory);
    r["time_span"] = v.time_span;
    j["train"].push_back(r);
  }
  j["test"] = json::array();
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    std::snprintf(stem, sizeof stem, "test_%03zu", i);
    j["test"].push_back({{"sharp", save_image(d.test[i].sharp, std::string(stem) + "_sharp")},
                         {"pose", detail::format_pose(d.test[i].pose)}});
  }
  j["points"] = d.points;
  const fs::path manifest = dir / "manifest.json";
  std::ofstream out(manifest);
  if (!out) throw DataError("cannot write '" + manifest.string() + "'");
  out << j.dump(2) << '\n';
  return manifest;
}

struct LoadOptions {
  bool float_sidecar = false;  ///< read exact float images instead of the 8-bit PNGs
};

/// Reads a manifest and decodes every referenced image to linear RGB.
[[nodiscard]] inline Dataset load_dataset(const std::filesystem::path& manifest, const LoadOptions& opt = {}) {
  namespace fs = std::filesystem;
  if (!fs::exists(manifest)) throw DataError("manifest not found: '" + manifest.string() + "'");
  std::ifstream in(manifest);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest '" + manifest.string() + "': " + e.what());
  }
  const fs::path root = manifest.parent_path();
  Dataset d;
  auto load_image = [&](const std::string& rel) {
    fs::path p = root / rel;
    if (opt.float_sidecar) {
      p.replace_extension(".crmf");
      return read_float_image<double>(p);
    }
    return read_png<double>(p);
  };
  try {
    d.name = j.value("name", std::string("dataset"));
    const auto& k = j.at("intrinsics");
    d.intrinsics.fx = k.at("fx").get<double>();
    d.intrinsics.fy = k.at("fy").get<double>();
    d.intrinsics.cx = k.at("cx").get<double>();
    d.intrinsics.cy = k.at("cy").get<double>();
    d.intrinsics.width = k.at("width").get<std::size_t>();
    d.intrinsics.height = k.at("height").get<std::size_t>();
    if (j.contains("background")) d.background = j["background"].get<std::array<double, 3>>();
    const ad::Shape shape{3, d.intrinsics.height, d.intrinsics.width};
    auto check_shape = [&](const ad::Tensor<double>& img, const std::string& rel) {
      if (img.shape() != shape) {
        throw DataError("image '" + (root / rel).string() + "' has shape " + ad::to_string(img.shape()) +
                        ", manifest says " + ad::to_string(shape));
      }
    };
    const auto& train = j.at("train");
    for (std::size_t i = 0; i < train.size(); ++i) {
      const auto& r = train[i];
      const std::string where = manifest.string() + ": train[" + std::to_string(i) + "]";
      ViewRecord v;
      v.blur_path = r.at("blur").get<std::string>();
      v.sharp_path = r.value("sharp", std::string());
      v.pose = detail::parse_pose(r.at("pose").get<std::string>(), where + ".pose");
      v.trajectory = detail::json_trajectory(r.at("trajectory"), where + ".trajectory");
      if (r.contains("time_span")) v.time_span = r["time_span"].get<std::array<double, 2>>();
      v.blur = load_image(v.blur_path);
      check_shape(v.blur, v.blur_path);
      if (!v.sharp_path.empty()) {
        v.sharp = load_image(v.sharp_path);
        check_shape(v.sharp, v.sharp_path);
      }
      d.train.push_back(std::move(v));
    }
    if (j.contains("test")) {
      const auto& test = j["test"];
      for (std::size_t i = 0; i < test.size(); ++i) {
        ViewRecord v;
        v.sharp_path = test[i].at("sharp").get<std::string>();
        v.pose = detail::parse_pose(test[i].at("pose").get<std::string>(),
                                    manifest.string() + ": test[" + std::to_string(i) + "].pose");
        v.sharp = load_image(v.sharp_path);
        check_shape(v.sharp, v.sharp_path);
        d.test.push_back(std::move(v));
      }
    }
    if (j.contains("points")) d.points = j["points"].get<std::vector<std::array<double, 6>>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest '" + manifest.string() + "': " + e.what());
  } catch (const ConfigError& e) {
    throw DataError("malformed manifest '" + manifest.string() + "': " + e.what());
  }
  if (d.train.empty()) throw DataError("manifest '" + manifest.string() + "' has no training images");
  return d;
}

}  // namespace crimgs
