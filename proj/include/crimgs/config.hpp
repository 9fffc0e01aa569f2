#pragma once

// Run configuration: dataset generation, model, solver, renderer and training
// settings, read from "key = value" files. Unknown keys are rejected.

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "crimgs/blurkernel.hpp"
#include "crimgs/errors.hpp"
#include "crimgs/loss.hpp"
#include "crimgs/ode.hpp"
#include "crimgs/scenedata.hpp"
#include "crimgs/splat.hpp"

namespace crimgs {

/// Which parts of the blur model are trained.
enum class ModelVariant {
  rigid,             ///< rigid screw kernel, uniform averaging
  rigid_compositor,  ///< rigid kernel with the weighting CNN
  full,              ///< rigid + deformable kernel with the weighting CNN
};

[[nodiscard]] inline ModelVariant parse_variant(const std::string& s) {
  if (s == "rigid") return ModelVariant::rigid;
  if (s == "rigid_compositor" || s == "rigid+compositor") return ModelVariant::rigid_compositor;
  if (s == "full") return ModelVariant::full;
  throw ConfigError("unknown model variant '" + s + "' (expected rigid, rigid_compositor or full)");
}

[[nodiscard]] inline std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::rigid: return "rigid";
    case ModelVariant::rigid_compositor: return "rigid_compositor";
    case ModelVariant::full: return "full";
  }
  return "?";
}

struct LearningRates {
  double position = 1.6e-4;
  double position_final = 1.6e-6;
  double position_scale = -1.0;  ///< multiplies both position rates; -1: camera extent of the training views
  double opacity = 0.05;
  double scale = 5e-3;
  double rotation = 1e-3;
  double color = 2.5e-3;
  double kernel = 1e-3;
  double kernel_final = 1e-4;
  double deform_factor = 0.1;  ///< multiplier on the kernel schedule for the deform branch
  double pose = 1e-4;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t iterations = 4000;
  long compositor_start = -1;  ///< -1: 3000/40000 of the run
  ModelVariant variant = ModelVariant::full;
  std::string precision = "double";
  std::size_t eval_interval = 250;
  std::size_t checkpoint_interval = 0;  ///< 0: only at the end
  double grad_clip = 10.0;              ///< global norm over kernel and compositor gradients
  bool freeze_pose = true;
  double init_opacity = 0.1;
  double init_scale = 1.0;  ///< multiplier on the mean distance to the 3 nearest points
  int sh_degree = 0;
  std::size_t cnn_channels = 64;
  LearningRates lr;
  LossWeights loss;
  KernelConfig kernel;
  splat::RenderSettings render;

  /// Iteration at which the weighting CNN takes over from uniform averaging.
  [[nodiscard]] std::size_t compositor_iteration() const {
    if (compositor_start >= 0) return static_cast<std::size_t>(compositor_start);
    return static_cast<std::size_t>((iterations * 3000 + 20000) / 40000);
  }

  [[nodiscard]] bool uses_compositor() const { return variant != ModelVariant::rigid; }

  /// Kernel settings with the branches implied by the variant.
  [[nodiscard]] KernelConfig kernel_config(std::size_t n_images) const {
    KernelConfig k = kernel;
    k.n_images = n_images;
    k.rigid = true;
    k.deform = variant == ModelVariant::full;
    return k;
  }

  void validate() const {
    if (iterations == 0) throw ConfigError("train.iterations must be positive");
    if (kernel.n_poses < 2) throw ConfigError("train.n_poses must be at least 2");
    if (uses_compositor() && compositor_iteration() >= iterations) {
      throw ConfigError("train.compositor_start must be below train.iterations");
    }
    if (precision != "double" && precision != "float") throw ConfigError("train.precision must be double or float");
    if (sh_degree < 0 || sh_degree > 3) throw ConfigError("train.sh_degree must be in [0, 3]");
    if (!(grad_clip > 0)) throw ConfigError("train.grad_clip must be positive");
    if (!(init_opacity > 0 && init_opacity < 1)) throw ConfigError("train.init_opacity must lie in (0, 1)");
    if (!(init_scale > 0)) throw ConfigError("train.init_scale must be positive");
    if (!(lr.deform_factor >= 0)) throw ConfigError("lr.deform_factor must be non-negative");
    if (kernel.latent == 0) throw ConfigError("kernel.latent must be positive");
    if (!(kernel.solver.rtol > 0) || !(kernel.solver.atol > 0)) throw ConfigError("solver tolerances must be positive");
    loss.validate();
  }
};

struct RunConfig {
  GenerateConfig data;
  TrainConfig train;
};

namespace detail {

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T v{};
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw ConfigError("key '" + key + "': expected a boolean, got '" + text + "'");
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!text.empty() && text[0] == '-') throw ConfigError("key '" + key + "': expected a non-negative integer");
    in >> v;
  } else {
    in >> v;
  }
  if (!in || !(in >> std::ws).eof()) throw ConfigError("key '" + key + "': cannot parse '" + text + "'");
  return v;
}

template <typename T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  } else {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
  }
}

}  // namespace detail

/// Key table over a RunConfig: every key has a setter, a printer and a doc line.
class ConfigSchema {
 public:
  struct Entry {
    std::string key;
    std::string doc;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
  };

  ConfigSchema() {
    add({"seed", "random seed for generation and training",
         [](RunConfig& c, const std::string& v) { c.train.seed = c.data.seed = detail::parse_value<std::uint64_t>("seed", v); },
         [](const RunConfig& c) { return detail::format_value(c.train.seed); }});
    data("data.n_gaussians", "Gaussians in the synthetic scene", [](RunConfig& c) -> auto& { return c.data.scene.n_gaussians; });
    data("data.extent", "half-width of the box holding the scene", [](RunConfig& c) -> auto& { return c.data.scene.extent; });
    data("data.min_scale", "smallest Gaussian scale", [](RunConfig& c) -> auto& { return c.data.scene.min_scale; });
    data("data.max_scale", "largest Gaussian scale", [](RunConfig& c) -> auto& { return c.data.scene.max_scale; });
    data("data.n_images", "blurry training images", [](RunConfig& c) -> auto& { return c.data.n_images; });
    data("data.n_test", "held-out sharp views", [](RunConfig& c) -> auto& { return c.data.n_test; });
    data("data.width", "image width in pixels", [](RunConfig& c) -> auto& { return c.data.width; });
    data("data.height", "image height in pixels", [](RunConfig& c) -> auto& { return c.data.height; });
    data("data.fov", "horizontal field of view in degrees", [](RunConfig& c) -> auto& { return c.data.fov_degrees; });
    data("data.camera_distance", "camera ring radius", [](RunConfig& c) -> auto& { return c.data.camera_distance; });
    data("data.sub_frames", "sub-frames averaged per blurry image", [](RunConfig& c) -> auto& { return c.data.sub_frames; });
    data("data.blur_angle", "rotation during the exposure (radians)", [](RunConfig& c) -> auto& { return c.data.blur_angle; });
    data("data.blur_translation", "translation during the exposure", [](RunConfig& c) -> auto& { return c.data.blur_translation; });
    data("data.point_noise", "jitter of the initial point cloud", [](RunConfig& c) -> auto& { return c.data.point_noise; });
    add({"data.trajectory", "camera motion kind: screw, linear or composite",
         [](RunConfig& c, const std::string& v) { c.data.kind = parse_trajectory_kind(v); },
         [](const RunConfig& c) { return to_string(c.data.kind); }});

    data("train.iterations", "optimisation steps", [](RunConfig& c) -> auto& { return c.train.iterations; });
    data("train.n_poses", "poses sampled along each exposure", [](RunConfig& c) -> auto& { return c.train.kernel.n_poses; });
    data("train.compositor_start", "iteration enabling the weighting CNN (-1: 3000/40000 of the run)",
         [](RunConfig& c) -> auto& { return c.train.compositor_start; });
    add({"train.model", "model variant: rigid, rigid_compositor or full",
         [](RunConfig& c, const std::string& v) { c.train.variant = parse_variant(v); },
         [](const RunConfig& c) { return to_string(c.train.variant); }});
    add({"train.precision", "double or float",
         [](RunConfig& c, const std::string& v) { c.train.precision = v; },
         [](const RunConfig& c) { return c.train.precision; }});
    data("train.eval_interval", "iterations between metric records", [](RunConfig& c) -> auto& { return c.train.eval_interval; });
    data("train.checkpoint_interval", "iterations between checkpoints (0: end only)",
         [](RunConfig& c) -> auto& { return c.train.checkpoint_interval; });
    data("train.grad_clip", "global gradient norm cap on kernel and compositor", [](RunConfig& c) -> auto& { return c.train.grad_clip; });
    data("train.freeze_pose", "keep the base camera poses fixed", [](RunConfig& c) -> auto& { return c.train.freeze_pose; });
    data("train.init_opacity", "initial Gaussian opacity", [](RunConfig& c) -> auto& { return c.train.init_opacity; });
    data("train.init_scale", "initial scale as a fraction of the mean 3-nearest-point distance",
         [](RunConfig& c) -> auto& { return c.train.init_scale; });
    data("train.sh_degree", "spherical-harmonics degree of the colours", [](RunConfig& c) -> auto& { return c.train.sh_degree; });
    data("train.cnn_channels", "hidden channels of the weighting CNN", [](RunConfig& c) -> auto& { return c.train.cnn_channels; });
    data("train.lambda_ssim", "D-SSIM weight", [](RunConfig& c) -> auto& { return c.train.loss.ssim; });
    data("train.lambda_det", "determinant regulariser weight", [](RunConfig& c) -> auto& { return c.train.loss.det; });
    data("train.lambda_ortho", "orthogonality regulariser weight", [](RunConfig& c) -> auto& { return c.train.loss.ortho; });
    data("train.reg_sum", "sum the deform regularisers over poses (true) or average them",
         [](RunConfig& c) -> auto& { return c.train.loss.reg_sum; });
    data("lr.position", "initial position learning rate", [](RunConfig& c) -> auto& { return c.train.lr.position; });
    data("lr.position_final", "final position learning rate", [](RunConfig& c) -> auto& { return c.train.lr.position_final; });
    data("lr.position_scale", "position rate multiplier (-1: camera extent)",
         [](RunConfig& c) -> auto& { return c.train.lr.position_scale; });
    data("lr.opacity", "opacity learning rate", [](RunConfig& c) -> auto& { return c.train.lr.opacity; });
    data("lr.scale", "scale learning rate", [](RunConfig& c) -> auto& { return c.train.lr.scale; });
    data("lr.rotation", "rotation learning rate", [](RunConfig& c) -> auto& { return c.train.lr.rotation; });
    data("lr.color", "colour learning rate", [](RunConfig& c) -> auto& { return c.train.lr.color; });
    data("lr.kernel", "initial kernel and compositor learning rate", [](RunConfig& c) -> auto& { return c.train.lr.kernel; });
    data("lr.kernel_final", "final kernel and compositor learning rate", [](RunConfig& c) -> auto& { return c.train.lr.kernel_final; });
    data("lr.deform_factor", "deform-branch rate as a fraction of the kernel rate",
         [](RunConfig& c) -> auto& { return c.train.lr.deform_factor; });
    data("lr.pose", "base pose correction learning rate", [](RunConfig& c) -> auto& { return c.train.lr.pose; });
    data("kernel.latent", "embedding and latent width", [](RunConfig& c) -> auto& { return c.train.kernel.latent; });
    data("kernel.theta_gain", "scale on the decoded screw angle", [](RunConfig& c) -> auto& { return c.train.kernel.theta_gain; });
    data("kernel.deform_init", "init bound of the deform decoder", [](RunConfig& c) -> auto& { return c.train.kernel.deform_init; });
    data("kernel.time_input", "feed t to the derivative networks", [](RunConfig& c) -> auto& { return c.train.kernel.time_input; });
    add({"solver.method", "ODE solver: euler, rk4 or dopri5",
         [](RunConfig& c, const std::string& v) { c.train.kernel.solver.method = ode::parse_method(v); },
         [](const RunConfig& c) { return std::string(ode::to_string(c.train.kernel.solver.method)); }});
    data("solver.rtol", "relative tolerance", [](RunConfig& c) -> auto& { return c.train.kernel.solver.rtol; });
    data("solver.atol", "absolute tolerance", [](RunConfig& c) -> auto& { return c.train.kernel.solver.atol; });
    data("solver.max_steps", "step budget per solve", [](RunConfig& c) -> auto& { return c.train.kernel.solver.max_steps; });
    data("solver.adaptive", "adaptive step control for dopri5", [](RunConfig& c) -> auto& { return c.train.kernel.solver.adaptive; });
    data("solver.initial_step", "first (or fixed) step size, 0 for automatic",
         [](RunConfig& c) -> auto& { return c.train.kernel.solver.initial_step; });
    data("render.low_pass", "screen-space covariance floor (pixels^2)", [](RunConfig& c) -> auto& { return c.train.render.low_pass; });
  }

  [[nodiscard]] const std::vector<Entry>& entries() const { return entries_; }

  void set(RunConfig& c, const std::string& key, const std::string& value) const {
    for (const auto& e : entries_) {
      if (e.key == key) {
        e.set(c, value);
        return;
      }
    }
    throw ConfigError("unknown config key '" + key + "'");
  }

  /// Canonical "key = value" listing of every setting.
  [[nodiscard]] std::string dump(const RunConfig& c) const {
    std::string out;
    for (const auto& e : entries_) out += e.key + " = " + e.get(c) + "\n";
    return out;
  }

 private:
  void add(Entry e) { entries_.push_back(std::move(e)); }

  template <typename F>
  void data(const std::string& key, const std::string& doc, F ref) {
    using T = std::remove_reference_t<decltype(ref(std::declval<RunConfig&>()))>;
    add({key, doc, [ref, key](RunConfig& c, const std::string& v) { ref(c) = detail::parse_value<T>(key, v); },
         [ref](const RunConfig& c) { return detail::format_value(ref(const_cast<RunConfig&>(c))); }});
  }

  std::vector<Entry> entries_;
};

/// Applies "key = value" lines; '#' starts a comment.
inline void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source = "config") {
  const ConfigSchema schema;
  std::istringstream in(text);
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(no) + ": expected 'key = value'");
    try {
      schema.set(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(no) + ": " + e.what());
    }
  }
}

[[nodiscard]] inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, buf.str(), path);
  return cfg;
}

/// FNV-1a hash of the canonical listing, without the keys that only set how
/// long and how often (so a run can be resumed with a longer schedule).
[[nodiscard]] inline std::uint64_t config_hash(const RunConfig& cfg) {
  static const std::array<std::string, 3> schedule{"train.iterations", "train.eval_interval", "train.checkpoint_interval"};
  std::uint64_t h = 1469598103934665603ull;
  std::istringstream in(ConfigSchema().dump(cfg));
  for (std::string line; std::getline(in, line);) {
    const std::string key = line.substr(0, line.find(' '));
    if (std::find(schedule.begin(), schedule.end(), key) != schedule.end()) continue;
    for (unsigned char c : line + "\n") {
      h ^= c;
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace crimgs
