#pragma once

// Joint optimisation of the Gaussian scene, the per-image blur kernels and
// the weighting CNN against blurry observations.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "crimgs/autodiff/adam.hpp"
#include "crimgs/blurkernel.hpp"
#include "crimgs/checkpoint.hpp"
#include "crimgs/compositor.hpp"
#include "crimgs/config.hpp"
#include "crimgs/loss.hpp"
#include "crimgs/scenedata.hpp"
#include "crimgs/splat.hpp"

namespace crimgs {

/// Initial Gaussians from a point cloud: isotropic scales from the mean
/// distance to the three nearest neighbours, identity rotations.
template <typename Real>
[[nodiscard]] splat::GaussianScene<Real> init_scene(const std::vector<std::array<double, 6>>& points,
                                                    const TrainConfig& cfg, const std::array<double, 3>& background) {
  if (points.empty()) throw DataError("dataset has no initial points");
  const std::size_t g = points.size();
  std::vector<Real> mu, ls, q, op, col;
  const double logit = std::log(cfg.init_opacity / (1.0 - cfg.init_opacity));
  for (std::size_t i = 0; i < g; ++i) {
    std::array<double, 3> best{1e30, 1e30, 1e30};
    for (std::size_t j = 0; j < g; ++j) {
      if (j == i) continue;
      double d2 = 0;
      for (int c = 0; c < 3; ++c) d2 += (points[i][c] - points[j][c]) * (points[i][c] - points[j][c]);
      if (d2 < best[2]) {
        best[2] = d2;
        std::sort(best.begin(), best.end());
      }
    }
    double mean = 0;
    int count = 0;
    for (double d2 : best)
      if (d2 < 1e29) {
        mean += std::sqrt(d2);
        ++count;
      }
    const double scale = std::max(cfg.init_scale * (count ? mean / count : 0.1), 1e-4);
    for (int c = 0; c < 3; ++c) {
      mu.push_back(static_cast<Real>(points[i][c]));
      ls.push_back(static_cast<Real>(std::log(scale)));
      col.push_back(static_cast<Real>(std::clamp(points[i][3 + c], 0.0, 1.0)));
    }
    q.insert(q.end(), {Real(1), Real(0), Real(0), Real(0)});
    op.push_back(static_cast<Real>(logit));
  }
  splat::GaussianScene<Real> s;
  s.means = ad::Tensor<Real>::parameter({g, 3}, mu, "gaussians.means");
  s.log_scales = ad::Tensor<Real>::parameter({g, 3}, ls, "gaussians.log_scales");
  s.quats = ad::Tensor<Real>::parameter({g, 4}, q, "gaussians.quats");
  s.opacity_logits = ad::Tensor<Real>::parameter({g}, op, "gaussians.opacity");
  s.colors = ad::Tensor<Real>::parameter({g, 3}, col, "gaussians.colors");
  s.sh_degree = cfg.sh_degree;
  if (cfg.sh_degree > 0) {
    const std::size_t k = splat::sh_rest_count(cfg.sh_degree);
    s.sh_rest = ad::Tensor<Real>::parameter({g, k, 3}, std::vector<Real>(g * k * 3, Real(0)), "gaussians.sh_rest");
  }
  s.background = background;
  return s;
}

/// Metrics of sharp renders against the reference images.
struct EvalRecord {
  std::size_t iteration = 0;
  double loss = 0, l1 = 0, dssim = 0, reg_det = 0, reg_ortho = 0;  ///< means since the previous record
  double train_psnr = 0, train_ssim = 0;
  double blur_psnr = 0;  ///< blurry inputs against the references
  double test_psnr = 0, test_ssim = 0;
  double deform_residual = 0;  ///< max ||R R^T - I||_F over images and poses
  double rigid_angle = 0;      ///< mean rotation angle of the rigid transforms
  std::vector<double> train_psnr_views, test_psnr_views;

  [[nodiscard]] std::string json_line() const {
    auto num = [](double v) -> nlohmann::json {
      if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
      if (std::isnan(v)) return "nan";
      return v;
    };
    nlohmann::json j;
    j["iter"] = iteration;
    j["loss"] = num(loss);
    j["l1"] = num(l1);
    j["dssim"] = num(dssim);
    j["reg_det"] = num(reg_det);
    j["reg_ortho"] = num(reg_ortho);
    j["train_psnr"] = num(train_psnr);
    j["train_ssim"] = num(train_ssim);
    j["blur_psnr"] = num(blur_psnr);
    j["test_psnr"] = num(test_psnr);
    j["test_ssim"] = num(test_ssim);
    j["deform_residual"] = num(deform_residual);
    j["rigid_angle"] = num(rigid_angle);
    return j.dump();
  }
};

struct StepResult {
  std::size_t image = 0;
  double loss = 0, l1 = 0, dssim = 0, reg_det = 0, reg_ortho = 0;
};

struct TrainSummary {
  EvalRecord initial;
  EvalRecord final;
  std::vector<EvalRecord> records;
  double seconds = 0;
};

/// Arithmetic mean; infinite if any entry is.
[[nodiscard]] inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// 1.1 times the largest distance of a camera centre from their mean.
[[nodiscard]] inline double camera_extent(const std::vector<ViewRecord>& views) {
  if (views.empty()) return 1.0;
  Vec3<double> mean = Vec3<double>::Zero();
  for (const auto& v : views) mean += v.pose.inverse().trans;
  mean /= static_cast<double>(views.size());
  double r = 0;
  for (const auto& v : views) r = std::max(r, (v.pose.inverse().trans - mean).norm());
  return 1.1 * std::max(r, 1e-6);
}

template <typename Real>
class Trainer {
 public:
  using Scalar = Real;
  using T = ad::Tensor<Real>;

  Trainer(Dataset data, RunConfig cfg) : data_(std::move(data)), cfg_(std::move(cfg)), rng_(cfg_.train.seed) {
    const auto& tc = cfg_.train;
    tc.validate();
    if (data_.train.empty()) throw DataError("training split is empty");
    for (const auto& v : data_.train) {
      if (!v.blur.defined()) throw DataError("training view without a blurry image");
    }
    scene_ = init_scene<Real>(data_.points, tc, data_.background);
    kernel_ = BlurKernel<Real>(tc.kernel_config(data_.train.size()), rng_);
    cnn_ = WeightCnn<Real>(rng_, tc.cnn_channels);
    pose_twists_ = T::parameter({data_.train.size(), 6}, std::vector<Real>(data_.train.size() * 6, Real(0)),
                                "pose.twists");
    for (const auto& v : data_.train) {
      blur_.push_back(to_real(v.blur));
      base_.push_back(to_tensor<Real>(v.pose));
    }
    position_scale_ = tc.lr.position_scale > 0 ? tc.lr.position_scale : camera_extent(data_.train);
    build_optimizer();
    blur_psnr_ = blur_reference_psnr();
  }

  [[nodiscard]] const RunConfig& config() const { return cfg_; }
  [[nodiscard]] const Dataset& dataset() const { return data_; }
  [[nodiscard]] std::size_t iteration() const { return iteration_; }
  [[nodiscard]] splat::GaussianScene<Real>& scene() { return scene_; }
  [[nodiscard]] const splat::GaussianScene<Real>& scene() const { return scene_; }
  [[nodiscard]] BlurKernel<Real>& kernel() { return kernel_; }
  [[nodiscard]] const BlurKernel<Real>& kernel() const { return kernel_; }
  [[nodiscard]] WeightCnn<Real>& cnn() { return cnn_; }
  [[nodiscard]] ad::Adam<Real>& optimizer() { return adam_; }

  [[nodiscard]] bool compositor_active() const {
    return cfg_.train.uses_compositor() && iteration_ >= cfg_.train.compositor_iteration();
  }

  /// Base camera of training image `i`, including the learned correction when unfrozen.
  [[nodiscard]] T base_view(std::size_t i) const {
    if (cfg_.train.freeze_pose) return base_[i];
    return kernel_ops::compose(base_[i], kernel_ops::exp_twist(ad::slice(pose_twists_, 0, i, 1)));
  }

  /// Kernel poses of training image `i` at the configured sample times.
  [[nodiscard]] KernelSample<Real> sample(std::size_t i) const {
    return kernel_.trajectory(base_view(i), i, sample_times<Real>(cfg_.train.kernel.n_poses));
  }

  struct Prediction {
    KernelSample<Real> kernel;
    std::vector<T> frames;
    Composite<Real> blur;
  };

  /// Sub-frames and composited blurry image of training image `i`.
  [[nodiscard]] Prediction predict(std::size_t i) const {
    Prediction p;
    p.kernel = sample(i);
    for (const auto& pose : p.kernel.poses) {
      p.frames.push_back(splat::render(scene_, pose, data_.intrinsics, cfg_.train.render));
    }
    p.blur = composite(p.frames, cnn_, compositor_active());
    return p;
  }

  /// Sharp render from a pose with no kernel and no compositor.
  [[nodiscard]] T render_sharp(const RigidTransform<double>& pose) const {
    ad::NoGradGuard guard;
    return splat::render(scene_, pose, data_.intrinsics, cfg_.train.render);
  }

  /// Sharp render of training view `i` (base pose only).
  [[nodiscard]] T render_train_view(std::size_t i) const {
    ad::NoGradGuard guard;
    return splat::render(scene_, base_view(i), data_.intrinsics, cfg_.train.render);
  }

  /// Loss of training image `i` at the current parameters, without updating.
  [[nodiscard]] StepResult peek_loss(std::size_t i) const {
    ad::NoGradGuard guard;
    return loss_of(i, nullptr);
  }

  /// Image that the next call to step() will use.
  [[nodiscard]] std::size_t next_image() {
    refill_order();
    return static_cast<std::size_t>(order_[order_pos_]);
  }

  /// One optimisation step on the next image of the epoch order.
  StepResult step(const std::filesystem::path& rescue = {}) {
    const std::size_t i = next_image();
    ++order_pos_;
    update_learning_rates();
    adam_.zero_grad();
    T total;
    StepResult r = loss_of(i, &total);
    if (!std::isfinite(r.loss)) fail(rescue, "loss became non-finite at iteration " + std::to_string(iteration_));
    ad::backward(total);
    clip_kernel_gradients();
    try {
      adam_.step();
    } catch (const NumericalError& e) {
      fail(rescue, e.what());
    }
    ++iteration_;
    return r;
  }

  /// Sharp-render metrics on the training and test views.
  [[nodiscard]] EvalRecord evaluate() const {
    ad::NoGradGuard guard;
    EvalRecord rec;
    rec.iteration = iteration_;
    std::vector<double> ssims;
    for (std::size_t i = 0; i < data_.train.size(); ++i) {
      if (!data_.train[i].sharp.defined()) continue;
      const T img = render_train_view(i);
      const T ref = to_real(data_.train[i].sharp);
      rec.train_psnr_views.push_back(psnr(img, ref));
      ssims.push_back(ssim_metric(img, ref));
    }
    rec.train_psnr = mean_of(rec.train_psnr_views);
    rec.train_ssim = mean_of(ssims);
    ssims.clear();
    for (const auto& v : data_.test) {
      const T img = render_sharp(v.pose);
      const T ref = to_real(v.sharp);
      rec.test_psnr_views.push_back(psnr(img, ref));
      ssims.push_back(ssim_metric(img, ref));
    }
    rec.test_psnr = mean_of(rec.test_psnr_views);
    rec.test_ssim = mean_of(ssims);
    rec.blur_psnr = blur_psnr_;
    const auto times = sample_times<Real>(cfg_.train.kernel.n_poses);
    double angle_sum = 0;
    std::size_t angle_count = 0;
    for (std::size_t i = 0; i < data_.train.size(); ++i) {
      if (kernel_.config().deform) {
        for (const auto& d : kernel_.deform_transforms(i, times)) {
          rec.deform_residual = std::max(rec.deform_residual, orthogonality_residual(from_tensor<double>(d).rot));
        }
      }
      for (const auto& r : kernel_.rigid_transforms(i, times)) {
        const Mat3<double> rot = from_tensor<double>(r).rot;
        angle_sum += std::acos(std::clamp(0.5 * (rot.trace() - 1.0), -1.0, 1.0));
        ++angle_count;
      }
    }
    rec.rigid_angle = angle_count ? angle_sum / static_cast<double>(angle_count) : 0.0;
    return rec;
  }

  struct RunOptions {
    std::ostream* log = nullptr;       ///< metric records, one JSON object per line
    std::ostream* progress = nullptr;  ///< human-readable progress (may include timing)
    std::filesystem::path checkpoint;  ///< written at intervals and at the end when set
  };

  /// Trains up to the configured iteration count, recording metrics at
  /// iteration 0, every eval interval and at the end.
  TrainSummary run(const RunOptions& opt = {}) {
    const auto start = std::chrono::steady_clock::now();
    TrainSummary summary;
    const auto& tc = cfg_.train;
    const std::filesystem::path rescue =
        opt.checkpoint.empty() ? std::filesystem::path() : std::filesystem::path(opt.checkpoint.string() + ".rescue");
    auto record = [&](EvalRecord rec) {
      if (steps_since_eval_ > 0) {
        const double n = static_cast<double>(steps_since_eval_);
        rec.loss = acc_.loss / n;
        rec.l1 = acc_.l1 / n;
        rec.dssim = acc_.dssim / n;
        rec.reg_det = acc_.reg_det / n;
        rec.reg_ortho = acc_.reg_ortho / n;
      }
      acc_ = {};
      steps_since_eval_ = 0;
      if (opt.log) *opt.log << rec.json_line() << '\n' << std::flush;
      if (opt.progress) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        char buf[256];
        std::snprintf(buf, sizeof buf, "iter %6zu  loss %.5f  sharp PSNR %.2f dB  (blurry %.2f)  test %.2f  %.0fs\n",
                      rec.iteration, rec.loss, rec.train_psnr, rec.blur_psnr, rec.test_psnr, secs);
        *opt.progress << buf << std::flush;
      }
      summary.records.push_back(rec);
    };
    if (iteration_ == 0) record(evaluate());
    summary.initial = summary.records.empty() ? evaluate() : summary.records.front();
    while (iteration_ < tc.iterations) {
      const StepResult r = step(rescue);
      acc_.loss += r.loss;
      acc_.l1 += r.l1;
      acc_.dssim += r.dssim;
      acc_.reg_det += r.reg_det;
      acc_.reg_ortho += r.reg_ortho;
      ++steps_since_eval_;
      const bool last = iteration_ == tc.iterations;
      if ((tc.eval_interval > 0 && iteration_ % tc.eval_interval == 0) || last) record(evaluate());
      if (!opt.checkpoint.empty() && tc.checkpoint_interval > 0 && iteration_ % tc.checkpoint_interval == 0 && !last) {
        save(opt.checkpoint);
      }
    }
    if (!opt.checkpoint.empty()) save(opt.checkpoint);
    summary.final = summary.records.empty() ? evaluate() : summary.records.back();
    summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return summary;
  }

  // -------------------------------------------------------------------------
  // Checkpoints

  [[nodiscard]] std::vector<nn::NamedParam<Real>> named_tensors() const {
    std::vector<nn::NamedParam<Real>> out = scene_.parameters();
    for (auto& p : kernel_.all_tensors()) out.push_back(p);
    for (auto& p : cnn_.parameters()) out.push_back(p);
    out.push_back({pose_twists_.name(), pose_twists_});
    return out;
  }

  [[nodiscard]] CheckpointData checkpoint() const {
    CheckpointData c;
    c.precision = precision_name();
    c.config_text = ConfigSchema().dump(cfg_);
    c.config_hash = config_hash(cfg_);
    c.iteration = iteration_;
    std::ostringstream rs;
    rs << rng_;
    c.rng_state = rs.str();
    c.order = order_;
    c.order_pos = order_pos_;
    for (const auto& p : named_tensors()) {
      c.tensors.push_back({p.name, p.tensor.shape(), std::vector<double>(p.tensor.data().begin(), p.tensor.data().end())});
    }
    for (const auto& s : adam_.slots()) {
      c.slots.push_back({s.param.name(), s.state.step, std::vector<double>(s.state.m.begin(), s.state.m.end()),
                         std::vector<double>(s.state.v.begin(), s.state.v.end())});
    }
    return c;
  }

  void save(const std::filesystem::path& path) const { write_checkpoint(path, checkpoint()); }

  /// Restores parameters, optimizer moments and the training position.
  void restore(const CheckpointData& c) {
    if (c.precision != precision_name()) {
      throw DataError("checkpoint precision " + c.precision + " does not match " + precision_name());
    }
    if (c.config_hash != config_hash(cfg_)) throw DataError("checkpoint was written with a different configuration");
    for (auto& p : named_tensors()) {
      const TensorRecord* rec = c.find(p.name);
      if (!rec) throw DataError("checkpoint lacks tensor '" + p.name + "'");
      if (rec->shape != p.tensor.shape()) {
        throw DataError("checkpoint tensor '" + p.name + "' has shape " + ad::to_string(rec->shape) + ", expected " +
                        ad::to_string(p.tensor.shape()));
      }
      auto dst = p.tensor.mutable_data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<Real>(rec->values[k]);
    }
    for (auto& s : adam_.slots()) {
      s.state = {};
      for (const auto& r : c.slots) {
        if (r.name != s.param.name()) continue;
        s.state.step = r.step;
        s.state.m.assign(r.m.begin(), r.m.end());
        s.state.v.assign(r.v.begin(), r.v.end());
      }
    }
    iteration_ = c.iteration;
    std::istringstream rs(c.rng_state);
    rs >> rng_;
    if (!rs) throw DataError("checkpoint has a corrupt generator state");
    order_ = c.order;
    order_pos_ = c.order_pos;
  }

  void load(const std::filesystem::path& path) { restore(read_checkpoint(path)); }

 private:
  [[nodiscard]] static std::string precision_name() { return sizeof(Real) == sizeof(float) ? "float" : "double"; }

  [[nodiscard]] static T to_real(const ad::Tensor<double>& t) {
    return T(t.shape(), std::vector<Real>(t.data().begin(), t.data().end()));
  }

  [[nodiscard]] double blur_reference_psnr() const {
    std::vector<double> v;
    for (const auto& r : data_.train)
      if (r.sharp.defined()) v.push_back(psnr(r.blur, r.sharp));
    return mean_of(v);
  }

  StepResult loss_of(std::size_t i, T* total_out) const {
    const Prediction p = predict(i);
    const auto terms = total_loss(p.blur.image, blur_[i], p.kernel.deform, cfg_.train.loss);
    if (total_out) *total_out = terms.total;
    return {i, static_cast<double>(terms.total[0]), terms.l1, terms.dssim, terms.det, terms.ortho};
  }

  void build_optimizer() {
    const auto& lr = cfg_.train.lr;
    adam_.add(scene_.means, "gaussians.means", static_cast<Real>(lr.position * position_scale_));
    adam_.add(scene_.log_scales, "gaussians.log_scales", static_cast<Real>(lr.scale));
    adam_.add(scene_.quats, "gaussians.quats", static_cast<Real>(lr.rotation));
    adam_.add(scene_.opacity_logits, "gaussians.opacity", static_cast<Real>(lr.opacity));
    adam_.add(scene_.colors, "gaussians.colors", static_cast<Real>(lr.color));
    if (scene_.sh_degree > 0) adam_.add(scene_.sh_rest, "gaussians.sh_rest", static_cast<Real>(lr.color / 20.0));
    for (const auto& p : kernel_.parameters()) {
      if (is_deform_branch(p.name)) {
        adam_.add(p.tensor, "kernel.deform", static_cast<Real>(lr.kernel * lr.deform_factor));
      } else {
        adam_.add(p.tensor, "kernel", static_cast<Real>(lr.kernel));
      }
      clipped_.push_back(p.tensor);
    }
    if (cfg_.train.uses_compositor()) {
      for (const auto& p : cnn_.parameters()) {
        adam_.add(p.tensor, "compositor", static_cast<Real>(lr.kernel));
        clipped_.push_back(p.tensor);
      }
    }
    if (!cfg_.train.freeze_pose) adam_.add(pose_twists_, "pose", static_cast<Real>(lr.pose));
  }

  [[nodiscard]] double progress() const {
    return static_cast<double>(iteration_) / static_cast<double>(cfg_.train.iterations);
  }

  static double log_lerp(double a, double b, double t) { return std::exp((1.0 - t) * std::log(a) + t * std::log(b)); }

  [[nodiscard]] static bool is_deform_branch(const std::string& name) {
    for (const char* prefix : {"kernel.enc_d", "kernel.g.", "kernel.dec_d"})
      if (name.rfind(prefix, 0) == 0) return true;
    return false;
  }

  void update_learning_rates() {
    const auto& lr = cfg_.train.lr;
    const double t = std::min(progress(), 1.0);
    adam_.set_lr("gaussians.means", static_cast<Real>(position_scale_ * log_lerp(lr.position, lr.position_final, t)));
    const auto k = static_cast<Real>(log_lerp(lr.kernel, lr.kernel_final, t));
    adam_.set_lr("kernel", k);
    adam_.set_lr("kernel.deform", static_cast<Real>(k * lr.deform_factor));
    adam_.set_lr("compositor", k);
  }

  void clip_kernel_gradients() {
    double norm2 = 0;
    for (const auto& p : clipped_)
      if (p.has_grad())
        for (Real g : p.grad()) norm2 += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(norm2);
    if (!(norm > cfg_.train.grad_clip)) return;  // also leaves NaN for the optimizer to report
    const auto s = static_cast<Real>(cfg_.train.grad_clip / norm);
    for (auto& p : clipped_)
      if (p.has_grad())
        for (Real& g : p.mutable_grad()) g *= s;
  }

  void refill_order() {
    if (order_pos_ < order_.size()) return;
    order_.resize(data_.train.size());
    std::iota(order_.begin(), order_.end(), std::uint64_t(0));
    // Fisher-Yates with explicit draws keeps the order independent of the standard library.
    for (std::size_t k = order_.size(); k > 1; --k) {
      const std::size_t j = static_cast<std::size_t>(rng_() % k);
      std::swap(order_[k - 1], order_[j]);
    }
    order_pos_ = 0;
  }

  [[noreturn]] void fail(const std::filesystem::path& rescue, const std::string& what) const {
    std::string msg = what;
    if (!rescue.empty()) {
      save(rescue);
      msg += "; last finite state saved to '" + rescue.string() + "'";
    }
    throw NumericalError(msg);
  }

  Dataset data_;
  RunConfig cfg_;
  nn::Rng rng_;
  splat::GaussianScene<Real> scene_;
  BlurKernel<Real> kernel_;
  WeightCnn<Real> cnn_;
  T pose_twists_;
  std::vector<T> blur_;
  std::vector<T> base_;
  ad::Adam<Real> adam_;
  std::vector<T> clipped_;
  std::vector<std::uint64_t> order_;
  std::size_t order_pos_ = 0;
  std::size_t iteration_ = 0;
  double blur_psnr_ = 0;
  double position_scale_ = 1;
  StepResult acc_{};
  std::size_t steps_since_eval_ = 0;
};

}  // namespace crimgs
