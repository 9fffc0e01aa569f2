#pragma once

// Differentiable Gaussian splatting. Projection (EWA linearisation) and
// front-to-back alpha blending are fused operations with hand-written
// vector-Jacobian products; everything else is ordinary tensor algebra.

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "crimgs/autodiff/ops.hpp"
#include "crimgs/camera.hpp"
#include "crimgs/errors.hpp"
#include "crimgs/nn.hpp"

namespace crimgs::splat {

using ad::Shape;
using ad::Tensor;

struct RenderSettings {
  double near = 0.01;
  double low_pass = 0.3;           ///< added to the projected covariance diagonal (pixels^2)
  double max_alpha = 0.99;
  double min_alpha = 1.0 / 255.0;
  double min_transmittance = 1e-4; ///< blending stops before T drops below this
  double frustum_slack = 1.3;      ///< Jacobian evaluated at most this far outside the image
  std::size_t tile = 16;
};

/// Number of SH coefficients per channel beyond the constant term.
[[nodiscard]] inline std::size_t sh_rest_count(int degree) { return static_cast<std::size_t>((degree + 1) * (degree + 1) - 1); }

template <typename Real>
struct GaussianScene {
  Tensor<Real> means;           ///< [G, 3]
  Tensor<Real> log_scales;      ///< [G, 3]
  Tensor<Real> quats;           ///< [G, 4] (w, x, y, z), normalised on use
  Tensor<Real> opacity_logits;  ///< [G]
  Tensor<Real> colors;          ///< [G, 3] linear RGB (constant SH term)
  Tensor<Real> sh_rest;         ///< [G, K, 3] higher SH bands, undefined for degree 0
  int sh_degree = 0;
  std::array<double, 3> background{0.0, 0.0, 0.0};

  [[nodiscard]] std::size_t size() const { return means.defined() ? means.dim(0) : 0; }

  /// Learnable tensors by group name.
  [[nodiscard]] std::vector<nn::NamedParam<Real>> parameters() const {
    std::vector<nn::NamedParam<Real>> out{{"gaussians.means", means},
                                          {"gaussians.log_scales", log_scales},
                                          {"gaussians.quats", quats},
                                          {"gaussians.opacity", opacity_logits},
                                          {"gaussians.colors", colors}};
    if (sh_degree > 0) out.push_back({"gaussians.sh_rest", sh_rest});
    return out;
  }

  void validate() const {
    const std::size_t g = size();
    if (g == 0) throw ShapeError("scene has no Gaussians");
    auto need = [](const Tensor<Real>& t, const Shape& s, const char* what) {
      if (!t.defined() || t.shape() != s) {
        throw ShapeError(std::string("scene field ") + what + " must have shape " + ad::to_string(s) +
                         (t.defined() ? ", got " + ad::to_string(t.shape()) : ", got nothing"));
      }
    };
    need(means, {g, 3}, "means");
    need(log_scales, {g, 3}, "log_scales");
    need(quats, {g, 4}, "quats");
    need(opacity_logits, {g}, "opacity_logits");
    need(colors, {g, 3}, "colors");
    if (sh_degree < 0 || sh_degree > 3) throw ShapeError("sh_degree must be in [0, 3]");
    if (sh_degree > 0) need(sh_rest, {g, sh_rest_count(sh_degree), 3}, "sh_rest");
  }

  /// Copy with fresh leaves (no shared storage).
  [[nodiscard]] GaussianScene clone() const {
    GaussianScene c = *this;
    auto copy = [](const Tensor<Real>& t, const char* name) {
      return t.defined() ? Tensor<Real>::parameter(t.shape(), t.values(), name) : Tensor<Real>();
    };
    c.means = copy(means, "gaussians.means");
    c.log_scales = copy(log_scales, "gaussians.log_scales");
    c.quats = copy(quats, "gaussians.quats");
    c.opacity_logits = copy(opacity_logits, "gaussians.opacity");
    c.colors = copy(colors, "gaussians.colors");
    c.sh_rest = copy(sh_rest, "gaussians.sh_rest");
    return c;
  }
};

namespace detail {

template <typename Real>
Eigen::Matrix3d quat_to_rot(const Real* q_raw, Eigen::Vector4d* q_unit = nullptr) {
  Eigen::Vector4d q(q_raw[0], q_raw[1], q_raw[2], q_raw[3]);
  const double n = q.norm();
  q = n > 0 ? Eigen::Vector4d(q / n) : Eigen::Vector4d(1, 0, 0, 0);
  if (q_unit) *q_unit = q;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d r;
  // clang-format off
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
       2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y);
  // clang-format on
  return r;
}

/// Gradient of a loss w.r.t. the raw quaternion given dL/dR.
inline Eigen::Vector4d rot_to_quat_grad(const Eigen::Matrix3d& g, const Eigen::Vector4d& q, double norm) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Vector4d dq;
  dq[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  dq[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
               w * g(2, 1) - 2 * x * g(2, 2));
  dq[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
               z * g(2, 1) - 2 * y * g(2, 2));
  dq[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) + y * g(1, 2) +
               x * g(2, 0) + y * g(2, 1));
  if (!(norm > 0)) return Eigen::Vector4d::Zero();
  return (dq - q * q.dot(dq)) / norm;
}

struct ProjectedGeometry {
  Eigen::Vector3d p;          // camera-space mean
  Eigen::Matrix<double, 2, 3> jac;
  Eigen::Matrix<double, 2, 3> m;  // J A
  Eigen::Matrix3d sigma;
  Eigen::Matrix3d rot;
  Eigen::Vector3d scale;
  Eigen::Vector4d q_unit;
  double q_norm = 0;
  double rx = 0, ry = 0;      // clamped x/z, y/z
  bool clamp_x = false, clamp_y = false;
};

template <typename Real>
ProjectedGeometry geometry(const Real* mean, const Real* log_scale, const Real* quat, const Eigen::Matrix3d& a,
                           const Eigen::Vector3d& b, const Intrinsics& k, const RenderSettings& s) {
  ProjectedGeometry g;
  g.rot = quat_to_rot(quat, &g.q_unit);
  g.q_norm = std::sqrt(double(quat[0]) * quat[0] + double(quat[1]) * quat[1] + double(quat[2]) * quat[2] +
                       double(quat[3]) * quat[3]);
  for (int i = 0; i < 3; ++i) g.scale[i] = std::exp(static_cast<double>(log_scale[i]));
  g.sigma = g.rot * g.scale.cwiseAbs2().asDiagonal() * g.rot.transpose();
  g.p = a * Eigen::Vector3d(mean[0], mean[1], mean[2]) + b;
  const double lim_x = s.frustum_slack * 0.5 * static_cast<double>(k.width) / k.fx;
  const double lim_y = s.frustum_slack * 0.5 * static_cast<double>(k.height) / k.fy;
  const double ux = g.p.x() / g.p.z(), uy = g.p.y() / g.p.z();
  g.rx = std::clamp(ux, -lim_x, lim_x);
  g.ry = std::clamp(uy, -lim_y, lim_y);
  g.clamp_x = g.rx != ux;
  g.clamp_y = g.ry != uy;
  g.jac << k.fx / g.p.z(), 0, -k.fx * g.rx / g.p.z(), 0, k.fy / g.p.z(), -k.fy * g.ry / g.p.z();
  g.m = g.jac * a;
  return g;
}

}  // namespace detail

/// Screen-space Gaussians. `packed` is [G, 5] = (u, v, cov_xx, cov_xy, cov_yy)
/// in pixels; invisible (behind the near plane) rows are zero and flagged.
template <typename Real>
struct Projection {
  Tensor<Real> packed;
  std::vector<double> depth;
  std::vector<std::uint8_t> visible;
};

/// Projects Gaussians through a world-to-camera view [3, 4]; differentiable
/// w.r.t. means, log-scales, quaternions and the view.
template <typename Real>
[[nodiscard]] Projection<Real> project(const Tensor<Real>& means, const Tensor<Real>& log_scales,
                                       const Tensor<Real>& quats, const Tensor<Real>& view, const Intrinsics& k,
                                       const RenderSettings& s = {}) {
  if (view.shape() != Shape{3, 4}) throw ShapeError("project: view must be [3,4], got " + ad::to_string(view.shape()));
  const std::size_t n = means.dim(0);
  Eigen::Matrix3d a;
  Eigen::Vector3d b;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) a(r, c) = view[static_cast<std::size_t>(r * 4 + c)];
    b[r] = view[static_cast<std::size_t>(r * 4 + 3)];
  }
  Projection<Real> out;
  out.depth.assign(n, 0.0);
  out.visible.assign(n, 0);
  std::vector<Real> packed(n * 5, Real(0));
  const auto mu = means.data(), ls = log_scales.data(), qs = quats.data();
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d p = a * Eigen::Vector3d(mu[i * 3], mu[i * 3 + 1], mu[i * 3 + 2]) + b;
    out.depth[i] = p.z();
    if (!(p.z() > s.near)) continue;
    out.visible[i] = 1;
    const auto g = detail::geometry(&mu[i * 3], &ls[i * 3], &qs[i * 4], a, b, k, s);
    const Eigen::Matrix2d cov = g.m * g.sigma * g.m.transpose() + s.low_pass * Eigen::Matrix2d::Identity();
    Real* o = packed.data() + i * 5;
    o[0] = static_cast<Real>(k.fx * p.x() / p.z() + k.cx);
    o[1] = static_cast<Real>(k.fy * p.y() / p.z() + k.cy);
    o[2] = static_cast<Real>(cov(0, 0));
    o[3] = static_cast<Real>(0.5 * (cov(0, 1) + cov(1, 0)));
    o[4] = static_cast<Real>(cov(1, 1));
  }
  const auto visible = out.visible;
  out.packed = ad::make_result<Real>(
      Shape{n, 5}, std::move(packed), {means, log_scales, quats, view}, [n, k, s, visible](ad::Node<Real>& self) {
        Real* gmu = ad::input_grad(self, 0);
        Real* gls = ad::input_grad(self, 1);
        Real* gq = ad::input_grad(self, 2);
        Real* gview = ad::input_grad(self, 3);
        const auto& mu = self.inputs[0]->value;
        const auto& ls = self.inputs[1]->value;
        const auto& qs = self.inputs[2]->value;
        const auto& vw = self.inputs[3]->value;
        Eigen::Matrix3d a;
        Eigen::Vector3d b;
        for (int r = 0; r < 3; ++r) {
          for (int c = 0; c < 3; ++c) a(r, c) = vw[static_cast<std::size_t>(r * 4 + c)];
          b[r] = vw[static_cast<std::size_t>(r * 4 + 3)];
        }
        Eigen::Matrix3d da = Eigen::Matrix3d::Zero();
        Eigen::Vector3d db = Eigen::Vector3d::Zero();
        for (std::size_t i = 0; i < n; ++i) {
          if (!visible[i]) continue;
          const Real* gi = self.grad.data() + i * 5;
          const double gu = gi[0], gv = gi[1];
          Eigen::Matrix2d gc;
          gc << gi[2], 0.5 * gi[3], 0.5 * gi[3], gi[4];
          if (gu == 0 && gv == 0 && gc.isZero()) continue;
          const auto g = detail::geometry(&mu[i * 3], &ls[i * 3], &qs[i * 4], a, b, k, s);
          const Eigen::Vector3d& p = g.p;
          const double z = p.z(), z2 = z * z, z3 = z2 * z;

          const Eigen::Matrix<double, 2, 3> dm = 2.0 * gc * g.m * g.sigma;
          const Eigen::Matrix3d dsigma = g.m.transpose() * gc * g.m;
          const Eigen::Matrix<double, 2, 3> dj = dm * a.transpose();
          da += g.jac.transpose() * dm;

          Eigen::Vector3d dp = Eigen::Vector3d::Zero();
          const double cx = g.clamp_x ? 0.0 : 1.0, cy = g.clamp_y ? 0.0 : 1.0;
          dp.z() += -dj(0, 0) * k.fx / z2 - dj(1, 1) * k.fy / z2 +
                    dj(0, 2) * (k.fx * g.rx / z2 + cx * k.fx * p.x() / z3) +
                    dj(1, 2) * (k.fy * g.ry / z2 + cy * k.fy * p.y() / z3);
          dp.x() += -dj(0, 2) * cx * k.fx / z2;
          dp.y() += -dj(1, 2) * cy * k.fy / z2;
          dp.x() += gu * k.fx / z;
          dp.y() += gv * k.fy / z;
          dp.z() += -gu * k.fx * p.x() / z2 - gv * k.fy * p.y() / z2;

          const Eigen::Vector3d m3(mu[i * 3], mu[i * 3 + 1], mu[i * 3 + 2]);
          if (gmu) {
            const Eigen::Vector3d d = a.transpose() * dp;
            for (int c = 0; c < 3; ++c) gmu[i * 3 + c] += static_cast<Real>(d[c]);
          }
          da += dp * m3.transpose();
          db += dp;

          const Eigen::Vector3d s2 = g.scale.cwiseAbs2();
          if (gls) {
            const Eigen::Matrix3d inner = g.rot.transpose() * dsigma * g.rot;
            for (int c = 0; c < 3; ++c) gls[i * 3 + c] += static_cast<Real>(2.0 * s2[c] * inner(c, c));
          }
          if (gq) {
            const Eigen::Matrix3d drot = 2.0 * dsigma * g.rot * s2.asDiagonal();
            const Eigen::Vector4d d = detail::rot_to_quat_grad(drot, g.q_unit, g.q_norm);
            for (int c = 0; c < 4; ++c) gq[i * 4 + c] += static_cast<Real>(d[c]);
          }
        }
        if (gview) {
          for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) gview[r * 4 + c] += static_cast<Real>(da(r, c));
            gview[r * 4 + 3] += static_cast<Real>(db[r]);
          }
        }
      });
  return out;
}

/// Per-pixel diagnostics of one rasterisation.
struct RenderAux {
  std::vector<double> weight_sum;      ///< sum of blending weights plus final transmittance
  std::vector<double> transmittance;   ///< final T
  std::vector<std::uint32_t> contributors;
};

namespace detail {

struct Splat2d {
  double u, v, ca, cb, cc;      // covariance
  double qa, qb, qc;            // conic (inverse covariance)
  double rx, ry;                // 3-sigma half extents
};

struct Binning {
  std::vector<std::size_t> order;        // visible splats, front to back
  std::vector<Splat2d> splats;           // indexed by Gaussian
  std::vector<std::uint8_t> usable;
  std::size_t tiles_x = 0, tiles_y = 0;
  std::vector<std::vector<std::uint32_t>> tiles;  // Gaussian ids per tile in depth order
};

template <typename Real>
Binning bin(const Real* packed, const std::vector<double>& depth, const std::vector<std::uint8_t>& visible,
            const Intrinsics& k, const RenderSettings& s) {
  const std::size_t n = depth.size();
  Binning bn;
  bn.splats.resize(n);
  bn.usable.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!visible[i]) continue;
    const Real* p = packed + i * 5;
    Splat2d& sp = bn.splats[i];
    sp.u = p[0];
    sp.v = p[1];
    sp.ca = p[2];
    sp.cb = p[3];
    sp.cc = p[4];
    const double det = sp.ca * sp.cc - sp.cb * sp.cb;
    if (!(det >= 1e-12) || !(sp.ca > 0) || !(sp.cc > 0)) continue;
    sp.qa = sp.cc / det;
    sp.qb = -sp.cb / det;
    sp.qc = sp.ca / det;
    sp.rx = 3.0 * std::sqrt(sp.ca);
    sp.ry = 3.0 * std::sqrt(sp.cc);
    bn.usable[i] = 1;
    bn.order.push_back(i);
  }
  std::stable_sort(bn.order.begin(), bn.order.end(), [&](std::size_t x, std::size_t y) { return depth[x] < depth[y]; });
  const std::size_t t = s.tile;
  bn.tiles_x = (k.width + t - 1) / t;
  bn.tiles_y = (k.height + t - 1) / t;
  bn.tiles.assign(bn.tiles_x * bn.tiles_y, {});
  for (std::size_t id : bn.order) {
    const Splat2d& sp = bn.splats[id];
    // pixel x covers center x + 0.5; keep pixels with |x + 0.5 - u| <= rx
    const double x0 = std::ceil(sp.u - sp.rx - 0.5), x1 = std::floor(sp.u + sp.rx - 0.5);
    const double y0 = std::ceil(sp.v - sp.ry - 0.5), y1 = std::floor(sp.v + sp.ry - 0.5);
    if (x1 < 0 || y1 < 0 || x0 > double(k.width) - 1 || y0 > double(k.height) - 1) continue;
    const auto tx0 = static_cast<std::size_t>(std::max(0.0, x0)) / t;
    const auto tx1 = static_cast<std::size_t>(std::min(double(k.width) - 1, x1)) / t;
    const auto ty0 = static_cast<std::size_t>(std::max(0.0, y0)) / t;
    const auto ty1 = static_cast<std::size_t>(std::min(double(k.height) - 1, y1)) / t;
    for (std::size_t ty = ty0; ty <= ty1; ++ty)
      for (std::size_t tx = tx0; tx <= tx1; ++tx) bn.tiles[ty * bn.tiles_x + tx].push_back(static_cast<std::uint32_t>(id));
  }
  return bn;
}

/// Evaluates splat `sp` at a pixel center. Returns false when it does not
/// contribute (outside the 3-sigma box, non-positive exponent overflow, or
/// below the alpha threshold).
struct Sample {
  double dx, dy, gauss, alpha;
  bool clipped;
};

inline bool sample(const Splat2d& sp, double opacity, double px, double py, const RenderSettings& s, Sample& out) {
  out.dx = px - sp.u;
  out.dy = py - sp.v;
  if (std::abs(out.dx) > sp.rx || std::abs(out.dy) > sp.ry) return false;
  const double power = -0.5 * (sp.qa * out.dx * out.dx + sp.qc * out.dy * out.dy) - sp.qb * out.dx * out.dy;
  if (power > 0) return false;
  out.gauss = std::exp(power);
  const double raw = opacity * out.gauss;
  out.clipped = raw > s.max_alpha;
  out.alpha = out.clipped ? s.max_alpha : raw;
  return out.alpha >= s.min_alpha;
}

}  // namespace detail

/// Front-to-back alpha blending of projected Gaussians into a [3, H, W] image.
/// Differentiable w.r.t. `proj.packed`, `colors` [G, 3] and `opacity` [G].
template <typename Real>
[[nodiscard]] Tensor<Real> rasterize(const Projection<Real>& proj, const Tensor<Real>& colors,
                                     const Tensor<Real>& opacity, const Intrinsics& k,
                                     const std::array<double, 3>& background, const RenderSettings& s = {},
                                     RenderAux* aux = nullptr) {
  const std::size_t n = proj.depth.size();
  if (colors.shape() != Shape{n, 3} || opacity.shape() != Shape{n}) {
    throw ShapeError("rasterize: colors " + ad::to_string(colors.shape()) + " / opacity " +
                     ad::to_string(opacity.shape()) + " do not match " + std::to_string(n) + " Gaussians");
  }
  const std::size_t h = k.height, w = k.width, hw = h * w;
  auto bn = std::make_shared<detail::Binning>(detail::bin(proj.packed.data().data(), proj.depth, proj.visible, k, s));
  std::vector<Real> img(3 * hw);
  std::vector<double> final_t(hw);
  std::vector<std::uint32_t> last(hw, 0);
  if (aux) {
    aux->weight_sum.assign(hw, 0.0);
    aux->transmittance.assign(hw, 0.0);
    aux->contributors.assign(hw, 0);
  }
  const auto col = colors.data(), op = opacity.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t pix = y * w + x;
      const auto& list = bn->tiles[(y / s.tile) * bn->tiles_x + x / s.tile];
      const double px = double(x) + 0.5, py = double(y) + 0.5;
      double t = 1.0, c[3] = {0, 0, 0}, wsum = 0.0;
      std::uint32_t count = 0;
      detail::Sample smp{};
      for (std::size_t pos = 0; pos < list.size(); ++pos) {
        const std::size_t id = list[pos];
        if (!detail::sample(bn->splats[id], double(op[id]), px, py, s, smp)) continue;
        const double next_t = t * (1.0 - smp.alpha);
        if (next_t < s.min_transmittance) break;
        const double wgt = smp.alpha * t;
        for (int ch = 0; ch < 3; ++ch) c[ch] += double(col[id * 3 + ch]) * wgt;
        wsum += wgt;
        t = next_t;
        last[pix] = static_cast<std::uint32_t>(pos + 1);
        ++count;
      }
      for (int ch = 0; ch < 3; ++ch) img[ch * hw + pix] = static_cast<Real>(c[ch] + t * background[ch]);
      final_t[pix] = t;
      if (aux) {
        aux->weight_sum[pix] = wsum + t;
        aux->transmittance[pix] = t;
        aux->contributors[pix] = count;
      }
    }

  return ad::make_result<Real>(
      Shape{3, h, w}, std::move(img), {proj.packed, colors, opacity},
      [bn, final_t = std::move(final_t), last = std::move(last), k, s, background, n](ad::Node<Real>& self) {
        Real* gpacked = ad::input_grad(self, 0);
        Real* gcol = ad::input_grad(self, 1);
        Real* gop = ad::input_grad(self, 2);
        const auto& col = self.inputs[1]->value;
        const auto& op = self.inputs[2]->value;
        const std::size_t h = k.height, w = k.width, hw = h * w;
        // conic and mean gradients per Gaussian: (du, dv, dqa, dqb, dqc)
        std::vector<std::array<double, 5>> gs(n, {0, 0, 0, 0, 0});
        detail::Sample smp{};
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const std::size_t pix = y * w + x;
            const double g[3] = {double(self.grad[pix]), double(self.grad[hw + pix]), double(self.grad[2 * hw + pix])};
            if (g[0] == 0 && g[1] == 0 && g[2] == 0) continue;
            const auto& list = bn->tiles[(y / s.tile) * bn->tiles_x + x / s.tile];
            const double px = double(x) + 0.5, py = double(y) + 0.5;
            double t = final_t[pix];
            double acc[3] = {background[0], background[1], background[2]};
            for (std::size_t pos = last[pix]; pos-- > 0;) {
              const std::size_t id = list[pos];
              const detail::Splat2d& sp = bn->splats[id];
              if (!detail::sample(sp, double(op[id]), px, py, s, smp)) continue;
              const double a = smp.alpha;
              const double t_before = t / (1.0 - a);
              double dalpha = 0.0;
              for (int ch = 0; ch < 3; ++ch) {
                const double c = col[id * 3 + ch];
                if (gcol) gcol[id * 3 + ch] += static_cast<Real>(a * t_before * g[ch]);
                dalpha += g[ch] * (c - acc[ch]);
                acc[ch] = a * c + (1.0 - a) * acc[ch];
              }
              dalpha *= t_before;
              t = t_before;
              if (smp.clipped) continue;
              if (gop) gop[id] += static_cast<Real>(smp.gauss * dalpha);
              const double dpower = double(op[id]) * dalpha * smp.gauss;
              auto& gi = gs[id];
              gi[0] += (sp.qa * smp.dx + sp.qb * smp.dy) * dpower;
              gi[1] += (sp.qc * smp.dy + sp.qb * smp.dx) * dpower;
              gi[2] += -0.5 * smp.dx * smp.dx * dpower;
              gi[3] += -smp.dx * smp.dy * dpower;
              gi[4] += -0.5 * smp.dy * smp.dy * dpower;
            }
          }
        if (!gpacked) return;
        for (std::size_t id = 0; id < n; ++id) {
          if (!bn->usable[id]) continue;
          const auto& gi = gs[id];
          const detail::Splat2d& sp = bn->splats[id];
          Eigen::Matrix2d q, gq;
          q << sp.qa, sp.qb, sp.qb, sp.qc;
          gq << gi[2], 0.5 * gi[3], 0.5 * gi[3], gi[4];
          const Eigen::Matrix2d gcov = -q * gq * q;
          Real* o = gpacked + id * 5;
          o[0] += static_cast<Real>(gi[0]);
          o[1] += static_cast<Real>(gi[1]);
          o[2] += static_cast<Real>(gcov(0, 0));
          o[3] += static_cast<Real>(gcov(0, 1) + gcov(1, 0));
          o[4] += static_cast<Real>(gcov(1, 1));
        }
      });
}

inline constexpr double kShC1 = 0.4886025119029199;
inline constexpr std::array<double, 5> kShC2{1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                             -1.0925484305920792, 0.5462742152960396};
inline constexpr std::array<double, 7> kShC3{-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                                             0.3731763325901154, -0.4570457994644658, 1.445305721320277,
                                             -0.5900435899266435};

/// Real SH basis (bands 1..degree) at a unit direction.
[[nodiscard]] inline std::vector<double> sh_basis(int degree, const Eigen::Vector3d& d) {
  std::vector<double> b;
  b.reserve(15);
  const double x = d.x(), y = d.y(), z = d.z();
  if (degree >= 1) b.insert(b.end(), {-kShC1 * y, kShC1 * z, -kShC1 * x});
  if (degree >= 2) {
    const double xx = x * x, yy = y * y, zz = z * z;
    b.insert(b.end(), {kShC2[0] * x * y, kShC2[1] * y * z, kShC2[2] * (2 * zz - xx - yy), kShC2[3] * x * z,
                       kShC2[4] * (xx - yy)});
  }
  if (degree >= 3) {
    const double xx = x * x, yy = y * y, zz = z * z;
    b.insert(b.end(), {kShC3[0] * y * (3 * xx - yy), kShC3[1] * x * y * z, kShC3[2] * y * (4 * zz - xx - yy),
                       kShC3[3] * z * (2 * zz - 3 * xx - 3 * yy), kShC3[4] * x * (4 * zz - xx - yy),
                       kShC3[5] * z * (xx - yy), kShC3[6] * x * (xx - 3 * yy)});
  }
  return b;
}

/// View-dependent colour: dc + sum_k basis_k(dir) rest_k, with dir from the
/// camera center to each mean. The direction is treated as a constant in the
/// backward pass.
template <typename Real>
[[nodiscard]] Tensor<Real> sh_colors(const Tensor<Real>& dc, const Tensor<Real>& rest, int degree,
                                     const Tensor<Real>& means, const Eigen::Vector3d& camera_center) {
  const std::size_t n = dc.dim(0), kc = sh_rest_count(degree);
  std::vector<double> basis(n * kc);
  const auto mu = means.data();
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Vector3d d = Eigen::Vector3d(mu[i * 3], mu[i * 3 + 1], mu[i * 3 + 2]) - camera_center;
    const double len = d.norm();
    if (len > 0) d /= len;
    const auto b = sh_basis(degree, d);
    std::copy(b.begin(), b.end(), basis.begin() + static_cast<std::ptrdiff_t>(i * kc));
  }
  std::vector<Real> out(dc.values());
  const auto r = rest.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < kc; ++j)
      for (int ch = 0; ch < 3; ++ch) out[i * 3 + ch] += static_cast<Real>(basis[i * kc + j] * r[(i * kc + j) * 3 + ch]);
  return ad::make_result<Real>(dc.shape(), std::move(out), {dc, rest}, [basis, n, kc](ad::Node<Real>& self) {
    if (Real* gdc = ad::input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gdc[i] += self.grad[i];
    }
    if (Real* gr = ad::input_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < kc; ++j)
          for (int ch = 0; ch < 3; ++ch)
            gr[(i * kc + j) * 3 + ch] += static_cast<Real>(basis[i * kc + j] * self.grad[i * 3 + ch]);
    }
  });
}

/// Renders the scene from a world-to-camera view [3, 4] into [3, H, W] linear RGB.
template <typename Real>
[[nodiscard]] Tensor<Real> render(const GaussianScene<Real>& scene, const Tensor<Real>& view, const Intrinsics& k,
                                  const RenderSettings& s = {}, RenderAux* aux = nullptr) {
  scene.validate();
  const Projection<Real> proj = project(scene.means, scene.log_scales, scene.quats, view, k, s);
  const Tensor<Real> opacity = ad::sigmoid(scene.opacity_logits);
  Tensor<Real> colors = scene.colors;
  if (scene.sh_degree > 0) {
    const RigidTransform<double> pose = from_tensor<double>(view);
    colors = sh_colors(scene.colors, scene.sh_rest, scene.sh_degree, scene.means, pose.inverse().trans);
  }
  return rasterize(proj, colors, opacity, k, scene.background, s, aux);
}

template <typename Real>
[[nodiscard]] Tensor<Real> render(const GaussianScene<Real>& scene, const RigidTransform<double>& world_to_camera,
                                  const Intrinsics& k, const RenderSettings& s = {}, RenderAux* aux = nullptr) {
  return render(scene, to_tensor<Real>(world_to_camera), k, s, aux);
}

/// World covariance R diag(s^2) R^T of one Gaussian.
[[nodiscard]] inline Eigen::Matrix3d covariance_world(const Eigen::Vector4d& quat, const Eigen::Vector3d& scale) {
  const Eigen::Matrix3d r = detail::quat_to_rot(quat.data());
  return r * scale.cwiseAbs2().asDiagonal() * r.transpose();
}

}  // namespace crimgs::splat
