#pragma once

// Continuous camera-motion blur kernel: a per-image embedding drives two
// latent ODEs whose states decode into a rigid screw motion and a free-form
// near-rigid correction at each sampled exposure time.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "crimgs/autodiff/ops.hpp"
#include "crimgs/camera.hpp"
#include "crimgs/liegroup.hpp"
#include "crimgs/nn.hpp"
#include "crimgs/ode.hpp"

namespace crimgs {

using ad::Shape;
using ad::Tensor;

struct KernelConfig {
  std::size_t n_images = 1;
  std::size_t latent = 64;
  std::size_t n_poses = 9;
  bool rigid = true;
  bool deform = true;
  bool time_input = false;   ///< append t to the derivative-network input
  double theta_gain = 0.1;   ///< scale applied to the decoded angle
  double deform_init = 1e-5; ///< deform decoder init bound
  ode::SolverConfig solver{};
};

/// n times spanning the normalised exposure [0, 1], endpoints included.
template <typename Real = double>
[[nodiscard]] std::vector<Real> sample_times(std::size_t n) {
  if (n < 2) throw std::invalid_argument("sample_times: need at least 2 samples, got " + std::to_string(n));
  std::vector<Real> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<Real>(i) / static_cast<Real>(n - 1);
  return t;
}

namespace kernel_ops {

template <typename Real>
[[nodiscard]] Tensor<Real> identity3() {
  return Tensor<Real>({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
}

/// [1, 3] vector -> [3, 3] cross-product matrix.
template <typename Real>
[[nodiscard]] Tensor<Real> skew(const Tensor<Real>& w) {
  std::vector<Real> e(27, Real(0));
  auto at = [&](int comp, int entry, Real v) { e[static_cast<std::size_t>(comp * 9 + entry)] = v; };
  at(2, 1, -1);
  at(1, 2, 1);
  at(2, 3, 1);
  at(0, 5, -1);
  at(1, 6, -1);
  at(0, 7, 1);
  return ad::reshape(ad::matmul(w, Tensor<Real>({3, 9}, std::move(e))), {3, 3});
}

/// Screw exponential on tensors: unit axis [1,3] (or zeros), angle [1], v [1,3]
/// -> [3, 4] transform [R | G v].
template <typename Real>
[[nodiscard]] Tensor<Real> exp_screw(const Tensor<Real>& axis, const Tensor<Real>& angle, const Tensor<Real>& v) {
  const Tensor<Real> k = skew(axis);
  const Tensor<Real> k2 = ad::matmul(k, k);
  const Tensor<Real> s = ad::sin(angle);
  const Tensor<Real> c1 = Real(1) - ad::cos(angle);
  const Tensor<Real> eye = identity3<Real>();
  const Tensor<Real> rot = eye + s * k + c1 * k2;
  const Tensor<Real> g = eye * angle + c1 * k + (angle - s) * k2;
  return ad::concat<Real>({rot, ad::matmul(g, ad::transpose(v))}, 1);
}

/// [3,4] a * [3,4] b as homogeneous transforms (b applied first).
template <typename Real>
[[nodiscard]] Tensor<Real> compose(const Tensor<Real>& a, const Tensor<Real>& b) {
  const Tensor<Real> ar = ad::slice(a, 1, 0, 3);
  const Tensor<Real> at = ad::slice(a, 1, 3, 1);
  const Tensor<Real> br = ad::slice(b, 1, 0, 3);
  const Tensor<Real> bt = ad::slice(b, 1, 3, 1);
  return ad::concat<Real>({ad::matmul(ar, br), ad::matmul(ar, bt) + at}, 1);
}

template <typename Real>
[[nodiscard]] Tensor<Real> affine_identity() {
  return Tensor<Real>({3, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0});
}

namespace detail {

// Coefficients of the SE(3) exponential written in s = |w|^2:
// a = sin(t)/t, b = (1 - cos t)/t^2, c = (t - sin t)/t^3 with t = sqrt(s).
struct TwistCoeff {
  double a, b, c, da, db, dc;
};

inline TwistCoeff twist_coeff(double s) {
  if (s < 1e-2) {
    return {1 - s / 6 + s * s / 120 - s * s * s / 5040,
            0.5 - s / 24 + s * s / 720 - s * s * s / 40320,
            1.0 / 6 - s / 120 + s * s / 5040 - s * s * s / 362880,
            -1.0 / 6 + s / 60 - s * s / 1680,
            -1.0 / 24 + s / 360 - s * s / 13440,
            -1.0 / 120 + s / 2520 - s * s / 120960};
  }
  const double t = std::sqrt(s), st = std::sin(t), ct = std::cos(t);
  return {st / t,
          (1 - ct) / s,
          (t - st) / (s * t),
          (t * ct - st) / (2 * s * t),
          (t * st - 2 * (1 - ct)) / (2 * s * s),
          ((1 - ct) * t - 3 * (t - st)) / (2 * s * s * t)};
}

template <typename Real, int Which>
Tensor<Real> twist_coeff_op(const Tensor<Real>& s) {
  return ad::unary(
      s,
      [](Real v) {
        const auto c = twist_coeff(static_cast<double>(v));
        return static_cast<Real>(Which == 0 ? c.a : Which == 1 ? c.b : c.c);
      },
      [](Real v, Real) {
        const auto c = twist_coeff(static_cast<double>(v));
        return static_cast<Real>(Which == 0 ? c.da : Which == 1 ? c.db : c.dc);
      });
}

}  // namespace detail

/// Exponential of an unnormalised twist [1, 6] = (w, v); smooth at zero.
template <typename Real>
[[nodiscard]] Tensor<Real> exp_twist(const Tensor<Real>& xi) {
  const Tensor<Real> w = ad::slice(xi, 1, 0, 3);
  const Tensor<Real> v = ad::slice(xi, 1, 3, 3);
  const Tensor<Real> s = ad::sum(ad::square(w));
  const Tensor<Real> a = detail::twist_coeff_op<Real, 0>(s);
  const Tensor<Real> b = detail::twist_coeff_op<Real, 1>(s);
  const Tensor<Real> c = detail::twist_coeff_op<Real, 2>(s);
  const Tensor<Real> k = skew(w);
  const Tensor<Real> k2 = ad::matmul(k, k);
  const Tensor<Real> eye = identity3<Real>();
  const Tensor<Real> rot = eye + a * k + b * k2;
  const Tensor<Real> vmat = eye + b * k + c * k2;
  return ad::concat<Real>({rot, ad::matmul(vmat, ad::transpose(v))}, 1);
}

}  // namespace kernel_ops

/// Per-time outputs of the kernel for one image. Transforms are [3, 4].
template <typename Real>
struct KernelSample {
  std::vector<Tensor<Real>> rigid;
  std::vector<Tensor<Real>> deform;
  std::vector<Tensor<Real>> poses;  ///< base * rigid * deform (world-to-camera)
};

template <typename Real>
class BlurKernel {
 public:
  BlurKernel() = default;

  BlurKernel(const KernelConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
    const std::size_t d = cfg.latent;
    const std::size_t din = d + (cfg.time_input ? 1 : 0);
    embedding_ = Tensor<Real>::parameter({cfg.n_images, d}, nn::normal<Real>(rng, cfg.n_images * d, 0.0, 1.0),
                                         "kernel.embedding");
    enc_r_ = nn::Linear<Real>(rng, d, d, "kernel.enc_r");
    f1_ = nn::Linear<Real>(rng, din, d, "kernel.f.0");
    f2_ = nn::Linear<Real>(rng, d, d, "kernel.f.1");
    dec_r_ = nn::Linear<Real>(rng, d, 7, "kernel.dec_r");
    enc_d_ = nn::Linear<Real>(rng, d, d, "kernel.enc_d");
    g1_ = nn::Linear<Real>(rng, din, d, "kernel.g.0");
    g2_ = nn::Linear<Real>(rng, d, d, "kernel.g.1");
    dec_d_ = nn::Linear<Real>::uniform_init(rng, d, 12, cfg.deform_init, "kernel.dec_d");
  }

  [[nodiscard]] const KernelConfig& config() const { return cfg_; }
  [[nodiscard]] KernelConfig& mutable_config() { return cfg_; }

  /// Learnable tensors of the enabled branches.
  [[nodiscard]] std::vector<nn::NamedParam<Real>> parameters() const {
    std::vector<nn::NamedParam<Real>> out{{embedding_.name(), embedding_}};
    if (cfg_.rigid) {
      for (const auto* l : {&enc_r_, &f1_, &f2_, &dec_r_}) l->collect(out);
    }
    if (cfg_.deform) {
      for (const auto* l : {&enc_d_, &g1_, &g2_, &dec_d_}) l->collect(out);
    }
    return out;
  }

  /// Every tensor, including disabled branches (for checkpoints).
  [[nodiscard]] std::vector<nn::NamedParam<Real>> all_tensors() const {
    std::vector<nn::NamedParam<Real>> out{{embedding_.name(), embedding_}};
    for (const auto* l : {&enc_r_, &f1_, &f2_, &dec_r_, &enc_d_, &g1_, &g2_, &dec_d_}) l->collect(out);
    return out;
  }

  [[nodiscard]] Tensor<Real>& embedding() { return embedding_; }
  [[nodiscard]] nn::Linear<Real>& rigid_decoder() { return dec_r_; }
  [[nodiscard]] nn::Linear<Real>& deform_decoder() { return dec_d_; }
  [[nodiscard]] nn::Linear<Real>& f_output() { return f2_; }

  /// Latent trajectory of one branch at `times` (the ODE starts at t = 0).
  [[nodiscard]] std::vector<Tensor<Real>> latents(std::size_t image, const std::vector<Real>& times, bool rigid_branch,
                                                  ode::SolveStats* stats = nullptr) const {
    check_image(image);
    const Tensor<Real> e = ad::slice(embedding_, 0, image, 1);
    const auto& enc = rigid_branch ? enc_r_ : enc_d_;
    const auto& l1 = rigid_branch ? f1_ : g1_;
    const auto& l2 = rigid_branch ? f2_ : g2_;
    const bool with_t = cfg_.time_input;
    ode::OdeFunc<Real> func = [&l1, &l2, with_t](const Tensor<Real>& z, Real t) {
      const Tensor<Real> x = with_t ? ad::concat<Real>({z, Tensor<Real>::full({1, 1}, t)}, 1) : z;
      return l2(ad::relu(l1(x)));
    };
    std::vector<Real> ts{Real(0)};
    ts.insert(ts.end(), times.begin(), times.end());
    auto zs = ode::odeint<Real>(func, ad::relu(enc(e)), ts, cfg_.solver, stats);
    zs.erase(zs.begin());
    return zs;
  }

  /// Decoded rigid screw of a latent: (axis [1,3], angle [1], v [1,3]).
  struct ScrewTensors {
    Tensor<Real> axis, angle, v;
  };

  [[nodiscard]] ScrewTensors decode_screw(const Tensor<Real>& z) const {
    const Tensor<Real> out = dec_r_(z);
    const Tensor<Real> w = ad::slice(out, 1, 0, 3);
    ScrewTensors s;
    s.angle = ad::reshape(ad::scale(ad::slice(out, 1, 3, 1), static_cast<Real>(cfg_.theta_gain)), {1});
    s.v = ad::slice(out, 1, 4, 3);
    double n2 = 0.0;
    for (Real c : w.data()) n2 += static_cast<double>(c) * static_cast<double>(c);
    if (std::sqrt(n2) < kAxisEpsilon) {
      s.axis = Tensor<Real>::zeros({1, 3});
    } else {
      s.axis = w / ad::sqrt(ad::sum(ad::square(w)));
    }
    return s;
  }

  [[nodiscard]] std::vector<Tensor<Real>> rigid_transforms(std::size_t image, const std::vector<Real>& times) const {
    std::vector<Tensor<Real>> out;
    for (const auto& z : latents(image, times, true)) {
      const auto s = decode_screw(z);
      out.push_back(kernel_ops::exp_screw(s.axis, s.angle, s.v));
    }
    return out;
  }

  /// Raw decoded (R~ + I | t); not projected onto SE(3).
  [[nodiscard]] std::vector<Tensor<Real>> deform_transforms(std::size_t image, const std::vector<Real>& times) const {
    std::vector<Tensor<Real>> out;
    for (const auto& z : latents(image, times, false)) {
      const Tensor<Real> o = dec_d_(z);
      const Tensor<Real> rot = ad::reshape(ad::slice(o, 1, 0, 9), {3, 3}) + kernel_ops::identity3<Real>();
      const Tensor<Real> t = ad::reshape(ad::slice(o, 1, 9, 3), {3, 1});
      out.push_back(ad::concat<Real>({rot, t}, 1));
    }
    return out;
  }

  /// Poses base * rigid(t) * deform(t) for the configured branches; a disabled
  /// branch contributes the identity.
  [[nodiscard]] KernelSample<Real> trajectory(const Tensor<Real>& base_view, std::size_t image,
                                              const std::vector<Real>& times) const {
    KernelSample<Real> out;
    if (cfg_.rigid) out.rigid = rigid_transforms(image, times);
    if (cfg_.deform) out.deform = deform_transforms(image, times);
    for (std::size_t i = 0; i < times.size(); ++i) {
      Tensor<Real> pose = base_view;
      if (cfg_.rigid) pose = kernel_ops::compose(pose, out.rigid[i]);
      if (cfg_.deform) pose = kernel_ops::compose(pose, out.deform[i]);
      out.poses.push_back(pose);
    }
    return out;
  }

 private:
  void check_image(std::size_t image) const {
    if (image >= cfg_.n_images) {
      throw std::out_of_range("image index " + std::to_string(image) + " out of range (" +
                              std::to_string(cfg_.n_images) + " images)");
    }
  }

  KernelConfig cfg_;
  Tensor<Real> embedding_;
  nn::Linear<Real> enc_r_, f1_, f2_, dec_r_;
  nn::Linear<Real> enc_d_, g1_, g2_, dec_d_;
};

}  // namespace crimgs
