#pragma once

// Photometric losses, deformation regularisers and image metrics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "crimgs/autodiff/conv.hpp"
#include "crimgs/autodiff/ops.hpp"
#include "crimgs/errors.hpp"

namespace crimgs {

struct LossWeights {
  double ssim = 0.3;    ///< lambda_c
  double det = 1e-3;    ///< lambda_det
  double ortho = 1e-3;  ///< lambda_ortho
  bool reg_sum = true;  ///< regularisers summed over the poses of an image instead of averaged

  void validate() const {
    if (!(ssim >= 0.0 && ssim <= 1.0)) throw ConfigError("loss weight ssim must lie in [0, 1]");
    if (!(det >= 0.0) || !(ortho >= 0.0)) throw ConfigError("regulariser weights must be non-negative");
  }
};

struct SsimSettings {
  std::size_t radius = 5;  ///< 11 x 11 window
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

namespace detail {

template <typename Real>
void check_pair(const char* op, const ad::Tensor<Real>& a, const ad::Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + ad::to_string(a.shape()) + " vs " +
                     ad::to_string(b.shape()));
  }
}

}  // namespace detail

template <typename Real>
[[nodiscard]] ad::Tensor<Real> l1(const ad::Tensor<Real>& pred, const ad::Tensor<Real>& target) {
  detail::check_pair("l1", pred, target);
  return ad::mean(ad::abs(ad::sub(pred, target)));
}

/// Mean SSIM over pixels and channels of [C, H, W] images (reflect padding).
template <typename Real>
[[nodiscard]] ad::Tensor<Real> ssim(const ad::Tensor<Real>& x, const ad::Tensor<Real>& y, const SsimSettings& s = {}) {
  detail::check_pair("ssim", x, y);
  if (x.rank() < 2) throw ShapeError("ssim: need at least 2 axes, got " + ad::to_string(x.shape()));
  const auto sigma = static_cast<Real>(s.sigma);
  auto blur = [&](const ad::Tensor<Real>& t) { return ad::gaussian_filter(t, sigma, s.radius); };
  const auto mx = blur(x), my = blur(y);
  const auto mx2 = ad::square(mx), my2 = ad::square(my), mxy = ad::mul(mx, my);
  const auto vx = ad::sub(blur(ad::square(x)), mx2);
  const auto vy = ad::sub(blur(ad::square(y)), my2);
  const auto cxy = ad::sub(blur(ad::mul(x, y)), mxy);
  const auto c1 = static_cast<Real>(s.c1), c2 = static_cast<Real>(s.c2);
  const auto num = ad::mul(ad::add_scalar(ad::scale(mxy, Real(2)), c1), ad::add_scalar(ad::scale(cxy, Real(2)), c2));
  const auto den = ad::mul(ad::add_scalar(ad::add(mx2, my2), c1), ad::add_scalar(ad::add(vx, vy), c2));
  return ad::mean(ad::div(num, den));
}

template <typename Real>
[[nodiscard]] ad::Tensor<Real> dssim(const ad::Tensor<Real>& pred, const ad::Tensor<Real>& target,
                                     const SsimSettings& s = {}) {
  return ad::add_scalar(ad::neg(ssim(pred, target, s)), Real(1));
}

namespace detail {

/// Upper-left [3, 3] block of a [3, 3] or [3, 4] matrix.
template <typename Real>
ad::Tensor<Real> linear_block(const ad::Tensor<Real>& m) {
  if (m.rank() != 2 || m.dim(0) != 3 || (m.dim(1) != 3 && m.dim(1) != 4)) {
    throw ShapeError("regulariser: expected [3,3] or [3,4], got " + ad::to_string(m.shape()));
  }
  return m.dim(1) == 3 ? m : ad::slice(m, 1, 0, 3);
}

template <typename Real>
ad::Tensor<Real> identity3() {
  return ad::Tensor<Real>({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
}

}  // namespace detail

/// Mean over matrices of ||R R^T - I||_F.
template <typename Real>
[[nodiscard]] ad::Tensor<Real> reg_ortho(const std::vector<ad::Tensor<Real>>& mats) {
  if (mats.empty()) return ad::Tensor<Real>({1}, {Real(0)});
  std::vector<ad::Tensor<Real>> terms;
  for (const auto& m : mats) {
    const auto r = detail::linear_block(m);
    const auto resid = ad::sub(ad::matmul(r, ad::transpose(r)), detail::identity3<Real>());
    terms.push_back(ad::sqrt(ad::sum(ad::square(resid))));
  }
  return ad::scale(ad::sum(ad::concat(terms, 0)), Real(1) / static_cast<Real>(mats.size()));
}

/// Mean over matrices of |det R - 1|.
template <typename Real>
[[nodiscard]] ad::Tensor<Real> reg_det(const std::vector<ad::Tensor<Real>>& mats) {
  if (mats.empty()) return ad::Tensor<Real>({1}, {Real(0)});
  std::vector<ad::Tensor<Real>> terms;
  for (const auto& m : mats) terms.push_back(ad::abs(ad::add_scalar(ad::det3(detail::linear_block(m)), Real(-1))));
  return ad::scale(ad::sum(ad::concat(terms, 0)), Real(1) / static_cast<Real>(mats.size()));
}

template <typename Real>
struct LossTerms {
  ad::Tensor<Real> total;
  double l1 = 0, dssim = 0, det = 0, ortho = 0;
};

/// (1 - lc) L1 + lc D-SSIM + ld L_det + lo L_ortho.
template <typename Real>
[[nodiscard]] LossTerms<Real> total_loss(const ad::Tensor<Real>& pred, const ad::Tensor<Real>& target,
                                         const std::vector<ad::Tensor<Real>>& deform, const LossWeights& w) {
  const auto a = l1(pred, target);
  const auto b = dssim(pred, target);
  const auto c = reg_det(deform);
  const auto d = reg_ortho(deform);
  const double n = w.reg_sum ? static_cast<double>(std::max<std::size_t>(deform.size(), 1)) : 1.0;
  LossTerms<Real> out;
  out.total = ad::linear_combination<Real>({a, b, c, d}, {static_cast<Real>(1.0 - w.ssim), static_cast<Real>(w.ssim),
                                                          static_cast<Real>(n * w.det), static_cast<Real>(n * w.ortho)});
  out.l1 = static_cast<double>(a[0]);
  out.dssim = static_cast<double>(b[0]);
  out.det = static_cast<double>(c[0]);
  out.ortho = static_cast<double>(d[0]);
  return out;
}

/// 10 log10(1 / MSE); +infinity for identical images.
template <typename Real>
[[nodiscard]] double psnr(const ad::Tensor<Real>& pred, const ad::Tensor<Real>& target) {
  detail::check_pair("psnr", pred, target);
  double mse = 0;
  const auto a = pred.data(), b = target.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

/// SSIM evaluated in double without building a graph.
template <typename Real>
[[nodiscard]] double ssim_metric(const ad::Tensor<Real>& pred, const ad::Tensor<Real>& target) {
  ad::NoGradGuard guard;
  const auto to_double = [](const ad::Tensor<Real>& t) {
    return ad::Tensor<double>(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
  };
  return ssim(to_double(pred), to_double(target))[0];
}

}  // namespace crimgs
