#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

#include "crimgs/autodiff/ops.hpp"

namespace crimgs::ad {

namespace detail {

/// Zero-padded copy of a [C, H, W] image on a (H + 2p) x (W + 2p) grid,
/// with `margin` extra zeros before and after each channel so that reads at
/// any kernel offset stay inside the buffer.
struct PaddedLayout {
  std::size_t h, w, pad, margin;
  [[nodiscard]] std::size_t hp() const { return h + 2 * pad; }
  [[nodiscard]] std::size_t wp() const { return w + 2 * pad; }
  [[nodiscard]] std::size_t grid() const { return hp() * wp(); }
  [[nodiscard]] std::size_t stride() const { return grid() + 2 * margin; }
  /// Offset of kernel tap (ky, kx) relative to the output position.
  [[nodiscard]] std::ptrdiff_t tap(std::size_t ky, std::size_t kx) const {
    return (static_cast<std::ptrdiff_t>(ky) - static_cast<std::ptrdiff_t>(pad)) * static_cast<std::ptrdiff_t>(wp()) +
           static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pad);
  }
};

template <typename Real>
void pad_image(const Real* img, std::size_t c, const PaddedLayout& L, Real* out) {
  std::fill(out, out + c * L.stride(), Real(0));
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t y = 0; y < L.h; ++y) {
      const Real* src = img + (ci * L.h + y) * L.w;
      std::copy(src, src + L.w, out + ci * L.stride() + L.margin + (y + L.pad) * L.wp() + L.pad);
    }
}

template <typename Real>
void unpad_add(const Real* padded, std::size_t c, const PaddedLayout& L, Real* img) {
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t y = 0; y < L.h; ++y) {
      const Real* src = padded + ci * L.stride() + L.margin + (y + L.pad) * L.wp() + L.pad;
      Real* dst = img + (ci * L.h + y) * L.w;
      for (std::size_t x = 0; x < L.w; ++x) dst[x] += src[x];
    }
}

/// Mirror index without repeating the edge sample ("reflect" padding),
/// valid for any offset including windows wider than the signal.
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

}  // namespace detail

/// Stride-1 "same" convolution with zero padding.
/// x: [B, Cin, H, W], weight: [Cout, Cin, k, k] (k odd), bias: [Cout] or undefined.
/// Evaluated as k*k shifted matrix products on a padded grid.
template <typename Real>
[[nodiscard]] Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(1) || weight.dim(2) != weight.dim(3) ||
      weight.dim(2) % 2 == 0) {
    detail::shape_mismatch("conv2d", x.shape(), weight.shape());
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
    detail::shape_mismatch("conv2d(bias)", weight.shape(), bias.shape());
  }
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), k = weight.dim(2), kk = k * k;
  const std::size_t hw = h * w;
  const detail::PaddedLayout L{h, w, k / 2, (k / 2) * (w + 2 * (k / 2)) + k / 2};

  using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Stride = Eigen::OuterStride<>;
  using CMap = Eigen::Map<const Mat, 0, Stride>;
  using MMap = Eigen::Map<Mat, 0, Stride>;
  const auto CI = static_cast<Eigen::Index>(cin);
  const auto CO = static_cast<Eigen::Index>(cout);
  const auto G = static_cast<Eigen::Index>(L.grid());
  const auto S = static_cast<Eigen::Index>(L.stride());
  // Column tile shared by all taps so the output block stays in cache.
  constexpr Eigen::Index kTile = 512;

  // Per-tap weight matrices [Cout, Cin].
  auto tap_weights = [=](const std::vector<Real>& wv) {
    std::vector<Mat> taps(kk, Mat(CO, CI));
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < cin; ++i)
        for (std::size_t t = 0; t < kk; ++t) taps[t](o, i) = wv[(o * cin + i) * kk + t];
    return taps;
  };

  std::vector<Real> y(batch * cout * hw);
  {
    const auto taps = tap_weights(weight.values());
    std::vector<Real> xp(cin * L.stride());
    std::vector<Real> outp(cout * L.stride(), Real(0));
    for (std::size_t b = 0; b < batch; ++b) {
      detail::pad_image(x.data().data() + b * cin * hw, cin, L, xp.data());
      MMap out(outp.data() + L.margin, CO, G, Stride(S));
      out.setZero();
      for (Eigen::Index c0 = 0; c0 < G; c0 += kTile) {
        const Eigen::Index n = std::min(kTile, G - c0);
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const CMap src(xp.data() + static_cast<std::ptrdiff_t>(L.margin) + L.tap(ky, kx), CI, G, Stride(S));
            out.middleCols(c0, n).noalias() += taps[ky * k + kx] * src.middleCols(c0, n);
          }
      }
      Real* yb = y.data() + b * cout * hw;
      for (std::size_t o = 0; o < cout; ++o) {
        const Real bo = has_bias ? bias[o] : Real(0);
        for (std::size_t r = 0; r < h; ++r) {
          const Real* src = outp.data() + o * L.stride() + L.margin + (r + L.pad) * L.wp() + L.pad;
          Real* dst = yb + (o * h + r) * w;
          for (std::size_t c = 0; c < w; ++c) dst[c] = src[c] + bo;
        }
      }
    }
  }

  std::vector<Tensor<Real>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result<Real>(
      Shape{batch, cout, h, w}, std::move(y), std::move(inputs),
      [=](Node<Real>& self) {
        Real* gx = input_grad(self, 0);
        Real* gw = input_grad(self, 1);
        Real* gb = has_bias ? input_grad(self, 2) : nullptr;
        const auto& xv = self.inputs[0]->value;
        const auto taps = tap_weights(self.inputs[1]->value);
        std::vector<Mat> gtaps(kk, Mat::Zero(CO, CI));
        std::vector<Real> xp(cin * L.stride());
        std::vector<Real> gp(cout * L.stride());
        std::vector<Real> gxp(cin * L.stride());
        for (std::size_t b = 0; b < batch; ++b) {
          const Real* g = self.grad.data() + b * cout * hw;
          if (gb)
            for (std::size_t o = 0; o < cout; ++o)
              for (std::size_t p = 0; p < hw; ++p) gb[o] += g[o * hw + p];
          detail::pad_image(g, cout, L, gp.data());
          const CMap gout(gp.data() + L.margin, CO, G, Stride(S));
          if (gw) {
            detail::pad_image(xv.data() + b * cin * hw, cin, L, xp.data());
            for (Eigen::Index c0 = 0; c0 < G; c0 += kTile) {
              const Eigen::Index n = std::min(kTile, G - c0);
              for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const CMap src(xp.data() + static_cast<std::ptrdiff_t>(L.margin) + L.tap(ky, kx), CI, G, Stride(S));
                  gtaps[ky * k + kx].noalias() += gout.middleCols(c0, n) * src.middleCols(c0, n).transpose();
                }
            }
          }
          if (gx) {
            std::fill(gxp.begin(), gxp.end(), Real(0));
            for (Eigen::Index c0 = 0; c0 < G; c0 += kTile) {
              const Eigen::Index n = std::min(kTile, G - c0);
              for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                  MMap dst(gxp.data() + static_cast<std::ptrdiff_t>(L.margin) + L.tap(ky, kx), CI, G, Stride(S));
                  dst.middleCols(c0, n).noalias() += taps[ky * k + kx].transpose() * gout.middleCols(c0, n);
                }
            }
            detail::unpad_add(gxp.data(), cin, L, gx + b * cin * hw);
          }
        }
        if (gw)
          for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t i = 0; i < cin; ++i)
              for (std::size_t t = 0; t < kk; ++t) gw[(o * cin + i) * kk + t] += gtaps[t](o, i);
      });
}

/// Normalised 1-D Gaussian taps of length 2 * radius + 1.
template <typename Real>
[[nodiscard]] std::vector<Real> gaussian_taps(Real sigma, std::size_t radius) {
  std::vector<Real> taps(2 * radius + 1);
  Real total = Real(0);
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const Real d = static_cast<Real>(i) - static_cast<Real>(radius);
    taps[i] = std::exp(-d * d / (Real(2) * sigma * sigma));
    total += taps[i];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

/// Separable Gaussian smoothing of the two trailing axes with reflect padding.
/// The filter is fixed; gradients flow to `x` only.
template <typename Real>
[[nodiscard]] Tensor<Real> gaussian_filter(const Tensor<Real>& x, Real sigma, std::size_t radius) {
  if (x.rank() < 2) throw ShapeError("gaussian_filter: need at least 2 axes, got " + to_string(x.shape()));
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const std::size_t planes = x.numel() / (h * w);
  const auto taps = gaussian_taps(sigma, radius);
  const auto r = static_cast<std::ptrdiff_t>(radius);

  // Precomputed source indices per output position and tap.
  std::vector<std::size_t> xmap(w * taps.size()), ymap(h * taps.size());
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t t = 0; t < taps.size(); ++t)
      xmap[i * taps.size() + t] = detail::reflect_index(static_cast<std::ptrdiff_t>(i + t) - r, w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t t = 0; t < taps.size(); ++t)
      ymap[i * taps.size() + t] = detail::reflect_index(static_cast<std::ptrdiff_t>(i + t) - r, h);

  const std::size_t nt = taps.size();
  std::vector<Real> y(x.numel());
  std::vector<Real> tmp(h * w);
  const auto xs = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const Real* in = xs.data() + p * h * w;
    Real* out = y.data() + p * h * w;
    for (std::size_t row = 0; row < h; ++row)
      for (std::size_t col = 0; col < w; ++col) {
        Real acc = Real(0);
        const std::size_t* m = xmap.data() + col * nt;
        for (std::size_t t = 0; t < nt; ++t) acc += taps[t] * in[row * w + m[t]];
        tmp[row * w + col] = acc;
      }
    for (std::size_t row = 0; row < h; ++row) {
      const std::size_t* m = ymap.data() + row * nt;
      for (std::size_t col = 0; col < w; ++col) {
        Real acc = Real(0);
        for (std::size_t t = 0; t < nt; ++t) acc += taps[t] * tmp[m[t] * w + col];
        out[row * w + col] = acc;
      }
    }
  }
  return make_result<Real>(x.shape(), std::move(y), {x}, [=](Node<Real>& self) {
    Real* gx = input_grad(self, 0);
    if (!gx) return;
    std::vector<Real> gtmp(h * w);
    for (std::size_t p = 0; p < planes; ++p) {
      const Real* g = self.grad.data() + p * h * w;
      std::fill(gtmp.begin(), gtmp.end(), Real(0));
      for (std::size_t row = 0; row < h; ++row) {
        const std::size_t* m = ymap.data() + row * nt;
        for (std::size_t col = 0; col < w; ++col)
          for (std::size_t t = 0; t < nt; ++t) gtmp[m[t] * w + col] += taps[t] * g[row * w + col];
      }
      Real* dst = gx + p * h * w;
      for (std::size_t row = 0; row < h; ++row)
        for (std::size_t col = 0; col < w; ++col) {
          const std::size_t* m = xmap.data() + col * nt;
          const Real v = gtmp[row * w + col];
          for (std::size_t t = 0; t < nt; ++t) dst[row * w + m[t]] += taps[t] * v;
        }
    }
  });
}

}  // namespace crimgs::ad
