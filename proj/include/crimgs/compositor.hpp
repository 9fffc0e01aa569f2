#pragma once

// Pixel-wise weighted fusion of sub-frame renders into one blurry image.

#include <cstddef>
#include <string>
#include <vector>

#include "crimgs/autodiff/ops.hpp"
#include "crimgs/errors.hpp"
#include "crimgs/nn.hpp"

namespace crimgs {

/// Shallow per-frame CNN: 3 -> 64 -> 64 -> 3 channels, 3x3 kernels, ReLU between.
template <typename Real>
class WeightCnn {
 public:
  WeightCnn() = default;

  WeightCnn(nn::Rng& rng, std::size_t hidden = 64)
      : c0_(rng, 3, hidden, 3, "compositor.conv0"),
        c1_(rng, hidden, hidden, 3, "compositor.conv1"),
        c2_(rng, hidden, 3, 3, "compositor.conv2") {}

  /// frames: [N, 3, H, W] -> logits [N, 3, H, W]; frames are independent.
  [[nodiscard]] ad::Tensor<Real> operator()(const ad::Tensor<Real>& frames) const {
    return c2_(ad::relu(c1_(ad::relu(c0_(frames)))));
  }

  [[nodiscard]] std::vector<nn::NamedParam<Real>> parameters() const {
    std::vector<nn::NamedParam<Real>> out;
    c0_.collect(out);
    c1_.collect(out);
    c2_.collect(out);
    return out;
  }

  [[nodiscard]] nn::Conv2d<Real>& layer(std::size_t i) { return i == 0 ? c0_ : i == 1 ? c1_ : c2_; }

 private:
  nn::Conv2d<Real> c0_, c1_, c2_;
};

template <typename Real>
struct Composite {
  ad::Tensor<Real> image;    ///< [3, H, W]
  ad::Tensor<Real> weights;  ///< [N, 3, H, W], sums to one over N
};

/// Stacks [3, H, W] sub-frames into [N, 3, H, W].
template <typename Real>
[[nodiscard]] ad::Tensor<Real> stack_frames(const std::vector<ad::Tensor<Real>>& frames) {
  if (frames.empty()) throw ShapeError("composite: no sub-frames");
  for (const auto& f : frames) {
    if (f.rank() != 3 || f.dim(0) != 3 || f.shape() != frames[0].shape()) {
      throw ShapeError("composite: sub-frames must share shape [3, H, W], got " + ad::to_string(f.shape()) +
                       " and " + ad::to_string(frames[0].shape()));
    }
  }
  return ad::stack(frames);
}

/// Weighted sum of the sub-frames. Inactive mode uses uniform 1/N weights.
template <typename Real>
[[nodiscard]] Composite<Real> composite(const std::vector<ad::Tensor<Real>>& frames, const WeightCnn<Real>& cnn,
                                        bool active) {
  const ad::Tensor<Real> stacked = stack_frames(frames);
  const std::size_t n = frames.size();
  Composite<Real> out;
  if (active) {
    out.weights = ad::softmax(cnn(stacked), 0);
  } else {
    out.weights = ad::Tensor<Real>(stacked.shape(), std::vector<Real>(stacked.numel(), Real(1) / Real(n)));
  }
  out.image = ad::sum(ad::mul(stacked, out.weights), 0);
  return out;
}

}  // namespace crimgs
