#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "crimgs/autodiff/conv.hpp"
#include "crimgs/autodiff/ops.hpp"

namespace crimgs::nn {

using ad::Shape;
using ad::Tensor;

/// The single seeded generator behind every random draw of a run.
using Rng = std::mt19937_64;

template <typename Real>
[[nodiscard]] std::vector<Real> uniform(Rng& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Real> v(n);
  for (auto& e : v) e = static_cast<Real>(u(rng));
  return v;
}

template <typename Real>
[[nodiscard]] std::vector<Real> normal(Rng& rng, std::size_t n, double mean, double stddev) {
  std::normal_distribution<double> d(mean, stddev);
  std::vector<Real> v(n);
  for (auto& e : v) e = static_cast<Real>(d(rng));
  return v;
}

/// Named learnable tensor.
template <typename Real>
struct NamedParam {
  std::string name;
  Tensor<Real> tensor;
};

/// y = x W + b with W stored [in, out].
template <typename Real>
struct Linear {
  Tensor<Real> weight;
  Tensor<Real> bias;

  Linear() = default;

  /// Default init: U(-1/sqrt(in), 1/sqrt(in)) for weights and biases.
  Linear(Rng& rng, std::size_t in, std::size_t out, const std::string& name) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = Tensor<Real>::parameter({in, out}, uniform<Real>(rng, in * out, -bound, bound), name + ".weight");
    bias = Tensor<Real>::parameter({1, out}, uniform<Real>(rng, out, -bound, bound), name + ".bias");
  }

  /// Weights and biases from U(-bound, bound).
  static Linear uniform_init(Rng& rng, std::size_t in, std::size_t out, double bound, const std::string& name) {
    Linear l;
    l.weight = Tensor<Real>::parameter({in, out}, uniform<Real>(rng, in * out, -bound, bound), name + ".weight");
    l.bias = Tensor<Real>::parameter({1, out}, uniform<Real>(rng, out, -bound, bound), name + ".bias");
    return l;
  }

  [[nodiscard]] Tensor<Real> operator()(const Tensor<Real>& x) const { return ad::matmul(x, weight) + bias; }

  void collect(std::vector<NamedParam<Real>>& out) const {
    out.push_back({weight.name(), weight});
    out.push_back({bias.name(), bias});
  }
};

/// 'Same' 3x3 convolution with Kaiming-uniform weights and zero biases.
template <typename Real>
struct Conv2d {
  Tensor<Real> weight;
  Tensor<Real> bias;

  Conv2d() = default;

  Conv2d(Rng& rng, std::size_t in, std::size_t out, std::size_t k, const std::string& name) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in * k * k));
    weight = Tensor<Real>::parameter({out, in, k, k}, uniform<Real>(rng, out * in * k * k, -bound, bound),
                                     name + ".weight");
    bias = Tensor<Real>::parameter({out}, std::vector<Real>(out, Real(0)), name + ".bias");
  }

  [[nodiscard]] Tensor<Real> operator()(const Tensor<Real>& x) const { return ad::conv2d(x, weight, bias); }

  void collect(std::vector<NamedParam<Real>>& out) const {
    out.push_back({weight.name(), weight});
    out.push_back({bias.name(), bias});
  }
};

}  // namespace crimgs::nn
