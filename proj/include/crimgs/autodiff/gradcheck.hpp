#pragma once

// Central finite differences against reverse-mode gradients. Only forward
// evaluations enter the numerical side.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "crimgs/autodiff/tensor.hpp"

namespace crimgs::ad {

struct GradCheckResult {
  double max_relative_error = 0.0;  ///< worst over the checked tensors
  std::string worst;                ///< name of the worst tensor
  std::size_t entries_checked = 0;
};

/// ||a - n|| / max(||a||, ||n||, floor) over sampled entries of each tensor.
/// `loss_fn` must rebuild the graph from the current parameter values and
/// return a scalar.
template <typename Real, typename F>
GradCheckResult gradcheck(F&& loss_fn, std::vector<Tensor<Real>> params, double h = 1e-4,
                          std::size_t max_entries_per_tensor = 64, double floor = 1e-10,
                          std::uint64_t seed = 7) {
  for (auto& p : params) p.zero_grad();
  backward(loss_fn());
  GradCheckResult result;
  std::mt19937_64 rng(seed);
  for (auto& p : params) {
    std::vector<Real> analytic(p.numel(), Real(0));
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    std::vector<std::size_t> idx(p.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > max_entries_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_entries_per_tensor);
    }
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    auto data = p.mutable_data();
    for (std::size_t i : idx) {
      const Real saved = data[i];
      data[i] = saved + static_cast<Real>(h);
      const double up = static_cast<double>(loss_fn().item());
      data[i] = saved - static_cast<Real>(h);
      const double down = static_cast<double>(loss_fn().item());
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = static_cast<double>(analytic[i]);
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    const double rel = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), floor});
    result.entries_checked += idx.size();
    if (result.worst.empty() || rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst = p.name().empty() ? "#" + std::to_string(&p - params.data()) : p.name();
    }
    p.zero_grad();
  }
  return result;
}

}  // namespace crimgs::ad
