#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crimgs/autodiff/tensor.hpp"
#include "crimgs/errors.hpp"

namespace crimgs::ad {

template <typename Real>
struct AdamState {
  std::vector<Real> m;
  std::vector<Real> v;
  std::int64_t step = 0;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of `params` in place. A non-finite
/// gradient aborts before anything is modified.
template <typename Real>
void adam_step(std::span<Real> params, std::span<const Real> grads, AdamState<Real>& state, Real lr,
               const AdamHyper& hyper = {}, const std::string& name = "parameter") {
  if (grads.size() != params.size()) {
    throw ShapeError("adam_step: gradient length " + std::to_string(grads.size()) + " != parameter length " +
                     std::to_string(params.size()) + " for '" + name + "'");
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), Real(0));
    state.v.assign(params.size(), Real(0));
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state does not match parameter '" + name + "'");
  }
  for (Real g : grads) {
    if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter '" + name + "'; step aborted");
  }
  ++state.step;
  const Real b1 = static_cast<Real>(hyper.beta1), b2 = static_cast<Real>(hyper.beta2);
  const Real eps = static_cast<Real>(hyper.eps);
  const Real c1 = Real(1) - std::pow(b1, static_cast<Real>(state.step));
  const Real c2 = Real(1) - std::pow(b2, static_cast<Real>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (Real(1) - b1) * grads[i];
    state.v[i] = b2 * state.v[i] + (Real(1) - b2) * grads[i] * grads[i];
    const Real mhat = state.m[i] / c1;
    const Real vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

/// Adam over named parameter tensors, each with its own learning rate.
template <typename Real>
class Adam {
 public:
  struct Slot {
    Tensor<Real> param;
    std::string group;
    Real lr = Real(0);
    AdamState<Real> state;
  };

  explicit Adam(AdamHyper hyper = {}) : hyper_(hyper) {}

  void add(Tensor<Real> param, std::string group, Real lr) {
    slots_.push_back(Slot{std::move(param), std::move(group), lr, {}});
  }

  void set_lr(const std::string& group, Real lr) {
    for (auto& s : slots_)
      if (s.group == group) s.lr = lr;
  }

  /// Validates every gradient first, then updates all parameters.
  void step() {
    for (auto& s : slots_) {
      if (!s.param.has_grad()) continue;
      for (Real g : s.param.grad())
        if (!std::isfinite(g))
          throw NumericalError("non-finite gradient in parameter '" + s.param.name() + "'; step aborted");
    }
    for (auto& s : slots_) {
      if (!s.param.has_grad()) continue;
      adam_step<Real>(s.param.mutable_data(), s.param.grad(), s.state, s.lr, hyper_, s.param.name());
    }
  }

  void zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
  }

  [[nodiscard]] std::vector<Slot>& slots() { return slots_; }
  [[nodiscard]] const std::vector<Slot>& slots() const { return slots_; }

 private:
  AdamHyper hyper_;
  std::vector<Slot> slots_;
};

}  // namespace crimgs::ad
