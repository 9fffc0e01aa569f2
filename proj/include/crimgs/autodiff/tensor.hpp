#pragma once

// Dense tensors with reverse-mode differentiation.
//
// Every operation on tensors that require gradients records a node holding its
// inputs and a vector-Jacobian product. `backward(loss)` orders the recorded
// graph topologically (the Tape), visits each node once in reverse, and then
// releases it: a graph can be differentiated only once per forward pass.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "crimgs/errors.hpp"

namespace crimgs::ad {

using Shape = std::vector<std::size_t>;

[[nodiscard]] inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

[[nodiscard]] inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {
inline thread_local bool grad_enabled = true;
}  // namespace detail

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

[[nodiscard]] inline bool grad_enabled() { return detail::grad_enabled; }

template <typename Real>
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> inputs;
  /// Reads this->grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  [[nodiscard]] bool is_leaf() const { return !backward; }

  std::vector<Real>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
    return grad;
  }
};

template <typename Real>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<Real>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  Tensor(Shape shape, std::vector<Real> values) : node_(std::make_shared<Node<Real>>()) {
    if (ad::numel(shape) != values.size()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + ad::to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
  }

  [[nodiscard]] static Tensor zeros(Shape shape) {
    const auto n = ad::numel(shape);
    return Tensor(std::move(shape), std::vector<Real>(n, Real(0)));
  }
  [[nodiscard]] static Tensor full(Shape shape, Real v) {
    const auto n = ad::numel(shape);
    return Tensor(std::move(shape), std::vector<Real>(n, v));
  }
  [[nodiscard]] static Tensor scalar(Real v) { return Tensor(Shape{1}, std::vector<Real>{v}); }

  /// Learnable leaf.
  [[nodiscard]] static Tensor parameter(Shape shape, std::vector<Real> values, std::string name = {}) {
    Tensor t(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    t.node_->name = std::move(name);
    return t;
  }

  [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
  [[nodiscard]] const Shape& shape() const { return node_->shape; }
  [[nodiscard]] std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  [[nodiscard]] std::size_t rank() const { return node_->shape.size(); }
  [[nodiscard]] std::size_t numel() const { return node_->value.size(); }

  [[nodiscard]] std::span<const Real> data() const { return node_->value; }
  /// Mutable storage; meant for leaves (optimizers, initialisers, tests).
  [[nodiscard]] std::span<Real> mutable_data() { return node_->value; }
  [[nodiscard]] const std::vector<Real>& values() const { return node_->value; }
  [[nodiscard]] Real operator[](std::size_t i) const { return node_->value[i]; }

  [[nodiscard]] Real item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + ad::to_string(shape()));
    return node_->value[0];
  }

  [[nodiscard]] bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  [[nodiscard]] std::span<const Real> grad() const { return node_->grad; }
  [[nodiscard]] std::span<Real> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  [[nodiscard]] bool is_leaf() const { return node_->is_leaf(); }

  [[nodiscard]] const std::string& name() const { return node_->name; }
  void set_name(std::string n) { node_->name = std::move(n); }

  /// Copy of the value, disconnected from the graph.
  [[nodiscard]] Tensor detach() const { return Tensor(shape(), node_->value); }

  [[nodiscard]] Node<Real>& node() const { return *node_; }
  [[nodiscard]] const NodePtr& node_ptr() const { return node_; }

 private:
  NodePtr node_;
};

/// Creates the output of an operation. When recording is enabled and some
/// input needs gradients, the node keeps `inputs` and `backward`.
template <typename Real>
[[nodiscard]] Tensor<Real> make_result(Shape shape, std::vector<Real> value,
                                       std::vector<Tensor<Real>> inputs,
                                       std::function<void(Node<Real>&)> backward) {
  Tensor<Real> out(std::move(shape), std::move(value));
  if (!grad_enabled()) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor<Real>& t) { return t.defined() && t.requires_grad(); });
  if (!needs) return out;
  auto& node = out.node();
  node.requires_grad = true;
  node.inputs.reserve(inputs.size());
  for (auto& t : inputs) node.inputs.push_back(t.node_ptr());
  node.backward = std::move(backward);
  return out;
}

/// Gradient buffer of input `i`, or nullptr when that input takes no gradient.
template <typename Real>
[[nodiscard]] Real* input_grad(Node<Real>& node, std::size_t i) {
  auto& in = *node.inputs[i];
  if (!in.requires_grad) return nullptr;
  return in.ensure_grad().data();
}

/// Topological record of the graph below a scalar loss.
template <typename Real>
class Tape {
 public:
  explicit Tape(const Tensor<Real>& loss) : root_(loss.node_ptr()) {
    if (loss.numel() != 1) {
      throw std::invalid_argument("backward requires a scalar loss, got shape " + to_string(loss.shape()));
    }
    if (root_->consumed) {
      throw std::logic_error("backward called twice on the same graph; re-run the forward pass");
    }
    build();
  }

  /// Nodes in forward (dependency) order; the root is last.
  [[nodiscard]] const std::vector<Node<Real>*>& order() const { return order_; }

  void backward() {
    if (root_->consumed) {
      throw std::logic_error("backward called twice on the same graph; re-run the forward pass");
    }
    if (!root_->requires_grad) {
      root_->consumed = true;
      return;
    }
    root_->ensure_grad()[0] += Real(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      Node<Real>& n = **it;
      if (n.is_leaf()) continue;
      n.backward(n);
      n.backward = nullptr;
      n.inputs.clear();
      n.consumed = true;
      if (&n != root_.get()) {
        n.grad.clear();
        n.grad.shrink_to_fit();
      }
    }
    root_->consumed = true;
  }

 private:
  void build() {
    std::unordered_set<const Node<Real>*> seen;
    std::vector<std::pair<Node<Real>*, std::size_t>> stack;
    stack.emplace_back(root_.get(), 0);
    seen.insert(root_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->inputs.size()) {
        const auto& child = n->inputs[next++];
        if (child->requires_grad && seen.insert(child.get()).second) {
          keep_.push_back(child);
          stack.emplace_back(child.get(), 0);
        }
      } else {
        order_.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node<Real>> root_;
  std::vector<Node<Real>*> order_;
  std::vector<std::shared_ptr<Node<Real>>> keep_;  // owners while visiting
};

/// Accumulates d loss / d leaf into every reachable leaf requiring gradients.
template <typename Real>
void backward(const Tensor<Real>& loss) {
  Tape<Real>(loss).backward();
}

}  // namespace crimgs::ad
