#pragma once

// Differentiable primitives. Binary elementwise operations broadcast with
// NumPy rules; every shape mismatch throws ShapeError naming both shapes.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "crimgs/autodiff/tensor.hpp"

namespace crimgs::ad {

namespace detail {

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

inline std::size_t check_axis(const char* op, const Shape& s, int axis) {
  const int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(s));
  }
  return static_cast<std::size_t>(axis);
}

/// (outer, extent, inner) split of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split(const Shape& s, std::size_t axis) {
  AxisSplit p;
  for (std::size_t i = 0; i < axis; ++i) p.outer *= s[i];
  p.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) p.inner *= s[i];
  return p;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Unary elementwise

template <typename Real, typename F, typename D>
[[nodiscard]] Tensor<Real> unary(const Tensor<Real>& x, F f, D derivative) {
  std::vector<Real> y(x.numel());
  const auto xs = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xs[i]);
  return make_result<Real>(x.shape(), std::move(y), {x}, [derivative](Node<Real>& self) {
    Real* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& xv = self.inputs[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * derivative(xv[i], self.value[i]);
  });
}

template <typename Real>
[[nodiscard]] Tensor<Real> neg(const Tensor<Real>& x) {
  return unary(x, [](Real v) { return -v; }, [](Real, Real) { return Real(-1); });
}

/// max(x, 0); the derivative at 0 is taken as 0.
template <typename Real>
[[nodiscard]] Tensor<Real> relu(const Tensor<Real>& x) {
  return unary(x, [](Real v) { return v > Real(0) ? v : Real(0); },
               [](Real v, Real) { return v > Real(0) ? Real(1) : Real(0); });
}

/// |x|; the derivative at 0 is taken as 0.
template <typename Real>
[[nodiscard]] Tensor<Real> abs(const Tensor<Real>& x) {
  return unary(x, [](Real v) { return std::abs(v); },
               [](Real v, Real) { return v > Real(0) ? Real(1) : (v < Real(0) ? Real(-1) : Real(0)); });
}

template <typename Real>
[[nodiscard]] Tensor<Real> square(const Tensor<Real>& x) {
  return unary(x, [](Real v) { return v * v; }, [](Real v, Real) { return Real(2) * v; });
}

/// sqrt(x); the derivative at 0 is taken as 0 so norms of zero residuals stay finite.
template <typename Real>
[[nodiscard]] Tensor<Real> sqrt(const Tensor<Real>& x) {
  return unary(x, [](Real v) { return std::sqrt(v); },
               [](Real, Real y) { return y > Real(0) ? Real(0.5) / y : Real(0); });
}

template <typename Real>
[[nodiscard]] Tensor<Real> sin(const Tensor<Real>& x) {
  return unary(x, [](Real v) { return std::sin(v); }, [](Real v, Real) { return std::cos(v); });
}

template <typename Real>
[[nodiscard]] Tensor<Real> cos(const Tensor<Real>& x) {
  return unary(x, [](Real v) { return std::cos(v); }, [](Real v, Real) { return -std::sin(v); });
}

template <typename Real>
[[nodiscard]] Tensor<Real> exp(const Tensor<Real>& x) {
  return unary(x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

template <typename Real>
[[nodiscard]] Tensor<Real> log(const Tensor<Real>& x) {
  return unary(x, [](Real v) { return std::log(v); }, [](Real v, Real) { return Real(1) / v; });
}

template <typename Real>
[[nodiscard]] Tensor<Real> sigmoid(const Tensor<Real>& x) {
  return unary(x, [](Real v) { return Real(1) / (Real(1) + std::exp(-v)); },
               [](Real, Real y) { return y * (Real(1) - y); });
}

template <typename Real>
[[nodiscard]] Tensor<Real> scale(const Tensor<Real>& x, Real c) {
  return unary(x, [c](Real v) { return c * v; }, [c](Real, Real) { return c; });
}

template <typename Real>
[[nodiscard]] Tensor<Real> add_scalar(const Tensor<Real>& x, Real c) {
  return unary(x, [c](Real v) { return v + c; }, [](Real, Real) { return Real(1); });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename Real>
[[nodiscard]] Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
  if (numel(shape) != x.numel()) detail::shape_mismatch("reshape", x.shape(), shape);
  if (shape == x.shape()) return x;
  return make_result<Real>(std::move(shape), x.values(), {x}, [](Node<Real>& self) {
    Real* gx = input_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

[[nodiscard]] inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op = "broadcast") {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) detail::shape_mismatch(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

/// Repeats `x` along unit (or missing leading) dimensions to reach `shape`.
template <typename Real>
[[nodiscard]] Tensor<Real> broadcast_to(const Tensor<Real>& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  const Shape& src = x.shape();
  if (src.size() > shape.size()) detail::shape_mismatch("broadcast_to", src, shape);
  const std::size_t lead = shape.size() - src.size();
  std::vector<std::size_t> src_stride(shape.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = shape.size(); i-- > lead;) {
    const std::size_t d = src[i - lead];
    if (d != shape[i] && d != 1) detail::shape_mismatch("broadcast_to", src, shape);
    src_stride[i] = d == 1 ? 0 : stride;
    stride *= d;
  }
  const std::size_t n = numel(shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t s = 0;
    for (std::size_t d = 0; d < shape.size(); ++d) s += idx[d] * src_stride[d];
    map[flat] = s;
    for (std::size_t d = shape.size(); d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<Real> y(n);
  const auto xs = x.data();
  for (std::size_t i = 0; i < n; ++i) y[i] = xs[map[i]];
  return make_result<Real>(shape, std::move(y), {x}, [map = std::move(map)](Node<Real>& self) {
    Real* gx = input_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < map.size(); ++i) gx[map[i]] += self.grad[i];
  });
}

template <typename Real>
[[nodiscard]] Tensor<Real> transpose(const Tensor<Real>& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected a matrix, got " + to_string(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<Real> y(m * n);
  const auto xs = x.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = xs[i * n + j];
  return make_result<Real>(Shape{n, m}, std::move(y), {x}, [m, n](Node<Real>& self) {
    Real* gx = input_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += self.grad[j * m + i];
  });
}

/// Contiguous sub-range [start, start + length) along `axis`.
template <typename Real>
[[nodiscard]] Tensor<Real> slice(const Tensor<Real>& x, int axis_in, std::size_t start, std::size_t length) {
  const std::size_t axis = detail::check_axis("slice", x.shape(), axis_in);
  if (start + length > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") exceeds axis extent of shape " + to_string(x.shape()));
  }
  const auto p = detail::split(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<Real> y(p.outer * length * p.inner);
  const auto xs = x.data();
  for (std::size_t o = 0; o < p.outer; ++o)
    std::copy_n(xs.begin() + (o * p.extent + start) * p.inner, length * p.inner, y.begin() + o * length * p.inner);
  return make_result<Real>(std::move(out_shape), std::move(y), {x}, [p, start, length](Node<Real>& self) {
    Real* gx = input_grad(self, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < p.outer; ++o) {
      Real* dst = gx + (o * p.extent + start) * p.inner;
      const Real* src = self.grad.data() + o * length * p.inner;
      for (std::size_t i = 0; i < length * p.inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename Real>
[[nodiscard]] Tensor<Real> concat(const std::vector<Tensor<Real>>& xs, int axis_in) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const std::size_t axis = detail::check_axis("concat", xs[0].shape(), axis_in);
  Shape out_shape = xs[0].shape();
  std::size_t total = 0;
  for (const auto& t : xs) {
    Shape a = t.shape(), b = xs[0].shape();
    if (a.size() != b.size()) detail::shape_mismatch("concat", b, a);
    a[axis] = b[axis] = 0;
    if (a != b) detail::shape_mismatch("concat", xs[0].shape(), t.shape());
    total += t.dim(axis);
  }
  out_shape[axis] = total;
  const auto p = detail::split(out_shape, axis);
  std::vector<Real> y(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const std::size_t len = t.dim(axis) * p.inner;
    const auto src = t.data();
    for (std::size_t o = 0; o < p.outer; ++o)
      std::copy_n(src.begin() + o * len, len, y.begin() + o * p.extent * p.inner + off * p.inner);
    off += t.dim(axis);
  }
  return make_result<Real>(std::move(out_shape), std::move(y), xs, [p, offsets](Node<Real>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Real* g = input_grad(self, k);
      if (!g) continue;
      const std::size_t ext = self.inputs[k]->value.size() / (p.outer * p.inner);
      const std::size_t len = ext * p.inner;
      for (std::size_t o = 0; o < p.outer; ++o) {
        const Real* src = self.grad.data() + o * p.extent * p.inner + offsets[k] * p.inner;
        Real* dst = g + o * len;
        for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
      }
    }
  });
}

/// Stacks equally shaped tensors along a new leading axis.
template <typename Real>
[[nodiscard]] Tensor<Real> stack(const std::vector<Tensor<Real>>& xs) {
  std::vector<Tensor<Real>> r;
  r.reserve(xs.size());
  for (const auto& t : xs) {
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    r.push_back(reshape(t, std::move(s)));
  }
  return concat(r, 0);
}

// ---------------------------------------------------------------------------
// Binary elementwise

namespace detail {

template <typename Real, typename F, typename GA, typename GB>
Tensor<Real> binary(const char* op, const Tensor<Real>& a_in, const Tensor<Real>& b_in, F f, GA da, GB db) {
  Tensor<Real> a = a_in, b = b_in;
  if (a.shape() != b.shape()) {
    const Shape s = broadcast_shape(a.shape(), b.shape(), op);
    a = broadcast_to(a, s);
    b = broadcast_to(b, s);
  }
  std::vector<Real> y(a.numel());
  const auto as = a.data();
  const auto bs = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(as[i], bs[i]);
  return make_result<Real>(a.shape(), std::move(y), {a, b}, [da, db](Node<Real>& self) {
    Real* ga = input_grad(self, 0);
    Real* gb = input_grad(self, 1);
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    const std::size_t n = self.grad.size();
    if (ga)
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i] * da(av[i], bv[i]);
    if (gb)
      for (std::size_t i = 0; i < n; ++i) gb[i] += self.grad[i] * db(av[i], bv[i]);
  });
}

}  // namespace detail

template <typename Real>
[[nodiscard]] Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  return detail::binary(
      "add", a, b, [](Real x, Real y) { return x + y; }, [](Real, Real) { return Real(1); },
      [](Real, Real) { return Real(1); });
}

template <typename Real>
[[nodiscard]] Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  return detail::binary(
      "sub", a, b, [](Real x, Real y) { return x - y; }, [](Real, Real) { return Real(1); },
      [](Real, Real) { return Real(-1); });
}

template <typename Real>
[[nodiscard]] Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  return detail::binary(
      "mul", a, b, [](Real x, Real y) { return x * y; }, [](Real, Real y) { return y; },
      [](Real x, Real) { return x; });
}

template <typename Real>
[[nodiscard]] Tensor<Real> div(const Tensor<Real>& a, const Tensor<Real>& b) {
  return detail::binary(
      "div", a, b, [](Real x, Real y) { return x / y; }, [](Real, Real y) { return Real(1) / y; },
      [](Real x, Real y) { return -x / (y * y); });
}

template <typename Real>
Tensor<Real> operator+(const Tensor<Real>& a, const Tensor<Real>& b) { return add(a, b); }
template <typename Real>
Tensor<Real> operator-(const Tensor<Real>& a, const Tensor<Real>& b) { return sub(a, b); }
template <typename Real>
Tensor<Real> operator*(const Tensor<Real>& a, const Tensor<Real>& b) { return mul(a, b); }
template <typename Real>
Tensor<Real> operator/(const Tensor<Real>& a, const Tensor<Real>& b) { return div(a, b); }
template <typename Real>
Tensor<Real> operator-(const Tensor<Real>& a) { return neg(a); }
template <typename Real>
Tensor<Real> operator*(Real c, const Tensor<Real>& a) { return scale(a, c); }
template <typename Real>
Tensor<Real> operator*(const Tensor<Real>& a, Real c) { return scale(a, c); }
template <typename Real>
Tensor<Real> operator+(const Tensor<Real>& a, Real c) { return add_scalar(a, c); }
template <typename Real>
Tensor<Real> operator-(const Tensor<Real>& a, Real c) { return add_scalar(a, -c); }
template <typename Real>
Tensor<Real> operator+(Real c, const Tensor<Real>& a) { return add_scalar(a, c); }
template <typename Real>
Tensor<Real> operator-(Real c, const Tensor<Real>& a) { return add_scalar(neg(a), c); }

// ---------------------------------------------------------------------------
// Linear algebra

/// [m, k] x [k, n] -> [m, n].
template <typename Real>
[[nodiscard]] Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) detail::shape_mismatch("matmul", a.shape(), b.shape());
  using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<Real> y(static_cast<std::size_t>(m * n));
  MMap(y.data(), m, n).noalias() = CMap(a.data().data(), m, k) * CMap(b.data().data(), k, n);
  return make_result<Real>(Shape{a.dim(0), b.dim(1)}, std::move(y), {a, b}, [m, k, n](Node<Real>& self) {
    const CMap g(self.grad.data(), m, n);
    if (Real* ga = input_grad(self, 0))
      MMap(ga, m, k).noalias() += g * CMap(self.inputs[1]->value.data(), k, n).transpose();
    if (Real* gb = input_grad(self, 1))
      MMap(gb, k, n).noalias() += CMap(self.inputs[0]->value.data(), m, k).transpose() * g;
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Real>
[[nodiscard]] Tensor<Real> sum(const Tensor<Real>& x) {
  Real s = Real(0);
  for (Real v : x.data()) s += v;
  return make_result<Real>(Shape{1}, {s}, {x}, [](Node<Real>& self) {
    Real* gx = input_grad(self, 0);
    if (!gx) return;
    const Real g = self.grad[0];
    const std::size_t n = self.inputs[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g;
  });
}

/// Sum over one axis, which is removed from the shape unless `keepdim`.
template <typename Real>
[[nodiscard]] Tensor<Real> sum(const Tensor<Real>& x, int axis_in, bool keepdim = false) {
  const std::size_t axis = detail::check_axis("sum", x.shape(), axis_in);
  const auto p = detail::split(x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) out_shape = {1};
  }
  std::vector<Real> y(p.outer * p.inner, Real(0));
  const auto xs = x.data();
  for (std::size_t o = 0; o < p.outer; ++o)
    for (std::size_t e = 0; e < p.extent; ++e) {
      const Real* src = xs.data() + (o * p.extent + e) * p.inner;
      Real* dst = y.data() + o * p.inner;
      for (std::size_t i = 0; i < p.inner; ++i) dst[i] += src[i];
    }
  return make_result<Real>(std::move(out_shape), std::move(y), {x}, [p](Node<Real>& self) {
    Real* gx = input_grad(self, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < p.outer; ++o)
      for (std::size_t e = 0; e < p.extent; ++e) {
        Real* dst = gx + (o * p.extent + e) * p.inner;
        const Real* src = self.grad.data() + o * p.inner;
        for (std::size_t i = 0; i < p.inner; ++i) dst[i] += src[i];
      }
  });
}

template <typename Real>
[[nodiscard]] Tensor<Real> mean(const Tensor<Real>& x) {
  return scale(sum(x), Real(1) / static_cast<Real>(x.numel()));
}

template <typename Real>
[[nodiscard]] Tensor<Real> mean(const Tensor<Real>& x, int axis, bool keepdim = false) {
  const std::size_t a = detail::check_axis("mean", x.shape(), axis);
  return scale(sum(x, axis, keepdim), Real(1) / static_cast<Real>(x.dim(a)));
}

/// Numerically stable softmax along `axis`.
template <typename Real>
[[nodiscard]] Tensor<Real> softmax(const Tensor<Real>& x, int axis_in) {
  const std::size_t axis = detail::check_axis("softmax", x.shape(), axis_in);
  const auto p = detail::split(x.shape(), axis);
  std::vector<Real> y(x.numel());
  const auto xs = x.data();
  for (std::size_t o = 0; o < p.outer; ++o)
    for (std::size_t i = 0; i < p.inner; ++i) {
      const std::size_t base = o * p.extent * p.inner + i;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t e = 0; e < p.extent; ++e) mx = std::max(mx, xs[base + e * p.inner]);
      Real z = Real(0);
      for (std::size_t e = 0; e < p.extent; ++e) {
        const Real v = std::exp(xs[base + e * p.inner] - mx);
        y[base + e * p.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < p.extent; ++e) y[base + e * p.inner] /= z;
    }
  return make_result<Real>(x.shape(), std::move(y), {x}, [p](Node<Real>& self) {
    Real* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& yv = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < p.outer; ++o)
      for (std::size_t i = 0; i < p.inner; ++i) {
        const std::size_t base = o * p.extent * p.inner + i;
        Real dot = Real(0);
        for (std::size_t e = 0; e < p.extent; ++e) dot += g[base + e * p.inner] * yv[base + e * p.inner];
        for (std::size_t e = 0; e < p.extent; ++e) {
          const std::size_t k = base + e * p.inner;
          gx[k] += yv[k] * (g[k] - dot);
        }
      }
  });
}

/// sum_i coeffs[i] * xs[i] over equally shaped tensors (one graph node).
template <typename Real>
[[nodiscard]] Tensor<Real> linear_combination(const std::vector<Tensor<Real>>& xs, const std::vector<Real>& coeffs) {
  if (xs.empty() || xs.size() != coeffs.size()) throw ShapeError("linear_combination: need one coefficient per tensor");
  std::vector<Real> y(xs[0].numel(), Real(0));
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (xs[k].shape() != xs[0].shape()) detail::shape_mismatch("linear_combination", xs[0].shape(), xs[k].shape());
    const auto v = xs[k].data();
    const Real c = coeffs[k];
    if (c == Real(0)) continue;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += c * v[i];
  }
  return make_result<Real>(xs[0].shape(), std::move(y), xs, [coeffs](Node<Real>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Real* g = input_grad(self, k);
      if (!g || coeffs[k] == Real(0)) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += coeffs[k] * self.grad[i];
    }
  });
}

/// Determinant of a [3, 3] matrix; the gradient is the cofactor matrix.
template <typename Real>
[[nodiscard]] Tensor<Real> det3(const Tensor<Real>& m) {
  if (m.shape() != Shape{3, 3}) throw ShapeError("det3: expected [3,3], got " + to_string(m.shape()));
  const auto a = m.data();
  auto cofactors = [](const Real* e) {
    return std::vector<Real>{e[4] * e[8] - e[5] * e[7], e[5] * e[6] - e[3] * e[8], e[3] * e[7] - e[4] * e[6],
                             e[2] * e[7] - e[1] * e[8], e[0] * e[8] - e[2] * e[6], e[1] * e[6] - e[0] * e[7],
                             e[1] * e[5] - e[2] * e[4], e[2] * e[3] - e[0] * e[5], e[0] * e[4] - e[1] * e[3]};
  };
  const auto cof = cofactors(a.data());
  const Real d = a[0] * cof[0] + a[1] * cof[1] + a[2] * cof[2];
  return make_result<Real>(Shape{1}, {d}, {m}, [cofactors](Node<Real>& self) {
    Real* g = input_grad(self, 0);
    if (!g) return;
    const auto c = cofactors(self.inputs[0]->value.data());
    for (std::size_t i = 0; i < 9; ++i) g[i] += self.grad[0] * c[i];
  });
}

}  // namespace crimgs::ad
