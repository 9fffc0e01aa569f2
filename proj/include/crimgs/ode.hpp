#pragma once

// Explicit ODE integration of tensor-valued states. Every stage is built from
// differentiable tensor ops, so gradients flow through the solver steps.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "crimgs/autodiff/ops.hpp"
#include "crimgs/errors.hpp"

namespace crimgs::ode {

using ad::Tensor;

enum class Method { euler, rk4, dopri5 };

[[nodiscard]] inline Method parse_method(const std::string& s) {
  if (s == "euler") return Method::euler;
  if (s == "rk4") return Method::rk4;
  if (s == "dopri5") return Method::dopri5;
  throw ConfigError("unknown solver '" + s + "' (expected euler, rk4 or dopri5)");
}

[[nodiscard]] inline const char* to_string(Method m) {
  switch (m) {
    case Method::euler: return "euler";
    case Method::rk4: return "rk4";
    case Method::dopri5: return "dopri5";
  }
  return "?";
}

struct SolverConfig {
  Method method = Method::dopri5;
  double rtol = 1e-3;
  double atol = 1e-6;
  std::size_t max_steps = 1000;
  double initial_step = 0.0;  ///< 0 selects (t_end - t0) / 50
  bool adaptive = true;       ///< dopri5 only; fixed-step otherwise
};

struct SolveStats {
  std::size_t steps = 0;
  std::size_t rejected = 0;
  std::size_t evaluations = 0;
};

template <typename Real>
using OdeFunc = std::function<Tensor<Real>(const Tensor<Real>& z, Real t)>;

namespace detail {

template <typename Real>
Tensor<Real> axpy(const Tensor<Real>& y, Real h, const std::vector<Tensor<Real>>& k, const std::vector<Real>& a) {
  std::vector<Tensor<Real>> xs{y};
  std::vector<Real> cs{Real(1)};
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == Real(0)) continue;
    xs.push_back(k[i]);
    cs.push_back(h * a[i]);
  }
  return ad::linear_combination(xs, cs);
}

// Dormand-Prince 5(4) tableau.
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline const std::vector<std::vector<double>> dp_a = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
inline const std::vector<double> dp_c = {0.0, c2, c3, c4, c5, 1.0, 1.0};
// 5th-order weights equal the last tableau row; error = b5 - b4.
inline const std::vector<double> dp_e = {71.0 / 57600, 0.0, -71.0 / 16695, 71.0 / 1920,
                                         -17253.0 / 339200, 22.0 / 525, -1.0 / 40};
inline const std::vector<double> dp_d = {-12715105075.0 / 11282082432.0, 0.0, 87487479700.0 / 32700410799.0,
                                         -10690763975.0 / 1880347072.0, 701980252875.0 / 199316789632.0,
                                         -1453857185.0 / 822651844.0, 69997945.0 / 29380423.0};

/// Continuous-extension weights w_i(theta) with y(t0 + theta h) = y0 + h sum w_i k_i.
inline std::vector<double> dense_weights(double theta) {
  const double A = theta, B = theta * (1 - theta), C = theta * theta * (1 - theta),
               D = theta * theta * (1 - theta) * (1 - theta);
  std::vector<double> w(7);
  const auto& b = dp_a[6];
  for (std::size_t i = 0; i < 7; ++i) {
    const double bi = i < 6 ? b[i] : 0.0;
    w[i] = A * bi - B * bi + 2 * C * bi + D * dp_d[i];
  }
  w[0] += B - C;
  w[6] += -C;
  return w;
}

template <typename Real>
std::vector<Real> cast(const std::vector<double>& v) {
  return std::vector<Real>(v.begin(), v.end());
}

}  // namespace detail

/// Integrates dz/dt = f(z, t) from ts[0] and returns the state at each entry
/// of `ts` (non-decreasing). The first output is z0 itself.
template <typename Real>
[[nodiscard]] std::vector<Tensor<Real>> odeint(const OdeFunc<Real>& f, const Tensor<Real>& z0,
                                               const std::vector<Real>& ts, const SolverConfig& cfg,
                                               SolveStats* stats = nullptr) {
  if (ts.empty()) throw std::invalid_argument("odeint: no output times");
  for (std::size_t i = 1; i < ts.size(); ++i)
    if (ts[i] < ts[i - 1]) throw std::invalid_argument("odeint: output times must be non-decreasing");
  SolveStats local;
  SolveStats& st = stats ? *stats : local;
  auto eval = [&](const Tensor<Real>& z, Real t) {
    ++st.evaluations;
    Tensor<Real> dz = f(z, t);
    if (dz.shape() != z.shape()) {
      throw ShapeError("ode function returned " + ad::to_string(dz.shape()) + " for state " +
                       ad::to_string(z.shape()));
    }
    return dz;
  };

  std::vector<Tensor<Real>> out;
  out.reserve(ts.size());
  out.push_back(z0);
  const Real t_first = ts.front(), t_last = ts.back();
  if (ts.size() == 1) return out;

  Real h0 = cfg.initial_step > 0 ? static_cast<Real>(cfg.initial_step) : (t_last - t_first) / Real(50);
  if (!(h0 > Real(0))) h0 = Real(1);

  Tensor<Real> z = z0;
  Real t = t_first;
  std::size_t next = 1;
  auto emit_reached = [&]() {
    while (next < ts.size() && ts[next] <= t) {
      out.push_back(z);
      ++next;
    }
  };
  emit_reached();

  const bool adaptive = cfg.method == Method::dopri5 && cfg.adaptive;
  if (!adaptive) {
    // Fixed steps of at most h0, landing exactly on every requested time.
    while (next < ts.size()) {
      const Real target = ts[next];
      while (t < target) {
        if (st.steps >= cfg.max_steps) {
          throw IntegrationError("solver exceeded max_steps=" + std::to_string(cfg.max_steps), static_cast<double>(t));
        }
        const Real h = std::min(h0, target - t);
        Tensor<Real> k1 = eval(z, t);
        switch (cfg.method) {
          case Method::euler:
            z = detail::axpy<Real>(z, h, {k1}, {Real(1)});
            break;
          case Method::rk4: {
            Tensor<Real> k2 = eval(detail::axpy<Real>(z, h / 2, {k1}, {Real(1)}), t + h / 2);
            Tensor<Real> k3 = eval(detail::axpy<Real>(z, h / 2, {k2}, {Real(1)}), t + h / 2);
            Tensor<Real> k4 = eval(detail::axpy<Real>(z, h, {k3}, {Real(1)}), t + h);
            z = detail::axpy<Real>(z, h / 6, {k1, k2, k3, k4}, {Real(1), Real(2), Real(2), Real(1)});
            break;
          }
          case Method::dopri5: {
            std::vector<Tensor<Real>> k{k1};
            for (std::size_t s = 1; s < 7; ++s)
              k.push_back(eval(detail::axpy<Real>(z, h, k, detail::cast<Real>(detail::dp_a[s])),
                               t + h * static_cast<Real>(detail::dp_c[s])));
            z = detail::axpy<Real>(z, h, k, detail::cast<Real>(detail::dp_a[6]));
            break;
          }
        }
        ++st.steps;
        t = (target - t - h <= Real(0)) ? target : t + h;
      }
      emit_reached();
    }
    return out;
  }

  // Adaptive Dormand-Prince with FSAL and dense output at requested times.
  Real h = std::min(h0, t_last - t);
  Tensor<Real> k1 = eval(z, t);
  const auto a_rows = [] {
    std::vector<std::vector<Real>> rows;
    for (const auto& r : detail::dp_a) rows.push_back(detail::cast<Real>(r));
    return rows;
  }();
  while (next < ts.size()) {
    if (st.steps + st.rejected >= cfg.max_steps) {
      throw IntegrationError("solver exceeded max_steps=" + std::to_string(cfg.max_steps), static_cast<double>(t));
    }
    h = std::min(h, t_last - t);
    std::vector<Tensor<Real>> k{k1};
    for (std::size_t s = 1; s < 7; ++s)
      k.push_back(eval(detail::axpy<Real>(z, h, k, a_rows[s]), t + h * static_cast<Real>(detail::dp_c[s])));
    // k[6] is f at the 5th-order solution (FSAL); recompute that solution.
    Tensor<Real> z1 = detail::axpy<Real>(z, h, k, a_rows[6]);

    double err2 = 0.0;
    {
      const auto y0 = z.data(), y1 = z1.data();
      for (std::size_t i = 0; i < y0.size(); ++i) {
        double e = 0.0;
        for (std::size_t s = 0; s < 7; ++s) e += detail::dp_e[s] * static_cast<double>(k[s][i]);
        e *= static_cast<double>(h);
        const double sc = cfg.atol + cfg.rtol * std::max(std::abs(double(y0[i])), std::abs(double(y1[i])));
        err2 += (e / sc) * (e / sc);
      }
      err2 /= static_cast<double>(std::max<std::size_t>(y0.size(), 1));
    }
    const double err = std::sqrt(err2);
    if (!std::isfinite(err)) {
      throw IntegrationError("non-finite state during integration", static_cast<double>(t));
    }
    const double factor = std::clamp(err == 0.0 ? 10.0 : 0.9 * std::pow(err, -0.2), 0.2, 10.0);
    if (err <= 1.0) {
      const Real t1 = (t_last - t - h <= Real(0)) ? t_last : t + h;
      while (next < ts.size() && ts[next] <= t1) {
        if (ts[next] == t1) {
          out.push_back(z1);
        } else {
          const double theta = static_cast<double>((ts[next] - t) / h);
          out.push_back(detail::axpy<Real>(z, h, k, detail::cast<Real>(detail::dense_weights(theta))));
        }
        ++next;
      }
      z = z1;
      t = t1;
      k1 = k[6];
      ++st.steps;
    } else {
      ++st.rejected;
    }
    h = h * static_cast<Real>(factor);
  }
  return out;
}

/// Final-time errors of a fixed-step method on a problem with known solution,
/// for step sizes (t1 - t0) / (base_steps * 2^k), k = 0 .. halvings.
struct ConvergencePoint {
  double step = 0.0;
  double error = 0.0;
};

template <typename Real>
[[nodiscard]] std::vector<ConvergencePoint> convergence_probe(const OdeFunc<Real>& f, const Tensor<Real>& z0,
                                                              Real t0, Real t1, const Tensor<Real>& exact,
                                                              Method method, std::size_t base_steps,
                                                              std::size_t halvings) {
  ad::NoGradGuard guard;
  std::vector<ConvergencePoint> pts;
  for (std::size_t k = 0; k <= halvings; ++k) {
    SolverConfig cfg;
    cfg.method = method;
    cfg.adaptive = false;
    const double n = static_cast<double>(base_steps) * std::pow(2.0, static_cast<double>(k));
    cfg.initial_step = static_cast<double>(t1 - t0) / n;
    cfg.max_steps = static_cast<std::size_t>(n) + 2;
    const auto zs = odeint<Real>(f, z0, {t0, t1}, cfg);
    double e2 = 0.0;
    for (std::size_t i = 0; i < exact.numel(); ++i) {
      const double d = static_cast<double>(zs.back()[i] - exact[i]);
      e2 += d * d;
    }
    pts.push_back({cfg.initial_step, std::sqrt(e2)});
  }
  return pts;
}

/// Least-squares slope of log(error) against log(step).
[[nodiscard]] inline double observed_order(const std::vector<ConvergencePoint>& pts) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(pts.size());
  for (const auto& p : pts) {
    const double x = std::log(p.step), y = std::log(p.error);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace crimgs::ode
