#pragma once

// Test-only reference computations, written independently of the library's
// closed forms.

#include <Eigen/Core>
#include <cmath>

namespace oracle {

/// Truncated power series of the matrix exponential.
template <int N>
Eigen::Matrix<double, N, N> expm_series(const Eigen::Matrix<double, N, N>& a, int terms = 60) {
  Eigen::Matrix<double, N, N> result = Eigen::Matrix<double, N, N>::Identity();
  Eigen::Matrix<double, N, N> term = Eigen::Matrix<double, N, N>::Identity();
  for (int k = 1; k < terms; ++k) {
    term = term * a / static_cast<double>(k);
    result += term;
  }
  return result;
}

inline Eigen::Matrix3d cross_matrix(const Eigen::Vector3d& w) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  for (int i = 0; i < 3; ++i) {
    Eigen::Vector3d e = Eigen::Vector3d::Zero();
    e(i) = 1.0;
    m.col(i) = w.cross(e);
  }
  return m;
}

/// 4x4 twist [[skew(w), v], [0, 0]].
inline Eigen::Matrix4d twist(const Eigen::Vector3d& w, const Eigen::Vector3d& v) {
  Eigen::Matrix4d s = Eigen::Matrix4d::Zero();
  s.topLeftCorner<3, 3>() = cross_matrix(w);
  s.topRightCorner<3, 1>() = v;
  return s;
}

/// Composite Simpson integral of exp(skew(w) s) over [0, angle].
inline Eigen::Matrix3d integral_exp_so3(const Eigen::Vector3d& w, double angle, int intervals = 2000) {
  const double h = angle / intervals;
  Eigen::Matrix3d acc = Eigen::Matrix3d::Zero();
  for (int i = 0; i <= intervals; ++i) {
    const double weight = (i == 0 || i == intervals) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += weight * expm_series<3>(cross_matrix(w) * (i * h), 40);
  }
  return acc * h / 3.0;
}

}  // namespace oracle
