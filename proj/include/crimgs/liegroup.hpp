#pragma once

// Closed-form SO(3)/SE(3) kinematics for screw motions.
//
// Conventions: a RigidTransform maps points p -> rot * p + trans. A screw
// (axis, angle, trans) with unit axis generates the rigid motion
// exp([S] angle), where [S] = [[skew(axis), trans], [0, 0]]. A zero axis
// denotes a pure translation along `trans`.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>

namespace crimgs {

template <typename Real>
using Vec3 = Eigen::Matrix<Real, 3, 1>;
template <typename Real>
using Mat3 = Eigen::Matrix<Real, 3, 3>;
template <typename Real>
using Mat4 = Eigen::Matrix<Real, 4, 4>;

/// Axis norms below this are treated as the pure-translation screw.
inline constexpr double kAxisEpsilon = 1e-8;

template <typename Real>
struct ScrewAxis {
  Vec3<Real> axis = Vec3<Real>::Zero();   ///< unit rotation axis, or zero
  Real angle = Real(0);                   ///< radians (distance for pure translation)
  Vec3<Real> trans = Vec3<Real>::Zero();  ///< linear part v of the twist
};

template <typename Real>
struct RigidTransform {
  Mat3<Real> rot = Mat3<Real>::Identity();
  Vec3<Real> trans = Vec3<Real>::Zero();

  [[nodiscard]] static RigidTransform identity() { return {}; }

  [[nodiscard]] Mat4<Real> matrix() const {
    Mat4<Real> m = Mat4<Real>::Identity();
    m.template topLeftCorner<3, 3>() = rot;
    m.template topRightCorner<3, 1>() = trans;
    return m;
  }

  [[nodiscard]] static RigidTransform from_matrix(const Mat4<Real>& m) {
    return {m.template topLeftCorner<3, 3>(), m.template topRightCorner<3, 1>()};
  }

  [[nodiscard]] RigidTransform inverse() const {
    Mat3<Real> rt = rot.transpose();
    return {rt, -(rt * trans)};
  }

  [[nodiscard]] Vec3<Real> apply(const Vec3<Real>& p) const { return rot * p + trans; }

  template <typename Other>
  [[nodiscard]] RigidTransform<Other> cast() const {
    return {rot.template cast<Other>(), trans.template cast<Other>()};
  }
};

/// Cross-product matrix: skew(v) * u == v.cross(u).
template <typename Real>
[[nodiscard]] Mat3<Real> skew(const Vec3<Real>& v) {
  Mat3<Real> s;
  // clang-format off
  s << Real(0), -v.z(),   v.y(),
       v.z(),   Real(0), -v.x(),
      -v.y(),   v.x(),   Real(0);
  // clang-format on
  return s;
}

template <typename Real>
[[nodiscard]] Vec3<Real> vee(const Mat3<Real>& s) {
  return {s(2, 1), s(0, 2), s(1, 0)};
}

/// Rodrigues: I + sin(a) [w] + (1 - cos(a)) [w]^2. A zero axis yields I.
template <typename Real>
[[nodiscard]] Mat3<Real> exp_so3(const Vec3<Real>& axis, Real angle) {
  const Mat3<Real> k = skew(axis);
  return Mat3<Real>::Identity() + std::sin(angle) * k + (Real(1) - std::cos(angle)) * (k * k);
}

/// Translation factor of the SE(3) exponential:
/// I a + (1 - cos a) [w] + (a - sin a) [w]^2, i.e. the integral of exp([w] s) ds over [0, a].
template <typename Real>
[[nodiscard]] Mat3<Real> g_theta(const Vec3<Real>& axis, Real angle) {
  const Mat3<Real> k = skew(axis);
  return Mat3<Real>::Identity() * angle + (Real(1) - std::cos(angle)) * k +
         (angle - std::sin(angle)) * (k * k);
}

template <typename Real>
[[nodiscard]] RigidTransform<Real> exp_se3(const ScrewAxis<Real>& s) {
  return {exp_so3(s.axis, s.angle), g_theta(s.axis, s.angle) * s.trans};
}

/// Homogeneous product a * b (apply b first).
template <typename Real>
[[nodiscard]] RigidTransform<Real> compose(const RigidTransform<Real>& a,
                                           const RigidTransform<Real>& b) {
  return {a.rot * b.rot, a.rot * b.trans + a.trans};
}

template <typename Real>
[[nodiscard]] RigidTransform<Real> operator*(const RigidTransform<Real>& a,
                                             const RigidTransform<Real>& b) {
  return compose(a, b);
}

/// Frobenius norm of R R^T - I.
template <typename Real>
[[nodiscard]] Real orthogonality_residual(const Mat3<Real>& r) {
  return (r * r.transpose() - Mat3<Real>::Identity()).norm();
}

/// True if `r` is a rotation within `tol` (orthogonality and unit determinant).
template <typename Real>
[[nodiscard]] bool is_rotation(const Mat3<Real>& r, Real tol) {
  return r.allFinite() && orthogonality_residual(r) <= tol && std::abs(r.determinant() - Real(1)) <= tol;
}

/// Inverse of exp_so3. Returns (unit axis, angle in [0, pi]). The identity maps
/// to axis (1, 0, 0) with angle 0. Throws std::domain_error for inputs that
/// are not rotations within 1e-6.
template <typename Real>
[[nodiscard]] std::pair<Vec3<Real>, Real> log_so3(const Mat3<Real>& r) {
  if (!is_rotation(r, Real(1e-6))) {
    throw std::domain_error("log_so3: input is not a rotation matrix (residual > 1e-6)");
  }
  const Vec3<Real> w = vee(Mat3<Real>((r - r.transpose()) / Real(2)));
  const Real sin_a = w.norm();
  const Real cos_a = std::clamp((r.trace() - Real(1)) / Real(2), Real(-1), Real(1));
  const Real angle = std::atan2(sin_a, cos_a);

  if (angle < Real(1e-12)) {
    return {Vec3<Real>::UnitX(), Real(0)};
  }
  if (std::numbers::pi_v<Real> - angle > Real(1e-2)) {
    return {w / sin_a, angle};
  }
  // Near pi the antisymmetric part vanishes; recover the axis from the
  // symmetric part (1 - cos a) w w^T using the dominant diagonal column.
  const Mat3<Real> b = (r + r.transpose()) / Real(2) - cos_a * Mat3<Real>::Identity();
  Eigen::Index k = 0;
  for (Eigen::Index i = 1; i < 3; ++i) {
    if (b(i, i) > b(k, k)) k = i;
  }
  Vec3<Real> axis = b.col(k) / std::sqrt(b(k, k) * (Real(1) - cos_a));
  axis.normalize();
  if (axis.dot(w) < Real(0)) axis = -axis;
  return {axis, angle};
}

/// Geodesic angle between two rotations.
template <typename Real>
[[nodiscard]] Real rotation_distance(const Mat3<Real>& a, const Mat3<Real>& b) {
  const Mat3<Real> rel = a.transpose() * b;
  const Real sin_a = vee(Mat3<Real>((rel - rel.transpose()) / Real(2))).norm();
  const Real cos_a = std::clamp((rel.trace() - Real(1)) / Real(2), Real(-1), Real(1));
  return std::atan2(sin_a, cos_a);
}

/// Normalises a raw decoded direction; axes shorter than kAxisEpsilon become
/// zero (pure translation).
template <typename Real>
[[nodiscard]] Vec3<Real> normalized_axis(const Vec3<Real>& raw) {
  const Real n = raw.norm();
  if (!(n >= Real(kAxisEpsilon))) return Vec3<Real>::Zero();
  return raw / n;
}

/// Screw (axis, angle, v) reproducing the motion "rotate by `angle` about
/// `axis` through `pivot`, then translate by `offset`".
template <typename Real>
[[nodiscard]] ScrewAxis<Real> screw_about_point(const Vec3<Real>& axis, Real angle,
                                                const Vec3<Real>& pivot, const Vec3<Real>& offset) {
  ScrewAxis<Real> s;
  s.axis = normalized_axis(axis);
  s.angle = angle;
  const Mat3<Real> rot = exp_so3(s.axis, angle);
  const Vec3<Real> target = pivot - rot * pivot + offset;
  if (s.axis.isZero() || std::abs(angle) < Real(1e-12)) {
    // pure translation (or no motion): v is the direction scaled by 1/angle
    if (std::abs(angle) < Real(1e-12)) return ScrewAxis<Real>{Vec3<Real>::Zero(), Real(0), Vec3<Real>::Zero()};
    s.axis.setZero();
    s.trans = target / angle;
    return s;
  }
  s.trans = g_theta(s.axis, angle).partialPivLu().solve(target);
  return s;
}

/// Pose on the straight path between two rigid transforms: geodesic in
/// rotation, linear in translation.
template <typename Real>
[[nodiscard]] RigidTransform<Real> interpolate(const RigidTransform<Real>& a,
                                               const RigidTransform<Real>& b, Real s) {
  const Mat3<Real> rel = a.rot.transpose() * b.rot;
  auto [axis, angle] = log_so3(rel);
  return {a.rot * exp_so3(axis, s * angle), (Real(1) - s) * a.trans + s * b.trans};
}

}  // namespace crimgs
