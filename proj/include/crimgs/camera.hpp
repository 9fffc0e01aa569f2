#pragma once

// Pinhole cameras. Poses are world-to-camera transforms in the OpenCV frame
// (x right, y down, z forward); pixel (x, y) has its center at (x + 0.5, y + 0.5).

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "crimgs/autodiff/tensor.hpp"
#include "crimgs/liegroup.hpp"

namespace crimgs {

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  std::size_t width = 0;
  std::size_t height = 0;

  /// Square pixels, principal point at the image center.
  [[nodiscard]] static Intrinsics from_fov(std::size_t width, std::size_t height, double fov_x_degrees) {
    Intrinsics k;
    k.width = width;
    k.height = height;
    k.fx = k.fy = 0.5 * static_cast<double>(width) / std::tan(0.5 * fov_x_degrees * std::numbers::pi / 180.0);
    k.cx = 0.5 * static_cast<double>(width);
    k.cy = 0.5 * static_cast<double>(height);
    return k;
  }
};

template <typename Real>
struct CameraPose {
  RigidTransform<Real> world_to_camera;
  Intrinsics intrinsics;

  [[nodiscard]] Vec3<Real> center() const { return world_to_camera.inverse().trans; }
};

/// World-to-camera transform of a camera at `eye` looking at `target`.
template <typename Real>
[[nodiscard]] RigidTransform<Real> look_at(const Vec3<Real>& eye, const Vec3<Real>& target, const Vec3<Real>& up) {
  const Vec3<Real> z = (target - eye).normalized();
  Vec3<Real> x = z.cross(up);
  if (x.norm() < Real(1e-9)) x = z.cross(Vec3<Real>::UnitX());
  x.normalize();
  const Vec3<Real> y = z.cross(x);
  RigidTransform<Real> t;
  t.rot.row(0) = x.transpose();
  t.rot.row(1) = y.transpose();
  t.rot.row(2) = z.transpose();
  t.trans = -(t.rot * eye);
  return t;
}

/// [3, 4] row-major [R | t] tensor of a transform.
template <typename Real, typename Src>
[[nodiscard]] ad::Tensor<Real> to_tensor(const RigidTransform<Src>& t) {
  std::vector<Real> v(12);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) v[r * 4 + c] = static_cast<Real>(t.rot(r, c));
    v[r * 4 + 3] = static_cast<Real>(t.trans(r));
  }
  return ad::Tensor<Real>({3, 4}, std::move(v));
}

/// Reads a [3, 4] tensor back as a transform (rotation block taken verbatim).
template <typename Out, typename Real>
[[nodiscard]] RigidTransform<Out> from_tensor(const ad::Tensor<Real>& m) {
  RigidTransform<Out> t;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) t.rot(r, c) = static_cast<Out>(m[static_cast<std::size_t>(r * 4 + c)]);
    t.trans(r) = static_cast<Out>(m[static_cast<std::size_t>(r * 4 + 3)]);
  }
  return t;
}

}  // namespace crimgs
