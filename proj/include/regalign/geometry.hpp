#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>

#include "regalign/dual.hpp"

namespace regalign {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix26d = Eigen::Matrix<double, 2, 6>;

/// Lie-algebra coordinates of a rigid motion, ordered (omega, nu).
struct Twist {
  Eigen::Vector3d omega = Eigen::Vector3d::Zero();
  Eigen::Vector3d nu = Eigen::Vector3d::Zero();

  Vector6d vector() const;
  static Twist from_vector(const Vector6d& v);
};

/// Rigid transform x' = R x + t. Maps points of the first camera frame into
/// the second camera frame when used as a relative pose.
struct SE3Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  // Number of compositions since the rotation was last re-orthonormalized.
  std::uint32_t chain_length = 0;

  static SE3Pose identity() { return {}; }
  static SE3Pose from_matrix(const Eigen::Matrix4d& m);
  Eigen::Matrix4d matrix() const;
  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const { return rotation * p + translation; }
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  /// Throws DimensionError when the invariants are violated.
  void validate() const;
  /// Intrinsics of the next coarser pyramid level (all parameters halved).
  CameraIntrinsics halved() const;
};

struct PixelCoord {
  double u = 0.0;
  double v = 0.0;
};

struct WarpResult {
  PixelCoord coord;
  double z = 0.0;  // depth of the transformed point in the second camera
  bool valid = false;
};

inline constexpr double kMinDepth = 1e-6;
inline constexpr std::uint32_t kRenormalizeEvery = 100;

SE3Pose se3_exp(const Twist& xi);
/// Throws DegenerateRotation when the rotation angle is numerically pi.
Twist se3_log(const SE3Pose& pose);
std::optional<Twist> try_se3_log(const SE3Pose& pose);

SE3Pose compose(const SE3Pose& a, const SE3Pose& b);
SE3Pose inverse(const SE3Pose& p);
SE3Pose orthonormalized(const SE3Pose& p);

/// Rotation angle in radians, robust near 0 and pi.
double rotation_angle(const Eigen::Matrix3d& r);

WarpResult warp(PixelCoord x, double depth, const SE3Pose& pose, const CameraIntrinsics& k,
                double min_depth = kMinDepth);

/// d(u,v)/d(xi) for the left perturbation exp(xi) * pose. Empty when the
/// warped point is behind the camera or the depth is not positive.
std::optional<Matrix26d> warp_jacobian_pose(PixelCoord x, double depth, const SE3Pose& pose,
                                            const CameraIntrinsics& k);
std::optional<Eigen::Vector2d> warp_jacobian_depth(PixelCoord x, double depth,
                                                   const SE3Pose& pose, const CameraIntrinsics& k);

namespace detail {

// Scalar-generic kernels. T is double, float, or a Dual of either.

template <class T>
struct PoseT {
  std::array<T, 9> r;  // row-major rotation
  std::array<T, 3> t;
};

template <class T>
PoseT<T> to_pose_t(const SE3Pose& p) {
  PoseT<T> out;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) out.r[3 * i + j] = T(p.rotation(i, j));
    out.t[i] = T(p.translation(i));
  }
  return out;
}

template <class T>
SE3Pose from_pose_t(const PoseT<T>& p) {
  SE3Pose out;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) out.rotation(i, j) = double(value_of(p.r[3 * i + j]));
    out.translation(i) = double(value_of(p.t[i]));
  }
  return out;
}

// Coefficients A = sin(th)/th, B = (1-cos th)/th^2, C = (th - sin th)/th^3 as
// functions of th^2, with a series branch near zero.
template <class T>
void exp_coefficients(const T& theta_sq, T& a, T& b, T& c) {
  using S = typename ScalarOf<T>::type;
  using std::cos;
  using std::sin;
  using std::sqrt;
  if (value_of(theta_sq) < S(1e-8)) {
    const T t2 = theta_sq;
    a = S(1) - t2 / S(6) + t2 * t2 / S(120);
    b = S(0.5) - t2 / S(24) + t2 * t2 / S(720);
    c = S(1) / S(6) - t2 / S(120) + t2 * t2 / S(5040);
    return;
  }
  const T th = sqrt(theta_sq);
  const T s = sin(th);
  const T co = cos(th);
  a = s / th;
  b = (S(1) - co) / theta_sq;
  c = (th - s) / (theta_sq * th);
}

template <class T>
PoseT<T> exp_twist(const std::array<T, 6>& xi) {
  using S = typename ScalarOf<T>::type;
  const T& wx = xi[0];
  const T& wy = xi[1];
  const T& wz = xi[2];
  const T theta_sq = wx * wx + wy * wy + wz * wz;
  T a, b, c;
  exp_coefficients(theta_sq, a, b, c);
  // W = [w]x and W^2 = w w^T - |w|^2 I
  const std::array<T, 9> w = {T(S(0)), -wz, wy, wz, T(S(0)), -wx, -wy, wx, T(S(0))};
  const std::array<T, 9> w2 = {wx * wx - theta_sq, wx * wy, wx * wz,
                               wy * wx, wy * wy - theta_sq, wy * wz,
                               wz * wx, wz * wy, wz * wz - theta_sq};
  PoseT<T> out;
  std::array<T, 9> v;
  for (int i = 0; i < 9; ++i) {
    const T id = (i % 4 == 0) ? T(S(1)) : T(S(0));
    out.r[i] = id + a * w[i] + b * w2[i];
    v[i] = id + b * w[i] + c * w2[i];
  }
  for (int i = 0; i < 3; ++i) {
    out.t[i] = v[3 * i] * xi[3] + v[3 * i + 1] * xi[4] + v[3 * i + 2] * xi[5];
  }
  return out;
}

template <class T>
PoseT<T> compose(const PoseT<T>& a, const PoseT<T>& b) {
  PoseT<T> out;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      out.r[3 * i + j] =
          a.r[3 * i] * b.r[j] + a.r[3 * i + 1] * b.r[3 + j] + a.r[3 * i + 2] * b.r[6 + j];
    }
    out.t[i] = a.r[3 * i] * b.t[0] + a.r[3 * i + 1] * b.t[1] + a.r[3 * i + 2] * b.t[2] + a.t[i];
  }
  return out;
}

/// Warped coordinate plus its analytic derivatives: left-twist columns for u
/// and v, and the derivative with respect to the source depth.
template <class T>
struct WarpRecordT {
  T u, v, z;
  std::array<T, 6> du, dv;
  T dud, dvd;
};

template <class T>
WarpRecordT<T> warp_record(const PoseT<T>& pose, const T& depth, double x, double y,
                           const CameraIntrinsics& k) {
  using S = typename ScalarOf<T>::type;
  const S rx = S((x - k.cx) / k.fx);
  const S ry = S((y - k.cy) / k.fy);
  const S fx = S(k.fx), fy = S(k.fy);
  // Ray direction in the second frame: R * K^-1 x
  std::array<T, 3> ray;
  for (int i = 0; i < 3; ++i) ray[i] = pose.r[3 * i] * rx + pose.r[3 * i + 1] * ry + pose.r[3 * i + 2];
  const T px = ray[0] * depth + pose.t[0];
  const T py = ray[1] * depth + pose.t[1];
  const T pz = ray[2] * depth + pose.t[2];
  WarpRecordT<T> out;
  out.z = pz;
  const T iz = S(1) / pz;
  out.u = fx * px * iz + S(k.cx);
  out.v = fy * py * iz + S(k.cy);
  // d(u,v)/dP
  const T dux = fx * iz, duz = -fx * px * iz * iz;
  const T dvy = fy * iz, dvz = -fy * py * iz * iz;
  // dP/domega = -[P]x, dP/dnu = I
  out.du[0] = duz * py;
  out.du[1] = dux * pz - duz * px;
  out.du[2] = -dux * py;
  out.du[3] = dux;
  out.du[4] = T(S(0));
  out.du[5] = duz;
  out.dv[0] = dvy * (-pz) + dvz * py;
  out.dv[1] = -dvz * px;
  out.dv[2] = dvy * px;
  out.dv[3] = T(S(0));
  out.dv[4] = dvy;
  out.dv[5] = dvz;
  out.dud = dux * ray[0] + duz * ray[2];
  out.dvd = dvy * ray[1] + dvz * ray[2];
  return out;
}

}  // namespace detail
}  // namespace regalign
