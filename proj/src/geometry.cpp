#include "regalign/geometry.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <string>

#include "regalign/errors.hpp"

namespace regalign {

Vector6d Twist::vector() const {
  Vector6d v;
  v << omega, nu;
  return v;
}

Twist Twist::from_vector(const Vector6d& v) {
  Twist t;
  t.omega = v.head<3>();
  t.nu = v.tail<3>();
  return t;
}

SE3Pose SE3Pose::from_matrix(const Eigen::Matrix4d& m) {
  SE3Pose p;
  p.rotation = m.topLeftCorner<3, 3>();
  p.translation = m.topRightCorner<3, 1>();
  return p;
}

Eigen::Matrix4d SE3Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0 && fy > 0.0)) throw DimensionError("camera focal lengths must be positive");
  if (width <= 0 || height <= 0) throw DimensionError("camera image size must be positive");
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    throw DimensionError("principal point outside the image");
  }
}

CameraIntrinsics CameraIntrinsics::halved() const {
  CameraIntrinsics k = *this;
  k.fx *= 0.5;
  k.fy *= 0.5;
  k.cx *= 0.5;
  k.cy *= 0.5;
  k.width /= 2;
  k.height /= 2;
  return k;
}

SE3Pose se3_exp(const Twist& xi) {
  std::array<double, 6> v;
  for (int i = 0; i < 3; ++i) {
    v[i] = xi.omega(i);
    v[3 + i] = xi.nu(i);
  }
  return detail::from_pose_t(detail::exp_twist(v));
}

namespace {

Eigen::Matrix3d skew(const Eigen::Vector3d& w) {
  Eigen::Matrix3d m;
  m << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return m;
}

}  // namespace

double rotation_angle(const Eigen::Matrix3d& r) {
  const Eigen::Vector3d s(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double c = 0.5 * (r.trace() - 1.0);
  return std::atan2(0.5 * s.norm(), c);
}

std::optional<Twist> try_se3_log(const SE3Pose& pose) {
  const Eigen::Matrix3d& r = pose.rotation;
  const Eigen::Vector3d s = 0.5 * Eigen::Vector3d(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double sin_th = s.norm();
  const double cos_th = 0.5 * (r.trace() - 1.0);
  const double theta = std::atan2(sin_th, cos_th);

  Eigen::Vector3d omega;
  if (cos_th < 0.0 && sin_th < 1e-3) {
    if (sin_th < 1e-10) return std::nullopt;
    // Near pi the skew part loses precision; recover the axis from the
    // symmetric part a a^T = (sym(R) - cos I) / (1 - cos).
    const Eigen::Matrix3d aat = (0.5 * (r + r.transpose()) - cos_th * Eigen::Matrix3d::Identity()) / (1.0 - cos_th);
    int k = 0;
    aat.diagonal().maxCoeff(&k);
    Eigen::Vector3d axis = aat.col(k) / std::sqrt(std::max(aat(k, k), 1e-300));
    if (axis.dot(s) < 0.0) axis = -axis;
    omega = theta * axis.normalized();
  } else if (theta < 1e-12) {
    omega = s;
  } else {
    omega = (theta / sin_th) * s;
  }

  const Eigen::Matrix3d w = skew(omega);
  double k;
  if (theta < 1e-3) {
    k = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    const double a = std::sin(theta) / theta;
    const double b = (1.0 - std::cos(theta)) / (theta * theta);
    k = (1.0 - a / (2.0 * b)) / (theta * theta);
  }
  const Eigen::Matrix3d v_inv = Eigen::Matrix3d::Identity() - 0.5 * w + k * w * w;
  Twist out;
  out.omega = omega;
  out.nu = v_inv * pose.translation;
  return out;
}

Twist se3_log(const SE3Pose& pose) {
  auto t = try_se3_log(pose);
  if (!t) throw DegenerateRotation("se3_log: rotation angle is pi, axis sign is ambiguous");
  return *t;
}

SE3Pose orthonormalized(const SE3Pose& p) {
  SE3Pose out = p;
  Eigen::Vector3d c0 = p.rotation.col(0).normalized();
  Eigen::Vector3d c1 = p.rotation.col(1);
  c1 = (c1 - c0.dot(c1) * c0).normalized();
  out.rotation.col(0) = c0;
  out.rotation.col(1) = c1;
  out.rotation.col(2) = c0.cross(c1);
  out.chain_length = 0;
  return out;
}

SE3Pose compose(const SE3Pose& a, const SE3Pose& b) {
  SE3Pose out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  out.chain_length = std::max(a.chain_length, b.chain_length) + 1;
  if (out.chain_length >= kRenormalizeEvery) out = orthonormalized(out);
  return out;
}

SE3Pose inverse(const SE3Pose& p) {
  SE3Pose out;
  out.rotation = p.rotation.transpose();
  out.translation = -(out.rotation * p.translation);
  out.chain_length = p.chain_length;
  return out;
}

WarpResult warp(PixelCoord x, double depth, const SE3Pose& pose, const CameraIntrinsics& k,
                double min_depth) {
  WarpResult out;
  if (!(depth > 0.0)) return out;
  const Eigen::Vector3d p(depth * (x.u - k.cx) / k.fx, depth * (x.v - k.cy) / k.fy, depth);
  const Eigen::Vector3d q = pose * p;
  out.z = q.z();
  if (!(q.z() > min_depth)) return out;
  out.coord.u = k.fx * q.x() / q.z() + k.cx;
  out.coord.v = k.fy * q.y() / q.z() + k.cy;
  out.valid = true;
  return out;
}

std::optional<Matrix26d> warp_jacobian_pose(PixelCoord x, double depth, const SE3Pose& pose,
                                            const CameraIntrinsics& k) {
  if (!(depth > 0.0)) return std::nullopt;
  const auto rec = detail::warp_record(detail::to_pose_t<double>(pose), depth, x.u, x.v, k);
  if (!(rec.z > kMinDepth)) return std::nullopt;
  Matrix26d j;
  for (int c = 0; c < 6; ++c) {
    j(0, c) = rec.du[c];
    j(1, c) = rec.dv[c];
  }
  return j;
}

std::optional<Eigen::Vector2d> warp_jacobian_depth(PixelCoord x, double depth,
                                                   const SE3Pose& pose, const CameraIntrinsics& k) {
  if (!(depth > 0.0)) return std::nullopt;
  const auto rec = detail::warp_record(detail::to_pose_t<double>(pose), depth, x.u, x.v, k);
  if (!(rec.z > kMinDepth)) return std::nullopt;
  return Eigen::Vector2d(rec.dud, rec.dvd);
}

}  // namespace regalign
