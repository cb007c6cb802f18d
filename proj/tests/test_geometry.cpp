#include <gtest/gtest.h>

#include <Eigen/LU>

#include <cmath>
#include <numbers>

#include "regalign/errors.hpp"
#include "regalign/geometry.hpp"
#include "test_helpers.hpp"

using namespace regalign;
using regalign::testing::desk_camera;
using regalign::testing::random_twist;

namespace {

double pose_distance(const SE3Pose& a, const SE3Pose& b) {
  return std::max((a.rotation - b.rotation).cwiseAbs().maxCoeff(),
                  (a.translation - b.translation).cwiseAbs().maxCoeff());
}

}  // namespace

TEST(Geometry, ExpOfZeroIsIdentity) {
  const SE3Pose p = se3_exp(Twist{});
  EXPECT_EQ(p.rotation, Eigen::Matrix3d::Identity());
  EXPECT_EQ(p.translation, Eigen::Vector3d::Zero());
}

TEST(Geometry, QuarterTurnAboutZ) {
  Twist t;
  t.omega = Eigen::Vector3d(0, 0, std::numbers::pi / 2);
  const SE3Pose p = se3_exp(t);
  Eigen::Matrix3d expected;
  expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  EXPECT_LT((p.rotation - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Geometry, PureTranslationExp) {
  Twist t;
  t.nu = Eigen::Vector3d(1, 2, 3);
  const SE3Pose p = se3_exp(t);
  EXPECT_LT((p.translation - Eigen::Vector3d(1, 2, 3)).norm(), 1e-15);
}

TEST(Geometry, LogExpRoundTrip) {
  Rng rng(7, 0);
  for (int i = 0; i < 2000; ++i) {
    const Twist t = random_twist(rng, 3.0, 2.0);
    const Twist back = se3_log(se3_exp(t));
    EXPECT_LT((back.vector() - t.vector()).cwiseAbs().maxCoeff(), 1e-9) << i;
  }
}

TEST(Geometry, RoundTripTinyAngles) {
  for (double a : {0.0, 1e-14, 1e-10, 1e-8, 5e-5, 1e-4, 2e-4, 1e-3}) {
    Twist t;
    t.omega = Eigen::Vector3d(a, -0.5 * a, 0.25 * a);
    t.nu = Eigen::Vector3d(0.3, -0.2, 0.1);
    const Twist back = se3_log(se3_exp(t));
    EXPECT_LT((back.vector() - t.vector()).norm(), 1e-11) << a;
  }
}

TEST(Geometry, RoundTripNearPi) {
  Twist t;
  t.omega = Eigen::Vector3d(1, 2, -2).normalized() * (std::numbers::pi - 1e-6);
  t.nu = Eigen::Vector3d(0.1, 0.2, 0.3);
  const Twist back = se3_log(se3_exp(t));
  EXPECT_LT((back.vector() - t.vector()).norm(), 1e-6);
}

TEST(Geometry, LogAtPiIsDegenerate) {
  SE3Pose p;
  p.rotation = Eigen::Vector3d(-1, 1, -1).asDiagonal();
  EXPECT_THROW(se3_log(p), DegenerateRotation);
  EXPECT_FALSE(try_se3_log(p).has_value());
}

TEST(Geometry, GroupLaws) {
  Rng rng(11, 0);
  for (int i = 0; i < 500; ++i) {
    const SE3Pose a = se3_exp(random_twist(rng, 3.0, 2.0));
    const SE3Pose b = se3_exp(random_twist(rng, 3.0, 2.0));
    const SE3Pose c = se3_exp(random_twist(rng, 3.0, 2.0));
    EXPECT_LT(pose_distance(compose(compose(a, b), c), compose(a, compose(b, c))), 1e-12);
    EXPECT_LT(pose_distance(compose(a, inverse(a)), SE3Pose::identity()), 1e-12);
    EXPECT_LT(pose_distance(compose(SE3Pose::identity(), a), a), 1e-15);
  }
}

TEST(Geometry, RotationStaysOrthonormalOverLongChains) {
  Rng rng(3, 0);
  SE3Pose p;
  for (int i = 0; i < 1000; ++i) p = compose(se3_exp(random_twist(rng, 0.3, 0.1)), p);
  EXPECT_LT((p.rotation * p.rotation.transpose() - Eigen::Matrix3d::Identity()).norm(), 1e-12);
  EXPECT_NEAR(p.rotation.determinant(), 1.0, 1e-12);
}

TEST(Geometry, WarpIdentityIsIdentity) {
  const auto k = desk_camera();
  const WarpResult r = warp({10.0, 20.0}, 3.0, SE3Pose::identity(), k);
  ASSERT_TRUE(r.valid);
  EXPECT_NEAR(r.coord.u, 10.0, 1e-12);
  EXPECT_NEAR(r.coord.v, 20.0, 1e-12);
}

TEST(Geometry, WarpTranslationShift) {
  // Translating the camera frame by t_x = d/fx moves every pixel of a
  // fronto-parallel plane at depth d by exactly one pixel.
  const auto k = desk_camera();
  SE3Pose p;
  p.translation = Eigen::Vector3d(4.0 / k.fx, 0, 0);
  const WarpResult r = warp({30.0, 40.0}, 4.0, p, k);
  ASSERT_TRUE(r.valid);
  EXPECT_NEAR(r.coord.u, 31.0, 1e-12);
  EXPECT_NEAR(r.coord.v, 40.0, 1e-12);
}

TEST(Geometry, WarpBehindCameraIsInvalid) {
  const auto k = desk_camera();
  SE3Pose p;
  p.translation = Eigen::Vector3d(0, 0, -5.0);
  EXPECT_FALSE(warp({30.0, 40.0}, 4.0, p, k).valid);
  EXPECT_FALSE(warp({30.0, 40.0}, 0.0, SE3Pose::identity(), k).valid);
  EXPECT_FALSE(warp_jacobian_pose({30.0, 40.0}, 4.0, p, k).has_value());
}

TEST(Geometry, WarpJacobiansMatchFiniteDifferences) {
  const auto k = desk_camera();
  Rng rng(5, 0);
  int checked = 0;
  for (int i = 0; i < 300; ++i) {
    const SE3Pose pose = se3_exp(random_twist(rng, 0.3, 0.3));
    const PixelCoord x{rng.uniform(0, 127), rng.uniform(0, 95)};
    const double d = rng.uniform(2.0, 6.0);
    const auto jp = warp_jacobian_pose(x, d, pose, k);
    const auto jd = warp_jacobian_depth(x, d, pose, k);
    if (!jp) continue;
    ++checked;
    const double h = 1e-6;
    for (int c = 0; c < 6; ++c) {
      Vector6d e = Vector6d::Zero();
      e[c] = h;
      const auto up = warp(x, d, compose(se3_exp(Twist::from_vector(e)), pose), k);
      const auto dn = warp(x, d, compose(se3_exp(Twist::from_vector(-e)), pose), k);
      const Eigen::Vector2d fd((up.coord.u - dn.coord.u) / (2 * h), (up.coord.v - dn.coord.v) / (2 * h));
      EXPECT_LT((fd - jp->col(c)).norm(), 1e-4 * std::max(1.0, jp->col(c).norm()));
    }
    const auto up = warp(x, d + h, pose, k);
    const auto dn = warp(x, d - h, pose, k);
    const Eigen::Vector2d fd((up.coord.u - dn.coord.u) / (2 * h), (up.coord.v - dn.coord.v) / (2 * h));
    EXPECT_LT((fd - *jd).norm(), 1e-4 * std::max(1.0, jd->norm()));
  }
  EXPECT_GT(checked, 250);
}

TEST(Geometry, HalvedIntrinsicsScaleWarps) {
  const auto k = desk_camera();
  Rng rng(9, 0);
  const SE3Pose pose = se3_exp(random_twist(rng, 0.1, 0.2));
  const auto fine = warp({40.0, 30.0}, 4.0, pose, k);
  const auto coarse = warp({20.0, 15.0}, 4.0, pose, k.halved());
  EXPECT_NEAR(coarse.coord.u, fine.coord.u / 2, 1e-12);
  EXPECT_NEAR(coarse.coord.v, fine.coord.v / 2, 1e-12);
}

TEST(Geometry, IntrinsicsValidation) {
  CameraIntrinsics k = desk_camera();
  EXPECT_NO_THROW(k.validate());
  k.fx = -1;
  EXPECT_THROW(k.validate(), DimensionError);
}
