#include <gtest/gtest.h>

#include <cmath>

#include "regalign/errors.hpp"
#include "regalign/solver.hpp"
#include "test_helpers.hpp"

using namespace regalign;

namespace {

JacobianMatrix random_jacobian(Rng& rng, int rows, int cols) {
  JacobianMatrix j;
  j.entries.resize(rows, cols);
  for (Eigen::Index i = 0; i < j.entries.size(); ++i) j.entries.data()[i] = rng.normal();
  return j;
}

ResidualVector random_residual(Rng& rng, int rows) {
  ResidualVector r;
  r.values.resize(rows);
  for (int i = 0; i < rows; ++i) r.values[i] = rng.normal();
  r.valid.assign(rows, 1);
  r.valid_count = rows;
  return r;
}

struct Scene {
  CameraIntrinsics k;
  BasisBuild basis;
  FeatureMap f1, f2;
};

// f2 is f1 seen from a camera displaced by `truth` over a fronto-parallel
// plane: f2(warp(x)) = f1(x) is enforced by inverse-warping a procedural
// texture.
Scene plane_scene(const SE3Pose& truth, int channels) {
  Scene s;
  s.k.fx = s.k.fy = 40.0;
  s.k.cx = 15.5;
  s.k.cy = 11.5;
  s.k.width = 32;
  s.k.height = 24;
  s.basis = build_basis(FeatureMap(32, 24, 1, 4.0f), 3);
  auto tex = [](double x, double y, int c) {
    return 0.5 + 0.2 * std::sin(1.5 * x + 0.9 * y + c) + 0.15 * std::cos(1.2 * y - 0.6 * x + 2 * c);
  };
  s.f1 = FeatureMap(32, 24, channels);
  s.f2 = FeatureMap(32, 24, channels);
  const SE3Pose inv = inverse(truth);
  for (int v = 0; v < 24; ++v)
    for (int u = 0; u < 32; ++u) {
      // image 1: point on the plane z = 4
      const double x1 = (u - s.k.cx) / s.k.fx * 4.0, y1 = (v - s.k.cy) / s.k.fy * 4.0;
      // image 2: ray through (u, v) intersected with the plane in frame 1
      const Eigen::Vector3d ray((u - s.k.cx) / s.k.fx, (v - s.k.cy) / s.k.fy, 1.0);
      const Eigen::Vector3d o = inv.translation, dir = inv.rotation * ray;
      const double t = (4.0 - o.z()) / dir.z();
      const Eigen::Vector3d p = o + t * dir;
      for (int c = 0; c < channels; ++c) {
        s.f1.at(u, v, c) = static_cast<float>(tex(x1, y1, c));
        s.f2.at(u, v, c) = static_cast<float>(tex(p.x(), p.y(), c));
      }
    }
  return s;
}

}  // namespace

TEST(Solver, ZeroResidualGivesZeroStep) {
  Rng rng(1, 0);
  const JacobianMatrix j = random_jacobian(rng, 20, 6);
  ResidualVector r = random_residual(rng, 20);
  r.values.setZero();
  EXPECT_EQ(lm_step(j, r, 1e-2).norm(), 0.0);
}

TEST(Solver, ScalarNormalEquation) {
  JacobianMatrix j;
  j.entries = Eigen::MatrixXd::Constant(1, 1, 2.0);
  ResidualVector r;
  r.values = Eigen::VectorXd::Constant(1, 4.0);
  r.valid = {1};
  r.valid_count = 1;
  EXPECT_NEAR(lm_step(j, r, 1e-12)[0], 2.0, 1e-12);
}

TEST(Solver, NormalEquationsHold) {
  Rng rng(2, 0);
  for (int t = 0; t < 50; ++t) {
    const JacobianMatrix j = random_jacobian(rng, 60, 14);
    const ResidualVector r = random_residual(rng, 60);
    const double lambda = std::pow(10.0, rng.uniform(-6, 2));
    const Eigen::VectorXd d = lm_step(j, r, lambda);
    const Eigen::MatrixXd a = j.entries.transpose() * j.entries + lambda * Eigen::MatrixXd::Identity(14, 14);
    const Eigen::VectorXd b = j.entries.transpose() * r.values;
    EXPECT_LE((a * d - b).norm(), 1e-8 * b.norm());
  }
}

TEST(Solver, LargeLambdaAsymptote) {
  Rng rng(3, 0);
  const JacobianMatrix j = random_jacobian(rng, 40, 6);
  const ResidualVector r = random_residual(rng, 40);
  const Eigen::MatrixXd jtj = j.entries.transpose() * j.entries;
  const double lambda = 1e8 * jtj.norm();
  const Eigen::VectorXd d = lm_step(j, r, lambda);
  const Eigen::VectorXd approx = j.entries.transpose() * r.values / lambda;
  EXPECT_LT((d - approx).norm() / d.norm(), 1e-3);
}

TEST(Solver, StepShrinksWithLambda) {
  Rng rng(4, 0);
  const JacobianMatrix j = random_jacobian(rng, 40, 8);
  const ResidualVector r = random_residual(rng, 40);
  double prev = lm_step(j, r, 1e-4).norm();
  for (double l : {1e-3, 1e-2, 1e-1, 1.0, 10.0}) {
    const double n = lm_step(j, r, l).norm();
    EXPECT_LT(n, prev);
    prev = n;
  }
}

TEST(Solver, PermutedRowsGiveSameStep) {
  Rng rng(5, 0);
  const JacobianMatrix j = random_jacobian(rng, 30, 6);
  const ResidualVector r = random_residual(rng, 30);
  JacobianMatrix jp = j;
  ResidualVector rp = r;
  for (int i = 0; i < 30; ++i) {
    jp.entries.row(i) = j.entries.row(29 - i);
    rp.values[i] = r.values[29 - i];
  }
  EXPECT_LT((lm_step(j, r, 0.1) - lm_step(jp, rp, 0.1)).norm(), 1e-12);
}

TEST(Solver, RejectsNonPositiveLambda) {
  Rng rng(6, 0);
  EXPECT_THROW(lm_step(random_jacobian(rng, 5, 2), random_residual(rng, 5), 0.0), DimensionError);
}

TEST(Solver, ZeroUpdateKeepsState) {
  const SE3Pose p = se3_exp(Twist::from_vector(Vector6d::Constant(0.1)));
  WeightVector w = WeightVector::Constant(3, 2.0);
  auto [q, w2] = apply_update(p, w, Eigen::VectorXd::Zero(9));
  EXPECT_LT((q.matrix() - p.matrix()).norm(), 1e-15);
  EXPECT_EQ(w2, w);
}

TEST(Solver, TranslationStepsCommute) {
  Eigen::VectorXd a = Eigen::VectorXd::Zero(6), b = Eigen::VectorXd::Zero(6);
  a[3] = 0.1;
  b[5] = -0.3;
  const WeightVector w = WeightVector::Zero(1);
  const auto ab = apply_update(apply_update(SE3Pose::identity(), w, a).first, w, b).first;
  const auto ba = apply_update(apply_update(SE3Pose::identity(), w, b).first, w, a).first;
  EXPECT_LT((ab.matrix() - ba.matrix()).norm(), 1e-15);
}

TEST(Solver, StepIsADescentDirection) {
  // The sign of the update is pinned by the first-order model
  // cost(x - eps delta) - cost(x) ~ -eps * 2 g^T delta with g = J^T r / M.
  const SE3Pose truth = se3_exp(Twist::from_vector((Vector6d() << 0.01, -0.02, 0.005, 0.05, 0.02, -0.03).finished()));
  const Scene s = plane_scene(truth, 2);
  // Interior pixels only, so the valid set cannot change under the step.
  std::vector<PixelIndex> interior;
  for (int v = 6; v < 18; ++v)
    for (int u = 6; u < 26; ++u) interior.push_back({u, v});
  const auto pb = AlignmentProblem::make(s.f1, s.f2, s.k, s.basis.basis, true, interior);
  const ResidualVector r = compute_residual(pb, SE3Pose::identity(), s.basis.w_star);
  ASSERT_EQ(r.valid_count, int(interior.size()));
  const JacobianMatrix j = assemble_numerical_jacobian(pb, SE3Pose::identity(), s.basis.w_star);
  const Eigen::VectorXd delta = lm_step(j, r, 1e-3 * r.valid_count);
  const double c0 = cost(r);
  const double eps = 1e-3;
  const auto [p1, w1] = apply_update(SE3Pose::identity(), s.basis.w_star, eps * delta);
  const double c1 = cost(compute_residual(pb, p1, w1));
  const double predicted = -2.0 * eps * (j.entries.transpose() * r.values).dot(delta) / r.valid_count;
  EXPECT_LT(c1, c0);
  EXPECT_NEAR((c1 - c0) / predicted, 1.0, 0.1);
}

TEST(Solver, IdenticalImagesConvergeImmediately) {
  const Scene s = plane_scene(SE3Pose::identity(), 1);
  const auto pb = AlignmentProblem::make(s.f1, s.f1, s.k, s.basis.basis, false);
  const SolveReport rep = solve_level(pb, SE3Pose::identity(), s.basis.w_star, NumericalProvider{}, LMConfig{});
  EXPECT_TRUE(rep.converged);
  EXPECT_EQ(rep.termination, "zero_cost");
  EXPECT_EQ(rep.final_cost, 0.0);
  EXPECT_EQ(rep.iterations_used, 0);
}

TEST(Solver, RecoversSmallMotion) {
  const SE3Pose truth =
      se3_exp(Twist::from_vector((Vector6d() << 0.01, -0.015, 0.01, 0.05, 0.03, -0.04).finished()));
  const Scene s = plane_scene(truth, 3);
  const auto pb = AlignmentProblem::make(s.f1, s.f2, s.k, s.basis.basis, false);
  const SolveReport rep = solve_level(pb, SE3Pose::identity(), s.basis.w_star, NumericalProvider{}, LMConfig{});
  // The floor is the bilinear interpolation error of the rendered texture.
  EXPECT_LT(rep.final_cost, 1e-2 * rep.initial_cost);
  // Rotation and translation trade off on a plane; the warp is what is
  // observable.
  double err = 0;
  for (int v = 0; v < 24; ++v)
    for (int u = 0; u < 32; ++u) {
      const auto a = warp({double(u), double(v)}, 4.0, rep.pose, s.k);
      const auto b = warp({double(u), double(v)}, 4.0, truth, s.k);
      err += std::hypot(a.coord.u - b.coord.u, a.coord.v - b.coord.v);
    }
  EXPECT_LT(err / (32 * 24), 0.05);
  // accepted costs never increase
  for (std::size_t i = 1; i < rep.iterations.size(); ++i)
    EXPECT_LE(rep.iterations[i].cost, rep.iterations[i - 1].cost);
}

TEST(Solver, StructureTensorNormalEquationsMatchExplicitJacobian) {
  const SE3Pose truth = se3_exp(Twist::from_vector((Vector6d() << 0.01, 0.0, 0.01, 0.05, 0.0, 0.02).finished()));
  const Scene s = plane_scene(truth, 3);
  const auto pb = AlignmentProblem::make(s.f1, s.f2, s.k, s.basis.basis, true);
  WeightVector w = s.basis.w_star;
  w[1] = 0.1;
  const SE3Pose pose = se3_exp(Twist::from_vector(Vector6d::Constant(0.003)));
  const ResidualVector r = compute_residual(pb, pose, w);
  const NumericalProvider prov;
  const NormalEquations fast = prov.normal_equations(pb, pose, w, r);
  const JacobianMatrix j = prov.jacobian(pb, pose, w);
  const Eigen::MatrixXd jtj = j.entries.transpose() * j.entries;
  const Eigen::VectorXd jtr = j.entries.transpose() * r.values;
  EXPECT_LT((fast.jtj - jtj).norm(), 1e-9 * jtj.norm());
  EXPECT_LT((fast.jtr - jtr).norm(), 1e-9 * jtr.norm());
}

TEST(Solver, AllInvalidInitDiverges) {
  const Scene s = plane_scene(SE3Pose::identity(), 1);
  const auto pb = AlignmentProblem::make(s.f1, s.f2, s.k, s.basis.basis, false);
  SE3Pose far;
  far.translation = Eigen::Vector3d(50, 0, 0);
  EXPECT_THROW(solve_level(pb, far, s.basis.w_star, NumericalProvider{}, LMConfig{}), DivergedState);
}

TEST(Solver, FixedIterationModeRunsExactly) {
  const SE3Pose truth = se3_exp(Twist::from_vector((Vector6d() << 0.01, 0.0, 0.0, 0.02, 0.0, 0.0).finished()));
  const Scene s = plane_scene(truth, 1);
  const auto pb = AlignmentProblem::make(s.f1, s.f2, s.k, s.basis.basis, false);
  LMConfig cfg;
  cfg.max_iterations = 5;
  cfg.fixed_iteration_mode = true;
  const SolveReport rep = solve_level(pb, SE3Pose::identity(), s.basis.w_star, NumericalProvider{}, cfg);
  EXPECT_EQ(rep.iterations_used, 5);
  EXPECT_EQ(rep.iterations.size(), 5u);
}

TEST(Solver, CoarseToFineIntrinsicsScaleConsistently) {
  const auto ks = intrinsics_pyramid(regalign::testing::desk_camera(), 4);
  EXPECT_EQ(ks[0].width, 16);
  EXPECT_DOUBLE_EQ(ks[0].fx, regalign::testing::desk_camera().fx / 8);
  const SE3Pose pose = se3_exp(Twist::from_vector(Vector6d::Constant(0.02)));
  for (int k = 0; k < 3; ++k) {
    const auto coarse = warp({10.0, 7.0}, 4.0, pose, ks[k]);
    const auto fine = warp({20.0, 14.0}, 4.0, pose, ks[k + 1]);
    EXPECT_NEAR(coarse.coord.u, fine.coord.u / 2, 1e-12);
    EXPECT_NEAR(coarse.coord.v, fine.coord.v / 2, 1e-12);
  }
}

TEST(Solver, ReportSerializes) {
  SolveReport rep;
  rep.w = WeightVector::Zero(2);
  rep.iterations.push_back({1, 0.5, 0.01, 0.1, 1.0, true});
  const std::string j = rep.to_json();
  EXPECT_NE(j.find("\"iterations\""), std::string::npos);
  EXPECT_NE(j.find("\"termination\""), std::string::npos);
}
