#pragma once

#include <cmath>

#include "gradcheck.hpp"
#include "regalign/learn.hpp"
#include "test_helpers.hpp"

namespace regalign::testing {

inline constexpr int kH = 6, kW = 8, kC = 2, kN = 3;

inline CameraIntrinsics tiny_camera() {
  CameraIntrinsics k;
  k.fx = k.fy = 10.0;
  k.cx = 3.5;
  k.cy = 2.5;
  k.width = kW;
  k.height = kH;
  return k;
}

inline FeatureMap tiny_depth() {
  FeatureMap d(kW, kH, 1);
  for (int v = 0; v < kH; ++v)
    for (int u = 0; u < kW; ++u) d.at(u, v) = static_cast<float>(4.0 + 0.3 * std::sin(0.7 * u + 0.4 * v));
  return d;
}

template <class S>
ad::Mat<S> smooth_features(unsigned seed) {
  const FeatureMap m = regalign::testing::smooth_texture(kW, kH, kC, seed);
  ad::Mat<S> out(kH * kW, kC);
  for (int i = 0; i < kH * kW; ++i)
    for (int c = 0; c < kC; ++c) out(i, c) = S(m.data()[static_cast<std::size_t>(i) * kC + c]);
  return out;
}

template <class S>
struct UnrollFixture {
  BasisBuild bb = build_basis(tiny_depth(), kN);
  SE3Pose t_star = se3_exp(Twist{Eigen::Vector3d(0.01, -0.02, 0.015), Eigen::Vector3d(0.05, -0.03, 0.02)});
  SE3Pose init = se3_exp(Twist{Eigen::Vector3d(0.02, -0.01, 0.0), Eigen::Vector3d(0.02, 0.01, -0.03)});
  LearnedJacobianParams jpn = LearnedJacobianParams::random(kC, 4, 21);
  CameraIntrinsics k = tiny_camera();

  // With depth optimized, w stays a constant: the depth-column scale is a
  // preconditioner taken from the initial weights and carries no gradient.
  std::vector<ad::Mat<S>> inputs(bool learned) const {
    std::vector<ad::Mat<S>> in{smooth_features<S>(3), smooth_features<S>(4), pose_row<S>(init)};
    if (learned) {
      in.push_back(cast_tensor<S>(jpn.stem_w));
      in.push_back(cast_tensor<S>(jpn.head_w));
    }
    return in;
  }

  ad::Mat<S> initial_w() const {
    ad::Mat<S> w(kN, 1);
    for (int i = 0; i < kN; ++i) w(i, 0) = S(bb.w_star(i) * (i == 0 ? 1.02 : 0.9) + (i == 0 ? 0.0 : 0.03));
    return w;
  }

  ad::Var<S> loss(ad::Tape<S>& t, const std::vector<ad::Var<S>>& v, bool learned, bool depth) const {
    JacobianNetVars<S> net;
    if (learned) {
      net = bind_jacobian_net<S>(t, jpn, {});
      net.stem_w = v[3];
      net.head_w = v[4];
    }
    UnrolledProblem<S> pb;
    pb.f1 = v[0];
    pb.f2 = v[1];
    pb.height = kH;
    pb.width = kW;
    pb.intrinsics = k;
    pb.basis = &bb.basis;
    pb.optimize_depth = depth;
    pb.jacobian_net = learned ? &net : nullptr;
    pb.lambda = S(0.05);
    const UnrolledState<S> out = unrolled_solve(pb, UnrolledState<S>{v[2], t.constant(initial_w())}, 1);
    const ad::Var<S> d = ad::relu(ad::matmul(t.constant(basis_matrix<S>(bb.basis)), out.w));
    return reprojection_loss(out.pose, d, warp_target<S>(t_star, decode_depth(bb.w_star, bb.basis), k), kH, kW, k);
  }
};

inline double unrolled_error(bool learned, bool depth) {
  UnrollFixture<double> fx;
  auto f = [&](ad::Tape<double>& t, const std::vector<ad::Var<double>>& v) { return fx.loss(t, v, learned, depth); };
  return gradient_error<double>(fx.inputs(learned), f, 1e-6);
}

inline double unrolled_error_float(bool learned, bool depth) {
  UnrollFixture<float> ff;
  UnrollFixture<double> fd;
  auto f32 = [&](ad::Tape<float>& t, const std::vector<ad::Var<float>>& v) { return ff.loss(t, v, learned, depth); };
  auto f64 = [&](ad::Tape<double>& t, const std::vector<ad::Var<double>>& v) { return fd.loss(t, v, learned, depth); };
  return regalign::testing::mixed_gradient_error(fd.inputs(learned), f32, f64, 1e-6);
}

}  // namespace regalign::testing
