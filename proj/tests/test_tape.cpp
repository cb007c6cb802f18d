#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "regalign/ad_ops.hpp"
#include "regalign/errors.hpp"
#include "test_helpers.hpp"

using namespace regalign;
using namespace regalign::ad;
using regalign::testing::gradient_error;
using regalign::testing::project;
using regalign::testing::random_mat;

namespace {

template <class S>
struct Tol;
template <>
struct Tol<double> {
  static constexpr double step = 1e-6, tol = 1e-4;
};
template <>
struct Tol<float> {
  static constexpr double step = 1e-2, tol = 1e-2;
};

template <class S>
Mat<S> grid_pose(double scale, unsigned seed) {
  Rng rng(seed, 0);
  const SE3Pose p = se3_exp(regalign::testing::random_twist(rng, scale, scale));
  Mat<S> m(1, 12);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m(0, 3 * i + j) = S(p.rotation(i, j));
    m(0, 9 + i) = S(p.translation(i));
  }
  return m;
}

CameraIntrinsics small_camera() {
  CameraIntrinsics k;
  k.fx = k.fy = 12.0;
  k.cx = 3.5;
  k.cy = 2.5;
  k.width = 8;
  k.height = 6;
  return k;
}

}  // namespace

template <class S>
class TapeGrad : public ::testing::Test {};
using Scalars = ::testing::Types<double, float>;
TYPED_TEST_SUITE(TapeGrad, Scalars);

TYPED_TEST(TapeGrad, Elementwise) {
  using S = TypeParam;
  Rng rng(1, 0);
  std::vector<Mat<S>> in{random_mat<S>(rng, 4, 3), random_mat<S>(rng, 4, 3)};
  auto f = [](Tape<S>&, const std::vector<Var<S>>& v) {
    Var<S> a = add(v[0], v[1]);
    Var<S> b = sub(mul(a, v[0]), scale(v[1], S(0.7)));
    return ad::log1p(sum_squares(b));
  };
  EXPECT_LT(gradient_error<S>(in, f, Tol<S>::step), Tol<S>::tol);
}

TYPED_TEST(TapeGrad, ReluAwayFromKink) {
  using S = TypeParam;
  Rng rng(2, 0);
  Mat<S> x = random_mat<S>(rng, 5, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (std::abs(x.data()[i]) < S(0.1)) x.data()[i] = S(0.3);
  auto f = [](Tape<S>&, const std::vector<Var<S>>& v) { return project(relu(v[0])); };
  EXPECT_LT(gradient_error<S>({x}, f, Tol<S>::step * 0.1), Tol<S>::tol);
}

TYPED_TEST(TapeGrad, MatmulReshapeSlices) {
  using S = TypeParam;
  Rng rng(3, 0);
  std::vector<Mat<S>> in{random_mat<S>(rng, 6, 4), random_mat<S>(rng, 4, 3)};
  auto f = [](Tape<S>&, const std::vector<Var<S>>& v) {
    Var<S> m = matmul(v[0], v[1]);
    Var<S> r = reshape(m, 9, 2);
    Var<S> c = hcat<S>({cols(r, 1, 1), cols(r, 0, 1), rows(reshape(v[0], 12, 2), 3, 9)});
    Mask mask{1, 0, 1, 1, 0, 1, 1, 1, 0};
    return project(mask_rows(c, mask));
  };
  EXPECT_LT(gradient_error<S>(in, f, Tol<S>::step), Tol<S>::tol);
}

TYPED_TEST(TapeGrad, Conv2d) {
  using S = TypeParam;
  Rng rng(4, 0);
  for (int k : {1, 3}) {
    std::vector<Mat<S>> in{random_mat<S>(rng, 6 * 5, 3), random_mat<S>(rng, k * k * 3, 4), random_mat<S>(rng, 1, 4)};
    auto f = [k](Tape<S>&, const std::vector<Var<S>>& v) { return project(conv2d(v[0], v[1], v[2], 6, 5, k)); };
    EXPECT_LT(gradient_error<S>(in, f, Tol<S>::step), Tol<S>::tol) << k;
  }
}

TYPED_TEST(TapeGrad, RasterOps) {
  using S = TypeParam;
  Rng rng(5, 0);
  std::vector<Mat<S>> in{random_mat<S>(rng, 8 * 6, 2)};
  auto f = [](Tape<S>&, const std::vector<Var<S>>& v) {
    Var<S> d = downsample(v[0], 6, 8);
    Var<S> u = upsample(d, 3, 4);
    auto [gu, gv] = gradient(u, 6, 8);
    return add(project(gu, 1), add(project(gv, 2), project(u, 3)));
  };
  EXPECT_LT(gradient_error<S>(in, f, Tol<S>::step), Tol<S>::tol);
}

TYPED_TEST(TapeGrad, WarpGrid) {
  using S = TypeParam;
  const auto k = small_camera();
  Rng rng(6, 0);
  std::vector<Mat<S>> in{grid_pose<S>(0.1, 3), random_mat<S>(rng, 48, 1, 2.0, 5.0)};
  auto f = [k](Tape<S>&, const std::vector<Var<S>>& v) {
    auto w = warp_grid(v[0], v[1], 6, 8, k);
    return project(w.var);
  };
  EXPECT_LT(gradient_error<S>(in, f, Tol<S>::step), Tol<S>::tol);
}

TYPED_TEST(TapeGrad, Sample) {
  using S = TypeParam;
  Rng rng(7, 0);
  Mat<S> uv(10, 2);
  for (int i = 0; i < 10; ++i) {
    // keep away from cell boundaries where the interpolant has kinks
    uv(i, 0) = S(int(rng.below(6)) + rng.uniform(0.2, 0.8));
    uv(i, 1) = S(int(rng.below(4)) + rng.uniform(0.2, 0.8));
  }
  std::vector<Mat<S>> in{random_mat<S>(rng, 6 * 8, 3), uv};
  const Mask m{1, 1, 1, 0, 1, 1, 1, 1, 1, 1};
  auto f = [m](Tape<S>&, const std::vector<Var<S>>& v) { return project(sample(v[0], v[1], 6, 8, m).var); };
  EXPECT_LT(gradient_error<S>(in, f, Tol<S>::step * 0.1), Tol<S>::tol);
}

TYPED_TEST(TapeGrad, JacobianBlocks) {
  using S = TypeParam;
  Rng rng(8, 0);
  std::vector<Mat<S>> in{random_mat<S>(rng, 7, 2), random_mat<S>(rng, 7, 2), random_mat<S>(rng, 7, kRecCols)};
  const Mat<S> ddw = random_mat<S>(rng, 7, 3);
  auto f = [ddw](Tape<S>&, const std::vector<Var<S>>& v) {
    return add(project(jacobian_pose(v[0], v[1], v[2]), 1), project(jacobian_depth(v[0], v[1], v[2], ddw), 2));
  };
  EXPECT_LT(gradient_error<S>(in, f, Tol<S>::step), Tol<S>::tol);
}

TYPED_TEST(TapeGrad, LinearSolve) {
  using S = TypeParam;
  Rng rng(9, 0);
  std::vector<Mat<S>> in{random_mat<S>(rng, 12, 4), random_mat<S>(rng, 12, 1)};
  Eigen::Matrix<S, Eigen::Dynamic, 1> scale(4);
  scale << 1, 1, 2, 0.5;
  auto f = [scale](Tape<S>&, const std::vector<Var<S>>& v) {
    return project(lm_solve(v[0], v[1], S(0.3), S(1.0 / 12), scale));
  };
  EXPECT_LT(gradient_error<S>(in, f, Tol<S>::step), Tol<S>::tol);
}

TYPED_TEST(TapeGrad, PoseUpdate) {
  using S = TypeParam;
  Rng rng(10, 0);
  std::vector<Mat<S>> in{grid_pose<S>(0.3, 4), random_mat<S>(rng, 8, 1, -0.2, 0.2)};
  auto f = [](Tape<S>&, const std::vector<Var<S>>& v) { return project(pose_update(v[0], v[1])); };
  EXPECT_LT(gradient_error<S>(in, f, Tol<S>::step), Tol<S>::tol);
}

TYPED_TEST(TapeGrad, Berhu) {
  using S = TypeParam;
  Rng rng(11, 0);
  const Mat<S> target = random_mat<S>(rng, 20, 1, 2, 5);
  Mat<S> d = target;
  for (int i = 0; i < 20; ++i) d(i, 0) += S((i % 2 ? 1 : -1) * (0.05 + 0.1 * i));  // distinct |e|, unique max
  Mask m(20, 1);
  m[3] = 0;
  auto f = [target, m](Tape<S>&, const std::vector<Var<S>>& v) { return berhu(v[0], target, m); };
  EXPECT_LT(gradient_error<S>({d}, f, Tol<S>::step * 0.01), Tol<S>::tol);
}

TEST(Tape, BerhuValues) {
  Tape<double> t;
  Mat<double> target = Mat<double>::Zero(2, 1), d(2, 1);
  // e = (1, 5): c = 1, first linear (1), second quadratic (25+1)/2 = 13
  d << 1, 5;
  const auto b = berhu(t.parameter(d), target, Mask{1, 1});
  EXPECT_DOUBLE_EQ(b.scalar(), (1.0 + 13.0) / 2.0);
  Tape<double> t2;
  d << 0, 0;
  EXPECT_EQ(berhu(t2.parameter(d), target, Mask{1, 1}).scalar(), 0.0);
}

TEST(Tape, LogAttenuationIsExact) {
  // d log(1+L)/dp == dL/dp / (1+L) for every parameter, bit for bit.
  Rng rng(12, 0);
  const Mat<double> x = random_mat<double>(rng, 5, 3);
  Tape<double> a;
  auto pa = a.parameter(x);
  auto la = sum_squares(pa);
  a.backward(la);
  Tape<double> b;
  auto pb = b.parameter(x);
  auto lb = ad::log1p(sum_squares(pb));
  b.backward(lb);
  const double inv = 1.0 / (1.0 + la.scalar());
  for (Eigen::Index i = 0; i < x.size(); ++i) EXPECT_EQ(b.grad(pb.id).data()[i], (2.0 * inv) * x.data()[i]);
}

TEST(Tape, BackwardVisitsEachNodeOnce) {
  Tape<double> t;
  int visits = 0;
  auto p = t.parameter(Mat<double>::Ones(1, 1));
  auto q = t.record(p.value() * 2.0, {p}, [&visits, p](Tape<double>& tp, int self) {
    ++visits;
    tp.grad_ref(p.id) += 2.0 * tp.grad(self);
  });
  auto r = add(q, q);
  t.backward(r);
  EXPECT_EQ(visits, 1);
  EXPECT_EQ(t.grad(p.id)(0, 0), 4.0);
}

TEST(Tape, ConstantsReceiveNoGradient) {
  Tape<double> t;
  auto c = t.constant(Mat<double>::Ones(2, 2));
  auto p = t.parameter(Mat<double>::Ones(2, 2));
  auto s = sum(mul(c, p));
  t.backward(s);
  EXPECT_FALSE(t.has_grad(c.id));
  EXPECT_TRUE(t.has_grad(p.id));
}

TEST(Tape, ShapeErrors) {
  Tape<double> t;
  auto a = t.parameter(Mat<double>::Ones(2, 2));
  auto b = t.parameter(Mat<double>::Ones(3, 2));
  EXPECT_THROW(add(a, b), DimensionError);
  EXPECT_THROW(matmul(a, b), DimensionError);
  EXPECT_THROW(t.backward(a), DimensionError);
}

TEST(Tape, SolveFailureIsReported) {
  Tape<double> t;
  auto j = t.parameter(Mat<double>::Zero(3, 2));
  auto r = t.parameter(Mat<double>::Ones(3, 1));
  Eigen::VectorXd s = Eigen::VectorXd::Ones(2);
  EXPECT_THROW(lm_solve(j, r, -1.0, 1.0, s), NumericalFailure);
}
