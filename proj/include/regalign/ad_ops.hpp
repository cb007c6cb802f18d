#pragma once

// Tape primitives specific to direct alignment: raster resampling, the
// projective warp with its analytic derivatives, bilinear sampling, Jacobian
// composition, the damped normal-equation solve, and the pose update.

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>

#include "regalign/dual.hpp"
#include "regalign/errors.hpp"
#include "regalign/geometry.hpp"
#include "regalign/image_kernels.hpp"
#include "regalign/tape.hpp"

namespace regalign::ad {

template <class S>
struct MaskedVar {
  Var<S> var;
  Mask valid;
};

template <class S>
Var<S> downsample(Var<S> x, int h, int w) {
  if (h % 2 || w % 2) throw DimensionError("downsample needs even size");
  const int c = static_cast<int>(x.cols());
  Mat<S> y(static_cast<Eigen::Index>(h / 2) * (w / 2), c);
  kernels::gaussian_downsample(x.value().data(), w, h, c, y.data());
  return x.tape->record(std::move(y), {x}, [x, h, w, c](Tape<S>& t, int self) {
    kernels::gaussian_downsample_adjoint(t.grad(self).data(), w, h, c, t.grad_ref(x.id).data());
  });
}

template <class S>
Var<S> upsample(Var<S> x, int h, int w) {
  const int c = static_cast<int>(x.cols());
  Mat<S> y(static_cast<Eigen::Index>(4) * h * w, c);
  kernels::upsample_bilinear(x.value().data(), w, h, c, y.data());
  return x.tape->record(std::move(y), {x}, [x, h, w, c](Tape<S>& t, int self) {
    kernels::upsample_bilinear_adjoint(t.grad(self).data(), w, h, c, t.grad_ref(x.id).data());
  });
}

/// Central-difference gradient maps (du, dv) of an (H*W) x C map.
template <class S>
std::pair<Var<S>, Var<S>> gradient(Var<S> x, int h, int w) {
  const int c = static_cast<int>(x.cols());
  Mat<S> du(x.rows(), c), dv(x.rows(), c);
  kernels::numerical_gradient(x.value().data(), w, h, c, du.data(), dv.data());
  Mat<S> both(x.rows(), 2 * c);
  both << du, dv;
  Var<S> g = x.tape->record(std::move(both), {x}, [x, h, w, c](Tape<S>& t, int self) {
    const Mat<S> gdu = t.grad(self).leftCols(c);
    const Mat<S> gdv = t.grad(self).rightCols(c);
    kernels::numerical_gradient_adjoint(gdu.data(), gdv.data(), w, h, c, t.grad_ref(x.id).data());
  });
  return {cols(g, 0, c), cols(g, c, c)};
}

// Warp record columns.
inline constexpr int kRecU = 0, kRecV = 1, kRecDu = 2, kRecDv = 8, kRecDud = 14, kRecDvd = 15, kRecCols = 16;

/// Per-pixel warp of the full h x w grid: (u, v), the left-twist derivative
/// rows, and the depth derivatives. pose is 1x12 (row-major R, then t);
/// depth is (h*w) x 1. Invalid pixels (non-positive depth, behind camera)
/// produce zero rows.
template <class S>
MaskedVar<S> warp_grid(Var<S> pose, Var<S> depth, int h, int w, const CameraIntrinsics& k) {
  const Eigen::Index m = static_cast<Eigen::Index>(h) * w;
  if (pose.rows() != 1 || pose.cols() != 12) throw DimensionError("warp_grid: pose must be 1x12");
  if (depth.rows() != m || depth.cols() != 1) throw DimensionError("warp_grid: depth must be (h*w)x1");
  regalign::detail::PoseT<S> p;
  for (int i = 0; i < 9; ++i) p.r[i] = pose.value()(0, i);
  for (int i = 0; i < 3; ++i) p.t[i] = pose.value()(0, 9 + i);
  Mat<S> rec = Mat<S>::Zero(m, kRecCols);
  auto valid = std::make_shared<Mask>(static_cast<std::size_t>(m), 0);
  for (Eigen::Index i = 0; i < m; ++i) {
    const S d = depth.value()(i, 0);
    if (!(d > S(kMinDepth))) continue;
    const auto r = regalign::detail::warp_record<S>(p, d, double(i % w), double(i / w), k);
    if (!(r.z > S(kMinDepth))) continue;
    (*valid)[i] = 1;
    S* row = rec.data() + i * kRecCols;
    row[kRecU] = r.u;
    row[kRecV] = r.v;
    for (int j = 0; j < 6; ++j) {
      row[kRecDu + j] = r.du[j];
      row[kRecDv + j] = r.dv[j];
    }
    row[kRecDud] = r.dud;
    row[kRecDvd] = r.dvd;
  }
  Var<S> out = pose.tape->record(std::move(rec), {pose, depth}, [pose, depth, valid, h, w, k](Tape<S>& t, int self) {
    using D = Dual<S, 13>;
    regalign::detail::PoseT<D> pd;
    for (int i = 0; i < 9; ++i) pd.r[i] = D::variable(pose.value()(0, i), i);
    for (int i = 0; i < 3; ++i) pd.t[i] = D::variable(pose.value()(0, 9 + i), 9 + i);
    const Mat<S>& g = t.grad(self);
    std::array<S, 12> gp{};
    Mat<S>* gd = depth.requires_grad() ? &t.grad_ref(depth.id) : nullptr;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(valid->size()); ++i) {
      if (!(*valid)[i]) continue;
      const S* gi = g.data() + i * kRecCols;
      bool any = false;
      for (int o = 0; o < kRecCols; ++o) any = any || gi[o] != S(0);
      if (!any) continue;
      const auto r = regalign::detail::warp_record<D>(pd, D::variable(depth.value()(i, 0), 12), double(i % w),
                                                      double(i / w), k);
      std::array<const D*, kRecCols> outs = {&r.u,    &r.v,    &r.du[0], &r.du[1], &r.du[2], &r.du[3],
                                             &r.du[4], &r.du[5], &r.dv[0], &r.dv[1], &r.dv[2], &r.dv[3],
                                             &r.dv[4], &r.dv[5], &r.dud,   &r.dvd};
      S gdep = S(0);
      for (int o = 0; o < kRecCols; ++o) {
        if (gi[o] == S(0)) continue;
        for (int j = 0; j < 12; ++j) gp[j] += gi[o] * outs[o]->d[j];
        gdep += gi[o] * outs[o]->d[12];
      }
      if (gd) (*gd)(i, 0) += gdep;
    }
    if (pose.requires_grad()) {
      Mat<S>& gpose = t.grad_ref(pose.id);
      for (int j = 0; j < 12; ++j) gpose(0, j) += gp[j];
    }
  });
  return {out, *valid};
}

/// Bilinear sample of an (h*w) x C map at per-row coordinates uv (M x 2).
/// Rows whose input mask is 0 or whose footprint leaves the image are zero.
/// The coordinate gradient is the exact derivative of the interpolant.
template <class S>
MaskedVar<S> sample(Var<S> map, Var<S> uv, int h, int w, const Mask& in_mask) {
  const Eigen::Index m = uv.rows();
  const int c = static_cast<int>(map.cols());
  if (uv.cols() != 2 || static_cast<Eigen::Index>(in_mask.size()) != m) throw DimensionError("sample: uv/mask shape");
  if (map.rows() != static_cast<Eigen::Index>(h) * w) throw DimensionError("sample: map is not h*w rows");
  Mat<S> out = Mat<S>::Zero(m, c);
  auto taps = std::make_shared<std::vector<kernels::BilinearTap>>(static_cast<std::size_t>(m));
  Mask valid(static_cast<std::size_t>(m), 0);
  const S* d = map.value().data();
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!in_mask[i]) continue;
    const auto tap = kernels::bilinear_tap(double(uv.value()(i, 0)), double(uv.value()(i, 1)), w, h);
    if (!tap.valid) continue;
    (*taps)[i] = tap;
    valid[i] = 1;
    const S w00 = S((1 - tap.fy) * (1 - tap.fx)), w01 = S((1 - tap.fy) * tap.fx);
    const S w10 = S(tap.fy * (1 - tap.fx)), w11 = S(tap.fy * tap.fx);
    for (int ch = 0; ch < c; ++ch)
      out(i, ch) = w00 * d[tap.i00 * c + ch] + w01 * d[tap.i01 * c + ch] + w10 * d[tap.i10 * c + ch] +
                   w11 * d[tap.i11 * c + ch];
  }
  Var<S> v = map.tape->record(std::move(out), {map, uv}, [map, uv, taps, c](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    const S* d = map.value().data();
    Mat<S>* gm = map.requires_grad() ? &t.grad_ref(map.id) : nullptr;
    Mat<S>* guv = uv.requires_grad() ? &t.grad_ref(uv.id) : nullptr;
    for (std::size_t i = 0; i < taps->size(); ++i) {
      const auto& tap = (*taps)[i];
      if (!tap.valid) continue;
      const S fx = S(tap.fx), fy = S(tap.fy);
      const S* gi = g.data() + i * c;
      if (gm) {
        S* gd = gm->data();
        const S w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx, w10 = fy * (1 - fx), w11 = fy * fx;
        for (int ch = 0; ch < c; ++ch) {
          gd[tap.i00 * c + ch] += w00 * gi[ch];
          gd[tap.i01 * c + ch] += w01 * gi[ch];
          gd[tap.i10 * c + ch] += w10 * gi[ch];
          gd[tap.i11 * c + ch] += w11 * gi[ch];
        }
      }
      if (guv) {
        S su = 0, sv = 0;
        for (int ch = 0; ch < c; ++ch) {
          const S a = d[tap.i00 * c + ch], b = d[tap.i01 * c + ch], e = d[tap.i10 * c + ch], f = d[tap.i11 * c + ch];
          su += gi[ch] * ((1 - fy) * (b - a) + fy * (f - e));
          sv += gi[ch] * ((1 - fx) * (e - a) + fx * (f - b));
        }
        (*guv)(static_cast<Eigen::Index>(i), 0) += su;
        (*guv)(static_cast<Eigen::Index>(i), 1) += sv;
      }
    }
  });
  return {v, std::move(valid)};
}

/// Pose block dr/dxi = -(gu * du/dxi + gv * dv/dxi), (M*C) x 6.
template <class S>
Var<S> jacobian_pose(Var<S> gu, Var<S> gv, Var<S> rec) {
  const Eigen::Index m = gu.rows();
  const int c = static_cast<int>(gu.cols());
  Mat<S> j(m * c, 6);
  const Mat<S>& a = gu.value();
  const Mat<S>& b = gv.value();
  const Mat<S>& r = rec.value();
  for (Eigen::Index i = 0; i < m; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int k = 0; k < 6; ++k) j(i * c + ch, k) = -(a(i, ch) * r(i, kRecDu + k) + b(i, ch) * r(i, kRecDv + k));
  return gu.tape->record(std::move(j), {gu, gv, rec}, [gu, gv, rec, m, c](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    const Mat<S>& a = gu.value();
    const Mat<S>& b = gv.value();
    const Mat<S>& r = rec.value();
    Mat<S>* ga = gu.requires_grad() ? &t.grad_ref(gu.id) : nullptr;
    Mat<S>* gb = gv.requires_grad() ? &t.grad_ref(gv.id) : nullptr;
    Mat<S>* gr = rec.requires_grad() ? &t.grad_ref(rec.id) : nullptr;
    for (Eigen::Index i = 0; i < m; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (int k = 0; k < 6; ++k) {
          const S gg = g(i * c + ch, k);
          if (ga) (*ga)(i, ch) -= gg * r(i, kRecDu + k);
          if (gb) (*gb)(i, ch) -= gg * r(i, kRecDv + k);
          if (gr) {
            (*gr)(i, kRecDu + k) -= gg * a(i, ch);
            (*gr)(i, kRecDv + k) -= gg * b(i, ch);
          }
        }
  });
}

/// Depth-weight block -(gu * du/dD + gv * dv/dD) * dD/dw, (M*C) x N.
/// ddw is the constant (M x N) derivative of the decoded depth.
template <class S>
Var<S> jacobian_depth(Var<S> gu, Var<S> gv, Var<S> rec, const Mat<S>& ddw) {
  const Eigen::Index m = gu.rows();
  const int c = static_cast<int>(gu.cols());
  const Eigen::Index n = ddw.cols();
  Mat<S> j(m * c, n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const S drdd = -(gu.value()(i, ch) * rec.value()(i, kRecDud) + gv.value()(i, ch) * rec.value()(i, kRecDvd));
      j.row(i * c + ch) = drdd * ddw.row(i);
    }
  auto basis = std::make_shared<Mat<S>>(ddw);
  return gu.tape->record(std::move(j), {gu, gv, rec}, [gu, gv, rec, basis, m, c](Tape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    Mat<S>* ga = gu.requires_grad() ? &t.grad_ref(gu.id) : nullptr;
    Mat<S>* gb = gv.requires_grad() ? &t.grad_ref(gv.id) : nullptr;
    Mat<S>* gr = rec.requires_grad() ? &t.grad_ref(rec.id) : nullptr;
    for (Eigen::Index i = 0; i < m; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const S gd = -g.row(i * c + ch).dot(basis->row(i));
        if (ga) (*ga)(i, ch) += gd * rec.value()(i, kRecDud);
        if (gb) (*gb)(i, ch) += gd * rec.value()(i, kRecDvd);
        if (gr) {
          (*gr)(i, kRecDud) += gd * gu.value()(i, ch);
          (*gr)(i, kRecDvd) += gd * gv.value()(i, ch);
        }
      }
  });
}

/// delta = D (s * (JD)^T (JD) + lambda I)^-1 s * (JD)^T r with D = diag(col_scale).
/// The backward pass re-uses the factorization: for A y = b the adjoint is
/// A gb = gy, gA = -gb y^T.
template <class S>
Var<S> lm_solve(Var<S> jac, Var<S> res, S lambda, S s, const Eigen::Matrix<S, Eigen::Dynamic, 1>& col_scale) {
  const Eigen::Index p = jac.cols();
  if (res.rows() != jac.rows() || res.cols() != 1) throw DimensionError("lm_solve: residual/Jacobian mismatch");
  if (col_scale.size() != p) throw DimensionError("lm_solve: column scale size");
  auto js = std::make_shared<Mat<S>>(jac.value() * col_scale.asDiagonal());
  using MatP = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  MatP a = s * (js->transpose() * (*js));
  a.diagonal().array() += lambda;
  Eigen::Matrix<S, Eigen::Dynamic, 1> b = s * (js->transpose() * res.value().col(0));
  auto llt = std::make_shared<Eigen::LLT<MatP>>(a);
  if (llt->info() != Eigen::Success) throw NumericalFailure("lm_solve: damped normal matrix is not positive definite");
  auto y = std::make_shared<Eigen::Matrix<S, Eigen::Dynamic, 1>>(llt->solve(b));
  if (!y->allFinite()) throw NumericalFailure("lm_solve: non-finite step");
  Mat<S> delta = (col_scale.cwiseProduct(*y));
  auto cs = std::make_shared<Eigen::Matrix<S, Eigen::Dynamic, 1>>(col_scale);
  return jac.tape->record(std::move(delta), {jac, res}, [jac, res, js, llt, y, cs, s](Tape<S>& t, int self) {
    const Eigen::Matrix<S, Eigen::Dynamic, 1> gy = cs->cwiseProduct(t.grad(self).col(0));
    const Eigen::Matrix<S, Eigen::Dynamic, 1> gb = llt->solve(gy);
    if (res.requires_grad()) t.grad_ref(res.id).col(0) += s * ((*js) * gb);
    if (jac.requires_grad()) {
      // d/dJs of b: s r gb^T ; of A: -s Js (gb y^T + y gb^T)
      Mat<S> gjs = s * (res.value().col(0) * gb.transpose());
      gjs.noalias() -= s * ((*js) * (gb * y->transpose() + (*y) * gb.transpose()));
      t.grad_ref(jac.id) += gjs * cs->asDiagonal();
    }
  });
}

/// pose' = exp(-delta[0:6]) * pose, with pose as 1x12 (R row-major, t).
template <class S>
Var<S> pose_update(Var<S> pose, Var<S> delta) {
  if (delta.rows() < 6 || delta.cols() != 1) throw DimensionError("pose_update: delta must be P x 1 with P >= 6");
  auto eval = [](const auto& pose_in, const auto& xi) {
    using T = std::decay_t<decltype(xi[0])>;
    std::array<T, 6> neg;
    for (int i = 0; i < 6; ++i) neg[i] = -xi[i];
    return regalign::detail::compose(regalign::detail::exp_twist(neg), pose_in);
  };
  regalign::detail::PoseT<S> p;
  for (int i = 0; i < 9; ++i) p.r[i] = pose.value()(0, i);
  for (int i = 0; i < 3; ++i) p.t[i] = pose.value()(0, 9 + i);
  std::array<S, 6> xi;
  for (int i = 0; i < 6; ++i) xi[i] = delta.value()(i, 0);
  const auto q = eval(p, xi);
  Mat<S> out(1, 12);
  for (int i = 0; i < 9; ++i) out(0, i) = q.r[i];
  for (int i = 0; i < 3; ++i) out(0, 9 + i) = q.t[i];
  return pose.tape->record(std::move(out), {pose, delta}, [pose, delta, eval](Tape<S>& t, int self) {
    using D = Dual<S, 18>;
    regalign::detail::PoseT<D> pd;
    for (int i = 0; i < 9; ++i) pd.r[i] = D::variable(pose.value()(0, i), i);
    for (int i = 0; i < 3; ++i) pd.t[i] = D::variable(pose.value()(0, 9 + i), 9 + i);
    std::array<D, 6> xd;
    for (int i = 0; i < 6; ++i) xd[i] = D::variable(delta.value()(i, 0), 12 + i);
    const auto q = eval(pd, xd);
    const Mat<S>& g = t.grad(self);
    std::array<S, 18> acc{};
    for (int o = 0; o < 12; ++o) {
      const D& v = o < 9 ? q.r[o] : q.t[o - 9];
      for (int j = 0; j < 18; ++j) acc[j] += g(0, o) * v.d[j];
    }
    if (pose.requires_grad()) {
      Mat<S>& gp = t.grad_ref(pose.id);
      for (int j = 0; j < 12; ++j) gp(0, j) += acc[j];
    }
    if (delta.requires_grad()) {
      Mat<S>& gd = t.grad_ref(delta.id);
      for (int j = 0; j < 6; ++j) gd(j, 0) += acc[12 + j];
    }
  });
}

/// Reverse Huber between a depth column and a constant target over masked
/// rows, threshold c = 0.2 max|e|; mean over supervised rows. The gradient
/// includes the threshold's dependence on the arg-max pixel.
template <class S>
Var<S> berhu(Var<S> d, const Mat<S>& target, const Mask& mask) {
  const Eigen::Index m = d.rows();
  if (target.rows() != m || static_cast<Eigen::Index>(mask.size()) != m) throw DimensionError("berhu: shape");
  Eigen::Index count = 0, arg = -1;
  S emax = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!mask[i]) continue;
    ++count;
    const S e = std::abs(d.value()(i, 0) - target(i, 0));
    if (e > emax) emax = e, arg = i;
  }
  Mat<S> out = Mat<S>::Zero(1, 1);
  const S c = S(0.2) * emax;
  if (count > 0 && c > S(0)) {
    S total = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!mask[i]) continue;
      const S e = std::abs(d.value()(i, 0) - target(i, 0));
      total += e <= c ? e : (e * e + c * c) / (S(2) * c);
    }
    out(0, 0) = total / S(count);
  }
  auto tgt = std::make_shared<Mat<S>>(target);
  auto msk = std::make_shared<Mask>(mask);
  return d.tape->record(std::move(out), {d}, [d, tgt, msk, count, arg, c](Tape<S>& t, int self) {
    if (count == 0 || !(c > S(0))) return;
    const S g = t.grad(self)(0, 0) / S(count);
    Mat<S>& gd = t.grad_ref(d.id);
    S dc = 0;  // d(total)/dc
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(msk->size()); ++i) {
      if (!(*msk)[i]) continue;
      const S diff = d.value()(i, 0) - (*tgt)(i, 0);
      const S e = std::abs(diff);
      const S sgn = diff > 0 ? S(1) : (diff < 0 ? S(-1) : S(0));
      if (e <= c) {
        gd(i, 0) += g * sgn;
      } else {
        gd(i, 0) += g * sgn * e / c;
        dc += (c * c - e * e) / (S(2) * c * c);
      }
    }
    const S diff = d.value()(arg, 0) - (*tgt)(arg, 0);
    gd(arg, 0) += g * dc * S(0.2) * (diff > 0 ? S(1) : S(-1));
  });
}

}  // namespace regalign::ad
