#include "regalign/jacobian_provider.hpp"

#include <algorithm>
#include <cmath>

#include "regalign/errors.hpp"

namespace regalign {

NormalEquations JacobianProvider::normal_equations(const AlignmentProblem& problem, const SE3Pose& pose,
                                                   const WeightVector& w, const ResidualVector& r) const {
  const JacobianMatrix j = jacobian(problem, pose, w);
  if (j.rows() != r.values.size()) throw DimensionError("Jacobian rows do not match the residual");
  NormalEquations ne;
  ne.jtj = Eigen::MatrixXd::Zero(j.cols(), j.cols());
  ne.jtj.selfadjointView<Eigen::Lower>().rankUpdate(j.entries.transpose());
  ne.jtj = ne.jtj.selfadjointView<Eigen::Lower>();
  ne.jtr = j.entries.transpose() * r.values;
  return ne;
}

JacobianMatrix NumericalProvider::jacobian(const AlignmentProblem& problem, const SE3Pose& pose,
                                           const WeightVector& w) const {
  return assemble_numerical_jacobian(problem, pose, w);
}

NormalEquations NumericalProvider::normal_equations(const AlignmentProblem& pb, const SE3Pose& pose,
                                                    const WeightVector& w, const ResidualVector& r) const {
  if (w.size() != pb.basis.n_basis()) throw DimensionError("weight vector does not match the basis");
  if (r.pixel_count() != pb.pixel_count()) throw DimensionError("residual does not match the problem");
  const int c = pb.channels();
  const int n = pb.basis.n_basis();
  const int p = pb.parameter_count();
  const auto pt = detail::to_pose_t<double>(pose);
  // Each pixel contributes A^T G A with G the 2 x 2 channel-summed structure
  // tensor. Factor G = L L^T and stack the rows of L^T A so J^T J is one product.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> q(2 * pb.pixel_count(), p);
  Eigen::VectorXd jtr = Eigen::VectorXd::Zero(p);
  Eigen::Matrix<double, 2, Eigen::Dynamic> a(2, p);
  std::vector<double> gu(c), gv(c);
  Eigen::Index rows = 0;
  for (std::size_t i = 0; i < pb.pixel_count(); ++i) {
    if (!r.valid[i]) continue;
    const auto& px = pb.pixels[i];
    const std::size_t idx = static_cast<std::size_t>(px.v) * pb.f1.width() + px.u;
    const double pre = depth_preactivation(w, pb.basis, idx);
    const double d = pre > 0.0 ? pre : 0.0;
    if (!(d > kMinValidDepth)) continue;
    const auto rec = detail::warp_record(pt, d, double(px.u), double(px.v), pb.intrinsics);
    if (!bilinear_sample_into(pb.grad_u, rec.u, rec.v, gu.data())) continue;
    bilinear_sample_into(pb.grad_v, rec.u, rec.v, gv.data());
    double g00 = 0, g01 = 0, g11 = 0, h0 = 0, h1 = 0;
    const double* res = r.values.data() + i * c;
    for (int ch = 0; ch < c; ++ch) {
      g00 += double(gu[ch]) * gu[ch];
      g01 += double(gu[ch]) * gv[ch];
      g11 += double(gv[ch]) * gv[ch];
      h0 += double(gu[ch]) * res[ch];
      h1 += double(gv[ch]) * res[ch];
    }
    for (int k = 0; k < 6; ++k) {
      a(0, k) = rec.du[k];
      a(1, k) = rec.dv[k];
    }
    if (pb.optimize_depth) {
      const float* b = pb.basis.maps.pixel(px.u, px.v);
      for (int k = 0; k < n; ++k) {
        const double bk = pre > 0.0 ? double(b[k]) : 0.0;
        a(0, 6 + k) = rec.dud * bk;
        a(1, 6 + k) = rec.dvd * bk;
      }
    }
    jtr.noalias() -= h0 * a.row(0).transpose() + h1 * a.row(1).transpose();
    if (g00 > 0.0) {
      const double l00 = std::sqrt(g00);
      const double l10 = g01 / l00;
      const double l11 = std::sqrt(std::max(0.0, g11 - l10 * l10));
      q.row(rows++) = l00 * a.row(0) + l10 * a.row(1);
      q.row(rows++) = l11 * a.row(1);
    } else if (g11 > 0.0) {
      q.row(rows++) = std::sqrt(g11) * a.row(1);
    }
  }
  Eigen::MatrixXd jtj = Eigen::MatrixXd::Zero(p, p);
  if (rows > 0) {
    const auto qs = q.topRows(rows);
    jtj.selfadjointView<Eigen::Lower>().rankUpdate(qs.transpose());
    jtj.triangularView<Eigen::StrictlyUpper>() = jtj.transpose();
  }
  return {jtj, jtr};
}

void LearnedJacobianParams::validate() const {
  const int cin = input_channels();
  auto check = [](const Tensor& t, Eigen::Index r, Eigen::Index c, const char* what) {
    if (t.rows() != r || t.cols() != c) throw DimensionError(std::string("learned Jacobian tensor ") + what + " shape");
    if (!t.allFinite()) throw DimensionError(std::string("learned Jacobian tensor ") + what + " is not finite");
  };
  if (feature_channels < 1 || hidden < 1) throw DimensionError("learned Jacobian channel counts must be positive");
  check(stem_w, cin, hidden, "stem.w");
  check(stem_b, 1, hidden, "stem.b");
  for (int i = 0; i < kBlocks; ++i) {
    check(conv1_w[i], 9 * hidden, hidden, "conv1.w");
    check(conv1_b[i], 1, hidden, "conv1.b");
    check(conv2_w[i], 9 * hidden, hidden, "conv2.w");
    check(conv2_b[i], 1, hidden, "conv2.b");
  }
  check(head_w, hidden, 6 * feature_channels, "head.w");
  check(head_b, 1, 6 * feature_channels, "head.b");
}

NamedTensors LearnedJacobianParams::named() {
  NamedTensors out{{"jpn.stem.w", &stem_w}, {"jpn.stem.b", &stem_b}};
  for (int i = 0; i < kBlocks; ++i) {
    const std::string s = "jpn.block" + std::to_string(i);
    out.emplace_back(s + ".conv1.w", &conv1_w[i]);
    out.emplace_back(s + ".conv1.b", &conv1_b[i]);
    out.emplace_back(s + ".conv2.w", &conv2_w[i]);
    out.emplace_back(s + ".conv2.b", &conv2_b[i]);
  }
  out.emplace_back("jpn.head.w", &head_w);
  out.emplace_back("jpn.head.b", &head_b);
  return out;
}

LearnedJacobianParams LearnedJacobianParams::random(int feature_channels, int hidden, std::uint64_t seed,
                                                    float head_gain) {
  LearnedJacobianParams p;
  p.feature_channels = feature_channels;
  p.hidden = hidden;
  p.stem_w = kaiming_uniform(p.input_channels(), hidden, seed, 200);
  p.stem_b = Tensor::Zero(1, hidden);
  for (int i = 0; i < kBlocks; ++i) {
    p.conv1_w[i] = kaiming_uniform(9 * hidden, hidden, seed, 210 + 2 * i);
    p.conv1_b[i] = Tensor::Zero(1, hidden);
    // Residual branches start small so each block is close to identity.
    p.conv2_w[i] = kaiming_uniform(9 * hidden, hidden, seed, 211 + 2 * i, 0.1f);
    p.conv2_b[i] = Tensor::Zero(1, hidden);
  }
  p.head_w = kaiming_uniform(hidden, 6 * feature_channels, seed, 230, head_gain);
  p.head_b = Tensor::Zero(1, 6 * feature_channels);
  return p;
}

LearnedProvider::LearnedProvider(std::shared_ptr<const LearnedJacobianParams> params) : params_(std::move(params)) {
  if (!params_) throw DimensionError("learned provider needs parameters");
  params_->validate();
}

JacobianMatrix LearnedProvider::jacobian(const AlignmentProblem& pb, const SE3Pose& pose, const WeightVector& w) const {
  const int c = pb.channels();
  if (c != params_->feature_channels) {
    throw DimensionError("learned Jacobian expects " + std::to_string(params_->feature_channels) +
                         " feature channels, problem has " + std::to_string(c));
  }
  const int width = pb.f1.width(), height = pb.f1.height();
  const FeatureMap warped = warp_feature_map(pb.f2, pose, w, pb.basis, pb.intrinsics);
  ad::Tape<float> tape;
  const auto vars = bind_jacobian_net<float>(tape, *params_, nullptr);
  const auto input = tape.constant(to_matrix(concat_channels(pb.f1, warped)));
  const auto jnet = jacobian_net_forward<float>(vars, input, height, width);
  const auto& jv = jnet.value();

  // Depth columns (if any) and the validity pattern come from the numerical path.
  JacobianMatrix j = assemble_numerical_jacobian(pb, pose, w);
  const ResidualVector r = compute_residual(pb, pose, w);
  for (std::size_t i = 0; i < pb.pixel_count(); ++i) {
    const auto& px = pb.pixels[i];
    const std::size_t grid = static_cast<std::size_t>(px.v) * width + px.u;
    for (int ch = 0; ch < c; ++ch) {
      const Eigen::Index row = static_cast<Eigen::Index>(i * c + ch);
      for (int k = 0; k < 6; ++k)
        j.entries(row, k) = r.valid[i] ? double(jv(static_cast<Eigen::Index>(grid * c + ch), k)) : 0.0;
    }
  }
  return j;
}

FeatureMap warp_feature_map(const FeatureMap& f2, const SE3Pose& pose, const WeightVector& w, const DepthBasis& basis,
                            const CameraIntrinsics& k) {
  if (basis.width() != f2.width() || basis.height() != f2.height()) throw DimensionError("basis does not match f2");
  if (w.size() != basis.n_basis()) throw DimensionError("weight vector does not match the basis");
  const int c = f2.channels();
  FeatureMap out(f2.width(), f2.height(), c + 1);
  const auto pt = detail::to_pose_t<double>(pose);
  for (int v = 0; v < f2.height(); ++v)
    for (int u = 0; u < f2.width(); ++u) {
      const std::size_t idx = static_cast<std::size_t>(v) * f2.width() + u;
      const double d = std::max(0.0, depth_preactivation(w, basis, idx));
      if (!(d > kMinValidDepth)) continue;
      const auto rec = detail::warp_record(pt, d, double(u), double(v), k);
      if (!(rec.z > kMinDepth)) continue;
      float* dst = &out.at(u, v, 0);
      if (!bilinear_sample_into(f2, rec.u, rec.v, dst)) {
        std::fill(dst, dst + c, 0.0f);
        continue;
      }
      dst[c] = 1.0f;
    }
  return out;
}

}  // namespace regalign
