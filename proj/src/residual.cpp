#include "regalign/residual.hpp"

#include <fstream>
#include <string>

#include "json.hpp"
#include "regalign/errors.hpp"
#include "regalign/image_io.hpp"

namespace regalign {

AlignmentProblem AlignmentProblem::make(FeatureMap f1, FeatureMap f2, const CameraIntrinsics& k, DepthBasis basis,
                                        bool optimize_depth, std::vector<PixelIndex> pixels) {
  AlignmentProblem p;
  auto [gu, gv] = numerical_gradient(f2);
  p.f1 = std::move(f1);
  p.f2 = std::move(f2);
  p.grad_u = std::move(gu);
  p.grad_v = std::move(gv);
  p.intrinsics = k;
  p.basis = std::move(basis);
  p.optimize_depth = optimize_depth;
  if (pixels.empty()) {
    pixels.reserve(p.f1.pixel_count());
    for (int v = 0; v < p.f1.height(); ++v)
      for (int u = 0; u < p.f1.width(); ++u) pixels.push_back({u, v});
  }
  p.pixels = std::move(pixels);
  p.validate();
  return p;
}

void AlignmentProblem::validate() const {
  if (!f1.same_shape(f2)) throw DimensionError("f1 and f2 differ in shape");
  if (!f2.same_shape(grad_u) || !f2.same_shape(grad_v)) throw DimensionError("gradient maps do not match f2");
  if (basis.width() != f1.width() || basis.height() != f1.height()) {
    throw DimensionError("depth basis " + std::to_string(basis.width()) + "x" + std::to_string(basis.height()) +
                         " does not match feature map " + std::to_string(f1.width()) + "x" +
                         std::to_string(f1.height()));
  }
  if (intrinsics.width != f1.width() || intrinsics.height != f1.height()) {
    throw DimensionError("intrinsics image size does not match the feature maps");
  }
  for (const auto& px : pixels) {
    if (px.u < 0 || px.v < 0 || px.u >= f1.width() || px.v >= f1.height()) {
      throw DimensionError("pixel set entry outside the image");
    }
  }
}

namespace {

struct PixelEval {
  bool valid = false;
  detail::WarpRecordT<double> rec;
  double preactivation = 0.0;
};

PixelEval eval_pixel(const AlignmentProblem& pb, const detail::PoseT<double>& pose, const WeightVector& w,
                     const PixelIndex& px) {
  PixelEval e;
  const std::size_t idx = static_cast<std::size_t>(px.v) * pb.f1.width() + px.u;
  e.preactivation = depth_preactivation(w, pb.basis, idx);
  const double d = e.preactivation > 0.0 ? e.preactivation : 0.0;
  if (!(d > kMinValidDepth)) return e;
  e.rec = detail::warp_record(pose, d, double(px.u), double(px.v), pb.intrinsics);
  e.valid = e.rec.z > kMinDepth;
  return e;
}

}  // namespace

ResidualVector compute_residual(const AlignmentProblem& pb, const SE3Pose& pose, const WeightVector& w) {
  if (w.size() != pb.basis.n_basis()) throw DimensionError("weight vector does not match the basis");
  const int c = pb.channels();
  const std::size_t m = pb.pixel_count();
  ResidualVector r;
  r.channels = c;
  r.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m * c));
  r.valid.assign(m, 0);
  const auto pt = detail::to_pose_t<double>(pose);
  std::vector<double> sample(c);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& px = pb.pixels[i];
    const PixelEval e = eval_pixel(pb, pt, w, px);
    if (!e.valid) continue;
    if (!bilinear_sample_into(pb.f2, e.rec.u, e.rec.v, sample.data())) continue;
    const float* f1 = pb.f1.pixel(px.u, px.v);
    for (int ch = 0; ch < c; ++ch) r.values[static_cast<Eigen::Index>(i * c + ch)] = double(f1[ch]) - sample[ch];
    r.valid[i] = 1;
    ++r.valid_count;
  }
  return r;
}

JacobianMatrix assemble_numerical_jacobian(const AlignmentProblem& pb, const SE3Pose& pose, const WeightVector& w) {
  if (w.size() != pb.basis.n_basis()) throw DimensionError("weight vector does not match the basis");
  const int c = pb.channels();
  const int n = pb.basis.n_basis();
  const std::size_t m = pb.pixel_count();
  const int p = pb.parameter_count();
  JacobianMatrix j;
  j.entries = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m * c), p);
  const auto pt = detail::to_pose_t<double>(pose);
  std::vector<double> gu(c), gv(c);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& px = pb.pixels[i];
    const PixelEval e = eval_pixel(pb, pt, w, px);
    if (!e.valid) continue;
    if (!bilinear_sample_into(pb.grad_u, e.rec.u, e.rec.v, gu.data())) continue;
    bilinear_sample_into(pb.grad_v, e.rec.u, e.rec.v, gv.data());
    const float* b = pb.basis.maps.pixel(px.u, px.v);
    for (int ch = 0; ch < c; ++ch) {
      const Eigen::Index row = static_cast<Eigen::Index>(i * c + ch);
      for (int k = 0; k < 6; ++k) j.entries(row, k) = -(gu[ch] * e.rec.du[k] + gv[ch] * e.rec.dv[k]);
      if (pb.optimize_depth && e.preactivation > 0.0) {
        const double dr_dd = -(gu[ch] * e.rec.dud + gv[ch] * e.rec.dvd);
        for (int k = 0; k < n; ++k) j.entries(row, 6 + k) = dr_dd * double(b[k]);
      }
    }
  }
  return j;
}

double cost(const ResidualVector& r) {
  if (r.valid_count == 0) throw DivergedState("no valid pixels in residual");
  return r.values.squaredNorm() / double(r.valid_count);
}

void dump_residual(const std::filesystem::path& prefix, const ResidualVector& r, const JacobianMatrix* j) {
  const int m = static_cast<int>(r.pixel_count());
  FeatureMap rm(r.channels, m, 1);
  for (Eigen::Index i = 0; i < r.values.size(); ++i) rm.data()[i] = static_cast<float>(r.values[i]);
  write_pfm(prefix.string() + ".residual.pfm", rm);
  nlohmann::json meta{{"pixels", m}, {"channels", r.channels}, {"valid_count", r.valid_count},
                      {"residual_layout", "rows=pixels, cols=channels"}};
  if (j) {
    FeatureMap jm(static_cast<int>(j->cols()), static_cast<int>(j->rows()), 1);
    for (Eigen::Index row = 0; row < j->rows(); ++row)
      for (Eigen::Index col = 0; col < j->cols(); ++col)
        jm.at(static_cast<int>(col), static_cast<int>(row)) = static_cast<float>(j->entries(row, col));
    write_pfm(prefix.string() + ".jacobian.pfm", jm);
    meta["parameters"] = j->cols();
    meta["jacobian_layout"] = "rows=pixel*channels+channel, cols=omega(3),nu(3),weights(N)";
  }
  std::ofstream out(prefix.string() + ".json");
  if (!out) throw IoError("cannot write residual dump " + prefix.string());
  out << meta.dump(2) << "\n";
}

}  // namespace regalign
