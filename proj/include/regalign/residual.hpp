#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "regalign/depth_basis.hpp"
#include "regalign/geometry.hpp"
#include "regalign/image.hpp"

namespace regalign {

struct PixelIndex {
  int u = 0;
  int v = 0;
};

/// Everything needed to evaluate the feature-metric residual between two
/// views at one pyramid level.
struct AlignmentProblem {
  FeatureMap f1;
  FeatureMap f2;
  FeatureMap grad_u;  // numerical gradients of f2 on the grid
  FeatureMap grad_v;
  CameraIntrinsics intrinsics;
  DepthBasis basis;
  bool optimize_depth = false;
  std::vector<PixelIndex> pixels;

  /// Precomputes the f2 gradients. An empty pixel list selects every pixel.
  static AlignmentProblem make(FeatureMap f1, FeatureMap f2, const CameraIntrinsics& k, DepthBasis basis,
                               bool optimize_depth, std::vector<PixelIndex> pixels = {});

  int channels() const { return f1.channels(); }
  std::size_t pixel_count() const { return pixels.size(); }
  int parameter_count() const { return 6 + (optimize_depth ? basis.n_basis() : 0); }
  /// Throws DimensionError on inconsistent members.
  void validate() const;
};

/// Stacked per-pixel C-vectors r_i = f1(x_i) - f2(warp(x_i)); invalid pixels
/// hold exact zeros.
struct ResidualVector {
  Eigen::VectorXd values;
  std::vector<std::uint8_t> valid;
  int channels = 1;
  int valid_count = 0;

  std::size_t pixel_count() const { return valid.size(); }
  double valid_fraction() const { return valid.empty() ? 0.0 : double(valid_count) / double(valid.size()); }
};

/// (M*C) x P, pose columns (omega, nu) first, then depth-weight columns.
struct JacobianMatrix {
  Eigen::MatrixXd entries;

  Eigen::Index rows() const { return entries.rows(); }
  Eigen::Index cols() const { return entries.cols(); }
};

ResidualVector compute_residual(const AlignmentProblem& problem, const SE3Pose& pose, const WeightVector& w);

/// Feature gradients sampled from the precomputed grid maps at the warped
/// coordinate, chained with the analytic warp derivatives.
JacobianMatrix assemble_numerical_jacobian(const AlignmentProblem& problem, const SE3Pose& pose,
                                           const WeightVector& w);

/// Sum of squares over valid pixels divided by the number of valid pixels.
/// Throws DivergedState when no pixel is valid.
double cost(const ResidualVector& r);

/// Writes <prefix>.residual.pfm, <prefix>.jacobian.pfm and <prefix>.json.
void dump_residual(const std::filesystem::path& prefix, const ResidualVector& r, const JacobianMatrix* j);

}  // namespace regalign
