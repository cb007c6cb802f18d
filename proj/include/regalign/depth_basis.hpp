#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <vector>

#include "regalign/image.hpp"

namespace regalign {

using WeightVector = Eigen::VectorXd;

/// N basis depth maps stored as one N-channel map; depth is ReLU(w^T B).
struct DepthBasis {
  FeatureMap maps;

  int n_basis() const { return maps.channels(); }
  int width() const { return maps.width(); }
  int height() const { return maps.height(); }
};

inline constexpr double kMinValidDepth = 1e-6;

/// Pre-activation w^T B(x) at a pixel index (v * width + u).
double depth_preactivation(const WeightVector& w, const DepthBasis& b, std::size_t pixel);

FeatureMap decode_depth(const WeightVector& w, const DepthBasis& b);

/// dD(x)/dw: B(x) where the pre-activation is positive, zero otherwise.
Eigen::VectorXd depth_jacobian(const WeightVector& w, const DepthBasis& b, int u, int v);

struct BasisBuild {
  DepthBasis basis;
  WeightVector w_star;
  double mean_depth = 0.0;
};

/// Map 1 is the ground truth scaled to unit mean; maps 2..N are the lowest
/// frequency 2D cosine modes at 10% of the mean depth. w* reproduces the
/// input exactly.
BasisBuild build_basis(const FeatureMap& groundtruth_depth, int n_basis);

DepthBasis downsample_basis(const DepthBasis& b);
/// Basis at each pyramid level, coarsest first.
std::vector<DepthBasis> basis_pyramid(const DepthBasis& finest, int levels);

/// Stacked-plane PFM plus JSON sidecar {n_basis, width, height, w_star}.
void save_basis(const std::filesystem::path& pfm_path, const BasisBuild& b);
BasisBuild load_basis(const std::filesystem::path& pfm_path);

}  // namespace regalign
