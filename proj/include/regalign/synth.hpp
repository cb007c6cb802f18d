#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "regalign/depth_basis.hpp"
#include "regalign/geometry.hpp"
#include "regalign/image.hpp"
#include "regalign/rng.hpp"

namespace regalign {

struct SceneParams {
  double base_depth = 4.0;
  double amplitude = 0.8;
  int texture_octaves = 4;
  int width = 128;
  int height = 96;
  double focal = 105.0;
  double texture_cell = 0.8;  // world units per coarsest texture lattice cell
  double relief_cell = 3.0;   // world units per heightfield lattice cell

  void validate() const;
};

/// Textured heightfield z(x, y) seen from a camera at the origin looking
/// down +z.
class Scene {
 public:
  Scene(std::uint64_t seed, const SceneParams& params);

  std::uint64_t seed() const { return seed_; }
  const SceneParams& params() const { return params_; }
  const CameraIntrinsics& intrinsics() const { return k_; }

  double height_at(double x, double y) const;
  /// Intensity in [0, 1].
  double texture_at(double x, double y) const;
  /// Upper bound on |grad height|.
  double slope_bound() const { return slope_bound_; }

  /// Depth along a camera-frame ray with unit z component, cast from a camera
  /// whose pose maps world to camera coordinates. Returns a non-positive value
  /// when the ray misses.
  double cast(const SE3Pose& world_to_camera, double u, double v) const;

 private:
  std::uint64_t seed_;
  SceneParams params_;
  CameraIntrinsics k_;
  double slope_bound_ = 0.0;
};

Scene generate_scene(std::uint64_t seed, const SceneParams& params = {});

/// Ground-truth tuple for one image pair.
struct RenderedPair {
  FeatureMap i1;
  FeatureMap i2;
  FeatureMap depth;  // of I1's view
  SE3Pose t_star;    // I1 camera to I2 camera
  CameraIntrinsics intrinsics;
  /// Per I1 pixel: 0 visible in I2, 1 occluded, 2 outside I2's view.
  std::vector<std::uint8_t> occlusion;

  double visible_fraction() const;
};

inline constexpr std::uint8_t kVisible = 0, kOccluded = 1, kOutOfView = 2;

/// Throws InfeasiblePose when fewer than min_visible of I1's pixels are
/// visible in I2.
RenderedPair render_pair(const Scene& scene, const SE3Pose& t_star, double min_visible = 0.5);

/// RMS of I1(x) - I2(warp(x, T*, D*)) over visible pixels, as a fraction of
/// I1's dynamic range.
double warp_consistency_rms(const RenderedPair& pair);

/// Rotation: each axis-angle component uniform on +-rot_range_deg, applied on
/// the left of R*. Translation: a uniformly random direction of norm
/// trans_fraction * mean_depth added to t*.
SE3Pose perturb_pose(const SE3Pose& t_star, double rot_range_deg, double trans_fraction, double mean_depth, Rng& rng);

/// Depth prior: the first weight scaled by (1 + U(-scale_noise, scale_noise)),
/// every other weight drawn from U(-mode_noise, mode_noise).
WeightVector perturb_weights(const WeightVector& w_star, double scale_noise, double mode_noise, Rng& rng);

struct PerturbationRange {
  double rot_deg;
  double trans_fraction;
};

/// Magnitudes swept by benchmark trials.
inline constexpr std::array<PerturbationRange, 4> kSweepSchedule = {{{2, 0.02}, {5, 0.05}, {10, 0.10}, {15, 0.15}}};

// ---------------------------------------------------------------------------
// Datasets on disk

struct DatasetConfig {
  std::uint64_t seed = 1;
  int scenes = 50;
  int baselines = 4;
  SceneParams scene;
  double min_visible = 0.5;
  double max_warp_rms = 0.02;
  int max_attempts = 32;

  void validate() const;
};

struct DatasetEntry {
  int id = 0;
  std::uint64_t seed = 0;
  CameraIntrinsics intrinsics;
  SE3Pose t_star;
  std::string i1, i2, depth, occlusion;  // relative to the dataset root
};

struct Dataset {
  std::filesystem::path root;
  std::vector<DatasetEntry> entries;

  std::size_t size() const { return entries.size(); }
  RenderedPair load(std::size_t index) const;
};

struct SynthSummary {
  int pairs = 0;
  int rejections = 0;
  int attempts = 0;
};

/// Relative pose of a pair: a random rotation axis and translation direction
/// with magnitudes growing with the baseline index.
SE3Pose sample_relative_pose(Rng& rng, int baseline, double base_depth);

/// Renders scenes x baselines pairs; pairs failing visibility or warp
/// consistency are resampled with fresh poses.
SynthSummary write_dataset(const std::filesystem::path& dir, const DatasetConfig& config, int threads = 1);
Dataset read_dataset(const std::filesystem::path& dir);

inline constexpr int kDatasetSchemaVersion = 1;

}  // namespace regalign
