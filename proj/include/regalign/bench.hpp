#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "regalign/checkpoint.hpp"
#include "regalign/solver.hpp"
#include "regalign/synth.hpp"

namespace regalign {

struct MethodArm {
  enum class Features { Photometric, LearnedFeature, Regnet };
  std::string name;
  Features features = Features::Photometric;
  bool learned_jacobian = false;  // at the coarsest level
};

/// conventional, learned_feature, regnet, regnet_numerical_jacobian.
std::vector<MethodArm> standard_arms();
/// Arms selected by name, in standard order. Throws ConfigError on unknown names.
std::vector<MethodArm> select_arms(const std::vector<std::string>& names);

struct TrialRecord {
  int pair_id = 0;
  int trial = 0;
  std::string arm;
  double initial_reproj = 0.0;  // fraction of image width
  double final_reproj = 0.0;
  int iterations = 0;
  double rotation_error_deg = 0.0;
  double translation_angle_error_deg = 0.0;  // NaN when undefined
  double wall_ms = 0.0;
};

struct BenchConfig {
  int trials_per_pair = 100;
  int iterations = 5;  // per pyramid level
  int max_pairs = -1;  // all when negative
  std::uint64_t seed = 1;
  std::vector<std::string> arms = {"conventional", "learned_feature", "regnet", "regnet_numerical_jacobian"};
  int levels = 4;
  int n_basis = 8;
  double depth_scale_noise = 0.05;
  double depth_mode_noise = 0.5;
  LMConfig lm;
  CoarseToFineOptions c2f;

  void validate() const;
};

/// Models behind the learned arms; arms whose model is absent cannot run.
struct BenchModels {
  std::optional<ModelBundle> learned_feature;
  std::optional<ModelBundle> regnet;
};

/// Mean pixel distance between the warps under (T, w) and (T*, D*) over
/// pixels valid under both, divided by the image width; 1.0 when no pixel is
/// valid.
double reprojection_error_metric(const SE3Pose& t, const WeightVector& w, const DepthBasis& basis,
                                 const SE3Pose& t_star, const FeatureMap& d_star, const CameraIntrinsics& k,
                                 const std::vector<PixelIndex>& pixels = {});

/// (rotation error, translation direction error) in degrees. The second is
/// NaN when either translation is shorter than 1e-9.
std::pair<double, double> pose_error_metrics(const SE3Pose& t, const SE3Pose& t_star);

/// Every (pair, trial) cell runs each arm from one shared initialization.
/// Records are sorted by (pair, trial, arm order).
std::vector<TrialRecord> run_ablation(const Dataset& data, const BenchModels& models, const BenchConfig& config,
                                      int threads = 1);

struct CdfTable {
  std::vector<double> thresholds;
  std::vector<std::string> curves;  // "initial" first, then arms
  std::vector<std::vector<double>> values;  // [curve][threshold]
};

/// 50 log-spaced thresholds from 0.0025 to 0.5.
CdfTable reprojection_cdf(const std::vector<TrialRecord>& records);

struct BucketRow {
  std::string arm;
  double lo = 0.0;
  double hi = 0.0;
  int trials = 0;
  int successes = 0;
  double ratio = 0.0;
  bool low_sample = false;
};

inline constexpr int kLowSampleTrials = 20;

/// Buckets [0, w), [w, 2w), ... up to max_bucket, then [max_bucket, 1] which
/// also takes anything above 1.
std::vector<BucketRow> success_ratio_by_bucket(const std::vector<TrialRecord>& records, double bucket_width = 0.05,
                                               double max_bucket = 0.30, double success_threshold = 0.05);
/// Index of the bucket holding an initial error.
int bucket_index(double initial, double bucket_width = 0.05, double max_bucket = 0.30);

void write_records_csv(const std::filesystem::path& path, const std::vector<TrialRecord>& records);
void write_cdf_csv(const std::filesystem::path& path, const CdfTable& cdf);
void write_success_csv(const std::filesystem::path& path, const std::vector<BucketRow>& rows);
void write_summary_json(const std::filesystem::path& path, const std::vector<TrialRecord>& records,
                        const BenchConfig& config);

}  // namespace regalign
