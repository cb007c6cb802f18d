#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "regalign/jacobian_provider.hpp"

namespace regalign {

/// Costs at or below this are rounding noise of 32-bit features and count as zero.
inline constexpr double kZeroCost = 1e-24;

struct LMConfig {
  double lambda_init = 1e-2;
  double lambda_up = 10.0;
  double lambda_down = 0.3;
  int max_iterations = 30;
  double step_tolerance = 1e-8;
  double cost_tolerance = 1e-10;
  bool fixed_iteration_mode = false;
  int max_rejections = 8;

  void validate() const;
};

struct IterationRecord {
  int iteration = 0;
  double cost = 0.0;
  double lambda = 0.0;
  double step_norm = 0.0;
  double valid_fraction = 0.0;
  bool accepted = false;
};

struct SolveReport {
  std::vector<IterationRecord> iterations;
  SE3Pose pose;
  WeightVector w;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  std::string termination;  // see solve_level
  int iterations_used = 0;

  std::string to_json() const;
  void write_json(const std::filesystem::path& path) const;
  void write_trace_csv(const std::filesystem::path& path) const;
};

/// delta = (J^T J + lambda I)^-1 J^T r. The state moves by -delta
/// (see apply_update).
Eigen::VectorXd lm_step(const JacobianMatrix& j, const ResidualVector& r, double lambda);
/// Same step from precomputed normal equations, with optional column scaling:
/// the system is solved in the scaled variables and the scaling undone.
Eigen::VectorXd lm_step(const NormalEquations& ne, double lambda, const Eigen::VectorXd* column_scale = nullptr);

/// Descent update for r = f1 - warped f2: pose <- exp(-delta_pose) pose,
/// w <- w - delta_w.
std::pair<SE3Pose, WeightVector> apply_update(const SE3Pose& pose, const WeightVector& w,
                                              const Eigen::VectorXd& delta);

/// Termination reasons: "zero_cost", "step_tolerance", "cost_tolerance",
/// "max_iterations", "rejections_exhausted".
SolveReport solve_level(const AlignmentProblem& problem, const SE3Pose& init_pose, const WeightVector& init_w,
                        const JacobianProvider& provider, const LMConfig& config);

struct CoarseToFineOptions {
  /// Pixel stride on the finest (depth-optimizing) level.
  int finest_stride = 1;
  /// Levels that jointly optimize depth weights; default only the finest.
  int depth_levels = 1;
};

/// Levels coarsest first. Coarse levels solve pose with the prior weights;
/// the finest level solves pose and weights starting from the prior.
SolveReport coarse_to_fine(const ImagePyramid& pyr1, const ImagePyramid& pyr2, const std::vector<DepthBasis>& bases,
                           const CameraIntrinsics& finest_k, const SE3Pose& init_pose, const WeightVector& prior_w,
                           const std::vector<const JacobianProvider*>& providers, const LMConfig& config,
                           const CoarseToFineOptions& options = {}, std::vector<SolveReport>* per_level = nullptr);

/// Intrinsics at each level, coarsest first.
std::vector<CameraIntrinsics> intrinsics_pyramid(const CameraIntrinsics& finest, int levels);

}  // namespace regalign
