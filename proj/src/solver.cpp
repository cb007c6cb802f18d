#include "regalign/solver.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "regalign/errors.hpp"

namespace regalign {

void LMConfig::validate() const {
  if (!(lambda_init > 0.0)) throw ConfigError("lambda_init must be positive");
  if (!(lambda_up > 1.0)) throw ConfigError("lambda_up must exceed 1");
  if (!(lambda_down > 0.0 && lambda_down < 1.0)) throw ConfigError("lambda_down must lie in (0, 1)");
  if (max_iterations < 0) throw ConfigError("max_iterations must be non-negative");
  if (max_rejections < 1) throw ConfigError("max_rejections must be at least 1");
  if (step_tolerance < 0.0 || cost_tolerance < 0.0) throw ConfigError("tolerances must be non-negative");
}

std::string SolveReport::to_json() const {
  nlohmann::json j;
  j["converged"] = converged;
  j["termination"] = termination;
  j["iterations_used"] = iterations_used;
  j["initial_cost"] = initial_cost;
  j["final_cost"] = final_cost;
  std::vector<double> m;
  const Eigen::Matrix4d t = pose.matrix();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m.push_back(t(r, c));
  j["pose"] = m;
  j["w"] = std::vector<double>(w.data(), w.data() + w.size());
  nlohmann::json it = nlohmann::json::array();
  for (const auto& rec : iterations) {
    it.push_back({{"iteration", rec.iteration},
                  {"cost", rec.cost},
                  {"lambda", rec.lambda},
                  {"step_norm", rec.step_norm},
                  {"valid_fraction", rec.valid_fraction},
                  {"accepted", rec.accepted}});
  }
  j["iterations"] = it;
  return j.dump(2);
}

void SolveReport::write_json(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json() << "\n";
}

void SolveReport::write_trace_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "iteration,cost,lambda,step_norm,valid_fraction\n";
  out.precision(17);
  for (const auto& r : iterations)
    out << r.iteration << ',' << r.cost << ',' << r.lambda << ',' << r.step_norm << ',' << r.valid_fraction << '\n';
}

Eigen::VectorXd lm_step(const NormalEquations& ne, double lambda, const Eigen::VectorXd* column_scale) {
  if (!(lambda > 0.0)) throw DimensionError("lm_step needs lambda > 0");
  const Eigen::Index p = ne.jtr.size();
  if (ne.jtj.rows() != p || ne.jtj.cols() != p) throw DimensionError("normal equations are inconsistent");
  Eigen::MatrixXd a = ne.jtj;
  Eigen::VectorXd b = ne.jtr;
  if (column_scale) {
    if (column_scale->size() != p) throw DimensionError("column scale size");
    a = column_scale->asDiagonal() * a * column_scale->asDiagonal();
    b = column_scale->cwiseProduct(b);
  }
  a.diagonal().array() += lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw NumericalFailure("Cholesky factorization of the damped system failed");
  Eigen::VectorXd d = llt.solve(b);
  if (!d.allFinite()) throw NumericalFailure("non-finite LM step");
  if (column_scale) d = column_scale->cwiseProduct(d);
  return d;
}

Eigen::VectorXd lm_step(const JacobianMatrix& j, const ResidualVector& r, double lambda) {
  if (j.rows() != r.values.size()) throw DimensionError("Jacobian rows do not match the residual length");
  NormalEquations ne;
  ne.jtj = j.entries.transpose() * j.entries;
  ne.jtr = j.entries.transpose() * r.values;
  return lm_step(ne, lambda);
}

std::pair<SE3Pose, WeightVector> apply_update(const SE3Pose& pose, const WeightVector& w, const Eigen::VectorXd& delta) {
  if (delta.size() < 6) throw DimensionError("update needs at least the 6 pose entries");
  if (!delta.allFinite()) throw NumericalFailure("non-finite update");
  const Vector6d xi = -delta.head<6>();
  SE3Pose next = compose(se3_exp(Twist::from_vector(xi)), pose);
  WeightVector wn = w;
  const Eigen::Index n = delta.size() - 6;
  if (n > 0) {
    if (n != w.size()) throw DimensionError("update has " + std::to_string(n) + " weight entries, state has " +
                                            std::to_string(w.size()));
    wn -= delta.tail(n);
  }
  return {next, wn};
}

namespace {

double try_cost(const ResidualVector& r) {
  return r.valid_count == 0 ? std::numeric_limits<double>::infinity() : cost(r);
}

}  // namespace

SolveReport solve_level(const AlignmentProblem& pb, const SE3Pose& init_pose, const WeightVector& init_w,
                        const JacobianProvider& provider, const LMConfig& cfg) {
  cfg.validate();
  SolveReport rep;
  rep.pose = init_pose;
  rep.w = init_w;
  ResidualVector r = compute_residual(pb, rep.pose, rep.w);
  double c = cost(r);  // throws DivergedState
  rep.initial_cost = c;
  rep.final_cost = c;
  rep.termination = "max_iterations";

  // Depth columns are equilibrated by the mean decoded depth.
  Eigen::VectorXd scale;
  if (pb.optimize_depth) {
    const FeatureMap d = decode_depth(rep.w, pb.basis);
    double mean = 0.0;
    for (float x : d.data()) mean += x;
    mean /= double(d.pixel_count());
    scale = Eigen::VectorXd::Ones(pb.parameter_count());
    scale.tail(pb.basis.n_basis()).setConstant(mean > 0.0 ? mean : 1.0);
  }

  double lambda = cfg.lambda_init;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    if (c <= kZeroCost) {
      rep.converged = true;
      rep.termination = "zero_cost";
      break;
    }
    NormalEquations ne = provider.normal_equations(pb, rep.pose, rep.w, r);
    if (ne.jtr.size() != pb.parameter_count()) throw DimensionError("provider returned the wrong parameter count");
    const double inv_m = 1.0 / double(r.valid_count);
    ne.jtj *= inv_m;
    ne.jtr *= inv_m;
    bool accepted = false;
    double step_norm = 0.0;
    double prev = c;
    for (int rej = 0; rej < cfg.max_rejections; ++rej) {
      const Eigen::VectorXd delta = lm_step(ne, lambda, pb.optimize_depth ? &scale : nullptr);
      step_norm = delta.norm();
      auto [pose, w] = apply_update(rep.pose, rep.w, delta);
      ResidualVector rt = compute_residual(pb, pose, w);
      const double ct = try_cost(rt);
      if (ct < c) {
        rep.pose = pose;
        rep.w = w;
        r = std::move(rt);
        c = ct;
        lambda *= cfg.lambda_down;
        accepted = true;
        break;
      }
      lambda *= cfg.lambda_up;
    }
    rep.iterations.push_back({it + 1, c, lambda, step_norm, r.valid_fraction(), accepted});
    rep.iterations_used = it + 1;
    rep.final_cost = c;
    if (cfg.fixed_iteration_mode) continue;
    if (!accepted) {
      rep.termination = "rejections_exhausted";
      rep.converged = true;
      break;
    }
    if (step_norm < cfg.step_tolerance) {
      rep.converged = true;
      rep.termination = "step_tolerance";
      break;
    }
    if ((prev - c) <= cfg.cost_tolerance * prev) {
      rep.converged = true;
      rep.termination = "cost_tolerance";
      break;
    }
  }
  return rep;
}

std::vector<CameraIntrinsics> intrinsics_pyramid(const CameraIntrinsics& finest, int levels) {
  std::vector<CameraIntrinsics> out(levels);
  out[levels - 1] = finest;
  for (int k = levels - 2; k >= 0; --k) out[k] = out[k + 1].halved();
  return out;
}

SolveReport coarse_to_fine(const ImagePyramid& pyr1, const ImagePyramid& pyr2, const std::vector<DepthBasis>& bases,
                           const CameraIntrinsics& finest_k, const SE3Pose& init_pose, const WeightVector& prior_w,
                           const std::vector<const JacobianProvider*>& providers, const LMConfig& config,
                           const CoarseToFineOptions& options, std::vector<SolveReport>* per_level) {
  const int levels = static_cast<int>(pyr1.size());
  if (pyr2.size() != pyr1.size() || bases.size() != pyr1.size() || providers.size() != pyr1.size()) {
    throw DimensionError("pyramids, bases and providers must have the same level count");
  }
  pyr1.validate();
  pyr2.validate();
  const auto ks = intrinsics_pyramid(finest_k, levels);
  SolveReport total;
  total.pose = init_pose;
  total.w = prior_w;
  bool first = true;
  for (int k = 0; k < levels; ++k) {
    const bool depth = k >= levels - options.depth_levels;
    std::vector<PixelIndex> pixels;
    if (k == levels - 1 && options.finest_stride > 1) {
      for (int v = 0; v < pyr1[k].height(); v += options.finest_stride)
        for (int u = 0; u < pyr1[k].width(); u += options.finest_stride) pixels.push_back({u, v});
    }
    const AlignmentProblem pb = AlignmentProblem::make(pyr1[k], pyr2[k], ks[k], bases[k], depth, std::move(pixels));
    // Coarse levels never touch w; the first depth level starts from the prior.
    const bool carry_w = depth && k > levels - options.depth_levels;
    SolveReport rep = solve_level(pb, total.pose, carry_w ? total.w : prior_w, *providers[k], config);
    if (first) total.initial_cost = rep.initial_cost;
    first = false;
    total.pose = rep.pose;
    if (depth) total.w = rep.w;
    total.final_cost = rep.final_cost;
    total.converged = rep.converged;
    total.termination = rep.termination;
    total.iterations_used += rep.iterations_used;
    for (auto rec : rep.iterations) {
      rec.iteration = static_cast<int>(total.iterations.size()) + 1;
      total.iterations.push_back(rec);
    }
    if (per_level) per_level->push_back(std::move(rep));
  }
  return total;
}

}  // namespace regalign
