#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "regalign/ad_ops.hpp"
#include "regalign/checkpoint.hpp"
#include "regalign/solver.hpp"
#include "regalign/synth.hpp"

namespace regalign {

// ---------------------------------------------------------------------------
// Configuration and data

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  AdamConfig adam;
  int unrolled_iterations = 3;
  double bootstrap_fraction = 0.3;  // of each stage's epochs
  double loss_weight_lambda = 1.0;
  double solver_lambda = 1e-2;  // fixed damping inside unrolled solves
  int batch_size = 4;
  std::vector<int> stage_epochs = {12, 4, 4, 4};  // per level, coarsest first
  double rot_range_deg = 10.0;
  double trans_fraction = 0.10;
  double depth_scale_noise = 0.05;
  double depth_mode_noise = 0.5;
  int init_iterations = 5;  // test-time iterations per level that seed finer stages
  bool train_jacobian_net = false;
  std::uint64_t seed = 1;

  void validate() const;
  int total_epochs() const;
  /// Stage of a global epoch index and the epoch's index within the stage.
  std::pair<int, int> locate(int epoch) const;
  int bootstrap_epochs(int stage) const;
};

/// Ground truth of one training pair, with per-level bases and depths.
struct TrainSample {
  FeatureMap i1, i2;
  SE3Pose t_star;
  BasisBuild basis;                      // finest level
  std::vector<DepthBasis> bases;         // coarsest first
  std::vector<FeatureMap> depths;        // decode(w*, bases[k])
  std::vector<CameraIntrinsics> intrinsics;  // coarsest first

  int levels() const { return static_cast<int>(bases.size()); }
  static TrainSample make(const RenderedPair& pair, int levels, int n_basis);
};

struct Initialization {
  SE3Pose pose;
  WeightVector w;
};

/// Perturbed pose and depth prior around the ground truth.
Initialization sample_initialization(const SE3Pose& t_star, const BasisBuild& basis, double rot_range_deg,
                                     double trans_fraction, double depth_scale_noise, double depth_mode_noise,
                                     Rng& rng);

// ---------------------------------------------------------------------------
// Losses on plain values

/// Mean squared pixel distance between the warps under (T, w) and
/// (T*, D*) over pixels valid under both. Throws DivergedState if none.
double reprojection_loss(const SE3Pose& t, const WeightVector& w, const DepthBasis& basis, const SE3Pose& t_star,
                         const FeatureMap& d_star, const CameraIntrinsics& k, const std::vector<PixelIndex>& pixels = {});
/// Same pixel set, mean (unsquared) distance in pixels.
double mean_reprojection_distance(const SE3Pose& t, const WeightVector& w, const DepthBasis& basis,
                                  const SE3Pose& t_star, const FeatureMap& d_star, const CameraIntrinsics& k,
                                  const std::vector<PixelIndex>& pixels = {});
double bootstrap_loss(double l);
/// Reverse Huber with c = 0.2 max|D - D*|, mean over pixels with D* > 0.
double berhu(const FeatureMap& d, const FeatureMap& d_star);
double combined_cost(double l, const FeatureMap& d1, const FeatureMap& d0, const FeatureMap& d_star, double lambda);

// ---------------------------------------------------------------------------
// Tape helpers

template <class S>
ad::Mat<S> pose_row(const SE3Pose& p) {
  ad::Mat<S> m(1, 12);
  for (int i = 0; i < 9; ++i) m(0, i) = S(p.rotation(i / 3, i % 3));
  for (int i = 0; i < 3; ++i) m(0, 9 + i) = S(p.translation(i));
  return m;
}

template <class S>
SE3Pose pose_from_row(const ad::Mat<S>& m) {
  SE3Pose p;
  for (int i = 0; i < 9; ++i) p.rotation(i / 3, i % 3) = double(m(0, i));
  for (int i = 0; i < 3; ++i) p.translation(i) = double(m(0, 9 + i));
  return p;
}

template <class S>
ad::Mat<S> basis_matrix(const DepthBasis& b) {
  ad::Mat<S> m(static_cast<Eigen::Index>(b.maps.pixel_count()), b.n_basis());
  const auto d = b.maps.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = S(d[static_cast<std::size_t>(i)]);
  return m;
}

/// Ground-truth warp of every grid pixel.
template <class S>
struct WarpTarget {
  ad::Mat<S> uv;
  ad::Mask valid;
};

template <class S>
WarpTarget<S> warp_target(const SE3Pose& t_star, const FeatureMap& d_star, const CameraIntrinsics& k) {
  WarpTarget<S> t{ad::Mat<S>::Zero(static_cast<Eigen::Index>(d_star.pixel_count()), 2),
                  ad::Mask(d_star.pixel_count(), 0)};
  for (int v = 0; v < d_star.height(); ++v)
    for (int u = 0; u < d_star.width(); ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * d_star.width() + u;
      const WarpResult r = warp({double(u), double(v)}, d_star.at(u, v), t_star, k);
      if (!r.valid) continue;
      t.valid[i] = 1;
      t.uv(static_cast<Eigen::Index>(i), 0) = S(r.coord.u);
      t.uv(static_cast<Eigen::Index>(i), 1) = S(r.coord.v);
    }
  return t;
}

/// Mean squared distance to the target warp. depth is (h*w) x 1.
template <class S>
ad::Var<S> reprojection_loss(ad::Var<S> pose, ad::Var<S> depth, const WarpTarget<S>& target, int h, int w,
                             const CameraIntrinsics& k) {
  auto [rec, valid] = ad::warp_grid(pose, depth, h, w, k);
  std::size_t count = 0;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    valid[i] = valid[i] && target.valid[i];
    count += valid[i];
  }
  if (count == 0) throw DivergedState("reprojection loss: no pixel is valid under both warps");
  ad::Var<S> diff = ad::sub(ad::cols(rec, 0, 2), pose.tape->constant(target.uv));
  return ad::scale(ad::sum_squares(ad::mask_rows(diff, valid)), S(1) / S(count));
}

template <class S>
ad::Var<S> bootstrap_loss(ad::Var<S> l) {
  return ad::log1p(l);
}

/// lambda * L + berhu(D1, D*) + berhu(D0, D*).
template <class S>
ad::Var<S> combined_cost(ad::Var<S> l, ad::Var<S> d1, ad::Var<S> d0, const ad::Mat<S>& d_star, S lambda) {
  ad::Mask sup(static_cast<std::size_t>(d_star.rows()));
  for (Eigen::Index i = 0; i < d_star.rows(); ++i) sup[static_cast<std::size_t>(i)] = d_star(i, 0) > S(0);
  return ad::add(ad::add(ad::scale(l, lambda), ad::berhu(d1, d_star, sup)), ad::berhu(d0, d_star, sup));
}

// ---------------------------------------------------------------------------
// Differentiable LM iterations

template <class S>
struct UnrolledProblem {
  ad::Var<S> f1, f2;  // (h*w) x C feature maps
  int height = 0;
  int width = 0;
  CameraIntrinsics intrinsics;
  const DepthBasis* basis = nullptr;
  bool optimize_depth = false;
  /// Learned pose block when set; the numerical Jacobian otherwise.
  const JacobianNetVars<S>* jacobian_net = nullptr;
  S lambda = S(1e-2);
};

template <class S>
struct UnrolledState {
  ad::Var<S> pose;  // 1 x 12
  ad::Var<S> w;     // N x 1
};

/// Runs `iterations` damped Gauss-Newton steps with fixed lambda, every
/// operation recorded on the tape of pb.f1. Mirrors solve_level: the normal
/// equations are divided by the valid-pixel count and depth columns are
/// scaled by the mean initial depth.
template <class S>
UnrolledState<S> unrolled_solve(const UnrolledProblem<S>& pb, UnrolledState<S> state, int iterations) {
  if (iterations < 1) throw ConfigError("unrolled_solve needs at least one iteration");
  if (!pb.basis) throw DimensionError("unrolled_solve needs a depth basis");
  ad::Tape<S>& tape = *pb.f1.tape;
  const int h = pb.height, w = pb.width;
  const Eigen::Index m = static_cast<Eigen::Index>(h) * w;
  const int c = static_cast<int>(pb.f1.cols());
  const int n = pb.basis->n_basis();
  if (pb.f1.rows() != m || pb.f2.rows() != m || pb.f2.cols() != c) throw DimensionError("unrolled_solve: map shapes");
  const ad::Mat<S> bm = basis_matrix<S>(*pb.basis);
  const ad::Var<S> bvar = tape.constant(bm);

  const int p = 6 + (pb.optimize_depth ? n : 0);
  Eigen::Matrix<S, Eigen::Dynamic, 1> col_scale = Eigen::Matrix<S, Eigen::Dynamic, 1>::Ones(p);
  if (pb.optimize_depth) {
    const ad::Mat<S> d0 = (bm * state.w.value()).cwiseMax(S(0));
    const S mean = d0.mean();
    col_scale.tail(n).setConstant(mean > S(0) ? mean : S(1));
  }
  auto [gu_map, gv_map] = ad::gradient(pb.f2, h, w);

  for (int it = 0; it < iterations; ++it) {
    const ad::Var<S> depth = ad::relu(ad::matmul(bvar, state.w));
    auto [rec, warp_valid] = ad::warp_grid(state.pose, depth, h, w, pb.intrinsics);
    const ad::Var<S> uv = ad::cols(rec, 0, 2);
    auto [s, valid] = ad::sample(pb.f2, uv, h, w, warp_valid);
    std::size_t count = 0;
    for (auto v : valid) count += v;
    if (count == 0) throw DivergedState("unrolled_solve: no valid pixel");
    const ad::Var<S> r = ad::mask_rows(ad::sub(pb.f1, s), valid);

    std::optional<ad::Var<S>> gu, gv;
    if (!pb.jacobian_net || pb.optimize_depth) {
      gu = ad::sample(gu_map, uv, h, w, valid).var;
      gv = ad::sample(gv_map, uv, h, w, valid).var;
    }
    ad::Var<S> jac;
    if (pb.jacobian_net) {
      ad::Mat<S> vcol(m, 1);
      for (Eigen::Index i = 0; i < m; ++i) vcol(i, 0) = valid[static_cast<std::size_t>(i)] ? S(1) : S(0);
      const ad::Var<S> input = ad::hcat<S>({pb.f1, s, tape.constant(std::move(vcol))});
      jac = ad::mask_rows(jacobian_net_forward(*pb.jacobian_net, input, h, w), valid, c);
    } else {
      jac = ad::jacobian_pose(*gu, *gv, rec);
    }
    if (pb.optimize_depth) {
      ad::Mat<S> ddw = bm;
      const ad::Mat<S>& pre = depth.value();
      for (Eigen::Index i = 0; i < m; ++i)
        if (!(pre(i, 0) > S(0)) || !valid[static_cast<std::size_t>(i)]) ddw.row(i).setZero();
      jac = ad::hcat<S>({jac, ad::jacobian_depth(*gu, *gv, rec, ddw)});
    }
    const ad::Var<S> delta = ad::lm_solve(jac, ad::reshape(r, m * c, 1), pb.lambda, S(1) / S(count), col_scale);
    state.pose = ad::pose_update(state.pose, delta);
    if (pb.optimize_depth) state.w = ad::sub(state.w, ad::rows(delta, 6, n));
  }
  return state;
}

// ---------------------------------------------------------------------------
// Optimizer and training loop

/// Adam with bias correction over the named tensors that have a gradient.
void adam_step(const NamedTensors& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const AdamConfig& config);

struct TrainLogRow {
  int epoch = 0;
  int stage = 0;
  std::string phase;  // "bootstrap" or "plain"
  double mean_loss = 0.0;
  double mean_reprojection_loss = 0.0;  // plain L in finest-level pixels^2
  double mean_final_reproj = 0.0;       // mean warp distance / image width
  int failures = 0;                     // samples skipped for numerical reasons
};

/// Parameters updated in a stage: every encoder, decoder 0 and (optionally)
/// the Jacobian network first, then one finer decoder per stage.
bool trainable_in_stage(const std::string& name, int stage, bool train_jacobian_net);

/// Objective and metrics of one sample at one stage; accumulates parameter
/// gradients into `grads` when non-null.
struct SampleOutcome {
  double objective = 0.0;
  double reprojection_loss = 0.0;
  double final_reproj = 0.0;
  SE3Pose pose;
  WeightVector w;
};

SampleOutcome evaluate_sample(const TrainSample& sample, const Initialization& init, const ModelBundle& model,
                             const TrainConfig& config, int stage, bool bootstrap,
                             std::map<std::string, Tensor>* grads);

using TrainEventSink = std::function<void(const std::string&)>;

/// Runs epochs from state.epochs_done up to the configured total, or at most
/// max_epochs of them when non-negative.
std::vector<TrainLogRow> train(const std::vector<TrainSample>& data, ModelBundle& model, TrainingState& state,
                               const TrainConfig& config, int max_epochs = -1, const TrainEventSink& events = {},
                               int threads = 1);

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows, bool append);

/// Fresh model: random features (and a Jacobian network when requested).
ModelBundle make_model(const std::vector<int>& level_channels, int input_channels, bool jacobian_net, int jpn_hidden,
                       std::uint64_t seed);

}  // namespace regalign
