#include <algorithm>
#include <cmath>

#include "regalign/errors.hpp"
#include "regalign/learn.hpp"

namespace regalign {

void TrainConfig::validate() const {
  if (!(adam.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("train Adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (unrolled_iterations < 1) throw ConfigError("train.unrolled_iterations must be at least 1");
  if (!(bootstrap_fraction >= 0.0 && bootstrap_fraction <= 1.0)) {
    throw ConfigError("train.bootstrap_fraction must lie in [0, 1]");
  }
  if (!(loss_weight_lambda >= 0.0)) throw ConfigError("train.loss_weight_lambda must be non-negative");
  if (!(solver_lambda > 0.0)) throw ConfigError("train.solver_lambda must be positive");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (stage_epochs.empty()) throw ConfigError("train.stage_epochs must list one count per level");
  for (int e : stage_epochs)
    if (e < 0) throw ConfigError("train.stage_epochs entries must be non-negative");
  if (rot_range_deg < 0.0 || trans_fraction < 0.0 || depth_scale_noise < 0.0 || depth_mode_noise < 0.0) {
    throw ConfigError("train perturbation ranges must be non-negative");
  }
  if (init_iterations < 0) throw ConfigError("train.init_iterations must be non-negative");
}

int TrainConfig::total_epochs() const {
  int t = 0;
  for (int e : stage_epochs) t += e;
  return t;
}

std::pair<int, int> TrainConfig::locate(int epoch) const {
  for (int s = 0; s < static_cast<int>(stage_epochs.size()); ++s) {
    if (epoch < stage_epochs[s]) return {s, epoch};
    epoch -= stage_epochs[s];
  }
  throw ConfigError("epoch beyond the training schedule");
}

int TrainConfig::bootstrap_epochs(int stage) const {
  return static_cast<int>(std::lround(bootstrap_fraction * stage_epochs.at(stage)));
}

TrainSample TrainSample::make(const RenderedPair& pair, int levels, int n_basis) {
  TrainSample s;
  s.i1 = pair.i1;
  s.i2 = pair.i2;
  s.t_star = pair.t_star;
  s.basis = build_basis(pair.depth, n_basis);
  s.bases = basis_pyramid(s.basis.basis, levels);
  for (const auto& b : s.bases) s.depths.push_back(decode_depth(s.basis.w_star, b));
  s.intrinsics = intrinsics_pyramid(pair.intrinsics, levels);
  return s;
}

Initialization sample_initialization(const SE3Pose& t_star, const BasisBuild& basis, double rot_range_deg,
                                     double trans_fraction, double depth_scale_noise, double depth_mode_noise,
                                     Rng& rng) {
  Initialization init;
  init.pose = perturb_pose(t_star, rot_range_deg, trans_fraction, basis.mean_depth, rng);
  init.w = perturb_weights(basis.w_star, depth_scale_noise, depth_mode_noise, rng);
  return init;
}

namespace {

template <class F>
void for_each_warp_pair(const SE3Pose& t, const WeightVector& w, const DepthBasis& basis, const SE3Pose& t_star,
                        const FeatureMap& d_star, const CameraIntrinsics& k, const std::vector<PixelIndex>& pixels,
                        F&& f) {
  if (w.size() != basis.n_basis()) throw DimensionError("weight vector does not match the basis");
  if (d_star.width() != basis.width() || d_star.height() != basis.height()) {
    throw DimensionError("ground-truth depth does not match the basis");
  }
  auto visit = [&](int u, int v) {
    const std::size_t i = static_cast<std::size_t>(v) * basis.width() + u;
    const double d = std::max(0.0, depth_preactivation(w, basis, i));
    if (!(d > kMinValidDepth)) return;
    const WarpResult a = warp({double(u), double(v)}, d, t, k);
    const WarpResult b = warp({double(u), double(v)}, d_star.at(u, v), t_star, k);
    if (a.valid && b.valid) f(a.coord.u - b.coord.u, a.coord.v - b.coord.v);
  };
  if (pixels.empty()) {
    for (int v = 0; v < basis.height(); ++v)
      for (int u = 0; u < basis.width(); ++u) visit(u, v);
  } else {
    for (const auto& p : pixels) visit(p.u, p.v);
  }
}

}  // namespace

double reprojection_loss(const SE3Pose& t, const WeightVector& w, const DepthBasis& basis, const SE3Pose& t_star,
                         const FeatureMap& d_star, const CameraIntrinsics& k, const std::vector<PixelIndex>& pixels) {
  double sum = 0.0;
  std::size_t n = 0;
  for_each_warp_pair(t, w, basis, t_star, d_star, k, pixels, [&](double du, double dv) {
    sum += du * du + dv * dv;
    ++n;
  });
  if (n == 0) throw DivergedState("reprojection loss: no pixel is valid under both warps");
  return sum / double(n);
}

double mean_reprojection_distance(const SE3Pose& t, const WeightVector& w, const DepthBasis& basis,
                                  const SE3Pose& t_star, const FeatureMap& d_star, const CameraIntrinsics& k,
                                  const std::vector<PixelIndex>& pixels) {
  double sum = 0.0;
  std::size_t n = 0;
  for_each_warp_pair(t, w, basis, t_star, d_star, k, pixels, [&](double du, double dv) {
    sum += std::hypot(du, dv);
    ++n;
  });
  if (n == 0) throw DivergedState("reprojection distance: no pixel is valid under both warps");
  return sum / double(n);
}

double bootstrap_loss(double l) {
  if (l < 0.0) throw DimensionError("bootstrap_loss expects a non-negative loss");
  return std::log1p(l);
}

double berhu(const FeatureMap& d, const FeatureMap& d_star) {
  if (!d.same_shape(d_star) || d.channels() != 1) throw DimensionError("berhu: depth maps differ in shape");
  double emax = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < d.pixel_count(); ++i) {
    if (!(d_star.data()[i] > 0.0f)) continue;
    emax = std::max(emax, std::abs(double(d.data()[i]) - d_star.data()[i]));
    ++n;
  }
  const double c = 0.2 * emax;
  if (n == 0 || c == 0.0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < d.pixel_count(); ++i) {
    if (!(d_star.data()[i] > 0.0f)) continue;
    const double e = std::abs(double(d.data()[i]) - d_star.data()[i]);
    total += e <= c ? e : (e * e + c * c) / (2.0 * c);
  }
  return total / double(n);
}

double combined_cost(double l, const FeatureMap& d1, const FeatureMap& d0, const FeatureMap& d_star, double lambda) {
  return lambda * l + berhu(d1, d_star) + berhu(d0, d_star);
}

void adam_step(const NamedTensors& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const AdamConfig& cfg) {
  ++state.step;
  const double t = double(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t), c2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& [name, ptr] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    Tensor& p = *ptr;
    if (g->second.rows() != p.rows() || g->second.cols() != p.cols()) {
      throw DimensionError("gradient shape differs from parameter " + name);
    }
    auto [mi, new_m] = state.m.try_emplace(name, Tensor::Zero(p.rows(), p.cols()));
    auto [vi, new_v] = state.v.try_emplace(name, Tensor::Zero(p.rows(), p.cols()));
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double gi = g->second.data()[i];
      const double mn = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
      const double vn = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
      m.data()[i] = static_cast<float>(mn);
      v.data()[i] = static_cast<float>(vn);
      p.data()[i] -= static_cast<float>(cfg.learning_rate * (mn / c1) / (std::sqrt(vn / c2) + cfg.eps));
    }
  }
}

bool trainable_in_stage(const std::string& name, int stage, bool train_jacobian_net) {
  if (stage == 0) {
    return name.rfind("fln.enc", 0) == 0 || name.rfind("fln.dec0.", 0) == 0 ||
           (train_jacobian_net && name.rfind("jpn.", 0) == 0);
  }
  return name.rfind("fln.dec" + std::to_string(stage) + ".", 0) == 0;
}

ModelBundle make_model(const std::vector<int>& level_channels, int input_channels, bool jacobian_net, int jpn_hidden,
                       std::uint64_t seed) {
  ModelBundle m;
  m.features = FeatureExtractorParams::random(level_channels, input_channels, seed);
  m.has_jacobian_net = jacobian_net;
  if (jacobian_net) m.jacobian_net = LearnedJacobianParams::random(level_channels.front(), jpn_hidden, seed);
  return m;
}

}  // namespace regalign
