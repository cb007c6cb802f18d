#include "regalign/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "regalign/errors.hpp"

namespace regalign {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double lattice(std::uint64_t key, std::int64_t ix, std::int64_t iy) {
  const std::uint64_t h = mix(key ^ mix(std::uint64_t(ix) * 0x632be59bd9b4e019ull ^ mix(std::uint64_t(iy))));
  return double(h >> 11) * 0x1.0p-52 - 1.0;
}

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

/// Value noise in [-1, 1] with C2 quintic blending.
double value_noise(std::uint64_t key, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const double sx = fade(x - fx), sy = fade(y - fy);
  const double a = lattice(key, ix, iy), b = lattice(key, ix + 1, iy);
  const double c = lattice(key, ix, iy + 1), d = lattice(key, ix + 1, iy + 1);
  const double top = a + sx * (b - a), bottom = c + sx * (d - c);
  return top + sy * (bottom - top);
}

// Max |grad| of value_noise per lattice unit: quintic fade slope 15/8 times
// the largest lattice difference 2, on both axes.
constexpr double kNoiseSlope = 3.75 * std::numbers::sqrt2;
constexpr int kReliefOctaves = 2;

}  // namespace

void SceneParams::validate() const {
  if (!(base_depth > 0.0)) throw ConfigError("scene.base_depth must be positive");
  if (!(amplitude >= 0.0)) throw ConfigError("scene.amplitude must be non-negative");
  if (base_depth < 2.0 * amplitude) throw ConfigError("scene.base_depth must be at least twice scene.amplitude");
  if (texture_octaves < 1 || texture_octaves > 8) throw ConfigError("scene.texture_octaves must be in [1, 8]");
  if (width < 8 || height < 8) throw ConfigError("scene resolution too small");
  if (!(focal > 0.0)) throw ConfigError("scene.focal must be positive");
  if (!(texture_cell > 0.0) || !(relief_cell > 0.0)) throw ConfigError("scene cell sizes must be positive");
}

Scene::Scene(std::uint64_t seed, const SceneParams& params) : seed_(seed), params_(params) {
  params_.validate();
  k_ = {params.focal, params.focal, 0.5 * (params.width - 1), 0.5 * (params.height - 1), params.width, params.height};
  double amp_sum = 0.0, slope = 0.0;
  for (int o = 0; o < kReliefOctaves; ++o) {
    amp_sum += std::ldexp(1.0, -o);
    slope += kNoiseSlope / params.relief_cell;  // amplitude 2^-o times frequency 2^o
  }
  slope_bound_ = params.amplitude * slope / amp_sum;
}

double Scene::height_at(double x, double y) const {
  double s = 0.0, amp_sum = 0.0;
  for (int o = 0; o < kReliefOctaves; ++o) {
    const double a = std::ldexp(1.0, -o), f = std::ldexp(1.0, o) / params_.relief_cell;
    s += a * value_noise(mix(seed_ ^ 0x5ce7e0ull) + o, x * f, y * f);
    amp_sum += a;
  }
  return params_.base_depth + params_.amplitude * s / amp_sum;
}

double Scene::texture_at(double x, double y) const {
  double s = 0.0, amp_sum = 0.0;
  for (int o = 0; o < params_.texture_octaves; ++o) {
    const double a = std::ldexp(1.0, -o), f = std::ldexp(1.0, o) / params_.texture_cell;
    s += a * value_noise(mix(seed_ ^ 0x7e47ull) + o, x * f + 0.37 * o, y * f - 0.21 * o);
    amp_sum += a;
  }
  return 0.5 + 0.5 * std::tanh(2.5 * s / amp_sum);
}

double Scene::cast(const SE3Pose& world_to_camera, double u, double v) const {
  const Eigen::Matrix3d rt = world_to_camera.rotation.transpose();
  const Eigen::Vector3d c = -rt * world_to_camera.translation;
  const Eigen::Vector3d d = rt * Eigen::Vector3d((u - k_.cx) / k_.fx, (v - k_.cy) / k_.fy, 1.0);
  const double bound = std::abs(d.z()) + slope_bound_ * std::hypot(d.x(), d.y());
  const double far = 50.0 * params_.base_depth;
  auto gap = [&](double s) {
    const Eigen::Vector3d p = c + s * d;
    return p.z() - height_at(p.x(), p.y());
  };
  // Lipschitz march never passes the first crossing; Newton polishes it.
  if (gap(0.0) > 0.0) return -1.0;
  // Below the lowest possible surface point the ray cannot hit anything.
  const double floor_z = params_.base_depth - params_.amplitude;
  double s = d.z() > 0.0 ? std::max(0.0, (floor_z - c.z()) / d.z()) : 0.0;
  double g = gap(s);
  while (g < -1e-4) {
    s += -g / bound;
    if (s > far) return -1.0;
    g = gap(s);
  }
  for (int it = 0; it < 8 && std::abs(g) > 1e-10; ++it) {
    const double h = 1e-6;
    const double slope = (gap(s + h) - gap(s - h)) / (2.0 * h);
    if (!(slope > 1e-6)) break;
    s -= g / slope;
    g = gap(s);
  }
  return s;
}

Scene generate_scene(std::uint64_t seed, const SceneParams& params) { return Scene(seed, params); }

double RenderedPair::visible_fraction() const {
  if (occlusion.empty()) return 0.0;
  return double(std::count(occlusion.begin(), occlusion.end(), kVisible)) / double(occlusion.size());
}

namespace {

FeatureMap render_view(const Scene& scene, const SE3Pose& pose) {
  const auto& k = scene.intrinsics();
  FeatureMap img(k.width, k.height, 1);
  const Eigen::Matrix3d rt = pose.rotation.transpose();
  const Eigen::Vector3d c = -rt * pose.translation;
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u) {
      double acc = 0.0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double uu = u - 0.25 + 0.5 * sx, vv = v - 0.25 + 0.5 * sy;
          const double s = scene.cast(pose, uu, vv);
          if (!(s > 0.0)) throw InfeasiblePose("camera ray misses the scene");
          const Eigen::Vector3d p = c + s * (rt * Eigen::Vector3d((uu - k.cx) / k.fx, (vv - k.cy) / k.fy, 1.0));
          acc += scene.texture_at(p.x(), p.y());
        }
      img.at(u, v) = static_cast<float>(0.25 * acc);
    }
  return img;
}

}  // namespace

RenderedPair render_pair(const Scene& scene, const SE3Pose& t_star, double min_visible) {
  const auto& k = scene.intrinsics();
  RenderedPair out;
  out.t_star = t_star;
  out.intrinsics = k;
  out.depth = FeatureMap(k.width, k.height, 1);
  out.occlusion.assign(static_cast<std::size_t>(k.width) * k.height, kVisible);
  const SE3Pose id = SE3Pose::identity();
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u) {
      const double d = scene.cast(id, u, v);
      if (!(d > 0.0)) throw InfeasiblePose("reference ray misses the scene");
      out.depth.at(u, v) = static_cast<float>(d);
    }
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * k.width + u;
      const WarpResult r = warp({double(u), double(v)}, out.depth.at(u, v), t_star, k);
      if (!r.valid || r.coord.u < 0.0 || r.coord.v < 0.0 || r.coord.u > k.width - 1 || r.coord.v > k.height - 1) {
        out.occlusion[i] = kOutOfView;
        continue;
      }
      const double s = scene.cast(t_star, r.coord.u, r.coord.v);
      if (s > 0.0 && s < r.z * (1.0 - 1e-3)) out.occlusion[i] = kOccluded;
    }
  if (out.visible_fraction() < min_visible) {
    throw InfeasiblePose("only " + std::to_string(out.visible_fraction()) + " of the reference view stays visible");
  }
  out.i1 = render_view(scene, id);
  out.i2 = t_star.rotation.isIdentity(0.0) && t_star.translation.isZero(0.0) ? out.i1 : render_view(scene, t_star);
  return out;
}

double warp_consistency_rms(const RenderedPair& p) {
  const auto& k = p.intrinsics;
  float lo = 1e30f, hi = -1e30f;
  for (float x : p.i1.data()) lo = std::min(lo, x), hi = std::max(hi, x);
  const double range = std::max(1e-12, double(hi - lo));
  double se = 0.0;
  int n = 0;
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u) {
      if (p.occlusion[static_cast<std::size_t>(v) * k.width + u] != kVisible) continue;
      const WarpResult r = warp({double(u), double(v)}, p.depth.at(u, v), p.t_star, k);
      double s = 0.0;
      if (!r.valid || !bilinear_sample_into(p.i2, r.coord.u, r.coord.v, &s)) continue;
      const double e = double(p.i1.at(u, v)) - s;
      se += e * e;
      ++n;
    }
  if (n == 0) return 1.0;
  return std::sqrt(se / n) / range;
}

SE3Pose perturb_pose(const SE3Pose& t_star, double rot_range_deg, double trans_fraction, double mean_depth, Rng& rng) {
  if (rot_range_deg < 0.0 || trans_fraction < 0.0) throw ConfigError("perturbation ranges must be non-negative");
  const double r = rot_range_deg * std::numbers::pi / 180.0;
  Twist xi;
  for (int i = 0; i < 3; ++i) xi.omega[i] = rng.uniform(-r, r);
  Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
  while (dir.norm() < 1e-12) dir = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
  SE3Pose out;
  out.rotation = rot_range_deg > 0.0 ? Eigen::Matrix3d(se3_exp(xi).rotation * t_star.rotation) : t_star.rotation;
  out.translation = t_star.translation + trans_fraction * mean_depth * dir.normalized();
  return out;
}

WeightVector perturb_weights(const WeightVector& w_star, double scale_noise, double mode_noise, Rng& rng) {
  WeightVector w = w_star;
  if (w.size() == 0) return w;
  w[0] *= 1.0 + rng.uniform(-scale_noise, scale_noise);
  for (Eigen::Index i = 1; i < w.size(); ++i) w[i] = rng.uniform(-mode_noise, mode_noise);
  return w;
}

SE3Pose sample_relative_pose(Rng& rng, int baseline, double base_depth) {
  auto direction = [&rng] {
    Eigen::Vector3d d(rng.normal(), rng.normal(), rng.normal());
    while (d.norm() < 1e-12) d = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    return d.normalized();
  };
  const double angle = (1.0 + baseline) * std::numbers::pi / 180.0;
  Twist xi;
  xi.omega = angle * rng.uniform(0.5, 1.0) * direction();
  SE3Pose p = se3_exp(xi);
  p.translation = (0.03 + 0.03 * baseline) * base_depth * rng.uniform(0.5, 1.0) * direction();
  return p;
}

}  // namespace regalign
