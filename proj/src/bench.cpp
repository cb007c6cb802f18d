#include "regalign/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>

#include <Eigen/Geometry>

#include "json.hpp"
#include "regalign/errors.hpp"
#include "regalign/learn.hpp"
#include "regalign/parallel.hpp"

namespace regalign {

std::vector<MethodArm> standard_arms() {
  using F = MethodArm::Features;
  return {{"conventional", F::Photometric, false},
          {"learned_feature", F::LearnedFeature, false},
          {"regnet", F::Regnet, true},
          {"regnet_numerical_jacobian", F::Regnet, false}};
}

std::vector<MethodArm> select_arms(const std::vector<std::string>& names) {
  std::vector<MethodArm> out;
  for (const auto& n : names) {
    const auto all = standard_arms();
    if (std::none_of(all.begin(), all.end(), [&](const MethodArm& a) { return a.name == n; })) {
      throw ConfigError("unknown method arm '" + n + "'");
    }
  }
  for (const auto& a : standard_arms())
    if (std::find(names.begin(), names.end(), a.name) != names.end()) out.push_back(a);
  if (out.empty()) throw ConfigError("no method arm selected");
  return out;
}

void BenchConfig::validate() const {
  if (trials_per_pair < 1) throw ConfigError("bench.trials_per_pair must be at least 1");
  if (iterations < 0) throw ConfigError("bench.iterations must be non-negative");
  if (levels < 1) throw ConfigError("bench.levels must be at least 1");
  if (n_basis < 1) throw ConfigError("bench.n_basis must be at least 1");
  if (depth_scale_noise < 0.0 || depth_mode_noise < 0.0) throw ConfigError("bench depth noise must be non-negative");
  if (c2f.finest_stride < 1) throw ConfigError("bench.finest_stride must be at least 1");
  if (c2f.depth_levels < 0) throw ConfigError("bench.depth_levels must be non-negative");
  select_arms(arms);
  lm.validate();
}

double reprojection_error_metric(const SE3Pose& t, const WeightVector& w, const DepthBasis& basis,
                                 const SE3Pose& t_star, const FeatureMap& d_star, const CameraIntrinsics& k,
                                 const std::vector<PixelIndex>& pixels) {
  try {
    return mean_reprojection_distance(t, w, basis, t_star, d_star, k, pixels) / double(k.width);
  } catch (const DivergedState&) {
    return 1.0;
  }
}

std::pair<double, double> pose_error_metrics(const SE3Pose& t, const SE3Pose& t_star) {
  const double rot = rotation_angle(t.rotation * t_star.rotation.transpose()) * 180.0 / std::numbers::pi;
  const double a = t.translation.norm(), b = t_star.translation.norm();
  double trans = std::numeric_limits<double>::quiet_NaN();
  if (a >= 1e-9 && b >= 1e-9) {
    // atan2 keeps precision near 0 and 180 degrees.
    trans = std::atan2(t.translation.cross(t_star.translation).norm(), t.translation.dot(t_star.translation)) *
            180.0 / std::numbers::pi;
  }
  return {rot, trans};
}

std::vector<TrialRecord> run_ablation(const Dataset& data, const BenchModels& models, const BenchConfig& cfg,
                                      int threads) {
  cfg.validate();
  const auto arms = select_arms(cfg.arms);
  for (const auto& a : arms) {
    if (a.features == MethodArm::Features::LearnedFeature && !models.learned_feature) {
      throw ConfigError("arm " + a.name + " needs a learned-feature checkpoint");
    }
    if (a.features == MethodArm::Features::Regnet && !models.regnet) {
      throw ConfigError("arm " + a.name + " needs a regnet checkpoint");
    }
    if (a.learned_jacobian && !models.regnet->has_jacobian_net) {
      throw ConfigError("the regnet checkpoint has no Jacobian network");
    }
  }
  for (const ModelBundle* m : {models.learned_feature ? &*models.learned_feature : nullptr,
                               models.regnet ? &*models.regnet : nullptr}) {
    if (m && m->features.levels() != cfg.levels) throw ConfigError("checkpoint level count differs from bench.levels");
  }
  std::shared_ptr<const LearnedJacobianParams> jpn;
  if (models.regnet && models.regnet->has_jacobian_net) {
    jpn = std::make_shared<const LearnedJacobianParams>(models.regnet->jacobian_net);
  }

  const int pairs = cfg.max_pairs < 0 ? static_cast<int>(data.size())
                                      : std::min(cfg.max_pairs, static_cast<int>(data.size()));
  std::vector<std::vector<TrialRecord>> per_pair(static_cast<std::size_t>(pairs));
  LMConfig lm = cfg.lm;
  lm.fixed_iteration_mode = true;
  lm.max_iterations = cfg.iterations;

  parallel_for(pairs, threads, [&](int pi) {
    const RenderedPair pair = data.load(static_cast<std::size_t>(pi));
    const int pair_id = data.entries[static_cast<std::size_t>(pi)].id;
    const BasisBuild bb = build_basis(pair.depth, cfg.n_basis);
    const auto bases = basis_pyramid(bb.basis, cfg.levels);
    const CameraIntrinsics& k = pair.intrinsics;

    struct ArmSetup {
      ImagePyramid p1, p2;
      std::vector<const JacobianProvider*> providers;
    };
    NumericalProvider numerical;
    std::optional<LearnedProvider> learned;
    if (jpn) learned.emplace(jpn);
    std::vector<ArmSetup> setups;
    for (const auto& a : arms) {
      ArmSetup s;
      switch (a.features) {
        case MethodArm::Features::Photometric:
          s.p1 = photometric_pyramid(pair.i1, cfg.levels);
          s.p2 = photometric_pyramid(pair.i2, cfg.levels);
          break;
        case MethodArm::Features::LearnedFeature:
          s.p1 = extract_pyramid(pair.i1, models.learned_feature->features);
          s.p2 = extract_pyramid(pair.i2, models.learned_feature->features);
          break;
        case MethodArm::Features::Regnet:
          s.p1 = extract_pyramid(pair.i1, models.regnet->features);
          s.p2 = extract_pyramid(pair.i2, models.regnet->features);
          break;
      }
      s.providers.assign(static_cast<std::size_t>(cfg.levels), &numerical);
      if (a.learned_jacobian) s.providers[0] = &*learned;
      setups.push_back(std::move(s));
    }

    auto& out = per_pair[static_cast<std::size_t>(pi)];
    for (int t = 0; t < cfg.trials_per_pair; ++t) {
      const auto& range = kSweepSchedule[static_cast<std::size_t>(t) % kSweepSchedule.size()];
      Rng rng(cfg.seed, kStreamPerturb, (std::uint64_t(pair_id) << 24) | std::uint64_t(t));
      const Initialization init = sample_initialization(pair.t_star, bb, range.rot_deg, range.trans_fraction,
                                                        cfg.depth_scale_noise, cfg.depth_mode_noise, rng);
      const double initial = reprojection_error_metric(init.pose, init.w, bb.basis, pair.t_star, pair.depth, k);
      for (std::size_t ai = 0; ai < arms.size(); ++ai) {
        TrialRecord r;
        r.pair_id = pair_id;
        r.trial = t;
        r.arm = arms[ai].name;
        r.initial_reproj = initial;
        SE3Pose pose = init.pose;
        WeightVector w = init.w;
        const auto t0 = std::chrono::steady_clock::now();
        try {
          if (cfg.iterations > 0) {
            const SolveReport rep = coarse_to_fine(setups[ai].p1, setups[ai].p2, bases, k, init.pose, init.w,
                                                   setups[ai].providers, lm, cfg.c2f);
            pose = rep.pose;
            w = rep.w;
            r.iterations = rep.iterations_used;
          }
          r.final_reproj = reprojection_error_metric(pose, w, bb.basis, pair.t_star, pair.depth, k);
        } catch (const DivergedState&) {
          r.final_reproj = 1.0;
        } catch (const NumericalFailure&) {
          r.final_reproj = 1.0;
        }
        r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        std::tie(r.rotation_error_deg, r.translation_angle_error_deg) = pose_error_metrics(pose, pair.t_star);
        out.push_back(std::move(r));
      }
    }
  });

  std::vector<TrialRecord> all;
  for (auto& v : per_pair) all.insert(all.end(), v.begin(), v.end());
  return all;
}

namespace {

std::vector<std::string> arm_order(const std::vector<TrialRecord>& records) {
  std::vector<std::string> names;
  for (const auto& a : standard_arms())
    if (std::any_of(records.begin(), records.end(), [&](const TrialRecord& r) { return r.arm == a.name; }))
      names.push_back(a.name);
  for (const auto& r : records)
    if (std::find(names.begin(), names.end(), r.arm) == names.end()) names.push_back(r.arm);
  return names;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

CdfTable reprojection_cdf(const std::vector<TrialRecord>& records) {
  if (records.empty()) throw ConfigError("reprojection_cdf needs records");
  CdfTable t;
  constexpr int kPoints = 50;
  const double lo = std::log(0.0025), hi = std::log(0.5);
  for (int i = 0; i < kPoints; ++i) t.thresholds.push_back(std::exp(lo + (hi - lo) * i / (kPoints - 1)));
  t.thresholds.front() = 0.0025;
  t.thresholds.back() = 0.5;
  const auto arms = arm_order(records);
  // The initial errors are shared across arms; count each cell once.
  std::vector<double> initial;
  for (const auto& r : records)
    if (r.arm == arms.front()) initial.push_back(r.initial_reproj);
  auto curve = [&](const std::vector<double>& v) {
    std::vector<double> c;
    for (double th : t.thresholds)
      c.push_back(double(std::count_if(v.begin(), v.end(), [&](double x) { return x <= th; })) / double(v.size()));
    return c;
  };
  t.curves.push_back("initial");
  t.values.push_back(curve(initial));
  for (const auto& a : arms) {
    std::vector<double> v;
    for (const auto& r : records)
      if (r.arm == a) v.push_back(r.final_reproj);
    t.curves.push_back(a);
    t.values.push_back(curve(v));
  }
  return t;
}

int bucket_index(double initial, double bucket_width, double max_bucket) {
  const int last = static_cast<int>(std::lround(max_bucket / bucket_width));
  if (initial >= max_bucket) return last;
  // Edges such as 0.15 / 0.05 fall a rounding error short of an integer.
  return std::clamp(static_cast<int>(std::floor(initial / bucket_width + 1e-9)), 0, last);
}

std::vector<BucketRow> success_ratio_by_bucket(const std::vector<TrialRecord>& records, double bucket_width,
                                               double max_bucket, double success_threshold) {
  if (records.empty()) throw ConfigError("success_ratio_by_bucket needs records");
  if (!(bucket_width > 0.0) || !(max_bucket > 0.0)) throw ConfigError("bucket sizes must be positive");
  const int buckets = static_cast<int>(std::lround(max_bucket / bucket_width)) + 1;
  std::vector<BucketRow> rows;
  for (const auto& a : arm_order(records)) {
    std::vector<BucketRow> b(static_cast<std::size_t>(buckets));
    for (int i = 0; i < buckets; ++i) {
      b[i].arm = a;
      b[i].lo = i * bucket_width;
      b[i].hi = i == buckets - 1 ? 1.0 : (i + 1) * bucket_width;
    }
    for (const auto& r : records) {
      if (r.arm != a) continue;
      auto& row = b[static_cast<std::size_t>(bucket_index(r.initial_reproj, bucket_width, max_bucket))];
      ++row.trials;
      row.successes += r.final_reproj < success_threshold;
    }
    for (auto& row : b) {
      row.ratio = row.trials ? double(row.successes) / row.trials : 0.0;
      row.low_sample = row.trials < kLowSampleTrials;
      rows.push_back(row);
    }
  }
  return rows;
}

void write_records_csv(const std::filesystem::path& path, const std::vector<TrialRecord>& records) {
  auto f = open_out(path);
  f << "pair_id,trial,arm,initial_reproj,final_reproj,iterations,rotation_error_deg,translation_angle_error_deg\n";
  for (const auto& r : records) {
    f << r.pair_id << ',' << r.trial << ',' << r.arm << ',' << fmt(r.initial_reproj) << ',' << fmt(r.final_reproj)
      << ',' << r.iterations << ',' << fmt(r.rotation_error_deg) << ',' << fmt(r.translation_angle_error_deg) << '\n';
  }
}

void write_cdf_csv(const std::filesystem::path& path, const CdfTable& cdf) {
  auto f = open_out(path);
  f << "threshold";
  for (const auto& c : cdf.curves) f << ',' << c;
  f << '\n';
  for (std::size_t i = 0; i < cdf.thresholds.size(); ++i) {
    f << fmt(cdf.thresholds[i]);
    for (const auto& v : cdf.values) f << ',' << fmt(v[i]);
    f << '\n';
  }
}

void write_success_csv(const std::filesystem::path& path, const std::vector<BucketRow>& rows) {
  auto f = open_out(path);
  f << "arm,bucket_lo,bucket_hi,trials,successes,success_ratio,low_sample\n";
  for (const auto& r : rows) {
    f << r.arm << ',' << fmt(r.lo) << ',' << fmt(r.hi) << ',' << r.trials << ',' << r.successes << ','
      << fmt(r.ratio) << ',' << (r.low_sample ? 1 : 0) << '\n';
  }
}

void write_summary_json(const std::filesystem::path& path, const std::vector<TrialRecord>& records,
                        const BenchConfig& cfg) {
  using nlohmann::json;
  json arms = json::object();
  for (const auto& a : arm_order(records)) {
    std::vector<double> fin, init, rot, trans, wall;
    int success = 0, iters = 0;
    for (const auto& r : records) {
      if (r.arm != a) continue;
      fin.push_back(r.final_reproj);
      init.push_back(r.initial_reproj);
      rot.push_back(r.rotation_error_deg);
      if (!std::isnan(r.translation_angle_error_deg)) trans.push_back(r.translation_angle_error_deg);
      wall.push_back(r.wall_ms);
      success += r.final_reproj < 0.05;
      iters += r.iterations;
    }
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / double(v.size());
    };
    arms[a] = {{"trials", fin.size()},
               {"success_ratio", fin.empty() ? 0.0 : double(success) / double(fin.size())},
               {"final_reproj_mean", mean(fin)},
               {"final_reproj_median", median(fin)},
               {"initial_reproj_mean", mean(init)},
               {"rotation_error_deg_mean", mean(rot)},
               {"rotation_error_deg_median", median(rot)},
               {"translation_angle_error_deg_mean", mean(trans)},
               {"translation_angle_error_deg_median", median(trans)},
               {"mean_iterations", fin.empty() ? 0.0 : double(iters) / double(fin.size())},
               {"mean_wall_ms", mean(wall)}};
  }
  json j = {{"metadata",
             {{"reprojection_error", "mean pixel distance over valid pixels divided by image width"},
              {"success_threshold", 0.05},
              {"trials_per_pair", cfg.trials_per_pair},
              {"iterations_per_level", cfg.iterations},
              {"seed", cfg.seed},
              {"levels", cfg.levels},
              {"finest_stride", cfg.c2f.finest_stride}}},
            {"arms", arms}};
  auto f = open_out(path);
  f << j.dump(2) << '\n';
}

}  // namespace regalign
