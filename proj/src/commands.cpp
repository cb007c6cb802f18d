#include "regalign/commands.hpp"

#include <cmath>
#include <fstream>
#include <memory>

#include <Eigen/LU>

#include "regalign/errors.hpp"
#include "regalign/image_io.hpp"
#include "regalign/parallel.hpp"

namespace regalign {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

json pose_json(const SE3Pose& p) {
  const Eigen::Matrix4d m = p.matrix();
  json a = json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) a.push_back(m(r, c));
  return a;
}

SE3Pose read_pose_init(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open pose file " + path.string());
  json j = json::parse(f, nullptr, false);
  if (j.is_discarded()) throw ConfigError("pose file " + path.string() + " is not valid JSON");
  if (j.is_object() && j.contains("pose")) j = j["pose"];
  if (!j.is_array() || j.size() != 16) throw ConfigError("pose file must hold 16 row-major numbers");
  Eigen::Matrix4d m;
  for (int i = 0; i < 16; ++i) {
    if (!j[i].is_number()) throw ConfigError("pose file must hold 16 row-major numbers");
    m(i / 4, i % 4) = j[i].get<double>();
  }
  const SE3Pose p = SE3Pose::from_matrix(m);
  if ((p.rotation.transpose() * p.rotation - Eigen::Matrix3d::Identity()).norm() > 1e-6 ||
      p.rotation.determinant() < 0.0) {
    throw ConfigError("pose file rotation is not orthonormal");
  }
  return orthonormalized(p);
}

json report_json(const SolveReport& r) {
  json its = json::array();
  for (const auto& it : r.iterations) {
    its.push_back({{"iteration", it.iteration},
                   {"cost", it.cost},
                   {"lambda", it.lambda},
                   {"step_norm", it.step_norm},
                   {"valid_fraction", it.valid_fraction},
                   {"accepted", it.accepted}});
  }
  return {{"pose", pose_json(r.pose)},
          {"w", std::vector<double>(r.w.data(), r.w.data() + r.w.size())},
          {"initial_cost", r.initial_cost},
          {"final_cost", r.final_cost},
          {"converged", r.converged},
          {"termination", r.termination},
          {"iterations_used", r.iterations_used},
          {"iterations", its}};
}

}  // namespace

void cmd_synth(const RunConfig& config, const fs::path& dir, int threads, std::ostream& out, std::ostream& err) {
  const SynthSummary s = write_dataset(dir, config.dataset, resolve_threads(threads));
  out << "pairs " << s.pairs << ", rejections " << s.rejections << '\n';
  if (s.attempts > 0 && 2 * s.rejections > s.attempts) {
    err << "warning: " << s.rejections << " of " << s.attempts
        << " sampled poses were rejected; check dataset.scene and dataset.min_visible\n";
  }
}

void cmd_train(const RunConfig& config, const TrainOptions& o, int threads, std::ostream& out) {
  const fs::path log_csv = o.log_csv.empty() ? fs::path(o.checkpoint.string() + ".log.csv") : o.log_csv;
  ModelBundle model;
  TrainingState state;
  if (o.resume) {
    if (!fs::exists(o.checkpoint)) throw ConfigError("cannot resume: no checkpoint at " + o.checkpoint.string());
    model = load_checkpoint(o.checkpoint, &state);
    if (model.features.levels() != config.model.levels()) {
      throw ConfigError("checkpoint level count differs from model.level_channels");
    }
  } else {
    model = make_model(config.model.level_channels, 1, config.model.jacobian_net, config.model.jpn_hidden,
                       config.model.init_seed);
  }
  TrainConfig tc = config.train;
  tc.train_jacobian_net = model.has_jacobian_net;
  tc.validate();

  const Dataset data = read_dataset(o.dataset);
  if (data.size() == 0) throw ConfigError("dataset " + o.dataset.string() + " is empty");
  std::vector<TrainSample> samples;
  samples.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    samples.push_back(TrainSample::make(data.load(i), model.features.levels(), config.model.n_basis));

  const int total = tc.total_epochs();
  const int end = o.max_epochs < 0 ? total : std::min(total, state.epochs_done + o.max_epochs);
  if (o.resume) out << "resuming at epoch " << state.epochs_done << " of " << total << '\n';
  bool append = o.resume;
  const int nthreads = resolve_threads(threads);
  while (state.epochs_done < end) {
    const auto rows = train(samples, model, state, tc, 1, [&](const std::string& m) { out << m << '\n'; }, nthreads);
    for (const auto& r : rows) {
      out << "epoch " << r.epoch << " stage " << r.stage << ' ' << r.phase << " loss " << r.mean_loss
          << " reproj " << r.mean_reprojection_loss << '\n';
    }
    save_checkpoint(o.checkpoint, model, &state);
    write_train_log(log_csv, rows, append);
    append = true;
  }
  if (!append) {
    save_checkpoint(o.checkpoint, model, &state);
    write_train_log(log_csv, {}, false);
  }
  out << "checkpoint " << o.checkpoint.string() << " after " << state.epochs_done << " epochs\n";
}

int cmd_align(const RunConfig& config, const AlignOptions& o, std::ostream& out) {
  const std::string provider = o.provider.empty() ? config.solve.provider : o.provider;
  if (provider != "numerical" && provider != "learned") throw ConfigError("provider must be numerical or learned");
  std::optional<ModelBundle> model;
  if (o.checkpoint) {
    if (!fs::exists(*o.checkpoint)) throw ConfigError("checkpoint " + o.checkpoint->string() + " does not exist");
    model = load_checkpoint(*o.checkpoint);
  }
  if (provider == "learned" && (!model || !model->has_jacobian_net)) {
    throw ConfigError("the learned provider needs a checkpoint with a Jacobian network");
  }
  const SE3Pose init = o.pose_init ? read_pose_init(*o.pose_init) : SE3Pose::identity();

  const FeatureMap i1 = read_png_grayscale(o.image1);
  const FeatureMap i2 = read_png_grayscale(o.image2);
  if (!i1.same_shape(i2)) throw ConfigError("images differ in size");
  CameraIntrinsics k;
  k.fx = k.fy = config.solve.focal;
  k.cx = (i1.width() - 1) / 2.0;
  k.cy = (i1.height() - 1) / 2.0;
  k.width = i1.width();
  k.height = i1.height();
  k.validate();

  FeatureMap depth;
  if (o.depth) {
    depth = read_pfm(*o.depth);
    if (depth.width() != i1.width() || depth.height() != i1.height()) {
      throw ConfigError("depth map size differs from the images");
    }
  } else {
    depth = FeatureMap(i1.width(), i1.height(), 1, static_cast<float>(config.solve.prior_depth));
  }
  const int levels = model ? model->features.levels() : config.model.levels();
  const BasisBuild bb = build_basis(depth, config.model.n_basis);
  const auto bases = basis_pyramid(bb.basis, levels);

  ImagePyramid p1, p2;
  if (model) {
    p1 = extract_pyramid(i1, model->features);
    p2 = extract_pyramid(i2, model->features);
  } else {
    p1 = photometric_pyramid(i1, levels);
    p2 = photometric_pyramid(i2, levels);
  }
  NumericalProvider numerical;
  std::optional<LearnedProvider> learned;
  std::vector<const JacobianProvider*> providers(static_cast<std::size_t>(levels), &numerical);
  if (provider == "learned") {
    learned.emplace(std::make_shared<const LearnedJacobianParams>(model->jacobian_net));
    providers[0] = &*learned;
  }

  json report;
  report["provider"] = provider;
  report["levels"] = levels;
  int code = kExitOk;
  SE3Pose pose = init;
  WeightVector w = bb.w_star;
  try {
    std::vector<SolveReport> per_level;
    const SolveReport r =
        coarse_to_fine(p1, p2, bases, k, init, bb.w_star, providers, config.solve.lm, config.solve.c2f, &per_level);
    report.update(report_json(r));
    report["status"] = "ok";
    json lv = json::array();
    for (const auto& l : per_level) lv.push_back(report_json(l));
    report["per_level"] = lv;
    pose = r.pose;
    w = r.w;
  } catch (const DivergedState& e) {
    report["status"] = "diverged";
    report["error"] = e.what();
    report["pose"] = pose_json(init);
    code = kExitFailure;
  }
  write_json(o.report, report);
  out << "report " << o.report.string() << " (" << report["status"].get<std::string>() << ")\n";

  if (o.warped_png || o.error_png) {
    const FeatureMap warped = warp_feature_map(i2, pose, w, bb.basis, k);
    FeatureMap image(i1.width(), i1.height(), 1), error(i1.width(), i1.height(), 1);
    for (int v = 0; v < i1.height(); ++v) {
      for (int u = 0; u < i1.width(); ++u) {
        const bool valid = warped.at(u, v, 1) > 0.5f;
        image.at(u, v) = valid ? warped.at(u, v, 0) : 0.0f;
        error.at(u, v) = valid ? std::abs(warped.at(u, v, 0) - i1.at(u, v)) : 0.0f;
      }
    }
    if (o.warped_png) write_png(*o.warped_png, image);
    if (o.error_png) write_png(*o.error_png, error);
  }
  return code;
}

void cmd_bench(const RunConfig& config, const BenchOptions& o, int threads, std::ostream& out) {
  BenchModels models;
  for (const auto& a : select_arms(config.bench.arms)) {
    if (a.features == MethodArm::Features::LearnedFeature && !o.learned_feature_checkpoint) {
      throw ConfigError("arm " + a.name + " needs --learned-feature");
    }
    if (a.features == MethodArm::Features::Regnet && !o.regnet_checkpoint) {
      throw ConfigError("arm " + a.name + " needs --regnet");
    }
  }
  for (const auto& p : {o.learned_feature_checkpoint, o.regnet_checkpoint})
    if (p && !fs::exists(*p)) throw ConfigError("checkpoint " + p->string() + " does not exist");
  if (o.learned_feature_checkpoint) models.learned_feature = load_checkpoint(*o.learned_feature_checkpoint);
  if (o.regnet_checkpoint) models.regnet = load_checkpoint(*o.regnet_checkpoint);

  const Dataset data = read_dataset(o.dataset);
  const auto records = run_ablation(data, models, config.bench, resolve_threads(threads));
  fs::create_directories(o.out_dir);
  write_records_csv(o.out_dir / "records.csv", records);
  write_cdf_csv(o.out_dir / "cdf.csv", reprojection_cdf(records));
  const auto rows = success_ratio_by_bucket(records);
  write_success_csv(o.out_dir / "success_ratio.csv", rows);
  write_summary_json(o.out_dir / "summary.json", records, config.bench);
  out << records.size() << " records written to " << o.out_dir.string() << '\n';
  for (const auto& r : rows) {
    out << r.arm << " [" << r.lo << ", " << r.hi << ") " << r.successes << '/' << r.trials
        << (r.low_sample ? " low-sample" : "") << '\n';
  }
}

}  // namespace regalign
