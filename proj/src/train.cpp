#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "regalign/errors.hpp"
#include "regalign/learn.hpp"
#include "regalign/parallel.hpp"

namespace regalign {

namespace {

using Vars = std::vector<std::pair<std::string, ad::Var<float>>>;

Vars named_vars(const FeatureVars<float>& fv, const JacobianNetVars<float>* jv) {
  Vars out;
  for (std::size_t k = 0; k < fv.enc_w.size(); ++k) {
    const std::string s = std::to_string(k);
    out.emplace_back("fln.enc" + s + ".w", fv.enc_w[k]);
    out.emplace_back("fln.enc" + s + ".b", fv.enc_b[k]);
    out.emplace_back("fln.dec" + s + ".w", fv.dec_w[k]);
    out.emplace_back("fln.dec" + s + ".b", fv.dec_b[k]);
  }
  if (jv) {
    out.emplace_back("jpn.stem.w", jv->stem_w);
    out.emplace_back("jpn.stem.b", jv->stem_b);
    for (int i = 0; i < LearnedJacobianParams::kBlocks; ++i) {
      const std::string s = "jpn.block" + std::to_string(i);
      out.emplace_back(s + ".conv1.w", jv->conv1_w[i]);
      out.emplace_back(s + ".conv1.b", jv->conv1_b[i]);
      out.emplace_back(s + ".conv2.w", jv->conv2_w[i]);
      out.emplace_back(s + ".conv2.b", jv->conv2_b[i]);
    }
    out.emplace_back("jpn.head.w", jv->head_w);
    out.emplace_back("jpn.head.b", jv->head_b);
  }
  return out;
}

ad::Mat<float> column(const WeightVector& w) { return w.cast<float>(); }

}  // namespace

SampleOutcome evaluate_sample(const TrainSample& sample, const Initialization& init, const ModelBundle& model,
                             const TrainConfig& cfg, int stage, bool bootstrap,
                             std::map<std::string, Tensor>* grads) {
  const int levels = sample.levels();
  if (model.features.levels() != levels) throw DimensionError("model and sample level counts differ");
  if (stage < 0 || stage >= levels) throw DimensionError("stage outside the pyramid");
  const int height = sample.i1.height(), width = sample.i1.width();
  const int shift = levels - 1 - stage;
  const int h = height >> shift, w = width >> shift;
  const bool use_jpn = model.has_jacobian_net && stage == 0;
  const bool train_jpn = cfg.train_jacobian_net && model.has_jacobian_net;
  TrainablePredicate trainable;
  if (grads) trainable = [&](const std::string& name) { return trainable_in_stage(name, stage, train_jpn); };

  ad::Tape<float> tape;
  const auto fv = bind_features<float>(tape, model.features, trainable);
  const auto f1 = feature_forward(fv, tape.constant(to_matrix(sample.i1)), height, width, stage);
  const auto f2 = feature_forward(fv, tape.constant(to_matrix(sample.i2)), height, width, stage);
  std::optional<JacobianNetVars<float>> jv;
  if (use_jpn) jv = bind_jacobian_net<float>(tape, model.jacobian_net, trainable);

  // Finer stages start where the test-time solver leaves the coarser levels.
  SE3Pose pose0 = init.pose;
  if (stage > 0 && cfg.init_iterations > 0) {
    ImagePyramid p1, p2;
    std::vector<DepthBasis> bases;
    for (int k = 0; k < stage; ++k) {
      const int s = levels - 1 - k;
      p1.levels.push_back(to_feature_map(f1[k].value(), width >> s, height >> s));
      p2.levels.push_back(to_feature_map(f2[k].value(), width >> s, height >> s));
      bases.push_back(sample.bases[k]);
    }
    NumericalProvider numerical;
    std::optional<LearnedProvider> learned;
    if (model.has_jacobian_net) learned.emplace(std::make_shared<const LearnedJacobianParams>(model.jacobian_net));
    std::vector<const JacobianProvider*> providers(stage, &numerical);
    if (learned) providers[0] = &*learned;
    LMConfig lm;
    lm.fixed_iteration_mode = true;
    lm.max_iterations = cfg.init_iterations;
    CoarseToFineOptions opt;
    opt.depth_levels = 0;
    try {
      pose0 = coarse_to_fine(p1, p2, bases, sample.intrinsics[stage - 1], init.pose, init.w, providers, lm, opt).pose;
    } catch (const DivergedState&) {
    }
  }

  const bool depth = stage == levels - 1;
  UnrolledProblem<float> pb;
  pb.f1 = f1[stage];
  pb.f2 = f2[stage];
  pb.height = h;
  pb.width = w;
  pb.intrinsics = sample.intrinsics[stage];
  pb.basis = &sample.bases[stage];
  pb.optimize_depth = depth;
  pb.jacobian_net = use_jpn ? &*jv : nullptr;
  pb.lambda = static_cast<float>(cfg.solver_lambda);
  UnrolledState<float> st{tape.constant(pose_row<float>(pose0)), tape.constant(column(init.w))};
  const auto out = unrolled_solve(pb, st, cfg.unrolled_iterations);

  const ad::Var<float> bvar = tape.constant(basis_matrix<float>(sample.bases[stage]));
  const ad::Var<float> d1 = ad::relu(ad::matmul(bvar, out.w));
  const auto target = warp_target<float>(sample.t_star, sample.depths[stage], sample.intrinsics[stage]);
  // Coarse-level distances are expressed in finest-level pixels.
  const float unit = float(1 << (2 * shift));
  const ad::Var<float> loss = ad::scale(reprojection_loss(out.pose, d1, target, h, w, pb.intrinsics), unit);
  ad::Var<float> obj = bootstrap ? bootstrap_loss(loss) : loss;
  if (depth) {
    const ad::Var<float> d0 = tape.constant((bvar.value() * column(init.w)).cwiseMax(0.0f));
    obj = combined_cost(obj, d1, d0, to_matrix(sample.depths[stage]), static_cast<float>(cfg.loss_weight_lambda));
  }

  SampleOutcome res;
  res.objective = obj.scalar();
  res.reprojection_loss = loss.scalar();
  res.pose = pose_from_row(out.pose.value());
  res.w = out.w.value().col(0).cast<double>();
  res.final_reproj = mean_reprojection_distance(res.pose, res.w, sample.bases[stage], sample.t_star,
                                                sample.depths[stage], sample.intrinsics[stage]) /
                     double(w);
  if (grads) {
    tape.backward(obj);
    for (const auto& [name, v] : named_vars(fv, jv ? &*jv : nullptr)) {
      if (!v.requires_grad() || !tape.has_grad(v.id)) continue;
      auto [it, fresh] = grads->try_emplace(name, tape.grad(v.id));
      if (!fresh) it->second += tape.grad(v.id);
    }
  }
  return res;
}

std::vector<TrainLogRow> train(const std::vector<TrainSample>& data, ModelBundle& model, TrainingState& state,
                               const TrainConfig& cfg, int max_epochs, const TrainEventSink& events, int threads) {
  cfg.validate();
  if (data.empty()) throw ConfigError("training needs a non-empty dataset");
  const int levels = model.features.levels();
  if (static_cast<int>(cfg.stage_epochs.size()) != levels) {
    throw ConfigError("train.stage_epochs needs one entry per pyramid level (" + std::to_string(levels) + ")");
  }
  for (const auto& s : data)
    if (s.levels() != levels) throw DimensionError("training sample level count differs from the model");
  auto emit = [&](const std::string& msg) {
    if (events) events(msg);
  };
  const int total = cfg.total_epochs();
  const int end = max_epochs < 0 ? total : std::min(total, state.epochs_done + max_epochs);
  const int n = static_cast<int>(data.size());
  std::vector<TrainLogRow> rows;
  for (int e = state.epochs_done; e < end; ++e) {
    const auto [stage, j] = cfg.locate(e);
    const int boot_epochs = cfg.bootstrap_epochs(stage);
    const bool boot = j < boot_epochs;
    if (j == 0) {
      state.adam = AdamState{};
      std::ostringstream m;
      m << "stage " << stage << ": training ";
      if (stage == 0) {
        m << "encoders and decoder 0" << (cfg.train_jacobian_net && model.has_jacobian_net ? " with the Jacobian network" : "");
      } else {
        m << "decoder " << stage;
      }
      m << " for " << cfg.stage_epochs[stage] << " epochs, bootstrap phase " << boot_epochs << " epochs";
      emit(m.str());
    }
    if (j == 0 || j == boot_epochs) {
      emit("epoch " + std::to_string(e) + ": phase " + (boot ? "bootstrap (log(L+1))" : "plain (L)"));
    }

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(cfg.seed, kStreamShuffle, std::uint64_t(e));
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(std::uint64_t(i) + 1)]);

    TrainLogRow row;
    row.epoch = e;
    row.stage = stage;
    row.phase = boot ? "bootstrap" : "plain";
    int ok_total = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int count = std::min(cfg.batch_size, n - start);
      std::vector<SampleOutcome> res(static_cast<std::size_t>(count));
      std::vector<std::map<std::string, Tensor>> g(static_cast<std::size_t>(count));
      std::vector<char> ok(static_cast<std::size_t>(count), 0);
      parallel_for(count, threads, [&](int b) {
        const int idx = order[static_cast<std::size_t>(start + b)];
        const TrainSample& s = data[static_cast<std::size_t>(idx)];
        Rng rng(cfg.seed, kStreamTrainPerturb, std::uint64_t(e) * std::uint64_t(n) + std::uint64_t(idx));
        const Initialization init = sample_initialization(s.t_star, s.basis, cfg.rot_range_deg, cfg.trans_fraction,
                                                          cfg.depth_scale_noise, cfg.depth_mode_noise, rng);
        try {
          res[b] = evaluate_sample(s, init, model, cfg, stage, boot, &g[b]);
          ok[b] = std::isfinite(res[b].objective);
        } catch (const NumericalFailure&) {
        } catch (const DivergedState&) {
        }
      });
      std::map<std::string, Tensor> sum;
      int ok_count = 0;
      for (int b = 0; b < count; ++b) {
        if (!ok[b]) {
          ++row.failures;
          continue;
        }
        ++ok_count;
        row.mean_loss += res[b].objective;
        row.mean_reprojection_loss += res[b].reprojection_loss;
        row.mean_final_reproj += res[b].final_reproj;
        for (auto& [name, t] : g[b]) {
          auto [it, fresh] = sum.try_emplace(name, t);
          if (!fresh) it->second += t;
        }
      }
      if (ok_count == 0) continue;
      ok_total += ok_count;
      for (auto& [name, t] : sum) t /= float(ok_count);
      adam_step(model.named(), sum, state.adam, cfg.adam);
    }
    if (ok_total > 0) {
      row.mean_loss /= ok_total;
      row.mean_reprojection_loss /= ok_total;
      row.mean_final_reproj /= ok_total;
    }
    state.epochs_done = e + 1;
    rows.push_back(row);
    std::ostringstream m;
    m << "epoch " << e << " stage " << stage << " " << row.phase << " loss " << row.mean_loss << " reproj "
      << row.mean_final_reproj;
    if (row.failures) m << " (" << row.failures << " skipped)";
    emit(m.str());
  }
  return rows;
}

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows, bool append) {
  const bool header = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream f(path, append ? std::ios::app : std::ios::trunc);
  if (!f) throw IoError("cannot write training log " + path.string());
  if (header) f << "epoch,stage,phase,mean_loss,mean_reprojection_loss,mean_final_reproj,failures\n";
  f.precision(9);
  for (const auto& r : rows) {
    f << r.epoch << ',' << r.stage << ',' << r.phase << ',' << r.mean_loss << ',' << r.mean_reprojection_loss << ','
      << r.mean_final_reproj << ',' << r.failures << '\n';
  }
}

}  // namespace regalign
