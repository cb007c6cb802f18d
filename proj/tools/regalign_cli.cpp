#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "regalign/commands.hpp"
#include "regalign/errors.hpp"

using namespace regalign;

namespace {

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path);
    doc = nlohmann::json::parse(f, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config " + path + " is not valid JSON");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_run_config(doc);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Direct pose registration with numerical and learned Jacobians"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  int threads = 0;
  app.add_option("-c,--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Dotted-path override, e.g. train.learning_rate=3e-4");
  app.add_option("--threads", threads, "Worker cap (falls back to REGALIGN_THREADS)")->check(CLI::NonNegativeNumber);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  std::string synth_out;
  synth->add_option("-o,--out", synth_out, "Dataset directory (default <output>/dataset)");

  auto* train = app.add_subcommand("train", "Train a model on a dataset");
  TrainOptions topt;
  std::string train_data, train_ckpt, train_log;
  train->add_option("-d,--data", train_data, "Dataset directory")->required();
  train->add_option("-o,--out", train_ckpt, "Checkpoint path")->required();
  train->add_option("--log", train_log, "Training log CSV (default <checkpoint>.log.csv)");
  train->add_flag("--resume", topt.resume, "Continue from the checkpoint at --out");
  train->add_option("--epochs", topt.max_epochs, "Epochs to run in this invocation");

  auto* align = app.add_subcommand("align", "Register one image pair");
  AlignOptions aopt;
  std::string img1, img2, ckpt, depth, pose_init, report = "report.json", warped, error;
  align->add_option("image1", img1, "Reference image")->required();
  align->add_option("image2", img2, "Target image")->required();
  align->add_option("--checkpoint", ckpt, "Model checkpoint for learned features");
  align->add_option("--provider", aopt.provider, "Jacobian provider at the coarsest level")
      ->check(CLI::IsMember({"numerical", "learned"}));
  align->add_option("--depth", depth, "PFM depth of image 1");
  align->add_option("--pose-init", pose_init, "JSON with a row-major 4x4 pose");
  align->add_option("--report", report, "Report JSON path");
  align->add_option("--warped", warped, "Warped-image PNG");
  align->add_option("--error-map", error, "Appearance-error PNG");

  auto* bench = app.add_subcommand("bench", "Run the four-arm ablation");
  BenchOptions bopt;
  std::string bench_data, bench_out, lf, rn, arms;
  int trials = -1, pairs = -2;
  bench->add_option("-d,--data", bench_data, "Dataset directory")->required();
  bench->add_option("-o,--out", bench_out, "Output directory (default <output>/bench)");
  bench->add_option("--learned-feature", lf, "Learned-feature checkpoint");
  bench->add_option("--regnet", rn, "Regnet checkpoint");
  bench->add_option("--arms", arms, "Comma-separated arm names");
  bench->add_option("--trials", trials, "Trials per pair")->check(CLI::NonNegativeNumber);
  bench->add_option("--pairs", pairs, "Pairs to use");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig cfg = resolve_config(config_path, overrides);
    if (threads == 0) threads = cfg.threads;
    if (*synth) {
      cmd_synth(cfg, synth_out.empty() ? std::filesystem::path(cfg.output) / "dataset" : std::filesystem::path(synth_out), threads,
                std::cout, std::cerr);
    } else if (*train) {
      topt.dataset = train_data;
      topt.checkpoint = train_ckpt;
      topt.log_csv = train_log;
      cmd_train(cfg, topt, threads, std::cout);
    } else if (*align) {
      aopt.image1 = img1;
      aopt.image2 = img2;
      if (!ckpt.empty()) aopt.checkpoint = ckpt;
      if (!depth.empty()) aopt.depth = depth;
      if (!pose_init.empty()) aopt.pose_init = pose_init;
      aopt.report = report;
      if (!warped.empty()) aopt.warped_png = warped;
      if (!error.empty()) aopt.error_png = error;
      return cmd_align(cfg, aopt, std::cout);
    } else if (*bench) {
      if (!arms.empty()) {
        cfg.bench.arms.clear();
        std::stringstream ss(arms);
        for (std::string a; std::getline(ss, a, ',');)
          if (!a.empty()) cfg.bench.arms.push_back(a);
      }
      if (trials >= 0) cfg.bench.trials_per_pair = trials;
      if (pairs != -2) cfg.bench.max_pairs = pairs;
      cfg.bench.validate();
      bopt.dataset = bench_data;
      bopt.out_dir = bench_out.empty() ? std::filesystem::path(cfg.output) / "bench" : std::filesystem::path(bench_out);
      if (!lf.empty()) bopt.learned_feature_checkpoint = lf;
      if (!rn.empty()) bopt.regnet_checkpoint = rn;
      cmd_bench(cfg, bopt, threads, std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}
