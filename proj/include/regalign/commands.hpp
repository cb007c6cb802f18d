#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "regalign/config.hpp"

namespace regalign {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

/// Generates the dataset under dir and prints the pair and rejection counts.
void cmd_synth(const RunConfig& config, const std::filesystem::path& dir, int threads, std::ostream& out,
               std::ostream& err);

struct TrainOptions {
  std::filesystem::path dataset;
  std::filesystem::path checkpoint;
  std::filesystem::path log_csv;  // defaults to <checkpoint>.log.csv
  bool resume = false;
  int max_epochs = -1;  // epochs to run in this invocation, all when negative
};

/// Saves the checkpoint and appends to the log after every epoch.
void cmd_train(const RunConfig& config, const TrainOptions& options, int threads, std::ostream& out);

struct AlignOptions {
  std::filesystem::path image1, image2;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> depth;      // PFM depth of image 1
  std::optional<std::filesystem::path> pose_init;  // JSON with a row-major 4x4 "pose"
  std::string provider;                            // overrides solve.provider when set
  std::filesystem::path report = "report.json";
  std::optional<std::filesystem::path> warped_png, error_png;
};

/// Returns kExitFailure when the solve diverged; the report is written either way.
int cmd_align(const RunConfig& config, const AlignOptions& options, std::ostream& out);

struct BenchOptions {
  std::filesystem::path dataset;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> learned_feature_checkpoint;
  std::optional<std::filesystem::path> regnet_checkpoint;
};

/// Writes records.csv, cdf.csv, success_ratio.csv and summary.json.
void cmd_bench(const RunConfig& config, const BenchOptions& options, int threads, std::ostream& out);

}  // namespace regalign
