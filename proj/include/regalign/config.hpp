#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "regalign/bench.hpp"
#include "regalign/learn.hpp"
#include "regalign/solver.hpp"
#include "regalign/synth.hpp"

namespace regalign {

struct ModelConfig {
  std::vector<int> level_channels = {32, 16, 8, 8};  // coarsest first
  bool jacobian_net = false;
  int jpn_hidden = 64;
  int n_basis = 8;
  std::uint64_t init_seed = 5;

  int levels() const { return static_cast<int>(level_channels.size()); }
  void validate() const;
};

struct SolveConfig {
  LMConfig lm;
  CoarseToFineOptions c2f;
  std::string provider = "numerical";  // or "learned", at the coarsest level
  double prior_depth = 4.0;  // constant depth prior when no depth map is given
  double focal = 105.0;      // pixels; principal point at the image center

  void validate() const;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output = "out";
  int threads = 0;
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  SolveConfig solve;
  BenchConfig bench;

  void validate() const;
};

/// Keys absent from the document keep their defaults. A top-level seed seeds
/// every section that does not set its own. Unknown keys and mistyped values
/// raise ConfigError naming the dotted key.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);

/// Applies "a.b.c=value". The value is parsed as JSON, falling back to a plain
/// string. Intermediate objects are created as needed.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace regalign
