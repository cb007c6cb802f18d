#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "regalign/features.hpp"
#include "regalign/jacobian_provider.hpp"

namespace regalign {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Raw tensor container: "RGNT", u32 version, u32 count, then per tensor
/// u32 name length, name, u32 rank, u32 dims[rank], little-endian f32 data.
void write_tensors(const std::filesystem::path& path, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> read_tensors(const std::filesystem::path& path);

/// Feature network plus the optional learned Jacobian network.
struct ModelBundle {
  FeatureExtractorParams features;
  bool has_jacobian_net = false;
  LearnedJacobianParams jacobian_net;

  NamedTensors named();
};

struct AdamState {
  std::map<std::string, Tensor> m, v;
  std::int64_t step = 0;
};

struct TrainingState {
  int epochs_done = 0;
  AdamState adam;
};

void save_checkpoint(const std::filesystem::path& path, ModelBundle& model, const TrainingState* state = nullptr);
ModelBundle load_checkpoint(const std::filesystem::path& path, TrainingState* state = nullptr);

}  // namespace regalign
