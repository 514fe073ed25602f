#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "editbench/network.hpp"

namespace editbench {

struct CheckpointMeta {
  uint64_t seed = 0;
  std::string dataset_id;
  double base_val_accuracy = 0.0;
};

/// A trained model plus its training provenance. save/load round-trips all
/// parameter tensors bit-exactly (raw little-endian doubles).
struct Checkpoint {
  Network network;
  CheckpointMeta meta;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  static constexpr uint32_t kFormatVersion = 1;
};

}  // namespace editbench
