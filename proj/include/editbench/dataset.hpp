#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "editbench/tensor.hpp"

namespace editbench {

enum class SplitTag : uint8_t { full = 0, train = 1, val = 2 };

const char* split_tag_name(SplitTag t);

/// A labeled image set. Images are [n x c x h x w] doubles in [0, 1].
struct SynthDataset {
  int class_count = 0;
  Tensor images;
  std::vector<int32_t> labels;
  uint64_t seed = 0;
  std::string spec_echo;  // echo of the generation/shift parameters
  SplitTag split = SplitTag::full;
  std::string id;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  bool empty() const { return labels.empty(); }

  /// One-hot label matrix [n x class_count].
  Tensor onehot() const;

  SynthDataset subset(const std::vector<int64_t>& indices) const;

  /// Binary container: header (counts, shape, seed, spec echo) + raw float
  /// payload + label array. Little-endian; layout documented in the README.
  void save(const std::filesystem::path& path) const;
  static SynthDataset load(const std::filesystem::path& path);
};

}  // namespace editbench
