#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "editbench/editing.hpp"
#include "editbench/shiftbench.hpp"

namespace editbench {

/// Experiment configuration parsed from a flat key-value manifest with one
/// section per concern. The manifest plus the code version fully determine
/// every output artifact. Unknown keys are rejected so typos cannot silently
/// fall back to defaults.
struct RunManifest {
  // [run]
  uint64_t seed = 1;
  int threads = 0;  // 0 = hardware concurrency
  std::string out_dir = "out";

  // [data]
  int classes = 5;
  int64_t base_count = 4800;
  int64_t age_count = 60;       // per aging duration
  int64_t detector_count = 250;
  std::vector<int> durations = {0, 14, 24, 36, 43, 54, 60};
  std::vector<int> confounded_durations;  // aging sets that also get the style change

  // [detector]
  DetectorSpec detector = DetectorSpec::benchmark_default();

  // [train]
  double train_lr = 2.0;
  int train_steps = 400;

  // [search]
  std::vector<std::string> methods = {"low_rank", "surgical", "full"};
  std::vector<double> coarse_lrs;  // empty = default grid
  int fine_points = 5;
  double fine_span = 4.0;
  int seeds = 5;
  double tau = 1.5;
  int steps = 200;
  int rank = 2;

  static RunManifest parse(const std::string& text);
  static RunManifest load(const std::filesystem::path& path);

  std::vector<EditMethod> edit_methods() const;
  void validate() const;

  /// Canonical text form (round-trips through parse()).
  std::string echo() const;
};

}  // namespace editbench
