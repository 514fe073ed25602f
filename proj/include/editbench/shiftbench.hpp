#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "editbench/dataset.hpp"

namespace editbench {

/// Supported aging durations (abstract days).
const std::vector<int>& aging_durations();
bool is_supported_duration(int d);

/// Morphing magnitude for an aging duration: strictly increasing, g(0) == 0.
double aging_magnitude(int duration);

/// Photometric transform parameters for the detector shift. The identity spec
/// (offset 0, gain 1, gamma 1, sigma 0, blur 0) leaves images untouched.
struct DetectorSpec {
  double brightness_offset = 0.0;  // [-0.5, 0.5]
  double contrast_gain = 1.0;      // [0.25, 4]
  double gamma = 1.0;              // [0.25, 4]
  double noise_sigma = 0.0;        // [0, 0.25]
  int blur_radius = 0;             // {0, 1, 2}

  bool is_identity() const;
  void validate() const;  // throws UsageError on out-of-range parameters
  std::string echo() const;

  /// The calibrated default used by the benchmark manifests.
  static DetectorSpec benchmark_default();
};

struct ShiftSpec {
  enum class Kind : uint8_t { aging, detector };
  Kind kind = Kind::aging;
  int duration = 0;          // aging
  bool confounded = false;   // aging only: extra fixed style change
  DetectorSpec detector;     // detector
};

/// K procedurally distinct texture families on 32x32 single-channel images,
/// deterministically generated and split 80/20 into train/val.
struct BasePair {
  SynthDataset train;
  SynthDataset val;
};
BasePair gen_base(int class_count, int64_t n, uint64_t seed);

/// The unsplit generator behind gen_base; used for shift-family raw sets.
SynthDataset gen_textures(int class_count, int64_t n, uint64_t seed);

/// Class-preserving morphological perturbation of magnitude g(duration):
/// progressive erosion plus correlated roughening. duration 0 is the
/// identity. The confounded variant additionally applies a fixed
/// brightness/contrast style change independent of the magnitude.
SynthDataset apply_aging(const SynthDataset& d, int duration, bool confounded,
                         uint64_t seed);

/// Global photometric transform plus noise, identical in distribution across
/// classes; labels unchanged.
SynthDataset apply_detector(const SynthDataset& d, const DetectorSpec& spec,
                            uint64_t seed);

/// Disjoint, exhaustive, class-stratified halves; deterministic per seed.
/// When class sizes are odd, the extra example goes to the second (test) half
/// first, alternating across odd classes to keep totals within one.
std::pair<SynthDataset, SynthDataset> split_5050(const SynthDataset& d, uint64_t seed);

}  // namespace editbench
