#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "editbench/checkpoint.hpp"
#include "editbench/dataset.hpp"
#include "editbench/editing.hpp"

namespace editbench {

struct SearchConfig {
  EditMethod method = EditMethod::low_rank;
  std::vector<double> coarse_lrs = default_coarse_grid();
  int fine_points = 5;      // geometric points spanning x(1/fine_span .. fine_span)
  double fine_span = 4.0;   // around each coarse winner's lr, incumbent included
  int seeds = 5;            // replicate runs per configuration
  double tau_pp = 1.5;      // max permitted original-val drop, percentage points
  int steps = 200;
  int rank = 2;
  uint64_t seed = 0;        // base seed; per-run seeds derive from (layer, lr, index)
  int threads = 0;          // 0 = hardware concurrency

  void validate() const;

  /// Seven geometric points from 1e-4 to 1e-1.
  static std::vector<double> default_coarse_grid();
};

enum class RunPhase : uint8_t { coarse, fine, box };
enum class RejectReason : uint8_t { none, threshold, divergence };

const char* reject_reason_name(RejectReason r);
const char* run_phase_name(RunPhase p);

struct RunRecord {
  RunPhase phase = RunPhase::coarse;
  EditPlan plan;
  int seed_index = 0;
  std::string context;  // dataset tag, e.g. "aging-24"
  double tau_pp = 1.5;  // the gate this run was subject to
  double selection_accuracy = -1.0;
  double test_accuracy = -1.0;  // held-out half; box-stat runs only
  double original_val_accuracy = -1.0;
  double baseline_drop_pp = 0.0;
  bool accepted = false;
  RejectReason reason = RejectReason::none;
  double wall_ms = 0.0;
};

/// One line of the JSON-lines run ledger.
std::string run_record_json(const RunRecord& rec);

/// All seed replicates of one (layer, lr) configuration.
struct ConfigGroup {
  int layer = 0;  // 0 = whole model (full finetuning)
  double lr = 0.0;
  std::vector<RunRecord> runs;

  int accepted_count() const;
  /// Mean selection accuracy over accepted runs (the ranking metric).
  double mean_selection_accuracy() const;
  double mean_drop_pp() const;
  bool viable() const { return accepted_count() > 0; }
};

/// A run is dropped when the edited model's accuracy on the original
/// validation set falls more than tau percentage points below the base
/// model's; edits that improve it are always kept.
bool gate(double base_val_accuracy, double edited_val_accuracy, double tau_pp);
bool gate(const EditOutcome& outcome, double tau_pp);

/// Shared per-search state: the base model, the original validation set it
/// was measured on, and cached per-layer activations so single-layer edits
/// can be re-evaluated from the first changed layer.
struct SearchContext {
  const Checkpoint* base = nullptr;
  const SynthDataset* original_val = nullptr;
  std::vector<Tensor> val_cache;  // prefix activations of original_val

  static SearchContext make(const Checkpoint& base, const SynthDataset& original_val);
};

struct CoarseResult {
  std::vector<int> candidate_layers;
  std::vector<std::optional<ConfigGroup>> best_per_layer;  // parallel to layers
  std::vector<RunRecord> runs;  // every executed run, canonical order
};

struct SearchOutcome {
  std::optional<ConfigGroup> winner;  // nullopt = no viable configuration
  std::vector<RunRecord> runs;        // coarse + fine, canonical order
};

/// Runs every coarse lr x seed for every candidate layer (the whole model
/// counts as a single pseudo-layer for full finetuning) and keeps, per layer,
/// the viable configuration with the highest mean selection accuracy. The
/// learn split and the selection split may be the same dataset; the held-out
/// test half is deliberately not a parameter.
CoarseResult coarse_search(const SearchContext& ctx, const SearchConfig& cfg,
                           const SynthDataset& edit_train,
                           const SynthDataset& edit_select,
                           const std::string& context_tag);

/// Sweeps a fine lr grid around the top-2 coarse layers' winners (incumbent
/// lr included, so the fine winner can never rank below it), gates every run,
/// and returns the accepted configuration maximizing mean selection accuracy.
/// Ties break toward smaller baseline drop, then lower lr, then lower layer.
SearchOutcome fine_search(const SearchContext& ctx, const SearchConfig& cfg,
                          const SynthDataset& edit_train,
                          const SynthDataset& edit_select,
                          const CoarseResult& coarse,
                          const std::string& context_tag);

/// coarse_search + fine_search composed.
SearchOutcome run_search(const SearchContext& ctx, const SearchConfig& cfg,
                         const SynthDataset& edit_train,
                         const SynthDataset& edit_select,
                         const std::string& context_tag);

/// Re-executes a recorded run's plan (deterministic) to recover its edited
/// model; no evaluation sets attached.
EditOutcome replay_run(const Checkpoint& base, const RunRecord& rec,
                       const SynthDataset& edit_train);

}  // namespace editbench
