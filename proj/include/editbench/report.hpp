#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "editbench/manifest.hpp"
#include "editbench/search.hpp"

namespace editbench {

struct CellStats {
  int seeds = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

/// One (method, edit duration) row of the cross-generalization matrix.
struct MatrixRow {
  EditMethod method = EditMethod::low_rank;
  int edit_duration = 0;
  bool present = false;
  std::string absent_reason;            // set when !present
  std::vector<CellStats> cells;         // parallel to GenMatrix::durations
  double mean_drop_pp = 0.0;            // winner runs' mean original-val drop
  int winner_layer = 0;
  double winner_lr = 0.0;
  int accepted_runs = 0;                // across the whole search for this row
  int total_runs = 0;
};

/// Edit-duration x eval-duration accuracy grid per method, plus the unedited
/// baseline row. Off-diagonal and diagonal cells are always evaluated on the
/// held-out test halves.
struct GenMatrix {
  std::vector<int> durations;
  std::vector<EditMethod> methods;
  double tau_pp = 1.5;
  std::vector<double> baseline;  // per eval duration, unedited model
  std::vector<MatrixRow> rows;   // method-major, duration-minor
  std::vector<RunRecord> ledger;

  const MatrixRow& row(EditMethod m, int edit_duration) const;
};

struct Quartiles {
  double median = 0.0, q1 = 0.0, q3 = 0.0, lo = 0.0, hi = 0.0;
};

/// Accuracy distribution of one (method, layer, lr) configuration over seeds,
/// gated at one threshold.
struct BoxGroup {
  int sample_count = 0;
  int gated_out = 0;
  std::vector<double> samples;  // sorted held-out accuracies of accepted runs
  Quartiles quartiles;          // meaningful when sample_count > 0
};

struct BoxEntry {
  EditMethod method = EditMethod::low_rank;
  int layer = 0;
  double lr = 0.0;
  BoxGroup strict;      // tau = 1.5
  BoxGroup permissive;  // tau = 7.0
};

struct SeedStats {
  double tau_strict = 1.5;
  double tau_permissive = 7.0;
  std::vector<BoxEntry> entries;
  std::vector<RunRecord> ledger;
};

Quartiles compute_quartiles(const std::vector<double>& sorted_samples);

/// For each (method, edit duration): search on that duration's learn half,
/// then evaluate the winning configuration's accepted runs on every
/// duration's held-out half and the original validation set. Rows whose
/// search found no viable configuration are marked absent with a reason.
GenMatrix build_gen_matrix(const Checkpoint& base, const SynthDataset& original_val,
                           const std::vector<std::pair<int, SynthDataset>>& aging_sets,
                           const std::vector<EditMethod>& methods,
                           const SearchConfig& cfg_template, uint64_t split_seed);

/// Runs the full coarse grid per method on the detector split and collects
/// per-configuration held-out accuracy distributions over seeds, gated at
/// both the strict and the permissive threshold.
SeedStats detector_boxstats(const Checkpoint& base, const SynthDataset& original_val,
                            const SynthDataset& detector_set,
                            const std::vector<EditMethod>& methods,
                            const SearchConfig& cfg_template, uint64_t split_seed);

/// Writes gen_matrix.csv, box_stats.csv, summary.json and runs.jsonl into
/// out_dir. All files are staged as temporaries and renamed only after every
/// write succeeded, so a failure never leaves a partial report behind.
/// Floating-point values are serialized with 17 significant digits.
void emit_reports(const GenMatrix* matrix, const SeedStats* stats,
                  const std::vector<RunRecord>& ledger,
                  const std::filesystem::path& out_dir);

// --- manifest-driven pipeline stages (the CLI surface) -------------------------

struct OutputLayout {
  std::filesystem::path root;
  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path base_train() const { return data_dir() / "base_train.ebds"; }
  std::filesystem::path base_val() const { return data_dir() / "base_val.ebds"; }
  std::filesystem::path aging(int d) const {
    return data_dir() / ("aging_" + std::to_string(d) + ".ebds");
  }
  std::filesystem::path detector() const { return data_dir() / "detector.ebds"; }
  std::filesystem::path checkpoint() const { return root / "base.ckpt"; }
  std::filesystem::path report_dir() const { return root / "report"; }
};

void run_gen_data(const RunManifest& m);
double run_train_base(const RunManifest& m);  // returns base val accuracy
GenMatrix run_aging_matrix(const RunManifest& m);
SeedStats run_detector_box(const RunManifest& m);
void run_combined_report(const RunManifest& m);

SearchConfig search_config_from(const RunManifest& m, EditMethod method);

}  // namespace editbench
