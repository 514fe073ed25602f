// Command-line driver for the model-editing benchmark: dataset generation,
// base training, single edits, hyperparameter search, and the full
// cross-generalization / detector reports. Every experiment is driven by a
// manifest file so results are reproducible byte-for-byte.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "editbench/checkpoint.hpp"
#include "editbench/editing.hpp"
#include "editbench/manifest.hpp"
#include "editbench/report.hpp"
#include "editbench/rng.hpp"
#include "editbench/search.hpp"
#include "editbench/shiftbench.hpp"

namespace {

using namespace editbench;
using json = nlohmann::json;

struct GlobalOpts {
  std::string config = "manifest.txt";
  std::optional<uint64_t> seed;
  std::optional<std::string> out;
};

RunManifest load_manifest(const GlobalOpts& g) {
  if (!std::filesystem::exists(g.config))
    throw UsageError("config file not found: " + g.config);
  RunManifest m = RunManifest::load(g.config);
  if (g.seed) m.seed = *g.seed;
  if (g.out) m.out_dir = *g.out;
  return m;
}

// Loads the dataset named by --dataset ("aging-<D>" or "detector") and splits
// it exactly the way the report stages do.
struct EditSplit {
  SynthDataset learn;
  SynthDataset test;
};

EditSplit load_edit_split(const RunManifest& m, const std::string& dataset) {
  OutputLayout out{m.out_dir};
  const uint64_t split_seed = derive_seed(m.seed, 0x73706c6974ULL);
  SynthDataset set;
  uint64_t tag;
  if (dataset == "detector") {
    set = SynthDataset::load(out.detector());
    tag = 0x626f78ULL;
  } else if (dataset.rfind("aging-", 0) == 0) {
    const int d = std::stoi(dataset.substr(6));
    set = SynthDataset::load(out.aging(d));
    tag = static_cast<uint64_t>(d);
  } else {
    throw UsageError("unknown dataset '" + dataset +
                     "' (expected aging-<D> or detector)");
  }
  auto halves = split_5050(set, derive_seed(split_seed, tag));
  return {std::move(halves.first), std::move(halves.second)};
}

int cmd_gen_data(const RunManifest& m) {
  run_gen_data(m);
  std::cout << "datasets written to " << OutputLayout{m.out_dir}.data_dir().string()
            << "\n";
  return 0;
}

int cmd_train_base(const RunManifest& m) {
  const double acc = run_train_base(m);
  std::cout << "base checkpoint written, validation accuracy "
            << acc * 100.0 << "%\n";
  return 0;
}

int cmd_edit(const RunManifest& m, const std::string& dataset,
             const std::string& method, int layer, double lr, int rank, int steps,
             uint64_t seed) {
  OutputLayout out{m.out_dir};
  Checkpoint base = Checkpoint::load(out.checkpoint());
  SynthDataset val = SynthDataset::load(out.base_val());
  EditSplit split = load_edit_split(m, dataset);

  EditPlan plan;
  plan.method = edit_method_from_name(method);
  plan.target_layer = layer;
  plan.lr = lr;
  plan.rank = rank >= 1 ? rank : m.rank;
  plan.steps = steps >= 0 ? steps : m.steps;
  plan.seed = seed;

  EditEvalSets eval{&split.test, &val};
  EditOutcome outcome = run_edit(base, plan, split.learn, eval);

  json j;
  j["dataset"] = dataset;
  j["method"] = method;
  j["layer"] = plan.target_layer;
  j["lr"] = plan.lr;
  j["rank"] = plan.rank;
  j["steps"] = plan.steps;
  j["seed"] = plan.seed;
  j["edit_test_accuracy"] = outcome.edit_eval_accuracy;
  j["original_val_accuracy"] = outcome.original_val_accuracy;
  j["baseline_drop_pp"] = outcome.baseline_drop_pp;
  j["accepted_at_tau"] = gate(outcome, m.tau);
  j["tau_pp"] = m.tau;
  j["loss_trajectory"] = outcome.loss_trajectory;

  std::error_code ec;
  std::filesystem::create_directories(out.report_dir(), ec);
  if (ec) throw IoError("cannot create " + out.report_dir().string());
  const auto path = out.report_dir() / "edit_outcome.json";
  std::ofstream of(path, std::ios::trunc);
  if (!of) throw IoError("cannot write " + path.string());
  of << j.dump(2) << "\n";

  std::cout << "edit outcome written to " << path.string() << "\n";
  return 0;
}

int cmd_search(const RunManifest& m, const std::string& dataset,
               const std::string& method) {
  OutputLayout out{m.out_dir};
  Checkpoint base = Checkpoint::load(out.checkpoint());
  SynthDataset val = SynthDataset::load(out.base_val());
  EditSplit split = load_edit_split(m, dataset);

  SearchConfig cfg = search_config_from(m, edit_method_from_name(method));
  cfg.seed = derive_seed(m.seed, static_cast<uint64_t>(cfg.method) + 101,
                         dataset == "detector" ? 0x626f78ULL
                                               : static_cast<uint64_t>(std::stoi(
                                                     dataset.substr(6))));

  SearchContext ctx = SearchContext::make(base, val);
  SearchOutcome outcome = run_search(ctx, cfg, split.learn, split.learn, dataset);

  const auto dir = out.report_dir() / ("search-" + method + "-" + dataset);
  emit_reports(nullptr, nullptr, outcome.runs, dir);

  if (outcome.winner) {
    const ConfigGroup& w = *outcome.winner;
    std::cout << "winner: layer " << w.layer << ", lr " << w.lr
              << ", mean selection accuracy "
              << w.mean_selection_accuracy() * 100.0 << "%, mean drop "
              << w.mean_drop_pp() << " pp (" << w.accepted_count() << "/"
              << w.runs.size() << " seeds accepted)\n";
  } else {
    std::cout << "no viable configuration\n";
  }
  std::cout << "ledger written to " << dir.string() << "\n";
  return 0;
}

int cmd_aging_matrix(const RunManifest& m) {
  GenMatrix matrix = run_aging_matrix(m);
  int present = 0;
  for (const auto& row : matrix.rows) present += row.present ? 1 : 0;
  std::cout << "aging matrix: " << present << "/" << matrix.rows.size()
            << " rows present, " << matrix.ledger.size() << " runs; report in "
            << (OutputLayout{m.out_dir}.report_dir() / "aging").string() << "\n";
  return 0;
}

int cmd_detector_box(const RunManifest& m) {
  SeedStats stats = run_detector_box(m);
  std::cout << "detector box stats: " << stats.entries.size() << " configurations, "
            << stats.ledger.size() << " runs; report in "
            << (OutputLayout{m.out_dir}.report_dir() / "detector").string() << "\n";
  return 0;
}

int cmd_report(const RunManifest& m) {
  run_combined_report(m);
  std::cout << "combined report written to "
            << OutputLayout{m.out_dir}.report_dir().string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"editbench: model editing under synthetic distribution shifts"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config, "Manifest file")->capture_default_str();
  uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Override the manifest seed");
  std::string out_value;
  auto* out_opt = app.add_option("--out", out_value, "Override the output directory")
                      ->envname("EDITBENCH_OUT");

  auto* gen = app.add_subcommand("gen-data", "Generate base/aging/detector datasets");
  auto* train = app.add_subcommand("train-base", "Train the base classifier");

  auto* edit = app.add_subcommand("edit", "Run a single edit plan");
  std::string edit_dataset = "detector", edit_method = "low_rank";
  int edit_layer = 0, edit_rank = -1, edit_steps = -1;
  double edit_lr = 1e-3;
  uint64_t edit_seed = 0;
  edit->add_option("--dataset", edit_dataset, "aging-<D> or detector")
      ->capture_default_str();
  edit->add_option("--method", edit_method, "low_rank | surgical | full")
      ->capture_default_str();
  edit->add_option("--layer", edit_layer, "Target layer (1-based)");
  edit->add_option("--lr", edit_lr, "Learning rate")->capture_default_str();
  edit->add_option("--rank", edit_rank, "Adapter rank (default: manifest)");
  edit->add_option("--steps", edit_steps, "Step budget (default: manifest)");
  edit->add_option("--edit-seed", edit_seed, "Plan seed")->capture_default_str();

  auto* search = app.add_subcommand("search", "Gated coarse-to-fine search");
  std::string search_dataset = "detector", search_method = "low_rank";
  search->add_option("--dataset", search_dataset, "aging-<D> or detector")
      ->capture_default_str();
  search->add_option("--method", search_method, "low_rank | surgical | full")
      ->capture_default_str();

  auto* aging = app.add_subcommand("aging-matrix", "Cross-generalization matrix");
  auto* detector = app.add_subcommand("detector-box", "Detector box statistics");
  auto* report = app.add_subcommand("report", "Full combined report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    if (seed_opt->count() > 0) g.seed = seed_value;
    if (out_opt->count() > 0) g.out = out_value;
    const RunManifest m = load_manifest(g);

    if (gen->parsed()) return cmd_gen_data(m);
    if (train->parsed()) return cmd_train_base(m);
    if (edit->parsed())
      return cmd_edit(m, edit_dataset, edit_method, edit_layer, edit_lr, edit_rank,
                      edit_steps, edit_seed);
    if (search->parsed()) return cmd_search(m, search_dataset, search_method);
    if (aging->parsed()) return cmd_aging_matrix(m);
    if (detector->parsed()) return cmd_detector_box(m);
    if (report->parsed()) return cmd_report(m);
    throw UsageError("no subcommand given");
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
