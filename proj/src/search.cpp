#include "editbench/search.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>

#include <nlohmann/json.hpp>

#include "editbench/parallel.hpp"
#include "editbench/rng.hpp"

namespace editbench {

namespace {
using json = nlohmann::json;

uint64_t lr_bits(double lr) { return std::bit_cast<uint64_t>(lr); }

uint64_t run_seed(const SearchConfig& cfg, int layer, double lr, int seed_index) {
  return derive_seed(cfg.seed, static_cast<uint64_t>(layer), lr_bits(lr),
                     static_cast<uint64_t>(seed_index));
}

std::vector<int> candidate_layers_for(const SearchConfig& cfg, const Network& net) {
  if (cfg.method == EditMethod::full) return {0};
  return net.weighted_layers();
}

// Ranking comparator for viable config groups: higher mean selection accuracy
// wins; ties go to smaller mean drop, then lower lr, then lower layer index.
bool better_group(const ConfigGroup& a, const ConfigGroup& b) {
  const double sa = a.mean_selection_accuracy(), sb = b.mean_selection_accuracy();
  if (sa != sb) return sa > sb;
  const double da = a.mean_drop_pp(), db = b.mean_drop_pp();
  if (da != db) return da < db;
  if (a.lr != b.lr) return a.lr < b.lr;
  return a.layer < b.layer;
}

struct RunTask {
  int layer;
  double lr;
  int seed_index;
};

// Executes one grid of (layer, lr, seed) tasks, evaluating selection and
// original-val accuracy through the cached prefix activations.
std::vector<RunRecord> execute_grid(const SearchContext& ctx, const SearchConfig& cfg,
                                    const SynthDataset& edit_train,
                                    const std::vector<Tensor>& select_cache,
                                    const std::vector<int32_t>& select_labels,
                                    const std::vector<RunTask>& tasks,
                                    RunPhase phase, const std::string& context_tag) {
  std::vector<RunRecord> records(tasks.size());
  const double base_acc = ctx.base->meta.base_val_accuracy;

  parallel_for(static_cast<int64_t>(tasks.size()), cfg.threads, [&](int64_t i) {
    const RunTask& task = tasks[static_cast<size_t>(i)];
    RunRecord rec;
    rec.phase = phase;
    rec.context = context_tag;
    rec.seed_index = task.seed_index;
    rec.tau_pp = cfg.tau_pp;
    rec.plan.method = cfg.method;
    rec.plan.target_layer = task.layer;
    rec.plan.rank = cfg.rank;
    rec.plan.lr = task.lr;
    rec.plan.steps = cfg.steps;
    rec.plan.seed = run_seed(cfg, task.layer, task.lr, task.seed_index);

    const auto t0 = std::chrono::steady_clock::now();
    try {
      EditOutcome outcome = run_edit(*ctx.base, rec.plan, edit_train);
      // Layers below the target are untouched, so evaluation resumes at the
      // first changed layer from the cached activations (the whole network
      // for full finetuning).
      const int resume = cfg.method == EditMethod::full ? 1 : task.layer;
      rec.selection_accuracy =
          evaluate_from(outcome.edited.network, resume,
                        select_cache[static_cast<size_t>(resume - 1)], select_labels);
      rec.original_val_accuracy =
          evaluate_from(outcome.edited.network, resume,
                        ctx.val_cache[static_cast<size_t>(resume - 1)],
                        ctx.original_val->labels);
      rec.baseline_drop_pp = (base_acc - rec.original_val_accuracy) * 100.0;
      rec.accepted = gate(base_acc, rec.original_val_accuracy, cfg.tau_pp);
      rec.reason = rec.accepted ? RejectReason::none : RejectReason::threshold;
    } catch (const TrainingError&) {
      rec.accepted = false;
      rec.reason = RejectReason::divergence;
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    records[static_cast<size_t>(i)] = std::move(rec);
  });
  return records;
}

// Groups a flat record list (seed-minor order) into per-config groups.
std::vector<ConfigGroup> group_records(const std::vector<RunRecord>& records,
                                       int seeds) {
  std::vector<ConfigGroup> groups;
  for (size_t i = 0; i < records.size(); i += static_cast<size_t>(seeds)) {
    ConfigGroup g;
    g.layer = records[i].plan.target_layer;
    g.lr = records[i].plan.lr;
    g.runs.assign(records.begin() + static_cast<int64_t>(i),
                  records.begin() + static_cast<int64_t>(i) + seeds);
    groups.push_back(std::move(g));
  }
  return groups;
}

std::vector<double> fine_grid(double center_lr, int points, double span) {
  std::vector<double> grid;
  if (points == 1) return {center_lr};
  for (int i = 0; i < points; ++i) {
    const double e = -1.0 + 2.0 * static_cast<double>(i) / (points - 1);
    grid.push_back(center_lr * std::pow(span, e));
  }
  grid[static_cast<size_t>(points / 2)] = center_lr;  // exact incumbent
  return grid;
}

}  // namespace

void SearchConfig::validate() const {
  if (coarse_lrs.empty()) throw UsageError("coarse lr grid is empty");
  if (!std::is_sorted(coarse_lrs.begin(), coarse_lrs.end()))
    throw UsageError("coarse lr grid must be sorted");
  for (double lr : coarse_lrs)
    if (lr <= 0.0) throw UsageError("learning rates must be > 0");
  if (fine_points < 1) throw UsageError("fine grid needs at least 1 point");
  if (fine_span < 1.0) throw UsageError("fine span must be >= 1");
  if (seeds < 1) throw UsageError("need at least 1 seed per configuration");
  if (tau_pp <= 0.0) throw UsageError("tau must be > 0");
  if (steps < 0) throw UsageError("step budget must be >= 0");
  if (rank < 1) throw UsageError("rank must be >= 1");
}

std::vector<double> SearchConfig::default_coarse_grid() {
  std::vector<double> grid;
  for (int i = 0; i < 7; ++i) grid.push_back(std::pow(10.0, -4.0 + 0.5 * i));
  return grid;
}

const char* reject_reason_name(RejectReason r) {
  switch (r) {
    case RejectReason::none: return "none";
    case RejectReason::threshold: return "threshold";
    case RejectReason::divergence: return "divergence";
  }
  return "?";
}

const char* run_phase_name(RunPhase p) {
  switch (p) {
    case RunPhase::coarse: return "coarse";
    case RunPhase::fine: return "fine";
    case RunPhase::box: return "box";
  }
  return "?";
}

std::string run_record_json(const RunRecord& rec) {
  json j;
  j["phase"] = run_phase_name(rec.phase);
  j["context"] = rec.context;
  j["method"] = edit_method_name(rec.plan.method);
  j["layer"] = rec.plan.target_layer;
  j["lr"] = rec.plan.lr;
  j["rank"] = rec.plan.method == EditMethod::low_rank ? json(rec.plan.rank) : json();
  j["steps"] = rec.plan.steps;
  j["seed_index"] = rec.seed_index;
  j["seed"] = rec.plan.seed;
  j["tau_pp"] = rec.tau_pp;
  j["selection_accuracy"] =
      rec.selection_accuracy < 0.0 ? json() : json(rec.selection_accuracy);
  j["test_accuracy"] = rec.test_accuracy < 0.0 ? json() : json(rec.test_accuracy);
  j["original_val_accuracy"] =
      rec.original_val_accuracy < 0.0 ? json() : json(rec.original_val_accuracy);
  j["baseline_drop_pp"] =
      rec.original_val_accuracy < 0.0 ? json() : json(rec.baseline_drop_pp);
  j["accepted"] = rec.accepted;
  j["reason"] = reject_reason_name(rec.reason);
  j["wall_ms"] = rec.wall_ms;
  return j.dump();
}

int ConfigGroup::accepted_count() const {
  int n = 0;
  for (const auto& r : runs) n += r.accepted ? 1 : 0;
  return n;
}

double ConfigGroup::mean_selection_accuracy() const {
  double s = 0.0;
  int n = 0;
  for (const auto& r : runs)
    if (r.accepted) {
      s += r.selection_accuracy;
      ++n;
    }
  return n > 0 ? s / n : -1.0;
}

double ConfigGroup::mean_drop_pp() const {
  double s = 0.0;
  int n = 0;
  for (const auto& r : runs)
    if (r.accepted) {
      s += r.baseline_drop_pp;
      ++n;
    }
  return n > 0 ? s / n : 0.0;
}

bool gate(double base_val_accuracy, double edited_val_accuracy, double tau_pp) {
  return (base_val_accuracy - edited_val_accuracy) * 100.0 <= tau_pp;
}

bool gate(const EditOutcome& outcome, double tau_pp) {
  if (!outcome.has_original_val())
    throw UsageError("gate() needs an outcome with original-val accuracy");
  return outcome.baseline_drop_pp <= tau_pp;
}

SearchContext SearchContext::make(const Checkpoint& base,
                                  const SynthDataset& original_val) {
  if (original_val.empty()) throw UsageError("original validation set is empty");
  SearchContext ctx;
  ctx.base = &base;
  ctx.original_val = &original_val;
  ctx.val_cache = prefix_activations(base.network, original_val.images);
  return ctx;
}

CoarseResult coarse_search(const SearchContext& ctx, const SearchConfig& cfg,
                           const SynthDataset& edit_train,
                           const SynthDataset& edit_select,
                           const std::string& context_tag) {
  cfg.validate();
  if (edit_train.empty() || edit_select.empty())
    throw UsageError("search needs nonempty edit/select sets");

  CoarseResult result;
  result.candidate_layers = candidate_layers_for(cfg, ctx.base->network);

  const std::vector<Tensor> select_cache =
      prefix_activations(ctx.base->network, edit_select.images);

  std::vector<RunTask> tasks;
  for (int layer : result.candidate_layers)
    for (double lr : cfg.coarse_lrs)
      for (int s = 0; s < cfg.seeds; ++s) tasks.push_back({layer, lr, s});

  result.runs = execute_grid(ctx, cfg, edit_train, select_cache, edit_select.labels,
                             tasks, RunPhase::coarse, context_tag);

  const std::vector<ConfigGroup> groups = group_records(result.runs, cfg.seeds);
  const size_t lrs = cfg.coarse_lrs.size();
  for (size_t li = 0; li < result.candidate_layers.size(); ++li) {
    std::optional<ConfigGroup> best;
    for (size_t gi = li * lrs; gi < (li + 1) * lrs; ++gi) {
      const ConfigGroup& g = groups[gi];
      if (!g.viable()) continue;
      if (!best || better_group(g, *best)) best = g;
    }
    result.best_per_layer.push_back(std::move(best));
  }
  return result;
}

SearchOutcome fine_search(const SearchContext& ctx, const SearchConfig& cfg,
                          const SynthDataset& edit_train,
                          const SynthDataset& edit_select,
                          const CoarseResult& coarse,
                          const std::string& context_tag) {
  cfg.validate();

  SearchOutcome out;
  out.runs = coarse.runs;

  // Rank the layers that produced a viable coarse config; take the top two.
  std::vector<const ConfigGroup*> ranked;
  for (const auto& g : coarse.best_per_layer)
    if (g.has_value()) ranked.push_back(&*g);
  if (ranked.empty()) return out;  // no viable configuration anywhere
  std::sort(ranked.begin(), ranked.end(),
            [](const ConfigGroup* a, const ConfigGroup* b) { return better_group(*a, *b); });
  if (ranked.size() > 2) ranked.resize(2);

  const std::vector<Tensor> select_cache =
      prefix_activations(ctx.base->network, edit_select.images);

  std::vector<RunTask> tasks;
  for (const ConfigGroup* g : ranked)
    for (double lr : fine_grid(g->lr, cfg.fine_points, cfg.fine_span))
      for (int s = 0; s < cfg.seeds; ++s) tasks.push_back({g->layer, lr, s});

  std::vector<RunRecord> fine_runs =
      execute_grid(ctx, cfg, edit_train, select_cache, edit_select.labels, tasks,
                   RunPhase::fine, context_tag);

  std::optional<ConfigGroup> best;
  for (ConfigGroup& g : group_records(fine_runs, cfg.seeds)) {
    if (!g.viable()) continue;
    if (!best || better_group(g, *best)) best = std::move(g);
  }
  out.winner = std::move(best);
  out.runs.insert(out.runs.end(), fine_runs.begin(), fine_runs.end());
  return out;
}

SearchOutcome run_search(const SearchContext& ctx, const SearchConfig& cfg,
                         const SynthDataset& edit_train,
                         const SynthDataset& edit_select,
                         const std::string& context_tag) {
  const CoarseResult coarse =
      coarse_search(ctx, cfg, edit_train, edit_select, context_tag);
  return fine_search(ctx, cfg, edit_train, edit_select, coarse, context_tag);
}

EditOutcome replay_run(const Checkpoint& base, const RunRecord& rec,
                       const SynthDataset& edit_train) {
  return run_edit(base, rec.plan, edit_train);
}

}  // namespace editbench
