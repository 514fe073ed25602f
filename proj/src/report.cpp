#include "editbench/report.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "editbench/parallel.hpp"
#include "editbench/rng.hpp"

namespace editbench {

namespace {

using json = nlohmann::json;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void require_heldout(const SynthDataset& d, const std::string& where) {
  if (d.split != SplitTag::val)
    throw UsageError("evaluation leak: " + where + " expects a held-out half, got '" +
                     split_tag_name(d.split) + "' (" + d.id + ")");
}

uint64_t method_tag(EditMethod m) { return static_cast<uint64_t>(m) + 101; }

}  // namespace

const MatrixRow& GenMatrix::row(EditMethod m, int edit_duration) const {
  for (const auto& r : rows)
    if (r.method == m && r.edit_duration == edit_duration) return r;
  throw UsageError("no matrix row for method " + std::string(edit_method_name(m)) +
                   ", duration " + std::to_string(edit_duration));
}

Quartiles compute_quartiles(const std::vector<double>& sorted) {
  if (sorted.empty()) throw UsageError("quartiles of an empty sample");
  auto q = [&](double p) {
    const double h = p * static_cast<double>(sorted.size() - 1);
    const size_t lo = static_cast<size_t>(h);
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  Quartiles out;
  out.q1 = q(0.25);
  out.median = q(0.5);
  out.q3 = q(0.75);
  out.lo = sorted.front();
  out.hi = sorted.back();
  return out;
}

// --- cross-generalization matrix ---------------------------------------------------

GenMatrix build_gen_matrix(const Checkpoint& base, const SynthDataset& original_val,
                           const std::vector<std::pair<int, SynthDataset>>& aging_sets,
                           const std::vector<EditMethod>& methods,
                           const SearchConfig& cfg_template, uint64_t split_seed) {
  if (aging_sets.empty()) throw UsageError("gen matrix needs aging datasets");
  if (!base.meta.dataset_id.empty() && original_val.id != base.meta.dataset_id)
    throw UsageError("original validation set '" + original_val.id +
                     "' does not match the checkpoint's recorded set '" +
                     base.meta.dataset_id + "'");

  GenMatrix matrix;
  matrix.methods = methods;
  matrix.tau_pp = cfg_template.tau_pp;

  // Split every duration once; cache test-half activations for resumed eval.
  struct DurationData {
    int duration;
    SynthDataset edit_half;
    SynthDataset test_half;
    std::vector<Tensor> test_cache;
  };
  std::vector<DurationData> durs;
  for (const auto& [d, set] : aging_sets) {
    DurationData dd;
    dd.duration = d;
    auto halves = split_5050(set, derive_seed(split_seed, static_cast<uint64_t>(d)));
    dd.edit_half = std::move(halves.first);
    dd.test_half = std::move(halves.second);
    require_heldout(dd.test_half, "matrix cell");
    dd.test_cache = prefix_activations(base.network, dd.test_half.images);
    durs.push_back(std::move(dd));
    matrix.durations.push_back(d);
  }

  for (const auto& dd : durs)
    matrix.baseline.push_back(evaluate(base.network, dd.test_half));

  SearchContext ctx = SearchContext::make(base, original_val);

  for (EditMethod method : methods) {
    for (const auto& dd : durs) {
      SearchConfig cfg = cfg_template;
      cfg.method = method;
      cfg.seed = derive_seed(cfg_template.seed, method_tag(method),
                             static_cast<uint64_t>(dd.duration));
      const std::string tag = "aging-" + std::to_string(dd.duration);

      SearchOutcome outcome = run_search(ctx, cfg, dd.edit_half, dd.edit_half, tag);
      matrix.ledger.insert(matrix.ledger.end(), outcome.runs.begin(),
                           outcome.runs.end());

      MatrixRow row;
      row.method = method;
      row.edit_duration = dd.duration;
      row.total_runs = static_cast<int>(outcome.runs.size());
      for (const auto& r : outcome.runs) row.accepted_runs += r.accepted ? 1 : 0;

      if (!outcome.winner) {
        row.present = false;
        row.absent_reason = "no viable configuration";
        matrix.rows.push_back(std::move(row));
        continue;
      }

      const ConfigGroup& winner = *outcome.winner;
      row.present = true;
      row.winner_layer = winner.layer;
      row.winner_lr = winner.lr;
      row.mean_drop_pp = winner.mean_drop_pp();
      row.cells.assign(durs.size(), CellStats{});

      const int resume = method == EditMethod::full ? 1 : winner.layer;
      for (const RunRecord& run : winner.runs) {
        if (!run.accepted) continue;
        EditOutcome eo = replay_run(base, run, dd.edit_half);
        for (size_t j = 0; j < durs.size(); ++j) {
          const double acc = evaluate_from(
              eo.edited.network, resume,
              durs[j].test_cache[static_cast<size_t>(resume - 1)],
              durs[j].test_half.labels);
          CellStats& cell = row.cells[j];
          if (cell.seeds == 0) {
            cell.mean = cell.min = cell.max = acc;
          } else {
            cell.mean += acc;
            cell.min = std::min(cell.min, acc);
            cell.max = std::max(cell.max, acc);
          }
          ++cell.seeds;
        }
      }
      for (CellStats& cell : row.cells)
        if (cell.seeds > 1) cell.mean /= cell.seeds;
      matrix.rows.push_back(std::move(row));
    }
  }
  return matrix;
}

// --- detector box statistics --------------------------------------------------------

SeedStats detector_boxstats(const Checkpoint& base, const SynthDataset& original_val,
                            const SynthDataset& detector_set,
                            const std::vector<EditMethod>& methods,
                            const SearchConfig& cfg_template, uint64_t split_seed) {
  if (!base.meta.dataset_id.empty() && original_val.id != base.meta.dataset_id)
    throw UsageError("original validation set does not match the checkpoint");

  auto halves = split_5050(detector_set, derive_seed(split_seed, 0x626f78ULL));
  const SynthDataset& edit_half = halves.first;
  const SynthDataset& test_half = halves.second;
  require_heldout(test_half, "box stats");

  SearchContext ctx = SearchContext::make(base, original_val);
  const std::vector<Tensor> test_cache =
      prefix_activations(base.network, test_half.images);

  SeedStats stats;
  const double base_acc = base.meta.base_val_accuracy;

  for (EditMethod method : methods) {
    SearchConfig cfg = cfg_template;
    cfg.method = method;
    cfg.seed = derive_seed(cfg_template.seed, method_tag(method), 0x626f78ULL);
    cfg.validate();

    std::vector<int> layers = method == EditMethod::full
                                  ? std::vector<int>{0}
                                  : base.network.weighted_layers();
    struct Task {
      int layer;
      double lr;
      int seed_index;
    };
    std::vector<Task> tasks;
    for (int layer : layers)
      for (double lr : cfg.coarse_lrs)
        for (int s = 0; s < cfg.seeds; ++s) tasks.push_back({layer, lr, s});

    std::vector<RunRecord> records(tasks.size());
    parallel_for(static_cast<int64_t>(tasks.size()), cfg.threads, [&](int64_t i) {
      const Task& task = tasks[static_cast<size_t>(i)];
      RunRecord rec;
      rec.phase = RunPhase::box;
      rec.context = "detector";
      rec.seed_index = task.seed_index;
      rec.tau_pp = stats.tau_strict;
      rec.plan.method = method;
      rec.plan.target_layer = task.layer;
      rec.plan.rank = cfg.rank;
      rec.plan.lr = task.lr;
      rec.plan.steps = cfg.steps;
      rec.plan.seed = derive_seed(cfg.seed, static_cast<uint64_t>(task.layer),
                                  std::bit_cast<uint64_t>(task.lr),
                                  static_cast<uint64_t>(task.seed_index));
      const auto t0 = std::chrono::steady_clock::now();
      try {
        EditOutcome eo = run_edit(base, rec.plan, edit_half);
        const int resume = method == EditMethod::full ? 1 : task.layer;
        rec.test_accuracy =
            evaluate_from(eo.edited.network, resume,
                          test_cache[static_cast<size_t>(resume - 1)],
                          test_half.labels);
        rec.original_val_accuracy =
            evaluate_from(eo.edited.network, resume,
                          ctx.val_cache[static_cast<size_t>(resume - 1)],
                          original_val.labels);
        rec.baseline_drop_pp = (base_acc - rec.original_val_accuracy) * 100.0;
        rec.accepted = gate(base_acc, rec.original_val_accuracy, stats.tau_strict);
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

    stats.ledger.insert(stats.ledger.end(), records.begin(), records.end());

    // Group per (layer, lr) and gate at both thresholds.
    for (size_t i = 0; i < records.size(); i += static_cast<size_t>(cfg.seeds)) {
      BoxEntry entry;
      entry.method = method;
      entry.layer = records[i].plan.target_layer;
      entry.lr = records[i].plan.lr;
      auto fill = [&](BoxGroup& group, double tau) {
        for (int s = 0; s < cfg.seeds; ++s) {
          const RunRecord& r = records[i + static_cast<size_t>(s)];
          const bool pass = r.reason != RejectReason::divergence &&
                            r.baseline_drop_pp <= tau;
          if (pass)
            group.samples.push_back(r.test_accuracy);
          else
            ++group.gated_out;
        }
        std::sort(group.samples.begin(), group.samples.end());
        group.sample_count = static_cast<int>(group.samples.size());
        if (group.sample_count > 0) group.quartiles = compute_quartiles(group.samples);
      };
      fill(entry.strict, stats.tau_strict);
      fill(entry.permissive, stats.tau_permissive);
      stats.entries.push_back(std::move(entry));
    }
  }
  return stats;
}

// --- report emission ------------------------------------------------------------------

namespace {

std::string matrix_csv(const GenMatrix& m) {
  std::ostringstream os;
  os << "method,edit_duration,eval_duration,status,seed_count,mean_accuracy,"
        "min_accuracy,max_accuracy,note\n";
  for (size_t j = 0; j < m.durations.size(); ++j) {
    os << "baseline,,"
       << m.durations[j] << ",ok,1," << fmt17(m.baseline[j]) << ","
       << fmt17(m.baseline[j]) << "," << fmt17(m.baseline[j]) << ",\n";
  }
  for (const MatrixRow& row : m.rows) {
    if (!row.present) {
      os << edit_method_name(row.method) << "," << row.edit_duration
         << ",,absent,0,,,," << row.absent_reason << "\n";
      continue;
    }
    for (size_t j = 0; j < m.durations.size(); ++j) {
      const CellStats& c = row.cells[j];
      os << edit_method_name(row.method) << "," << row.edit_duration << ","
         << m.durations[j] << ",ok," << c.seeds << "," << fmt17(c.mean) << ","
         << fmt17(c.min) << "," << fmt17(c.max) << ",\n";
    }
  }
  return os.str();
}

std::string box_csv(const SeedStats& s) {
  std::ostringstream os;
  os << "method,layer,lr,tau_pp,sample_count,gated_out,median,q1,q3,whisker_lo,"
        "whisker_hi\n";
  auto line = [&](const BoxEntry& e, const BoxGroup& g, double tau) {
    os << edit_method_name(e.method) << "," << e.layer << "," << fmt17(e.lr) << ","
       << fmt17(tau) << "," << g.sample_count << "," << g.gated_out << ",";
    if (g.sample_count > 0) {
      os << fmt17(g.quartiles.median) << "," << fmt17(g.quartiles.q1) << ","
         << fmt17(g.quartiles.q3) << "," << fmt17(g.quartiles.lo) << ","
         << fmt17(g.quartiles.hi);
    } else {
      os << ",,,,";
    }
    os << "\n";
  };
  for (const BoxEntry& e : s.entries) {
    line(e, e.strict, s.tau_strict);
    line(e, e.permissive, s.tau_permissive);
  }
  return os.str();
}

json matrix_summary(const GenMatrix& m) {
  json j;
  j["tau_pp"] = m.tau_pp;
  j["durations"] = m.durations;
  json baseline = json::object();
  for (size_t i = 0; i < m.durations.size(); ++i)
    baseline[std::to_string(m.durations[i])] = m.baseline[i];
  j["baseline"] = baseline;
  json rows = json::array();
  for (const MatrixRow& row : m.rows) {
    json r;
    r["method"] = edit_method_name(row.method);
    r["edit_duration"] = row.edit_duration;
    r["present"] = row.present;
    r["total_runs"] = row.total_runs;
    r["accepted_runs"] = row.accepted_runs;
    if (!row.present) {
      r["absent_reason"] = row.absent_reason;
    } else {
      r["winner_layer"] = row.winner_layer;
      r["winner_lr"] = row.winner_lr;
      r["mean_baseline_drop_pp"] = row.mean_drop_pp;
      json cells = json::array();
      for (size_t jx = 0; jx < row.cells.size(); ++jx) {
        json c;
        c["eval_duration"] = m.durations[jx];
        c["seeds"] = row.cells[jx].seeds;
        c["mean"] = row.cells[jx].mean;
        c["min"] = row.cells[jx].min;
        c["max"] = row.cells[jx].max;
        cells.push_back(c);
      }
      r["cells"] = cells;
    }
    rows.push_back(r);
  }
  j["rows"] = rows;
  return j;
}

json box_summary(const SeedStats& s) {
  json j;
  j["tau_strict"] = s.tau_strict;
  j["tau_permissive"] = s.tau_permissive;
  json entries = json::array();
  for (const BoxEntry& e : s.entries) {
    json x;
    x["method"] = edit_method_name(e.method);
    x["layer"] = e.layer;
    x["lr"] = e.lr;
    auto dump_group = [](const BoxGroup& g) {
      json gj;
      gj["sample_count"] = g.sample_count;
      gj["gated_out"] = g.gated_out;
      gj["samples"] = g.samples;
      if (g.sample_count > 0) {
        gj["median"] = g.quartiles.median;
        gj["q1"] = g.quartiles.q1;
        gj["q3"] = g.quartiles.q3;
        gj["whisker_lo"] = g.quartiles.lo;
        gj["whisker_hi"] = g.quartiles.hi;
      }
      return gj;
    };
    x["strict"] = dump_group(e.strict);
    x["permissive"] = dump_group(e.permissive);
    entries.push_back(x);
  }
  j["entries"] = entries;
  return j;
}

}  // namespace

void emit_reports(const GenMatrix* matrix, const SeedStats* stats,
                  const std::vector<RunRecord>& ledger,
                  const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create report directory " + out_dir.string());

  struct Staged {
    std::filesystem::path tmp, final_path;
  };
  std::vector<Staged> staged;
  auto stage = [&](const std::string& name, const std::string& content) {
    const auto tmp = out_dir / ("." + name + ".tmp");
    const auto final_path = out_dir / name;
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed: " + tmp.string());
    }
    out.close();
    staged.push_back({tmp, final_path});
  };

  try {
    if (matrix) stage("gen_matrix.csv", matrix_csv(*matrix));
    if (stats) stage("box_stats.csv", box_csv(*stats));

    json summary;
    if (matrix) summary["aging_matrix"] = matrix_summary(*matrix);
    if (stats) summary["detector_box"] = box_summary(*stats);
    {
      json gating = json::object();
      for (const RunRecord& r : ledger) {
        const std::string key = r.context + "/" + edit_method_name(r.plan.method);
        json& g = gating[key];
        g["total"] = g.value("total", 0) + 1;
        g["accepted"] = g.value("accepted", 0) + (r.accepted ? 1 : 0);
        g["rejected_threshold"] =
            g.value("rejected_threshold", 0) +
            (r.reason == RejectReason::threshold ? 1 : 0);
        g["rejected_divergence"] =
            g.value("rejected_divergence", 0) +
            (r.reason == RejectReason::divergence ? 1 : 0);
      }
      summary["gating"] = gating;
      summary["run_count"] = ledger.size();
    }
    stage("summary.json", summary.dump(2) + "\n");

    std::string lines;
    for (const RunRecord& r : ledger) {
      lines += run_record_json(r);
      lines += '\n';
    }
    stage("runs.jsonl", lines);

    for (const Staged& s : staged) {
      std::filesystem::rename(s.tmp, s.final_path, ec);
      if (ec) throw IoError("cannot finalize " + s.final_path.string());
    }
  } catch (...) {
    for (const Staged& s : staged) std::filesystem::remove(s.tmp, ec);
    throw;
  }
}

// --- manifest-driven pipeline stages -----------------------------------------------

SearchConfig search_config_from(const RunManifest& m, EditMethod method) {
  SearchConfig cfg;
  cfg.method = method;
  if (!m.coarse_lrs.empty()) cfg.coarse_lrs = m.coarse_lrs;
  cfg.fine_points = m.fine_points;
  cfg.fine_span = m.fine_span;
  cfg.seeds = m.seeds;
  cfg.tau_pp = m.tau;
  cfg.steps = m.steps;
  cfg.rank = m.rank;
  cfg.seed = m.seed;
  cfg.threads = m.threads;
  return cfg;
}

void run_gen_data(const RunManifest& m) {
  OutputLayout out{m.out_dir};
  std::error_code ec;
  std::filesystem::create_directories(out.data_dir(), ec);
  if (ec) throw IoError("cannot create " + out.data_dir().string());

  BasePair base = gen_base(m.classes, m.base_count, m.seed);
  base.train.save(out.base_train());
  base.val.save(out.base_val());

  for (int d : m.durations) {
    SynthDataset raw = gen_textures(
        m.classes, m.age_count,
        derive_seed(m.seed, 0x6167652d726177ULL, static_cast<uint64_t>(d)));
    const bool confounded =
        std::find(m.confounded_durations.begin(), m.confounded_durations.end(), d) !=
        m.confounded_durations.end();
    SynthDataset aged = apply_aging(
        raw, d, confounded,
        derive_seed(m.seed, 0x6167652d7368ULL, static_cast<uint64_t>(d)));
    aged.save(out.aging(d));
  }

  SynthDataset det_raw =
      gen_textures(m.classes, m.detector_count, derive_seed(m.seed, 0x6465742d726177ULL));
  SynthDataset det =
      apply_detector(det_raw, m.detector, derive_seed(m.seed, 0x6465742d7368ULL));
  det.save(out.detector());
}

double run_train_base(const RunManifest& m) {
  OutputLayout out{m.out_dir};
  SynthDataset train = SynthDataset::load(out.base_train());
  SynthDataset val = SynthDataset::load(out.base_val());
  Checkpoint ckpt =
      train_base(reference_arch(1, 32, m.classes), m.classes, train, val, m.train_lr,
                 m.train_steps, derive_seed(m.seed, 0x747261696eULL));
  ckpt.save(out.checkpoint());
  return ckpt.meta.base_val_accuracy;
}

GenMatrix run_aging_matrix(const RunManifest& m) {
  OutputLayout out{m.out_dir};
  Checkpoint base = Checkpoint::load(out.checkpoint());
  SynthDataset val = SynthDataset::load(out.base_val());

  std::vector<std::pair<int, SynthDataset>> aging_sets;
  for (int d : m.durations) aging_sets.emplace_back(d, SynthDataset::load(out.aging(d)));

  SearchConfig cfg = search_config_from(m, EditMethod::low_rank);
  GenMatrix matrix = build_gen_matrix(base, val, aging_sets, m.edit_methods(), cfg,
                                      derive_seed(m.seed, 0x73706c6974ULL));
  emit_reports(&matrix, nullptr, matrix.ledger, out.report_dir() / "aging");
  return matrix;
}

SeedStats run_detector_box(const RunManifest& m) {
  OutputLayout out{m.out_dir};
  Checkpoint base = Checkpoint::load(out.checkpoint());
  SynthDataset val = SynthDataset::load(out.base_val());
  SynthDataset det = SynthDataset::load(out.detector());

  SearchConfig cfg = search_config_from(m, EditMethod::low_rank);
  SeedStats stats = detector_boxstats(base, val, det, m.edit_methods(), cfg,
                                      derive_seed(m.seed, 0x73706c6974ULL));
  emit_reports(nullptr, &stats, stats.ledger, out.report_dir() / "detector");
  return stats;
}

void run_combined_report(const RunManifest& m) {
  OutputLayout out{m.out_dir};
  Checkpoint base = Checkpoint::load(out.checkpoint());
  SynthDataset val = SynthDataset::load(out.base_val());

  std::vector<std::pair<int, SynthDataset>> aging_sets;
  for (int d : m.durations) aging_sets.emplace_back(d, SynthDataset::load(out.aging(d)));
  SynthDataset det = SynthDataset::load(out.detector());

  SearchConfig cfg = search_config_from(m, EditMethod::low_rank);
  GenMatrix matrix = build_gen_matrix(base, val, aging_sets, m.edit_methods(), cfg,
                                      derive_seed(m.seed, 0x73706c6974ULL));
  SeedStats stats = detector_boxstats(base, val, det, m.edit_methods(), cfg,
                                      derive_seed(m.seed, 0x73706c6974ULL));

  std::vector<RunRecord> ledger = matrix.ledger;
  ledger.insert(ledger.end(), stats.ledger.begin(), stats.ledger.end());
  emit_reports(&matrix, &stats, ledger, out.report_dir());
}

}  // namespace editbench
