#include "editbench/editing.hpp"

#include <cmath>

#include "editbench/rng.hpp"

namespace editbench {

const char* edit_method_name(EditMethod m) {
  switch (m) {
    case EditMethod::low_rank: return "low_rank";
    case EditMethod::surgical: return "surgical";
    case EditMethod::full: return "full";
  }
  return "?";
}

EditMethod edit_method_from_name(const std::string& name) {
  if (name == "low_rank") return EditMethod::low_rank;
  if (name == "surgical") return EditMethod::surgical;
  if (name == "full") return EditMethod::full;
  throw UsageError("unknown edit method: " + name);
}

void EditPlan::validate(const Network& net) const {
  if (lr <= 0.0) throw UsageError("edit learning rate must be > 0");
  if (steps < 0) throw UsageError("edit step budget must be >= 0");
  if (method == EditMethod::full) return;
  if (target_layer < 1 || target_layer > net.layer_count())
    throw UsageError("target layer " + std::to_string(target_layer) +
                     " out of range [1, " + std::to_string(net.layer_count()) + "]");
  if (!net.layer(target_layer).has_params())
    throw UsageError("target layer " + std::to_string(target_layer) + " (" +
                     layer_kind_name(net.layer(target_layer).spec.kind) +
                     ") holds no weights");
  if (method == EditMethod::low_rank && rank < 1)
    throw UsageError("low-rank edit needs rank >= 1");
}

namespace {

// Flattened weight extents for the adapter: dense [n_l x m_l] as-is, conv
// kernels as [c_out x c_in*k*k].
std::pair<int, int> flat_extents(const Tensor& weight) {
  const auto& s = weight.shape();
  int rows = s[0];
  int cols = 1;
  for (size_t i = 1; i < s.size(); ++i) cols *= s[i];
  return {rows, cols};
}

}  // namespace

LowRankAdapter LowRankAdapter::init(const Network& net, int layer, int rank,
                                    uint64_t seed) {
  if (rank < 1) throw UsageError("adapter rank must be >= 1");
  const Layer& target = net.layer(layer);
  if (!target.has_params())
    throw UsageError("adapter target layer holds no weights");
  const auto [rows, cols] = flat_extents(target.weight);

  LowRankAdapter a;
  a.target_layer = layer;
  a.rank = rank;
  a.u = Tensor::zeros({rows, rank});
  a.v = Tensor::zeros({cols, rank});
  Rng rng(derive_seed(seed, 0x61646170746572ULL));
  for (int64_t i = 0; i < a.v.size(); ++i) a.v[i] = rng.normal(0.0, 0.02);
  return a;
}

Tensor LowRankAdapter::delta(const Network& net) const {
  const Tensor& w = net.layer(target_layer).weight;
  const auto [rows, cols] = flat_extents(w);
  if (u.dim(0) != rows || v.dim(0) != cols || u.dim(1) != v.dim(1))
    throw UsageError("adapter extents " + u.shape_str() + "/" + v.shape_str() +
                     " do not match layer weight " + w.shape_str());
  Tensor d = Tensor::zeros(w.shape());
  const int r = rank;
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      double s = 0.0;
      for (int q = 0; q < r; ++q) s += u[i * r + q] * v[j * r + q];
      d[static_cast<int64_t>(i) * cols + j] = s;
    }
  return d;
}

WeightPatch LowRankAdapter::patch() const {
  WeightPatch p;
  p.layer = target_layer;
  Tensor pu = u, pv = v;
  p.apply = [pu, pv](Tape& tape, const Tensor& weight) {
    Tensor d = tape.matmul_nt(pu, pv);
    d = tape.reshape(d, weight.shape());
    return tape.add(weight, d);
  };
  return p;
}

Checkpoint materialize(const Checkpoint& base, const LowRankAdapter& adapter) {
  Checkpoint out;
  out.meta = base.meta;
  out.network = base.network.clone();
  Layer& target = out.network.layer(adapter.target_layer);
  Tensor d = adapter.delta(out.network);
  double* w = target.weight.data();
  const double* dd = d.data();
  for (int64_t i = 0; i < target.weight.size(); ++i) w[i] += dd[i];
  return out;
}

namespace detail {

EditOutcome run_sgd_edit(const Checkpoint& base, const EditPlan& plan,
                         const SynthDataset& edit_train, const EditEvalSets& eval,
                         int from_layer) {
  plan.validate(base.network);
  if (edit_train.empty()) throw UsageError("edit on empty dataset");

  Network net = base.network.clone();
  net.set_all_trainable(false);

  LowRankAdapter adapter;
  WeightPatch patch;
  const WeightPatch* patch_ptr = nullptr;
  std::vector<Tensor> params;

  switch (plan.method) {
    case EditMethod::low_rank:
      adapter = LowRankAdapter::init(net, plan.target_layer, plan.rank, plan.seed);
      adapter.u.set_requires_grad(true);
      adapter.v.set_requires_grad(true);
      params = {adapter.u, adapter.v};
      patch = adapter.patch();
      patch_ptr = &patch;
      break;
    case EditMethod::surgical: {
      net.set_trainable(plan.target_layer, true);
      params = net.trainable_parameters();
      break;
    }
    case EditMethod::full:
      net.set_all_trainable(true);
      params = net.trainable_parameters();
      break;
  }
  for (auto& t : params) t.set_requires_grad(true);

  if (from_layer < 1) from_layer = 1;
  if (plan.method == EditMethod::full) from_layer = 1;
  if (from_layer > 1) {
    // Only valid when everything below from_layer is frozen.
    if (plan.method != EditMethod::full && from_layer > plan.target_layer)
      throw UsageError("resume layer above the target layer");
  }

  // Frozen-prefix activations of the edit batch; computed once when resuming.
  Tensor inputs = edit_train.images;
  if (from_layer > 1) {
    Tape tape;
    inputs = base.network.forward_segment(tape, 1, from_layer - 1, inputs);
    inputs = inputs.clone();  // detach from the prefix tape
  }
  const Tensor targets = edit_train.onehot();

  EditOutcome out;
  out.loss_trajectory.reserve(static_cast<size_t>(plan.steps) + 1);

  for (int step = 0; step <= plan.steps; ++step) {
    Tape tape;
    Tensor probs, loss;
    try {
      probs = net.forward_from(tape, from_layer, inputs, patch_ptr);
      loss = tape.mse(probs, targets);
    } catch (const NumericError&) {
      throw TrainingError("edit diverged at step " + std::to_string(step), step);
    }
    const double loss_value = loss[0];
    if (!std::isfinite(loss_value))
      throw TrainingError("edit diverged at step " + std::to_string(step), step);
    out.loss_trajectory.push_back(loss_value);
    if (step == plan.steps) break;  // final loss recorded, no further update

    tape.backward(loss);
    for (auto& t : params) {
      if (!t.has_grad()) continue;
      double* d = t.data();
      const auto& g = t.grad();
      for (size_t i = 0; i < g.size(); ++i) d[i] -= plan.lr * g[i];
      t.zero_grad();
    }
  }

  for (auto& t : params) t.set_requires_grad(false);

  if (plan.method == EditMethod::low_rank) {
    Checkpoint frozen;
    frozen.meta = base.meta;
    frozen.network = std::move(net);
    out.edited = materialize(frozen, adapter);
  } else {
    out.edited.meta = base.meta;
    out.edited.network = std::move(net);
  }

  if (eval.edit_eval) out.edit_eval_accuracy = evaluate(out.edited.network, *eval.edit_eval);
  if (eval.original_val) {
    out.original_val_accuracy = evaluate(out.edited.network, *eval.original_val);
    out.baseline_drop_pp =
        (base.meta.base_val_accuracy - out.original_val_accuracy) * 100.0;
  }
  return out;
}

}  // namespace detail

EditOutcome low_rank_edit(const Checkpoint& base, const EditPlan& plan,
                          const SynthDataset& edit_train, const EditEvalSets& eval) {
  if (plan.method != EditMethod::low_rank)
    throw UsageError("plan method is not low_rank");
  return detail::run_sgd_edit(base, plan, edit_train, eval, plan.target_layer);
}

EditOutcome surgical_finetune(const Checkpoint& base, const EditPlan& plan,
                              const SynthDataset& edit_train,
                              const EditEvalSets& eval) {
  if (plan.method != EditMethod::surgical)
    throw UsageError("plan method is not surgical");
  return detail::run_sgd_edit(base, plan, edit_train, eval, plan.target_layer);
}

EditOutcome full_finetune(const Checkpoint& base, const EditPlan& plan,
                          const SynthDataset& edit_train, const EditEvalSets& eval) {
  if (plan.method != EditMethod::full)
    throw UsageError("plan method is not full");
  return detail::run_sgd_edit(base, plan, edit_train, eval, 1);
}

EditOutcome run_edit(const Checkpoint& base, const EditPlan& plan,
                     const SynthDataset& edit_train, const EditEvalSets& eval) {
  switch (plan.method) {
    case EditMethod::low_rank: return low_rank_edit(base, plan, edit_train, eval);
    case EditMethod::surgical: return surgical_finetune(base, plan, edit_train, eval);
    case EditMethod::full: return full_finetune(base, plan, edit_train, eval);
  }
  throw UsageError("unknown edit method");
}

}  // namespace editbench
