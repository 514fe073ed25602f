#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "editbench/checkpoint.hpp"
#include "editbench/dataset.hpp"
#include "editbench/network.hpp"

namespace editbench {

enum class EditMethod : uint8_t { low_rank, surgical, full };

const char* edit_method_name(EditMethod m);
EditMethod edit_method_from_name(const std::string& name);

/// One model-update run: which method, where, and how long.
struct EditPlan {
  EditMethod method = EditMethod::low_rank;
  int target_layer = 0;  // 1-based; ignored for full
  int rank = 2;          // low_rank only
  double lr = 1e-3;
  int steps = 200;
  uint64_t seed = 0;

  void validate(const Network& net) const;  // throws UsageError
};

/// Rank-r weight delta U V^T for one layer. U starts at zero so a fresh
/// adapter is an exact identity edit; V gets small normal init so U receives
/// gradient signal. For conv layers the factorization acts on the kernel
/// flattened to [c_out x c_in*k*k], i.e. a rank-r bottleneck of two 1x1
/// projections.
struct LowRankAdapter {
  int target_layer = 0;
  int rank = 0;
  Tensor u;  // [n_l x r], zero-initialized
  Tensor v;  // [m_l x r], m_l = n_{l-1} (dense) or c_in*k*k (conv)

  static LowRankAdapter init(const Network& net, int layer, int rank, uint64_t seed);

  /// U V^T reshaped to the target weight's native shape (no tape).
  Tensor delta(const Network& net) const;

  /// Tape-recorded weight substitution w + U V^T for Network::forward.
  WeightPatch patch() const;
};

struct EditOutcome {
  Checkpoint edited;
  /// Full-batch loss before each step plus the final loss (steps + 1 values).
  std::vector<double> loss_trajectory;
  double edit_eval_accuracy = -1.0;    // accuracy on the held-out edit set
  double original_val_accuracy = -1.0; // accuracy on the original validation set
  double baseline_drop_pp = 0.0;       // (base - edited) original-val accuracy, pp

  bool has_edit_eval() const { return edit_eval_accuracy >= 0.0; }
  bool has_original_val() const { return original_val_accuracy >= 0.0; }
};

/// Optional evaluation sets for filling EditOutcome accuracy fields. The
/// search layer leaves these unset and evaluates through its activation
/// cache instead.
struct EditEvalSets {
  const SynthDataset* edit_eval = nullptr;
  const SynthDataset* original_val = nullptr;
};

/// W_l <- W_l + U V^T learned by full-batch SGD on MSE; all model weights stay
/// frozen. The emitted checkpoint materializes the delta into layer l.
EditOutcome low_rank_edit(const Checkpoint& base, const EditPlan& plan,
                          const SynthDataset& edit_train,
                          const EditEvalSets& eval = {});

/// SGD restricted to layer l's weight and bias.
EditOutcome surgical_finetune(const Checkpoint& base, const EditPlan& plan,
                              const SynthDataset& edit_train,
                              const EditEvalSets& eval = {});

/// Unconstrained SGD over all layers; the baseline method.
EditOutcome full_finetune(const Checkpoint& base, const EditPlan& plan,
                          const SynthDataset& edit_train,
                          const EditEvalSets& eval = {});

/// Dispatch on plan.method.
EditOutcome run_edit(const Checkpoint& base, const EditPlan& plan,
                     const SynthDataset& edit_train, const EditEvalSets& eval = {});

/// Returns base with layer target_layer's weight replaced by W + U V^T.
Checkpoint materialize(const Checkpoint& base, const LowRankAdapter& adapter);

namespace detail {
/// The shared SGD loop. from_layer > 1 skips recomputation of frozen prefix
/// activations (valid whenever layers below from_layer hold no trainable
/// parameters); from_layer == 1 is the plain path. Exposed so tests can check
/// the two routes coincide bit-exactly.
EditOutcome run_sgd_edit(const Checkpoint& base, const EditPlan& plan,
                         const SynthDataset& edit_train, const EditEvalSets& eval,
                         int from_layer);
}  // namespace detail

}  // namespace editbench
