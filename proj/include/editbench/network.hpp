#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "editbench/dataset.hpp"
#include "editbench/tensor.hpp"

namespace editbench {

enum class LayerKind : uint8_t { conv2d, dense, pool, flatten };

const char* layer_kind_name(LayerKind k);

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  Activation act = Activation::identity;
  // conv2d
  int out_channels = 0, in_channels = 0, kernel = 0, stride = 1, padding = 0;
  // dense
  int out_features = 0, in_features = 0;
  // pool; 0 pools the whole plane
  int window = 0;

  static LayerSpec conv(int in_ch, int out_ch, int kernel, int stride, int padding,
                        Activation act);
  static LayerSpec dense_layer(int in_features, int out_features, Activation act);
  static LayerSpec pool(int window = 0);
  static LayerSpec flat();
};

struct Layer {
  LayerSpec spec;
  Tensor weight;  // conv: [f x c x k x k], dense: [n_out x n_in]; empty otherwise
  Tensor bias;
  bool has_params() const { return weight.defined(); }
};

/// Hook that lets a caller substitute the weight tensor of one layer while the
/// tape records the substitution (used for live low-rank adapters).
struct WeightPatch {
  int layer = 0;  // 1-based
  std::function<Tensor(Tape&, const Tensor& weight)> apply;
};

/// Classifier f = softmax . f_L . ... . f_1 with per-layer trainability flags.
/// Layer indices are 1-based throughout, matching the usual L-layer notation.
class Network {
 public:
  Network() = default;
  Network(std::vector<LayerSpec> arch, int class_count, uint64_t init_seed);

  int layer_count() const { return static_cast<int>(layers_.size()); }
  int class_count() const { return class_count_; }
  const Layer& layer(int l) const;
  Layer& layer(int l);
  /// 1-based indices of layers that hold weights.
  std::vector<int> weighted_layers() const;

  bool trainable(int l) const;
  void set_trainable(int l, bool v);
  void set_all_trainable(bool v);
  /// All weight/bias tensors of layers currently marked trainable.
  std::vector<Tensor> trainable_parameters() const;
  int64_t parameter_count() const;

  Network clone() const;

  /// Softmax class probabilities. x is [batch x c x h x w] or [c x h x w].
  Tensor forward(Tape& tape, const Tensor& x, const WeightPatch* patch = nullptr) const;

  /// Activations after layer l (1 <= l <= L). forward_prefix(L, x) includes the
  /// softmax head and therefore equals forward(x).
  Tensor forward_prefix(Tape& tape, int l, const Tensor& x) const;

  /// Resumes the composition at layer l, given activations after layer l-1.
  /// forward_from(1, x) == forward(x).
  Tensor forward_from(Tape& tape, int l, const Tensor& activations,
                      const WeightPatch* patch = nullptr) const;

  /// Applies layers from..to inclusive (no softmax head).
  Tensor forward_segment(Tape& tape, int from, int to, const Tensor& x) const;

  /// Human-readable one-line architecture summary.
  std::string describe() const;

 private:
  Tensor run_layers(Tape& tape, int from, int to, Tensor x,
                    const WeightPatch* patch, bool head) const;

  std::vector<Layer> layers_;
  std::vector<char> trainable_;
  int class_count_ = 0;
};

/// The reference architecture: four 3x3 conv layers (8, 16, 16, 32 channels,
/// gelu, stride 2), global average pool, flatten, dense head.
std::vector<LayerSpec> reference_arch(int in_channels, int image_size, int class_count);

struct Checkpoint;  // checkpoint.hpp

/// Fraction of examples whose argmax class matches the label; ties resolve to
/// the lowest class index.
double evaluate(const Network& net, const SynthDataset& data);
double evaluate_batch(const Network& net, const Tensor& images,
                      const std::vector<int32_t>& labels);

/// Activations of every example after each layer: result[0] is the input,
/// result[l] the activations after layer l (no softmax head). Computed in
/// chunks without gradient tracking.
std::vector<Tensor> prefix_activations(const Network& net, const Tensor& images);

/// Accuracy computed by resuming the forward pass at layer l from cached
/// activations after layer l-1 (bit-identical to evaluate on the full input
/// when layers below l are unchanged).
double evaluate_from(const Network& net, int l, const Tensor& activations,
                     const std::vector<int32_t>& labels);

/// Full-batch SGD on MSE between softmax outputs and one-hot labels.
/// Deterministic given the seed. Gradients are accumulated over fixed-size
/// chunks, so the result does not depend on dataset size thresholds.
/// Throws TrainingError when the loss becomes non-finite.
Checkpoint train_base(const std::vector<LayerSpec>& arch, int class_count,
                      const SynthDataset& train, const SynthDataset& val,
                      double lr, int steps, uint64_t seed);

}  // namespace editbench
