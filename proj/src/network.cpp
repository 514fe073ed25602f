#include "editbench/network.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "editbench/checkpoint.hpp"
#include "editbench/rng.hpp"

namespace editbench {

namespace {
constexpr int kChunk = 256;  // forward/backward chunk size; fixed for determinism
}

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::dense: return "dense";
    case LayerKind::pool: return "pool";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

LayerSpec LayerSpec::conv(int in_ch, int out_ch, int kernel, int stride, int padding,
                          Activation act) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.in_channels = in_ch;
  s.out_channels = out_ch;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  s.act = act;
  return s;
}

LayerSpec LayerSpec::dense_layer(int in_features, int out_features, Activation act) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.in_features = in_features;
  s.out_features = out_features;
  s.act = act;
  return s;
}

LayerSpec LayerSpec::pool(int window) {
  LayerSpec s;
  s.kind = LayerKind::pool;
  s.window = window;
  return s;
}

LayerSpec LayerSpec::flat() {
  LayerSpec s;
  s.kind = LayerKind::flatten;
  return s;
}

Network::Network(std::vector<LayerSpec> arch, int class_count, uint64_t init_seed)
    : class_count_(class_count) {
  if (arch.empty()) throw UsageError("network needs at least one layer");
  if (class_count < 1) throw UsageError("class_count must be >= 1");
  layers_.reserve(arch.size());
  int index = 0;
  int prev_channels = -1;  // output channels of the most recent conv
  for (const LayerSpec& spec : arch) {
    if (spec.kind == LayerKind::conv2d) {
      if (spec.in_channels < 1 || spec.out_channels < 1 || spec.kernel < 1 ||
          spec.stride < 1 || spec.padding < 0)
        throw UsageError("bad conv layer spec at layer " + std::to_string(index + 1));
      if (prev_channels > 0 && spec.in_channels != prev_channels)
        throw UsageError("conv layer " + std::to_string(index + 1) +
                         " expects " + std::to_string(spec.in_channels) +
                         " channels but previous layer emits " +
                         std::to_string(prev_channels));
      prev_channels = spec.out_channels;
    } else if (spec.kind == LayerKind::dense) {
      if (spec.in_features < 1 || spec.out_features < 1)
        throw UsageError("bad dense layer spec at layer " + std::to_string(index + 1));
    }
    Layer layer;
    layer.spec = spec;
    Rng rng(derive_seed(init_seed, 0x6c61796572ULL, static_cast<uint64_t>(index)));
    if (spec.kind == LayerKind::conv2d) {
      const int fan_in = spec.in_channels * spec.kernel * spec.kernel;
      const double std = std::sqrt(2.0 / fan_in);
      layer.weight = Tensor::zeros(
          {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel});
      for (int64_t i = 0; i < layer.weight.size(); ++i)
        layer.weight[i] = rng.normal(0.0, std);
      layer.bias = Tensor::zeros({spec.out_channels});
    } else if (spec.kind == LayerKind::dense) {
      const double std = std::sqrt(2.0 / spec.in_features);
      layer.weight = Tensor::zeros({spec.out_features, spec.in_features});
      for (int64_t i = 0; i < layer.weight.size(); ++i)
        layer.weight[i] = rng.normal(0.0, std);
      layer.bias = Tensor::zeros({spec.out_features});
    }
    layers_.push_back(std::move(layer));
    ++index;
  }
  trainable_.assign(layers_.size(), 1);

  const Layer& last = layers_.back();
  if (last.spec.kind != LayerKind::dense || last.spec.out_features != class_count)
    throw UsageError("final layer must be dense with out_features == class_count");
}

const Layer& Network::layer(int l) const {
  if (l < 1 || l > layer_count())
    throw UsageError("layer index " + std::to_string(l) + " out of range [1, " +
                     std::to_string(layer_count()) + "]");
  return layers_[static_cast<size_t>(l - 1)];
}

Layer& Network::layer(int l) {
  return const_cast<Layer&>(static_cast<const Network*>(this)->layer(l));
}

std::vector<int> Network::weighted_layers() const {
  std::vector<int> out;
  for (int l = 1; l <= layer_count(); ++l)
    if (layers_[static_cast<size_t>(l - 1)].has_params()) out.push_back(l);
  return out;
}

bool Network::trainable(int l) const {
  layer(l);  // bounds check
  return trainable_[static_cast<size_t>(l - 1)] != 0;
}

void Network::set_trainable(int l, bool v) {
  layer(l);
  trainable_[static_cast<size_t>(l - 1)] = v ? 1 : 0;
}

void Network::set_all_trainable(bool v) {
  std::fill(trainable_.begin(), trainable_.end(), v ? 1 : 0);
}

std::vector<Tensor> Network::trainable_parameters() const {
  std::vector<Tensor> out;
  for (size_t i = 0; i < layers_.size(); ++i) {
    if (!trainable_[i] || !layers_[i].has_params()) continue;
    out.push_back(layers_[i].weight);
    out.push_back(layers_[i].bias);
  }
  return out;
}

int64_t Network::parameter_count() const {
  int64_t n = 0;
  for (const Layer& l : layers_)
    if (l.has_params()) n += l.weight.size() + l.bias.size();
  return n;
}

Network Network::clone() const {
  Network copy;
  copy.class_count_ = class_count_;
  copy.trainable_ = trainable_;
  copy.layers_.reserve(layers_.size());
  for (const Layer& l : layers_) {
    Layer c;
    c.spec = l.spec;
    if (l.has_params()) {
      c.weight = l.weight.clone();
      c.bias = l.bias.clone();
    }
    copy.layers_.push_back(std::move(c));
  }
  return copy;
}

Tensor Network::run_layers(Tape& tape, int from, int to, Tensor x,
                           const WeightPatch* patch, bool head) const {
  for (int l = from; l <= to; ++l) {
    const Layer& layer = layers_[static_cast<size_t>(l - 1)];
    Tensor w = layer.weight;
    if (patch && patch->layer == l) w = patch->apply(tape, layer.weight);
    switch (layer.spec.kind) {
      case LayerKind::conv2d:
        x = tape.conv2d(w, layer.bias, x, layer.spec.stride, layer.spec.padding,
                        layer.spec.act);
        break;
      case LayerKind::dense:
        x = tape.dense(w, layer.bias, x, layer.spec.act);
        break;
      case LayerKind::pool:
        x = tape.avg_pool(x, layer.spec.window);
        break;
      case LayerKind::flatten:
        x = tape.flatten(x);
        break;
    }
  }
  if (head) x = tape.softmax(x);
  return x;
}

Tensor Network::forward(Tape& tape, const Tensor& x, const WeightPatch* patch) const {
  return run_layers(tape, 1, layer_count(), x, patch, true);
}

Tensor Network::forward_prefix(Tape& tape, int l, const Tensor& x) const {
  if (l < 1 || l > layer_count())
    throw UsageError("prefix layer index " + std::to_string(l) + " out of range");
  return run_layers(tape, 1, l, x, nullptr, l == layer_count());
}

Tensor Network::forward_from(Tape& tape, int l, const Tensor& activations,
                             const WeightPatch* patch) const {
  if (l < 1 || l > layer_count())
    throw UsageError("resume layer index " + std::to_string(l) + " out of range");
  return run_layers(tape, l, layer_count(), activations, patch, true);
}

Tensor Network::forward_segment(Tape& tape, int from, int to, const Tensor& x) const {
  if (from < 1 || to > layer_count() || from > to)
    throw UsageError("bad layer segment [" + std::to_string(from) + ", " +
                     std::to_string(to) + "]");
  return run_layers(tape, from, to, x, nullptr, false);
}

std::string Network::describe() const {
  std::ostringstream os;
  for (size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& s = layers_[i].spec;
    if (i) os << " -> ";
    switch (s.kind) {
      case LayerKind::conv2d:
        os << "conv" << s.kernel << "x" << s.kernel << "(" << s.in_channels << ">"
           << s.out_channels << ",s" << s.stride << ",p" << s.padding << ","
           << activation_name(s.act) << ")";
        break;
      case LayerKind::dense:
        os << "dense(" << s.in_features << ">" << s.out_features << ","
           << activation_name(s.act) << ")";
        break;
      case LayerKind::pool:
        os << "pool(" << (s.window == 0 ? std::string("global")
                                        : std::to_string(s.window)) << ")";
        break;
      case LayerKind::flatten:
        os << "flatten";
        break;
    }
  }
  os << " -> softmax";
  return os.str();
}

std::vector<LayerSpec> reference_arch(int in_channels, int image_size,
                                      int class_count) {
  // Stride-2 stack shrinks 32x32 to 2x2 before the global pool; parameter
  // count stays under 10k, well inside the 100k budget.
  (void)image_size;
  return {
      LayerSpec::conv(in_channels, 8, 3, 2, 1, Activation::gelu),
      LayerSpec::conv(8, 16, 3, 2, 1, Activation::gelu),
      LayerSpec::conv(16, 16, 3, 2, 1, Activation::gelu),
      LayerSpec::conv(16, 32, 3, 2, 1, Activation::gelu),
      LayerSpec::pool(0),
      LayerSpec::flat(),
      LayerSpec::dense_layer(32, class_count, Activation::identity),
  };
}

// --- evaluation ----------------------------------------------------------------

namespace {

Tensor slice_batch(const Tensor& images, int64_t begin, int64_t end) {
  const auto& s = images.shape();
  const int64_t plane = images.size() / s[0];
  std::vector<int> shape = s;
  shape[0] = static_cast<int>(end - begin);
  std::vector<double> buf(images.data() + begin * plane, images.data() + end * plane);
  return Tensor::from(std::move(shape), std::move(buf));
}

int argmax_row(const double* row, int k) {
  int best = 0;
  for (int j = 1; j < k; ++j)
    if (row[j] > row[best]) best = j;  // strict: ties keep the lowest index
  return best;
}

}  // namespace

double evaluate_batch(const Network& net, const Tensor& images,
                      const std::vector<int32_t>& labels) {
  if (labels.empty()) throw UsageError("evaluate on empty dataset");
  const int64_t n = images.dim(0);
  int64_t correct = 0;
  for (int64_t begin = 0; begin < n; begin += kChunk) {
    const int64_t end = std::min<int64_t>(n, begin + kChunk);
    Tape tape;
    Tensor probs = net.forward(tape, slice_batch(images, begin, end));
    const int k = net.class_count();
    for (int64_t i = begin; i < end; ++i) {
      const double* row = probs.data() + (i - begin) * k;
      if (argmax_row(row, k) == labels[static_cast<size_t>(i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

double evaluate(const Network& net, const SynthDataset& data) {
  if (data.empty()) throw UsageError("evaluate on empty dataset");
  return evaluate_batch(net, data.images, data.labels);
}

std::vector<Tensor> prefix_activations(const Network& net, const Tensor& images) {
  const int L = net.layer_count();
  const int64_t n = images.dim(0);
  std::vector<std::vector<double>> buffers(static_cast<size_t>(L) + 1);
  std::vector<std::vector<int>> shapes(static_cast<size_t>(L) + 1);

  for (int64_t begin = 0; begin < n; begin += kChunk) {
    const int64_t end = std::min<int64_t>(n, begin + kChunk);
    Tensor x = slice_batch(images, begin, end);
    for (int l = 0; l <= L; ++l) {
      if (l > 0) {
        Tape tape;
        x = net.forward_segment(tape, l, l, x);
      }
      auto& buf = buffers[static_cast<size_t>(l)];
      buf.insert(buf.end(), x.data(), x.data() + x.size());
      shapes[static_cast<size_t>(l)] = x.shape();
    }
  }

  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(L) + 1);
  for (int l = 0; l <= L; ++l) {
    std::vector<int> shape = shapes[static_cast<size_t>(l)];
    shape[0] = static_cast<int>(n);
    out.push_back(Tensor::from(std::move(shape), std::move(buffers[static_cast<size_t>(l)])));
  }
  return out;
}

double evaluate_from(const Network& net, int l, const Tensor& activations,
                     const std::vector<int32_t>& labels) {
  if (labels.empty()) throw UsageError("evaluate on empty dataset");
  const int64_t n = activations.dim(0);
  if (n != static_cast<int64_t>(labels.size()))
    throw UsageError("activation/label count mismatch");
  int64_t correct = 0;
  for (int64_t begin = 0; begin < n; begin += kChunk) {
    const int64_t end = std::min<int64_t>(n, begin + kChunk);
    Tape tape;
    Tensor probs = net.forward_from(tape, l, slice_batch(activations, begin, end));
    const int k = net.class_count();
    for (int64_t i = begin; i < end; ++i) {
      const double* row = probs.data() + (i - begin) * k;
      if (argmax_row(row, k) == labels[static_cast<size_t>(i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

// --- training --------------------------------------------------------------------

Checkpoint train_base(const std::vector<LayerSpec>& arch, int class_count,
                      const SynthDataset& train, const SynthDataset& val,
                      double lr, int steps, uint64_t seed) {
  if (train.empty()) throw UsageError("train_base on empty dataset");
  if (lr <= 0.0) throw UsageError("learning rate must be > 0");
  if (steps < 0) throw UsageError("step count must be >= 0");

  Network net(arch, class_count, seed);
  net.set_all_trainable(true);
  const std::vector<Tensor> params = net.trainable_parameters();

  const Tensor targets = train.onehot();
  const int64_t n = train.size();

  for (int step = 0; step < steps; ++step) {
    // Full-batch gradient, accumulated over fixed chunks.
    std::vector<std::vector<double>> grad_acc(params.size());
    for (size_t p = 0; p < params.size(); ++p)
      grad_acc[p].assign(static_cast<size_t>(params[p].size()), 0.0);

    for (int64_t begin = 0; begin < n; begin += kChunk) {
      const int64_t end = std::min<int64_t>(n, begin + kChunk);
      const double weight = static_cast<double>(end - begin) / static_cast<double>(n);
      Tape tape;
      Tensor x = slice_batch(train.images, begin, end);
      Tensor y = slice_batch(targets, begin, end);
      Tensor probs, loss;
      try {
        probs = net.forward(tape, x);
        loss = tape.mse(probs, y);
      } catch (const NumericError&) {
        throw TrainingError("training diverged at step " + std::to_string(step), step);
      }
      const double loss_value = loss[0];
      if (!std::isfinite(loss_value))
        throw TrainingError("training diverged at step " + std::to_string(step), step);
      tape.backward(loss);
      for (size_t p = 0; p < params.size(); ++p) {
        if (!params[p].has_grad()) continue;
        const auto& g = params[p].grad();
        for (size_t i = 0; i < g.size(); ++i) grad_acc[p][i] += weight * g[i];
        const_cast<Tensor&>(params[p]).zero_grad();
      }
    }

    for (size_t p = 0; p < params.size(); ++p) {
      Tensor t = params[p];
      double* d = t.data();
      for (size_t i = 0; i < grad_acc[p].size(); ++i) d[i] -= lr * grad_acc[p][i];
    }
  }

  Checkpoint ckpt;
  ckpt.network = std::move(net);
  ckpt.meta.seed = seed;
  // The recorded accuracy is measured on the validation set, so that is the
  // set whose identity travels with the checkpoint for later gating.
  ckpt.meta.dataset_id = val.empty() ? train.id : val.id;
  ckpt.meta.base_val_accuracy = val.empty() ? 0.0 : evaluate(ckpt.network, val);
  return ckpt;
}

}  // namespace editbench
