#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "editbench/errors.hpp"

namespace editbench {

enum class Activation { identity, relu, gelu };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

/// Dense row-major tensor of 64-bit floats. Copying a Tensor aliases the same
/// storage; use clone() for an independent copy. The gradient buffer is empty
/// until a backward pass populates it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> values,
                     bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const;
  int dim(int i) const { return shape()[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape().size()); }
  int64_t size() const;

  double* data();
  const double* data() const;
  double operator[](int64_t i) const { return data()[i]; }
  double& operator[](int64_t i) { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool v);

  bool has_grad() const;
  const std::vector<double>& grad() const;  // throws UsageError when absent
  void zero_grad();                         // drops the gradient buffer

  /// Deep copy of the values; gradient buffer and requires_grad are not copied.
  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  std::string shape_str() const;

 private:
  struct Impl {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until backward populates it
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;

  friend class Tape;
  friend class GradStore;
};

int64_t shape_size(const std::vector<int>& shape);

/// Per-backward gradient accumulator keyed by tensor storage.
class GradStore {
 public:
  std::vector<double>& of(const Tensor& t);
  const std::vector<double>* find(const Tensor& t) const;

 private:
  std::unordered_map<const void*, std::vector<double>> buffers_;
};

/// Ordered record of primitive ops for reverse-mode differentiation. Each op
/// method computes the forward value eagerly and records a closure that
/// propagates gradients to its operands. A Tape is single-threaded; separate
/// training runs each own their tape.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- op vocabulary -------------------------------------------------------

  /// act(w x + b). w is [n_out x n_in], x is [n_in] or [batch x n_in].
  Tensor dense(const Tensor& w, const Tensor& b, const Tensor& x, Activation act);

  /// Cross-correlation: act(conv(k, x) + b). k is [f x c x kh x kw], x is
  /// [c x h x w] or [batch x c x h x w]. Output spatial extent is
  /// floor((h + 2*padding - kh) / stride) + 1.
  Tensor conv2d(const Tensor& k, const Tensor& b, const Tensor& x, int stride,
                int padding, Activation act);

  /// Non-overlapping window mean over the spatial dims. window == 0 pools the
  /// whole plane to 1x1; otherwise the extent must divide by window.
  Tensor avg_pool(const Tensor& x, int window);

  /// [batch x c x h x w] -> [batch x c*h*w] (3-d input gets a singleton batch).
  Tensor flatten(const Tensor& x);

  /// Row-wise softmax over the last dim of [batch x k] (or over a 1-d vector).
  Tensor softmax(const Tensor& x);

  /// Mean over all elements of (pred - target)^2; returns a scalar.
  Tensor mse(const Tensor& pred, const Tensor& target);

  /// Elementwise sum of equal-shape tensors.
  Tensor add(const Tensor& a, const Tensor& b);

  /// c * a, elementwise.
  Tensor scale(const Tensor& a, double c);

  /// a b^T: a is [n x r], b is [m x r]; result is [n x m].
  Tensor matmul_nt(const Tensor& a, const Tensor& b);

  /// Same data, new extents (sizes must agree).
  Tensor reshape(const Tensor& x, std::vector<int> shape);

  // --- reverse pass --------------------------------------------------------

  /// Populates grad for every requires_grad tensor reachable from loss, then
  /// clears the tape. loss must be a scalar recorded on this tape.
  void backward(const Tensor& loss);

  size_t node_count() const { return nodes_.size(); }
  bool recorded(const Tensor& t) const;
  void clear();

 private:
  struct Node {
    std::function<void(GradStore&)> backward;
  };

  Tensor make_output(std::vector<int> shape, std::vector<double> values);
  void record(std::function<void(GradStore&)> fn);
  void note_leaf(const Tensor& t);

  std::vector<Node> nodes_;
  std::unordered_set<const void*> outputs_;
  std::vector<std::shared_ptr<Tensor::Impl>> leaves_;
  std::unordered_set<const void*> leaf_set_;
};

// Activation math, shared with the finite-difference oracles in tests.
double apply_activation(Activation a, double z);
double activation_derivative(Activation a, double z);

}  // namespace editbench
