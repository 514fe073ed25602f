#include "editbench/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <sstream>
#include <utility>

namespace editbench {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                        Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                                   Eigen::Dynamic, Eigen::RowMajor>>;

// C[MxN] = A[MxK] * B[KxN], optionally accumulating into C.
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate) {
  ConstMatMap am(a, m, k), bm(b, k, n);
  MatMap cm(c, m, n);
  if (accumulate)
    cm.noalias() += am * bm;
  else
    cm.noalias() = am * bm;
}

// C[MxN] = A[MxK] * B[NxK]^T
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate) {
  ConstMatMap am(a, m, k), bm(b, n, k);
  MatMap cm(c, m, n);
  if (accumulate)
    cm.noalias() += am * bm.transpose();
  else
    cm.noalias() = am * bm.transpose();
}

// C[MxN] = A[KxM]^T * B[KxN]
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n,
             bool accumulate) {
  ConstMatMap am(a, k, m), bm(b, k, n);
  MatMap cm(c, m, n);
  if (accumulate)
    cm.noalias() += am.transpose() * bm;
  else
    cm.noalias() = am.transpose() * bm;
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x))
      throw NumericError(std::string("non-finite value in ") + op + " output");
  }
}

std::string shape_to_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
  }
  return "?";
}

Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "gelu") return Activation::gelu;
  throw UsageError("unknown activation: " + name);
}

double apply_activation(Activation a, double z) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::gelu: return 0.5 * z * (1.0 + std::erf(z * kInvSqrt2));
  }
  return z;
}

double activation_derivative(Activation a, double z) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::gelu: {
      const double cdf = 0.5 * (1.0 + std::erf(z * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * z * z);
      return cdf + z * pdf;
    }
  }
  return 1.0;
}

// --- Tensor ------------------------------------------------------------------

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  for (int d : shape)
    if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_to_str(shape));
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->value.assign(static_cast<size_t>(shape_size(t.impl_->shape)), 0.0);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_size(shape) != static_cast<int64_t>(values.size()))
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_to_str(shape));
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->value = std::move(values);
  t.impl_->requires_grad = requires_grad;
  return t;
}

const std::vector<int>& Tensor::shape() const {
  if (!impl_) throw UsageError("shape() on empty tensor");
  return impl_->shape;
}

int64_t Tensor::size() const {
  if (!impl_) return 0;
  return static_cast<int64_t>(impl_->value.size());
}

double* Tensor::data() {
  if (!impl_) throw UsageError("data() on empty tensor");
  return impl_->value.data();
}

const double* Tensor::data() const {
  if (!impl_) throw UsageError("data() on empty tensor");
  return impl_->value.data();
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  if (!impl_) throw UsageError("set_requires_grad() on empty tensor");
  impl_->requires_grad = v;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw UsageError("gradient not populated");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::clone() const {
  if (!impl_) return {};
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = impl_->shape;
  t.impl_->value = impl_->value;
  t.impl_->requires_grad = false;
  return t;
}

std::string Tensor::shape_str() const {
  return impl_ ? shape_to_str(impl_->shape) : "[]";
}

// --- GradStore ---------------------------------------------------------------

std::vector<double>& GradStore::of(const Tensor& t) {
  auto& buf = buffers_[t.impl_.get()];
  if (buf.empty()) buf.assign(t.impl_->value.size(), 0.0);
  return buf;
}

const std::vector<double>* GradStore::find(const Tensor& t) const {
  auto it = buffers_.find(t.impl_.get());
  return it == buffers_.end() ? nullptr : &it->second;
}

// --- Tape --------------------------------------------------------------------

Tensor Tape::make_output(std::vector<int> shape, std::vector<double> values) {
  Tensor t = Tensor::from(std::move(shape), std::move(values));
  outputs_.insert(t.impl_.get());
  return t;
}

void Tape::record(std::function<void(GradStore&)> fn) {
  nodes_.push_back(Node{std::move(fn)});
}

void Tape::note_leaf(const Tensor& t) {
  if (!t.requires_grad()) return;
  if (leaf_set_.insert(t.impl_.get()).second) leaves_.push_back(t.impl_);
}

bool Tape::recorded(const Tensor& t) const {
  return t.defined() && outputs_.count(t.impl_.get()) > 0;
}

void Tape::clear() {
  nodes_.clear();
  outputs_.clear();
  leaves_.clear();
  leaf_set_.clear();
}

// x may be [n] or [batch x n]; returns {batch, n, was_1d}.
namespace {
struct Batched {
  int batch;
  int64_t inner;
  bool was_1d;
};

Batched as_batched_2d(const Tensor& x) {
  if (x.ndim() == 1) return {1, x.dim(0), true};
  if (x.ndim() == 2) return {x.dim(0), x.dim(1), false};
  throw DimensionError("expected 1-d or 2-d tensor, got " + x.shape_str());
}
}  // namespace

Tensor Tape::dense(const Tensor& w, const Tensor& b, const Tensor& x,
                   Activation act) {
  if (w.ndim() != 2)
    throw DimensionError("dense weight must be 2-d, got " + w.shape_str());
  const int n_out = w.dim(0), n_in = w.dim(1);
  if (b.ndim() != 1 || b.dim(0) != n_out)
    throw DimensionError("dense bias " + b.shape_str() + " does not match weight " +
                         w.shape_str());
  const Batched bx = as_batched_2d(x);
  if (bx.inner != n_in)
    throw DimensionError("dense input " + x.shape_str() + " does not match weight " +
                         w.shape_str());
  const int batch = bx.batch;

  std::vector<double> z(static_cast<size_t>(batch) * n_out);
  // z = x * w^T
  gemm_nt(x.data(), w.data(), z.data(), batch, n_in, n_out, false);
  for (int i = 0; i < batch; ++i)
    for (int j = 0; j < n_out; ++j) z[static_cast<size_t>(i) * n_out + j] += b[j];

  std::vector<double> y(z.size());
  for (size_t i = 0; i < z.size(); ++i) y[i] = apply_activation(act, z[i]);
  check_finite(y, "dense");

  Tensor out = bx.was_1d ? make_output({n_out}, std::move(y))
                         : make_output({batch, n_out}, std::move(y));

  note_leaf(w);
  note_leaf(b);
  note_leaf(x);
  record([w, b, x, out, act, z = std::move(z), batch, n_in, n_out](GradStore& g) {
    const auto* og = g.find(out);
    if (!og) return;
    std::vector<double> dz(og->size());
    for (size_t i = 0; i < dz.size(); ++i)
      dz[i] = (*og)[i] * activation_derivative(act, z[i]);
    // dW = dz^T * x, db = colsum(dz), dx = dz * w
    gemm_tn(dz.data(), x.data(), g.of(w).data(), n_out, batch, n_in, true);
    auto& db = g.of(b);
    for (int i = 0; i < batch; ++i)
      for (int j = 0; j < n_out; ++j) db[j] += dz[static_cast<size_t>(i) * n_out + j];
    gemm_nn(dz.data(), w.data(), g.of(x).data(), batch, n_out, n_in, true);
  });
  return out;
}

namespace {

struct ConvDims {
  int batch, c_in, h, w;
  int c_out, kh, kw;
  int h_out, w_out;
  bool was_3d;
};

ConvDims conv_dims(const Tensor& k, const Tensor& x, int stride, int padding) {
  if (k.ndim() != 4)
    throw DimensionError("conv kernel must be 4-d, got " + k.shape_str());
  ConvDims d{};
  if (x.ndim() == 3) {
    d.batch = 1;
    d.c_in = x.dim(0);
    d.h = x.dim(1);
    d.w = x.dim(2);
    d.was_3d = true;
  } else if (x.ndim() == 4) {
    d.batch = x.dim(0);
    d.c_in = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.was_3d = false;
  } else {
    throw DimensionError("conv input must be 3-d or 4-d, got " + x.shape_str());
  }
  d.c_out = k.dim(0);
  d.kh = k.dim(2);
  d.kw = k.dim(3);
  if (k.dim(1) != d.c_in)
    throw DimensionError("conv kernel " + k.shape_str() + " does not match input " +
                         x.shape_str());
  if (stride < 1) throw UsageError("conv stride must be >= 1");
  if (padding < 0) throw UsageError("conv padding must be >= 0");
  if (d.kh > d.h + 2 * padding || d.kw > d.w + 2 * padding)
    throw DimensionError("conv kernel " + k.shape_str() +
                         " larger than padded input " + x.shape_str());
  d.h_out = (d.h + 2 * padding - d.kh) / stride + 1;
  d.w_out = (d.w + 2 * padding - d.kw) / stride + 1;
  return d;
}

// col is [c_in*kh*kw x h_out*w_out] for one image.
void im2col(const double* img, const ConvDims& d, int stride, int padding,
            double* col) {
  const int cols = d.h_out * d.w_out;
  for (int c = 0; c < d.c_in; ++c) {
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        double* row = col + (static_cast<size_t>(c) * d.kh * d.kw +
                             static_cast<size_t>(ky) * d.kw + kx) *
                                cols;
        for (int oy = 0; oy < d.h_out; ++oy) {
          const int iy = oy * stride + ky - padding;
          for (int ox = 0; ox < d.w_out; ++ox) {
            const int ix = ox * stride + kx - padding;
            row[oy * d.w_out + ox] =
                (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                    ? img[(static_cast<size_t>(c) * d.h + iy) * d.w + ix]
                    : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvDims& d, int stride, int padding,
                double* img) {
  const int cols = d.h_out * d.w_out;
  for (int c = 0; c < d.c_in; ++c) {
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const double* row = col + (static_cast<size_t>(c) * d.kh * d.kw +
                                   static_cast<size_t>(ky) * d.kw + kx) *
                                      cols;
        for (int oy = 0; oy < d.h_out; ++oy) {
          const int iy = oy * stride + ky - padding;
          if (iy < 0 || iy >= d.h) continue;
          for (int ox = 0; ox < d.w_out; ++ox) {
            const int ix = ox * stride + kx - padding;
            if (ix < 0 || ix >= d.w) continue;
            img[(static_cast<size_t>(c) * d.h + iy) * d.w + ix] +=
                row[oy * d.w_out + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor Tape::conv2d(const Tensor& k, const Tensor& b, const Tensor& x, int stride,
                    int padding, Activation act) {
  const ConvDims d = conv_dims(k, x, stride, padding);
  if (b.ndim() != 1 || b.dim(0) != d.c_out)
    throw DimensionError("conv bias " + b.shape_str() + " does not match kernel " +
                         k.shape_str());

  const int patch = d.c_in * d.kh * d.kw;
  const int cols = d.h_out * d.w_out;
  const int64_t plane = static_cast<int64_t>(d.c_in) * d.h * d.w;
  const int64_t out_plane = static_cast<int64_t>(d.c_out) * cols;

  // One column matrix for the whole batch, image-major.
  auto col = std::make_shared<std::vector<double>>(
      static_cast<size_t>(d.batch) * patch * cols);
  for (int i = 0; i < d.batch; ++i)
    im2col(x.data() + i * plane, d, stride, padding,
           col->data() + static_cast<size_t>(i) * patch * cols);

  std::vector<double> z(static_cast<size_t>(d.batch) * out_plane);
  for (int i = 0; i < d.batch; ++i) {
    double* zi = z.data() + i * out_plane;
    gemm_nn(k.data(), col->data() + static_cast<size_t>(i) * patch * cols, zi,
            d.c_out, patch, cols, false);
    for (int f = 0; f < d.c_out; ++f) {
      const double bias = b[f];
      for (int j = 0; j < cols; ++j) zi[static_cast<size_t>(f) * cols + j] += bias;
    }
  }

  std::vector<double> y(z.size());
  for (size_t i = 0; i < z.size(); ++i) y[i] = apply_activation(act, z[i]);
  check_finite(y, "conv2d");

  Tensor out = d.was_3d
                   ? make_output({d.c_out, d.h_out, d.w_out}, std::move(y))
                   : make_output({d.batch, d.c_out, d.h_out, d.w_out}, std::move(y));

  note_leaf(k);
  note_leaf(b);
  note_leaf(x);
  record([k, b, x, out, act, d, stride, padding, col, z = std::move(z), patch, cols,
          plane, out_plane](GradStore& g) {
    const auto* og = g.find(out);
    if (!og) return;
    std::vector<double> dz(og->size());
    for (size_t i = 0; i < dz.size(); ++i)
      dz[i] = (*og)[i] * activation_derivative(act, z[i]);

    auto& dk = g.of(k);
    auto& db = g.of(b);
    auto& dx = g.of(x);
    std::vector<double> dcol(static_cast<size_t>(patch) * cols);
    for (int i = 0; i < d.batch; ++i) {
      const double* dzi = dz.data() + i * out_plane;
      const double* coli = col->data() + static_cast<size_t>(i) * patch * cols;
      // dK += dz_i * col_i^T
      gemm_nt(dzi, coli, dk.data(), d.c_out, cols, patch, true);
      for (int f = 0; f < d.c_out; ++f) {
        double s = 0.0;
        for (int j = 0; j < cols; ++j) s += dzi[static_cast<size_t>(f) * cols + j];
        db[f] += s;
      }
      // dcol = K^T * dz_i, scattered back into dx
      gemm_tn(k.data(), dzi, dcol.data(), patch, d.c_out, cols, false);
      col2im_add(dcol.data(), d, stride, padding, dx.data() + i * plane);
    }
  });
  return out;
}

Tensor Tape::avg_pool(const Tensor& x, int window) {
  bool was_3d = false;
  int batch, c, h, w;
  if (x.ndim() == 3) {
    batch = 1; c = x.dim(0); h = x.dim(1); w = x.dim(2); was_3d = true;
  } else if (x.ndim() == 4) {
    batch = x.dim(0); c = x.dim(1); h = x.dim(2); w = x.dim(3);
  } else {
    throw DimensionError("avg_pool input must be 3-d or 4-d, got " + x.shape_str());
  }
  int wy = window, wx = window;
  if (window == 0) { wy = h; wx = w; }
  if (wy <= 0 || h % wy != 0 || w % wx != 0)
    throw DimensionError("pool window " + std::to_string(window) +
                         " does not divide input " + x.shape_str());
  const int ho = h / wy, wo = w / wx;
  const double inv = 1.0 / (static_cast<double>(wy) * wx);

  std::vector<double> y(static_cast<size_t>(batch) * c * ho * wo);
  const double* in = x.data();
  for (int i = 0; i < batch; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const double* plane = in + (static_cast<size_t>(i) * c + ch) * h * w;
      double* outp = y.data() + (static_cast<size_t>(i) * c + ch) * ho * wo;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          double s = 0.0;
          for (int yy = 0; yy < wy; ++yy)
            for (int xx = 0; xx < wx; ++xx)
              s += plane[(oy * wy + yy) * w + ox * wx + xx];
          outp[oy * wo + ox] = s * inv;
        }
      }
    }
  }

  Tensor out = was_3d ? make_output({c, ho, wo}, std::move(y))
                      : make_output({batch, c, ho, wo}, std::move(y));
  note_leaf(x);
  record([x, out, batch, c, h, w, ho, wo, wy, wx, inv](GradStore& g) {
    const auto* og = g.find(out);
    if (!og) return;
    auto& dx = g.of(x);
    for (int i = 0; i < batch; ++i) {
      for (int ch = 0; ch < c; ++ch) {
        const double* dout = og->data() + (static_cast<size_t>(i) * c + ch) * ho * wo;
        double* dplane = dx.data() + (static_cast<size_t>(i) * c + ch) * h * w;
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            const double v = dout[oy * wo + ox] * inv;
            for (int yy = 0; yy < wy; ++yy)
              for (int xx = 0; xx < wx; ++xx)
                dplane[(oy * wy + yy) * w + ox * wx + xx] += v;
          }
      }
    }
  });
  return out;
}

Tensor Tape::flatten(const Tensor& x) {
  int batch;
  int64_t inner;
  if (x.ndim() == 4) {
    batch = x.dim(0);
    inner = static_cast<int64_t>(x.dim(1)) * x.dim(2) * x.dim(3);
  } else if (x.ndim() == 3) {
    batch = 1;
    inner = x.size();
  } else if (x.ndim() == 2) {
    batch = x.dim(0);
    inner = x.dim(1);
  } else {
    throw DimensionError("flatten input must be 2-d, 3-d or 4-d, got " + x.shape_str());
  }
  return reshape(x, {batch, static_cast<int>(inner)});
}

Tensor Tape::softmax(const Tensor& x) {
  const Batched bx = as_batched_2d(x);
  const int batch = bx.batch;
  const int k = static_cast<int>(bx.inner);

  std::vector<double> y(static_cast<size_t>(batch) * k);
  const double* in = x.data();
  for (int i = 0; i < batch; ++i) {
    const double* row = in + static_cast<size_t>(i) * k;
    double* yo = y.data() + static_cast<size_t>(i) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
      yo[j] = std::exp(row[j] - mx);
      sum += yo[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < k; ++j) yo[j] *= inv;
  }
  check_finite(y, "softmax");

  Tensor out = bx.was_1d ? make_output({k}, std::move(y))
                         : make_output({batch, k}, std::move(y));
  note_leaf(x);
  record([x, out, batch, k](GradStore& g) {
    const auto* og = g.find(out);
    if (!og) return;
    auto& dx = g.of(x);
    const double* p = out.data();
    for (int i = 0; i < batch; ++i) {
      const double* pi = p + static_cast<size_t>(i) * k;
      const double* doi = og->data() + static_cast<size_t>(i) * k;
      double dot = 0.0;
      for (int j = 0; j < k; ++j) dot += doi[j] * pi[j];
      double* dxi = dx.data() + static_cast<size_t>(i) * k;
      for (int j = 0; j < k; ++j) dxi[j] += pi[j] * (doi[j] - dot);
    }
  });
  return out;
}

Tensor Tape::mse(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw DimensionError("mse shapes differ: " + pred.shape_str() + " vs " +
                         target.shape_str());
  const int64_t n = pred.size();
  const double* a = pred.data();
  const double* b = target.data();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  const double value = s / static_cast<double>(n);
  if (!std::isfinite(value)) throw NumericError("non-finite value in mse output");

  Tensor out = make_output({1}, {value});
  note_leaf(pred);
  note_leaf(target);
  record([pred, target, out, n](GradStore& g) {
    const auto* og = g.find(out);
    if (!og) return;
    const double scale = 2.0 * (*og)[0] / static_cast<double>(n);
    auto& dp = g.of(pred);
    auto& dt = g.of(target);
    const double* a = pred.data();
    const double* b = target.data();
    for (int64_t i = 0; i < n; ++i) {
      const double d = scale * (a[i] - b[i]);
      dp[static_cast<size_t>(i)] += d;
      dt[static_cast<size_t>(i)] -= d;
    }
  });
  return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add shapes differ: " + a.shape_str() + " vs " +
                         b.shape_str());
  std::vector<double> y(static_cast<size_t>(a.size()));
  const double* pa = a.data();
  const double* pb = b.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = pa[i] + pb[i];
  check_finite(y, "add");

  Tensor out = make_output(a.shape(), std::move(y));
  note_leaf(a);
  note_leaf(b);
  record([a, b, out](GradStore& g) {
    const auto* og = g.find(out);
    if (!og) return;
    auto& da = g.of(a);
    auto& db = g.of(b);
    for (size_t i = 0; i < og->size(); ++i) {
      da[i] += (*og)[i];
      db[i] += (*og)[i];
    }
  });
  return out;
}

Tensor Tape::scale(const Tensor& a, double c) {
  std::vector<double> y(static_cast<size_t>(a.size()));
  const double* pa = a.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = pa[i] * c;
  check_finite(y, "scale");

  Tensor out = make_output(a.shape(), std::move(y));
  note_leaf(a);
  record([a, out, c](GradStore& g) {
    const auto* og = g.find(out);
    if (!og) return;
    auto& da = g.of(a);
    for (size_t i = 0; i < og->size(); ++i) da[i] += c * (*og)[i];
  });
  return out;
}

Tensor Tape::matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
    throw DimensionError("matmul_nt expects [n x r] and [m x r], got " +
                         a.shape_str() + " and " + b.shape_str());
  const int n = a.dim(0), r = a.dim(1), m = b.dim(0);
  std::vector<double> y(static_cast<size_t>(n) * m);
  gemm_nt(a.data(), b.data(), y.data(), n, r, m, false);
  check_finite(y, "matmul_nt");

  Tensor out = make_output({n, m}, std::move(y));
  note_leaf(a);
  note_leaf(b);
  record([a, b, out, n, r, m](GradStore& g) {
    const auto* og = g.find(out);
    if (!og) return;
    // dA = dY * B, dB = dY^T * A
    gemm_nn(og->data(), b.data(), g.of(a).data(), n, m, r, true);
    gemm_tn(og->data(), a.data(), g.of(b).data(), m, n, r, true);
  });
  return out;
}

Tensor Tape::reshape(const Tensor& x, std::vector<int> shape) {
  if (shape_size(shape) != x.size())
    throw DimensionError("reshape of " + x.shape_str() + " to " +
                         shape_to_str(shape) + " changes element count");
  std::vector<double> y(x.data(), x.data() + x.size());
  Tensor out = make_output(std::move(shape), std::move(y));
  note_leaf(x);
  record([x, out](GradStore& g) {
    const auto* og = g.find(out);
    if (!og) return;
    auto& dx = g.of(x);
    for (size_t i = 0; i < og->size(); ++i) dx[i] += (*og)[i];
  });
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (!recorded(loss))
    throw UsageError("backward() on a tensor not produced by this tape");
  if (loss.size() != 1)
    throw UsageError("backward() requires a scalar loss, got " + loss.shape_str());

  GradStore grads;
  grads.of(loss)[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward(grads);

  for (auto& leaf : leaves_) {
    Tensor t;
    t.impl_ = leaf;
    const auto* buf = grads.find(t);
    if (buf) leaf->grad = *buf;
  }
  clear();
}

}  // namespace editbench
