#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "editbench/rng.hpp"
#include "editbench/tensor.hpp"
#include "oracles.hpp"

using namespace editbench;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0,
                     bool requires_grad = false) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, scale);
  return t;
}

// Redraws values until no relu pre-activation sits near its kink, so central
// finite differences stay meaningful.
bool relu_safe(const Tensor& z, double margin = 1e-3) {
  for (int64_t i = 0; i < z.size(); ++i)
    if (std::fabs(z[i]) < margin) return false;
  return true;
}

}  // namespace

TEST_CASE("dense identity and relu examples") {
  Tape tape;
  Tensor w = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::zeros({2});
  Tensor x = Tensor::from({2}, {0.5, -0.3});

  Tensor y = tape.dense(w, b, x, Activation::identity);
  CHECK(y[0] == 0.5);
  CHECK(y[1] == -0.3);

  Tensor yr = tape.dense(w, b, x, Activation::relu);
  CHECK(yr[0] == 0.5);
  CHECK(yr[1] == 0.0);
}

TEST_CASE("dense matches naive matmul oracle") {
  Rng rng(42);
  Tensor w = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3}, rng);
  Tensor x = random_tensor({4}, rng);

  Tape tape;
  Tensor y = tape.dense(w, b, x, Activation::identity);

  std::vector<double> xv(x.data(), x.data() + 4);
  std::vector<double> wv(w.data(), w.data() + 12);
  // y = W x: treat x as a column.
  auto ref = oracles::naive_matmul(wv, xv, 3, 4, 1);
  for (int i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(ref[i] + b[i]).epsilon(1e-12));
}

TEST_CASE("dense shape mismatch reports offending shapes") {
  Tape tape;
  Tensor w = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({3});
  Tensor x = Tensor::zeros({5});
  CHECK_THROWS_WITH_AS(tape.dense(w, b, x, Activation::identity),
                       doctest::Contains("[3x4]"), DimensionError);
}

TEST_CASE("conv2d 1x1 unit kernel sums channels") {
  Rng rng(7);
  Tensor x = random_tensor({3, 5, 5}, rng, 0.5);
  Tensor k = Tensor::from({1, 3, 1, 1}, {1, 1, 1});
  Tensor b = Tensor::zeros({1});

  Tape tape;
  Tensor y = tape.conv2d(k, b, x, 1, 0, Activation::identity);
  REQUIRE(y.shape() == std::vector<int>{1, 5, 5});
  for (int p = 0; p < 25; ++p) {
    const double expect = x[p] + x[25 + p] + x[50 + p];
    CHECK(y[p] == doctest::Approx(expect).epsilon(1e-15));
  }
}

TEST_CASE("conv2d zero kernel gives zero pre-activation") {
  Rng rng(8);
  Tensor x = random_tensor({2, 6, 6}, rng);
  Tensor k = Tensor::zeros({4, 2, 3, 3});
  Tensor b = Tensor::zeros({4});
  Tape tape;
  Tensor y = tape.conv2d(k, b, x, 1, 1, Activation::identity);
  for (int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("conv2d matches direct convolution oracle") {
  Rng rng(99);
  Tensor x = random_tensor({3, 8, 8}, rng);
  Tensor k = random_tensor({2, 3, 3, 3}, rng);
  Tensor b = random_tensor({2}, rng);

  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      Tape tape;
      Tensor y = tape.conv2d(k, b, x, stride, pad, Activation::identity);
      auto ref = oracles::direct_conv(
          std::vector<double>(x.data(), x.data() + x.size()),
          std::vector<double>(k.data(), k.data() + k.size()),
          std::vector<double>(b.data(), b.data() + b.size()), 3, 8, 8, 2, 3, 3,
          stride, pad);
      REQUIRE(static_cast<size_t>(y.size()) == ref.size());
      for (size_t i = 0; i < ref.size(); ++i)
        CHECK(y[static_cast<int64_t>(i)] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d kernel larger than padded input errors") {
  Tape tape;
  Tensor x = Tensor::zeros({1, 3, 3});
  Tensor k = Tensor::zeros({1, 1, 5, 5});
  Tensor b = Tensor::zeros({1});
  CHECK_THROWS_AS(tape.conv2d(k, b, x, 1, 0, Activation::identity), DimensionError);
}

TEST_CASE("mse examples") {
  Tape tape;
  Tensor a = Tensor::from({2}, {1, 0});
  Tensor b = Tensor::from({2}, {0, 1});
  CHECK(tape.mse(a, b)[0] == 1.0);
  CHECK(tape.mse(a, a)[0] == 0.0);

  // Random pair against an independent scalar loop.
  Rng rng(5);
  Tensor p = random_tensor({4, 7}, rng);
  Tensor q = random_tensor({4, 7}, rng);
  double acc = 0.0;
  for (int64_t i = 0; i < p.size(); ++i) acc += (p[i] - q[i]) * (p[i] - q[i]);
  acc /= static_cast<double>(p.size());
  CHECK(tape.mse(p, q)[0] == doctest::Approx(acc).epsilon(1e-15));

  Tensor bad = Tensor::zeros({3});
  CHECK_THROWS_AS(tape.mse(a, bad), DimensionError);
}

TEST_CASE("backward on mse(x, x) gives zero gradient") {
  Rng rng(11);
  Tensor x = random_tensor({3, 3}, rng, 1.0, true);
  Tape tape;
  Tensor loss = tape.mse(x, x);
  tape.backward(loss);
  REQUIRE(x.has_grad());
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward scalar chain: d/dW mse(Wx, y) = 6") {
  Tensor w = Tensor::from({1, 1}, {2.0}, true);
  Tensor b = Tensor::zeros({1});
  Tensor x = Tensor::from({1}, {3.0});
  Tensor y = Tensor::from({1}, {5.0});
  Tape tape;
  Tensor loss = tape.mse(tape.dense(w, b, x, Activation::identity), y);
  CHECK(loss[0] == 1.0);  // (2*3 - 5)^2
  tape.backward(loss);
  CHECK(w.grad()[0] == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("backward errors") {
  Tape tape;
  Tensor x = Tensor::from({1}, {1.0});
  CHECK_THROWS_AS(tape.backward(x), UsageError);  // not on tape

  Tensor a = Tensor::from({2}, {1.0, 2.0});
  Tensor s = tape.scale(a, 2.0);
  CHECK_THROWS_AS(tape.backward(s), UsageError);  // not scalar
}

TEST_CASE("gradient check: every op against central finite differences") {
  // One composite graph per layer kind; gradients of every leaf checked.
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);

    // dense with each activation
    for (Activation act :
         {Activation::identity, Activation::relu, Activation::gelu}) {
      const int n_in = rng.range(2, 5), n_out = rng.range(2, 5), batch = rng.range(1, 3);
      Tensor w, b, x, y;
      do {
        w = random_tensor({n_out, n_in}, rng, 0.8, true);
        b = random_tensor({n_out}, rng, 0.5, true);
        x = random_tensor({batch, n_in}, rng, 0.9, true);
      } while (act == Activation::relu && [&] {
        Tape t;
        Tensor z = t.dense(w, b, x, Activation::identity);
        return !relu_safe(z);
      }());
      y = random_tensor({batch, n_out}, rng, 0.5);

      auto eval = [&] {
        Tape t;
        return t.mse(t.dense(w, b, x, act), y)[0];
      };
      Tape t;
      Tensor loss = t.mse(t.dense(w, b, x, act), y);
      t.backward(loss);
      for (Tensor* p : {&w, &b, &x}) {
        auto fd = oracles::fd_gradient(*p, eval);
        CHECK(oracles::max_rel_error(p->grad(), fd) <= 1e-6);
      }
    }

    // conv2d + pool + flatten + softmax + mse, gelu activation.
    // Conv output is 4x4, pooled to 2x2, so the flattened width is f*4.
    {
      const int c_in = rng.range(1, 3), f = rng.range(1, 3);
      Tensor k = random_tensor({f, c_in, 3, 3}, rng, 0.5, true);
      Tensor b = random_tensor({f}, rng, 0.3, true);
      Tensor x = random_tensor({2, c_in, 6, 6}, rng, 0.8, true);
      Tensor y = random_tensor({2, f * 4}, rng, 0.4);

      auto eval = [&] {
        Tape t;
        Tensor h = t.conv2d(k, b, x, 1, 0, Activation::gelu);
        h = t.avg_pool(h, 2);
        h = t.flatten(h);
        h = t.softmax(h);
        return t.mse(h, y)[0];
      };
      Tape t;
      Tensor h = t.conv2d(k, b, x, 1, 0, Activation::gelu);
      h = t.avg_pool(h, 2);
      h = t.flatten(h);
      h = t.softmax(h);
      Tensor loss = t.mse(h, y);
      t.backward(loss);
      for (Tensor* p : {&k, &b, &x}) {
        auto fd = oracles::fd_gradient(*p, eval);
        CHECK(oracles::max_rel_error(p->grad(), fd) <= 1e-6);
      }
    }

    // add / scale / matmul_nt
    {
      const int n = rng.range(2, 4), m = rng.range(2, 4), r = rng.range(1, 3);
      Tensor u = random_tensor({n, r}, rng, 0.7, true);
      Tensor v = random_tensor({m, r}, rng, 0.7, true);
      Tensor w = random_tensor({n, m}, rng, 0.7, true);
      Tensor y = random_tensor({n, m}, rng, 0.5);
      auto eval = [&] {
        Tape t;
        Tensor d = t.matmul_nt(u, v);
        Tensor s = t.add(w, t.scale(d, 1.7));
        return t.mse(s, y)[0];
      };
      Tape t;
      Tensor loss = t.mse(t.add(w, t.scale(t.matmul_nt(u, v), 1.7)), y);
      t.backward(loss);
      for (Tensor* p : {&u, &v, &w}) {
        auto fd = oracles::fd_gradient(*p, eval);
        CHECK(oracles::max_rel_error(p->grad(), fd) <= 1e-6);
      }
    }
  }
}

TEST_CASE("backward linearity") {
  Rng rng(123);
  Tensor w = random_tensor({3, 3}, rng, 0.8, true);
  Tensor b = random_tensor({3}, rng, 0.5, true);
  Tensor x = random_tensor({3}, rng);
  Tensor y1 = random_tensor({3}, rng);
  Tensor y2 = random_tensor({3}, rng);
  const double ca = 0.7, cb = -1.3;

  auto grads_of = [&](double a_coef, double b_coef, bool combined) {
    Tape t;
    Tensor out = t.dense(w, b, x, Activation::gelu);
    Tensor l1 = t.mse(out, y1);
    Tensor l2 = t.mse(out, y2);
    Tensor loss = combined ? t.add(t.scale(l1, a_coef), t.scale(l2, b_coef))
                           : (a_coef != 0.0 ? t.scale(l1, a_coef) : t.scale(l2, b_coef));
    t.backward(loss);
    auto gw = w.grad();
    w.zero_grad();
    b.zero_grad();
    return gw;
  };

  auto g1 = grads_of(1.0, 0.0, false);
  auto g2 = grads_of(0.0, 1.0, false);
  auto gc = grads_of(ca, cb, true);
  for (size_t i = 0; i < gc.size(); ++i)
    CHECK(gc[i] == doctest::Approx(ca * g1[i] + cb * g2[i]).epsilon(1e-12));
}

TEST_CASE("determinism: identical op sequence is bit-identical") {
  auto run = [] {
    Rng rng(31337);
    Tensor k = random_tensor({4, 2, 3, 3}, rng, 0.6, true);
    Tensor b = random_tensor({4}, rng, 0.2, true);
    Tensor x = random_tensor({3, 2, 8, 8}, rng);
    Tensor y = random_tensor({3, 4}, rng, 0.3);
    Tape t;
    Tensor h = t.conv2d(k, b, x, 2, 1, Activation::gelu);
    h = t.avg_pool(h, 0);
    h = t.flatten(h);
    h = t.softmax(h);
    Tensor loss = t.mse(h, y);
    t.backward(loss);
    std::vector<double> out;
    out.push_back(loss[0]);
    out.insert(out.end(), k.grad().begin(), k.grad().end());
    out.insert(out.end(), b.grad().begin(), b.grad().end());
    return out;
  };
  auto a = run();
  auto c = run();
  REQUIRE(a.size() == c.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == c[i]);
}

TEST_CASE("tape is consumed by backward") {
  Tensor w = Tensor::from({1, 1}, {2.0}, true);
  Tensor b = Tensor::zeros({1});
  Tensor x = Tensor::from({1}, {1.0});
  Tensor y = Tensor::from({1}, {0.0});
  Tape tape;
  Tensor loss = tape.mse(tape.dense(w, b, x, Activation::identity), y);
  CHECK(tape.node_count() == 2);
  tape.backward(loss);
  CHECK(tape.node_count() == 0);
  CHECK_THROWS_AS(tape.backward(loss), UsageError);
}

TEST_CASE("finiteness guard") {
  Tensor w = Tensor::from({1, 1}, {1e308});
  Tensor b = Tensor::zeros({1});
  Tensor x = Tensor::from({1}, {1e308});
  Tape tape;
  CHECK_THROWS_AS(tape.dense(w, b, x, Activation::identity), NumericError);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(2024);
  Tensor x = random_tensor({5, 7}, rng, 3.0);
  Tape tape;
  Tensor p = tape.softmax(x);
  for (int i = 0; i < 5; ++i) {
    double s = 0.0;
    for (int j = 0; j < 7; ++j) {
      const double v = p[i * 7 + j];
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}
