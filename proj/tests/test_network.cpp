#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "editbench/checkpoint.hpp"
#include "editbench/network.hpp"
#include "editbench/rng.hpp"

using namespace editbench;

namespace {

// Tiny two-feature dataset: class 0 iff first feature exceeds the second.
SynthDataset separable_points(int n, uint64_t seed) {
  SynthDataset d;
  d.class_count = 2;
  d.images = Tensor::zeros({n, 1, 1, 2});
  d.labels.resize(static_cast<size_t>(n));
  d.id = "separable";
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const int cls = i % 2;
    const double hi = rng.uniform(0.6, 1.0);
    const double lo = rng.uniform(0.0, 0.4);
    d.images[i * 2 + 0] = cls == 0 ? hi : lo;
    d.images[i * 2 + 1] = cls == 0 ? lo : hi;
    d.labels[static_cast<size_t>(i)] = cls;
  }
  return d;
}

std::vector<LayerSpec> toy_arch() {
  return {LayerSpec::flat(), LayerSpec::dense_layer(2, 2, Activation::identity)};
}

SynthDataset random_images(int n, int c, int h, int w, int classes, uint64_t seed) {
  SynthDataset d;
  d.class_count = classes;
  d.images = Tensor::zeros({n, c, h, w});
  d.labels.resize(static_cast<size_t>(n));
  d.id = "random";
  Rng rng(seed);
  for (int64_t i = 0; i < d.images.size(); ++i) d.images[i] = rng.uniform();
  for (int i = 0; i < n; ++i) d.labels[static_cast<size_t>(i)] = i % classes;
  return d;
}

Network small_convnet(uint64_t seed) {
  std::vector<LayerSpec> arch = {
      LayerSpec::conv(1, 4, 3, 2, 1, Activation::gelu),
      LayerSpec::conv(4, 6, 3, 2, 1, Activation::gelu),
      LayerSpec::pool(0),
      LayerSpec::flat(),
      LayerSpec::dense_layer(6, 3, Activation::identity),
  };
  return Network(arch, 3, seed);
}

}  // namespace

TEST_CASE("forward emits a probability simplex") {
  Network net = small_convnet(1);
  SynthDataset d = random_images(9, 1, 8, 8, 3, 2);
  Tape tape;
  Tensor p = net.forward(tape, d.images);
  REQUIRE(p.shape() == std::vector<int>{9, 3});
  for (int i = 0; i < 9; ++i) {
    double s = 0.0;
    for (int j = 0; j < 3; ++j) {
      CHECK(p[i * 3 + j] >= 0.0);
      s += p[i * 3 + j];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("zeroed final dense layer gives the uniform distribution") {
  Network net = small_convnet(3);
  Layer& head = net.layer(5);
  for (int64_t i = 0; i < head.weight.size(); ++i) head.weight[i] = 0.0;
  for (int64_t i = 0; i < head.bias.size(); ++i) head.bias[i] = 0.0;

  SynthDataset d = random_images(4, 1, 8, 8, 3, 4);
  Tape tape;
  Tensor p = net.forward(tape, d.images);
  for (int64_t i = 0; i < p.size(); ++i)
    CHECK(p[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("two-layer toy net matches hand-computed composition") {
  // flat -> dense(2->2, identity) with hand-set weights, then softmax.
  Network net(toy_arch(), 2, 0);
  Layer& dense = net.layer(2);
  dense.weight[0] = 1.0; dense.weight[1] = -1.0;
  dense.weight[2] = 0.5; dense.weight[3] = 2.0;
  dense.bias[0] = 0.1; dense.bias[1] = -0.2;

  Tensor x = Tensor::from({1, 1, 1, 2}, {0.3, 0.7});
  Tape tape;
  Tensor p = net.forward(tape, x);

  const double z0 = 1.0 * 0.3 + (-1.0) * 0.7 + 0.1;
  const double z1 = 0.5 * 0.3 + 2.0 * 0.7 - 0.2;
  const double m = std::max(z0, z1);
  const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
  CHECK(p[0] == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-15));
}

TEST_CASE("forward_prefix full depth equals forward") {
  Network net = small_convnet(5);
  SynthDataset d = random_images(3, 1, 8, 8, 3, 6);
  Tape t1, t2;
  Tensor a = net.forward(t1, d.images);
  Tensor b = net.forward_prefix(t2, net.layer_count(), d.images);
  REQUIRE(a.size() == b.size());
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("forward_prefix at an identity first layer applies only the activation") {
  std::vector<LayerSpec> arch = {LayerSpec::flat(),
                                 LayerSpec::dense_layer(2, 2, Activation::relu),
                                 LayerSpec::dense_layer(2, 2, Activation::identity)};
  Network net(arch, 2, 0);
  Layer& l2 = net.layer(2);
  l2.weight[0] = 1.0; l2.weight[1] = 0.0;
  l2.weight[2] = 0.0; l2.weight[3] = 1.0;
  l2.bias[0] = l2.bias[1] = 0.0;

  Tensor x = Tensor::from({1, 1, 1, 2}, {0.5, -0.3});
  Tape tape;
  Tensor h = net.forward_prefix(tape, 2, x);
  CHECK(h[0] == 0.5);
  CHECK(h[1] == 0.0);  // relu clamps the negative component

  CHECK_THROWS_AS(net.forward_prefix(tape, 0, x), UsageError);
  CHECK_THROWS_AS(net.forward_prefix(tape, 9, x), UsageError);
}

TEST_CASE("intermediate prefix matches manual layer-by-layer recomputation") {
  Network net = small_convnet(7);
  SynthDataset d = random_images(2, 1, 8, 8, 3, 8);
  Tape t1;
  Tensor prefix2 = net.forward_prefix(t1, 2, d.images);

  Tape t2;
  Tensor step1 = net.forward_segment(t2, 1, 1, d.images);
  Tensor step2 = net.forward_segment(t2, 2, 2, step1);
  REQUIRE(prefix2.size() == step2.size());
  for (int64_t i = 0; i < prefix2.size(); ++i) CHECK(prefix2[i] == step2[i]);
}

TEST_CASE("prefix then forward_from reproduces forward bit-exactly") {
  Network net = small_convnet(9);
  SynthDataset d = random_images(5, 1, 8, 8, 3, 10);
  const int L = net.layer_count();

  Tape t0;
  Tensor full = net.forward(t0, d.images);
  for (int l = 1; l <= L; ++l) {
    Tape ta, tb;
    Tensor resumed = l == 1 ? net.forward_from(ta, 1, d.images)
                            : net.forward_from(
                                  ta, l, net.forward_prefix(tb, l - 1, d.images));
    REQUIRE(resumed.size() == full.size());
    for (int64_t i = 0; i < full.size(); ++i) CHECK(resumed[i] == full[i]);
  }
}

TEST_CASE("prefix_activations feeds evaluate_from identically to evaluate") {
  Network net = small_convnet(11);
  SynthDataset d = random_images(23, 1, 8, 8, 3, 12);
  const double direct = evaluate(net, d);
  const auto cache = prefix_activations(net, d.images);
  REQUIRE(cache.size() == static_cast<size_t>(net.layer_count()) + 1);
  for (int l = 1; l <= net.layer_count(); ++l)
    CHECK(evaluate_from(net, l, cache[static_cast<size_t>(l - 1)], d.labels) == direct);
}

TEST_CASE("evaluate basics") {
  SynthDataset d = separable_points(10, 3);

  // Perfect predictor: a dense layer that copies the two features to logits.
  Network net(toy_arch(), 2, 0);
  Layer& dense = net.layer(2);
  dense.weight[0] = 5.0; dense.weight[1] = 0.0;
  dense.weight[2] = 0.0; dense.weight[3] = 5.0;
  dense.bias[0] = dense.bias[1] = 0.0;
  CHECK(evaluate(net, d) == 1.0);

  // Constant predictor on a balanced set: ties resolve to class 0 -> 1/K.
  for (int64_t i = 0; i < dense.weight.size(); ++i) dense.weight[i] = 0.0;
  CHECK(evaluate(net, d) == doctest::Approx(0.5));

  SynthDataset empty;
  empty.class_count = 2;
  CHECK_THROWS_AS(evaluate(net, empty), UsageError);
}

TEST_CASE("evaluate matches per-example enumeration oracle") {
  Network net = small_convnet(13);
  SynthDataset d = random_images(20, 1, 8, 8, 3, 14);
  int correct = 0;
  for (int i = 0; i < 20; ++i) {
    SynthDataset one = d.subset({i});
    Tape tape;
    Tensor p = net.forward(tape, one.images);
    int best = 0;
    for (int j = 1; j < 3; ++j)
      if (p[j] > p[best]) best = j;
    if (best == d.labels[static_cast<size_t>(i)]) ++correct;
  }
  CHECK(evaluate(net, d) == doctest::Approx(correct / 20.0).epsilon(1e-15));
}

TEST_CASE("evaluate is permutation-invariant") {
  Network net = small_convnet(15);
  SynthDataset d = random_images(17, 1, 8, 8, 3, 16);
  std::vector<int64_t> perm;
  for (int i = 16; i >= 0; --i) perm.push_back(i);
  CHECK(evaluate(net, d) == evaluate(net, d.subset(perm)));
}

TEST_CASE("train_base with zero steps equals initialization") {
  SynthDataset train = separable_points(16, 21);
  SynthDataset val = separable_points(8, 22);
  Checkpoint ckpt = train_base(toy_arch(), 2, train, val, 0.5, 0, 77);
  Network init(toy_arch(), 2, 77);
  const Tensor& w0 = init.layer(2).weight;
  const Tensor& w1 = ckpt.network.layer(2).weight;
  for (int64_t i = 0; i < w0.size(); ++i) CHECK(w0[i] == w1[i]);
}

TEST_CASE("train_base solves a linearly separable toy set") {
  SynthDataset train = separable_points(40, 31);
  SynthDataset val = separable_points(20, 32);
  Checkpoint ckpt = train_base(toy_arch(), 2, train, val, 2.0, 500, 5);
  CHECK(evaluate(ckpt.network, train) >= 0.99);
  CHECK(ckpt.meta.base_val_accuracy >= 0.9);
  CHECK(ckpt.meta.dataset_id == "separable");
}

TEST_CASE("train_base is bit-deterministic given the seed") {
  SynthDataset train = separable_points(20, 41);
  SynthDataset val = separable_points(10, 42);
  Checkpoint a = train_base(toy_arch(), 2, train, val, 1.0, 50, 9);
  Checkpoint b = train_base(toy_arch(), 2, train, val, 1.0, 50, 9);
  const Tensor& wa = a.network.layer(2).weight;
  const Tensor& wb = b.network.layer(2).weight;
  for (int64_t i = 0; i < wa.size(); ++i) CHECK(wa[i] == wb[i]);
  CHECK(a.meta.base_val_accuracy == b.meta.base_val_accuracy);
}

TEST_CASE("train_base reports divergence with the failing step") {
  // Two stacked dense layers on astronomically scaled inputs overflow the
  // second pre-activation immediately.
  std::vector<LayerSpec> arch = {LayerSpec::flat(),
                                 LayerSpec::dense_layer(2, 4, Activation::gelu),
                                 LayerSpec::dense_layer(4, 2, Activation::identity)};
  SynthDataset train = separable_points(8, 51);
  for (int64_t i = 0; i < train.images.size(); ++i) train.images[i] *= 1e200;
  SynthDataset val;
  val.class_count = 2;
  try {
    train_base(arch, 2, train, val, 1.0, 3, 1);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.step() == 0);
  }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  SynthDataset train = separable_points(20, 61);
  SynthDataset val = separable_points(10, 62);
  Checkpoint ckpt = train_base(toy_arch(), 2, train, val, 1.0, 25, 13);
  ckpt.meta.dataset_id = "separable:v1";

  const auto path = std::filesystem::temp_directory_path() / "eb_test_ckpt.bin";
  ckpt.save(path);
  Checkpoint loaded = Checkpoint::load(path);

  CHECK(loaded.meta.seed == ckpt.meta.seed);
  CHECK(loaded.meta.dataset_id == ckpt.meta.dataset_id);
  CHECK(loaded.meta.base_val_accuracy == ckpt.meta.base_val_accuracy);
  REQUIRE(loaded.network.layer_count() == ckpt.network.layer_count());
  for (int l = 1; l <= ckpt.network.layer_count(); ++l) {
    const Layer& a = ckpt.network.layer(l);
    const Layer& b = loaded.network.layer(l);
    REQUIRE(a.has_params() == b.has_params());
    if (!a.has_params()) continue;
    REQUIRE(a.weight.shape() == b.weight.shape());
    for (int64_t i = 0; i < a.weight.size(); ++i) CHECK(a.weight[i] == b.weight[i]);
    for (int64_t i = 0; i < a.bias.size(); ++i) CHECK(a.bias[i] == b.bias[i]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint corruption is a format error, not a crash") {
  SynthDataset train = separable_points(10, 71);
  SynthDataset val = separable_points(10, 72);
  Checkpoint ckpt = train_base(toy_arch(), 2, train, val, 1.0, 5, 3);
  const auto dir = std::filesystem::temp_directory_path();
  const auto path = dir / "eb_test_ckpt2.bin";
  ckpt.save(path);

  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  in.close();

  SUBCASE("truncated file") {
    const auto trunc = dir / "eb_test_trunc.bin";
    std::ofstream out(trunc, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(Checkpoint::load(trunc), FormatError);
    std::filesystem::remove(trunc);
  }

  SUBCASE("wrong magic") {
    auto copy = bytes;
    copy[0] ^= 0xFF;
    const auto bad = dir / "eb_test_magic.bin";
    std::ofstream out(bad, std::ios::binary);
    out.write(copy.data(), static_cast<std::streamsize>(copy.size()));
    out.close();
    CHECK_THROWS_AS(Checkpoint::load(bad), FormatError);
    std::filesystem::remove(bad);
  }

  SUBCASE("bumped version is an explicit incompatibility error") {
    auto copy = bytes;
    copy[4] = 99;  // version field follows the 4 magic bytes
    const auto bad = dir / "eb_test_ver.bin";
    std::ofstream out(bad, std::ios::binary);
    out.write(copy.data(), static_cast<std::streamsize>(copy.size()));
    out.close();
    CHECK_THROWS_WITH_AS(Checkpoint::load(bad), doctest::Contains("version"),
                         FormatError);
    std::filesystem::remove(bad);
  }

  std::filesystem::remove(path);
}

TEST_CASE("reference architecture stays under the parameter budget") {
  Network net(reference_arch(1, 32, 5), 5, 1);
  CHECK(net.parameter_count() <= 100000);
  CHECK(net.weighted_layers() == std::vector<int>{1, 2, 3, 4, 7});

  SynthDataset d = random_images(2, 1, 32, 32, 5, 99);
  Tape tape;
  Tensor p = net.forward(tape, d.images);
  REQUIRE(p.shape() == std::vector<int>{2, 5});
}
