#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "editbench/editing.hpp"
#include "editbench/rng.hpp"
#include "oracles.hpp"

using namespace editbench;

namespace {

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

Checkpoint small_base(uint64_t seed) {
  std::vector<LayerSpec> arch = {
      LayerSpec::conv(1, 4, 3, 2, 1, Activation::gelu),
      LayerSpec::conv(4, 6, 3, 2, 1, Activation::gelu),
      LayerSpec::pool(0),
      LayerSpec::flat(),
      LayerSpec::dense_layer(6, 3, Activation::identity),
  };
  Checkpoint ckpt;
  ckpt.network = Network(arch, 3, seed);
  ckpt.meta.seed = seed;
  ckpt.meta.base_val_accuracy = 0.9;
  return ckpt;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) return false;
  for (int64_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

std::vector<double> forward_probs(const Network& net, const Tensor& images) {
  Tape tape;
  Tensor p = net.forward(tape, images);
  return std::vector<double>(p.data(), p.data() + p.size());
}

}  // namespace

TEST_CASE("zero-step edits are exact identities for all three methods") {
  Checkpoint base = small_base(10);
  SynthDataset train = random_images(6, 1, 8, 8, 3, 11);
  SynthDataset probe = random_images(100, 1, 8, 8, 3, 12);
  const auto base_out = forward_probs(base.network, probe.images);

  for (EditMethod method : {EditMethod::low_rank, EditMethod::surgical,
                            EditMethod::full}) {
    EditPlan plan;
    plan.method = method;
    plan.target_layer = 2;
    plan.lr = 0.5;
    plan.steps = 0;
    plan.seed = 123;
    EditOutcome out = run_edit(base, plan, train);
    const auto edited_out = forward_probs(out.edited.network, probe.images);
    REQUIRE(edited_out.size() == base_out.size());
    for (size_t i = 0; i < base_out.size(); ++i) CHECK(edited_out[i] == base_out[i]);
    CHECK(out.loss_trajectory.size() == 1);
  }
}

TEST_CASE("edit locality: non-target layers stay bit-identical") {
  Rng rng(2000);
  for (int trial = 0; trial < 12; ++trial) {
    Checkpoint base = small_base(rng.next());
    SynthDataset train = random_images(5, 1, 8, 8, 3, rng.next());
    EditPlan plan;
    plan.method = trial % 2 == 0 ? EditMethod::low_rank : EditMethod::surgical;
    const std::vector<int> weighted = base.network.weighted_layers();
    plan.target_layer = weighted[rng.below(weighted.size())];
    plan.rank = 1 + static_cast<int>(rng.below(3));
    plan.lr = rng.uniform(1e-3, 0.3);
    plan.steps = 1 + static_cast<int>(rng.below(5));
    plan.seed = rng.next();

    EditOutcome out = run_edit(base, plan, train);
    for (int l = 1; l <= base.network.layer_count(); ++l) {
      if (!base.network.layer(l).has_params()) continue;
      if (l == plan.target_layer) continue;
      CHECK(bit_equal(base.network.layer(l).weight, out.edited.network.layer(l).weight));
      CHECK(bit_equal(base.network.layer(l).bias, out.edited.network.layer(l).bias));
    }
    // Low-rank edits never touch the bias of the target layer either.
    if (plan.method == EditMethod::low_rank) {
      CHECK(bit_equal(base.network.layer(plan.target_layer).bias,
                      out.edited.network.layer(plan.target_layer).bias));
    }
  }
}

TEST_CASE("materialize arithmetic") {
  Checkpoint base = small_base(30);

  SUBCASE("zero adapter is bit-exact identity") {
    LowRankAdapter a = LowRankAdapter::init(base.network, 2, 2, 7);
    Checkpoint m = materialize(base, a);
    for (int l = 1; l <= base.network.layer_count(); ++l) {
      if (!base.network.layer(l).has_params()) continue;
      CHECK(bit_equal(base.network.layer(l).weight, m.network.layer(l).weight));
    }
  }

  SUBCASE("rank-1 scalar case: W + u v = 1 + 2*3 = 7") {
    std::vector<LayerSpec> arch = {LayerSpec::flat(),
                                   LayerSpec::dense_layer(1, 1, Activation::identity)};
    Checkpoint tiny;
    tiny.network = Network(arch, 1, 0);
    tiny.network.layer(2).weight[0] = 1.0;
    LowRankAdapter a = LowRankAdapter::init(tiny.network, 2, 1, 0);
    a.u[0] = 2.0;
    a.v[0] = 3.0;
    Checkpoint m = materialize(tiny, a);
    CHECK(m.network.layer(2).weight[0] == 7.0);
  }

  SUBCASE("live adapter forward equals materialized forward") {
    LowRankAdapter a = LowRankAdapter::init(base.network, 2, 2, 99);
    Rng rng(31);
    for (int64_t i = 0; i < a.u.size(); ++i) a.u[i] = rng.normal(0.0, 0.1);
    for (int64_t i = 0; i < a.v.size(); ++i) a.v[i] = rng.normal(0.0, 0.1);

    SynthDataset probe = random_images(7, 1, 8, 8, 3, 32);
    WeightPatch patch = a.patch();
    Tape tape;
    Tensor live = base.network.forward(tape, probe.images, &patch);
    Checkpoint m = materialize(base, a);
    const auto mat = forward_probs(m.network, probe.images);
    for (size_t i = 0; i < mat.size(); ++i)
      CHECK(live[static_cast<int64_t>(i)] == doctest::Approx(mat[i]).epsilon(1e-12));
  }

  SUBCASE("shape mismatch is a usage error") {
    LowRankAdapter a = LowRankAdapter::init(base.network, 2, 2, 7);
    a.target_layer = 5;  // dense layer has different extents
    CHECK_THROWS_AS(materialize(base, a), UsageError);
  }
}

TEST_CASE("low-rank delta has numerical rank <= r (SVD oracle)") {
  Rng rng(4000);
  for (int trial = 0; trial < 8; ++trial) {
    Checkpoint base = small_base(rng.next());
    SynthDataset train = random_images(6, 1, 8, 8, 3, rng.next());
    EditPlan plan;
    plan.method = EditMethod::low_rank;
    const std::vector<int> weighted = base.network.weighted_layers();
    plan.target_layer = weighted[rng.below(weighted.size())];
    plan.rank = 1 + static_cast<int>(rng.below(3));  // r in {1, 2, 3}
    plan.lr = 0.2;
    plan.steps = 8;
    plan.seed = rng.next();

    EditOutcome out = run_edit(base, plan, train);
    const Tensor& w0 = base.network.layer(plan.target_layer).weight;
    const Tensor& w1 = out.edited.network.layer(plan.target_layer).weight;
    const auto& shape = w0.shape();
    const int rows = shape[0];
    const int cols = static_cast<int>(w0.size() / rows);
    std::vector<double> delta(static_cast<size_t>(w0.size()));
    for (int64_t i = 0; i < w0.size(); ++i) delta[static_cast<size_t>(i)] = w1[i] - w0[i];

    const auto sv = oracles::singular_values(delta, rows, cols);
    REQUIRE(!sv.empty());
    const double s1 = sv[0];
    CHECK(s1 > 0.0);  // the edit actually moved the layer
    for (size_t i = static_cast<size_t>(plan.rank); i < sv.size(); ++i)
      CHECK(sv[i] <= 1e-10 * s1);
  }
}

TEST_CASE("low-rank scalar-chain SGD matches an independent recurrence") {
  // Smallest nondegenerate instance with the softmax head: one input feature,
  // two classes, rank 1. The oracle runs the identical math on plain doubles.
  std::vector<LayerSpec> arch = {LayerSpec::flat(),
                                 LayerSpec::dense_layer(1, 2, Activation::identity)};
  Checkpoint base;
  base.network = Network(arch, 2, 0);
  base.network.layer(2).weight[0] = 0.4;   // class-0 logit weight
  base.network.layer(2).weight[1] = -0.3;  // class-1 logit weight
  base.network.layer(2).bias[0] = 0.05;
  base.network.layer(2).bias[1] = -0.02;
  base.meta.base_val_accuracy = 1.0;

  SynthDataset one;
  one.class_count = 2;
  one.images = Tensor::from({1, 1, 1, 1}, {0.8});
  one.labels = {0};
  one.id = "one";

  EditPlan plan;
  plan.method = EditMethod::low_rank;
  plan.target_layer = 2;
  plan.rank = 1;
  plan.lr = 0.15;
  plan.steps = 25;
  plan.seed = 42;

  // Reproduce the adapter init (u = 0, v ~ N(0, 0.02) from the plan seed).
  LowRankAdapter init = LowRankAdapter::init(base.network, 2, 1, plan.seed);
  double u0 = 0.0, u1 = 0.0;
  double v0 = init.v[0];

  const double x = 0.8, w0 = 0.4, w1 = -0.3, b0 = 0.05, b1 = -0.02;
  const double y0 = 1.0, y1 = 0.0;
  for (int step = 0; step < plan.steps; ++step) {
    const double z0 = (w0 + u0 * v0) * x + b0;
    const double z1 = (w1 + u1 * v0) * x + b1;
    const double m = std::max(z0, z1);
    const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
    const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
    // loss = ((p0-y0)^2 + (p1-y1)^2) / 2
    const double dp0 = p0 - y0, dp1 = p1 - y1;
    // softmax jacobian
    const double dz0 = p0 * (dp0 - (dp0 * p0 + dp1 * p1));
    const double dz1 = p1 * (dp1 - (dp0 * p0 + dp1 * p1));
    const double gu0 = dz0 * x * v0;
    const double gu1 = dz1 * x * v0;
    const double gv0 = (dz0 * u0 + dz1 * u1) * x;
    u0 -= plan.lr * gu0;
    u1 -= plan.lr * gu1;
    v0 -= plan.lr * gv0;
  }

  EditOutcome out = run_edit(base, plan, one);
  const Tensor& w = out.edited.network.layer(2).weight;
  CHECK(w[0] == doctest::Approx(w0 + u0 * v0).epsilon(1e-10));
  CHECK(w[1] == doctest::Approx(w1 + u1 * v0).epsilon(1e-10));
}

TEST_CASE("surgical finetune on a linear net matches an independent GD oracle") {
  // One dense layer, four separable points, full-batch GD on MSE(softmax).
  std::vector<LayerSpec> arch = {LayerSpec::flat(),
                                 LayerSpec::dense_layer(2, 2, Activation::identity)};
  Checkpoint base;
  base.network = Network(arch, 2, 3);
  base.meta.base_val_accuracy = 1.0;
  const double w_init[4] = {base.network.layer(2).weight[0],
                            base.network.layer(2).weight[1],
                            base.network.layer(2).weight[2],
                            base.network.layer(2).weight[3]};
  const double b_init[2] = {base.network.layer(2).bias[0],
                            base.network.layer(2).bias[1]};

  SynthDataset four;
  four.class_count = 2;
  four.images = Tensor::from({4, 1, 1, 2}, {0.9, 0.1, 0.8, 0.3, 0.2, 0.7, 0.1, 0.9});
  four.labels = {0, 0, 1, 1};
  four.id = "four";

  EditPlan plan;
  plan.method = EditMethod::surgical;
  plan.target_layer = 2;
  plan.lr = 0.3;
  plan.steps = 40;
  plan.seed = 0;

  // Independent oracle on plain doubles.
  double w[4] = {w_init[0], w_init[1], w_init[2], w_init[3]};
  double b[2] = {b_init[0], b_init[1]};
  for (int step = 0; step < plan.steps; ++step) {
    double gw[4] = {0, 0, 0, 0}, gb[2] = {0, 0};
    for (int i = 0; i < 4; ++i) {
      const double x0 = four.images[i * 2], x1 = four.images[i * 2 + 1];
      const double z0 = w[0] * x0 + w[1] * x1 + b[0];
      const double z1 = w[2] * x0 + w[3] * x1 + b[1];
      const double m = std::max(z0, z1);
      const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
      const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
      const double t0 = four.labels[static_cast<size_t>(i)] == 0 ? 1.0 : 0.0;
      const double t1 = 1.0 - t0;
      // d(mse)/dp with mean over 8 elements
      const double dp0 = 2.0 * (p0 - t0) / 8.0;
      const double dp1 = 2.0 * (p1 - t1) / 8.0;
      const double dot = dp0 * p0 + dp1 * p1;
      const double dz0 = p0 * (dp0 - dot);
      const double dz1 = p1 * (dp1 - dot);
      gw[0] += dz0 * x0; gw[1] += dz0 * x1;
      gw[2] += dz1 * x0; gw[3] += dz1 * x1;
      gb[0] += dz0; gb[1] += dz1;
    }
    for (int j = 0; j < 4; ++j) w[j] -= plan.lr * gw[j];
    for (int j = 0; j < 2; ++j) b[j] -= plan.lr * gb[j];
  }

  EditOutcome out = run_edit(base, plan, four);
  const Layer& edited = out.edited.network.layer(2);
  for (int j = 0; j < 4; ++j)
    CHECK(edited.weight[j] == doctest::Approx(w[j]).epsilon(1e-10));
  for (int j = 0; j < 2; ++j)
    CHECK(edited.bias[j] == doctest::Approx(b[j]).epsilon(1e-10));
}

TEST_CASE("full and surgical coincide on a single weighted layer") {
  std::vector<LayerSpec> arch = {LayerSpec::flat(),
                                 LayerSpec::dense_layer(2, 2, Activation::identity)};
  Checkpoint base;
  base.network = Network(arch, 2, 17);
  base.meta.base_val_accuracy = 0.8;
  SynthDataset data = random_images(6, 1, 1, 2, 2, 18);

  EditPlan surgical;
  surgical.method = EditMethod::surgical;
  surgical.target_layer = 2;
  surgical.lr = 0.2;
  surgical.steps = 30;
  surgical.seed = 5;
  EditPlan full = surgical;
  full.method = EditMethod::full;

  EditOutcome a = run_edit(base, surgical, data);
  EditOutcome b = run_edit(base, full, data);
  CHECK(bit_equal(a.edited.network.layer(2).weight, b.edited.network.layer(2).weight));
  CHECK(bit_equal(a.edited.network.layer(2).bias, b.edited.network.layer(2).bias));
  REQUIRE(a.loss_trajectory.size() == b.loss_trajectory.size());
  for (size_t i = 0; i < a.loss_trajectory.size(); ++i)
    CHECK(a.loss_trajectory[i] == b.loss_trajectory[i]);
}

TEST_CASE("loss is non-increasing at small lr on a convex-like instance") {
  std::vector<LayerSpec> arch = {LayerSpec::flat(),
                                 LayerSpec::dense_layer(2, 2, Activation::identity)};
  Checkpoint base;
  base.network = Network(arch, 2, 23);
  base.meta.base_val_accuracy = 0.8;
  SynthDataset data = random_images(8, 1, 1, 2, 2, 24);

  EditPlan plan;
  plan.method = EditMethod::full;
  plan.lr = 0.05;
  plan.steps = 60;
  plan.seed = 0;
  EditOutcome out = run_edit(base, plan, data);
  REQUIRE(out.loss_trajectory.size() == 61);
  for (size_t i = 1; i < out.loss_trajectory.size(); ++i)
    CHECK(out.loss_trajectory[i] <= out.loss_trajectory[i - 1] + 1e-15);
}

TEST_CASE("all three methods minimize the identical objective") {
  Checkpoint base = small_base(60);
  SynthDataset data = random_images(9, 1, 8, 8, 3, 61);
  std::vector<double> first_losses;
  for (EditMethod method : {EditMethod::low_rank, EditMethod::surgical,
                            EditMethod::full}) {
    EditPlan plan;
    plan.method = method;
    plan.target_layer = 3;
    plan.lr = 0.01;
    plan.steps = 1;
    plan.seed = 7;
    EditOutcome out = run_edit(base, plan, data);
    first_losses.push_back(out.loss_trajectory.front());
  }
  CHECK(std::fabs(first_losses[0] - first_losses[1]) <= 1e-15);
  CHECK(std::fabs(first_losses[1] - first_losses[2]) <= 1e-15);
}

TEST_CASE("determinism: identical plan and seed give bit-identical outcomes") {
  Checkpoint base = small_base(70);
  SynthDataset data = random_images(6, 1, 8, 8, 3, 71);
  EditPlan plan;
  plan.method = EditMethod::low_rank;
  plan.target_layer = 2;
  plan.rank = 2;
  plan.lr = 0.1;
  plan.steps = 12;
  plan.seed = 99;

  EditOutcome a = run_edit(base, plan, data);
  EditOutcome b = run_edit(base, plan, data);
  CHECK(bit_equal(a.edited.network.layer(2).weight, b.edited.network.layer(2).weight));
  REQUIRE(a.loss_trajectory.size() == b.loss_trajectory.size());
  for (size_t i = 0; i < a.loss_trajectory.size(); ++i)
    CHECK(a.loss_trajectory[i] == b.loss_trajectory[i]);
}

TEST_CASE("frozen-prefix fast path equals the plain path bit-exactly") {
  Checkpoint base = small_base(80);
  SynthDataset data = random_images(6, 1, 8, 8, 3, 81);
  for (EditMethod method : {EditMethod::surgical, EditMethod::low_rank}) {
    EditPlan plan;
    plan.method = method;
    plan.target_layer = 2;
    plan.lr = 0.05;
    plan.steps = 10;
    plan.seed = 3;
    EditOutcome fast = detail::run_sgd_edit(base, plan, data, {}, plan.target_layer);
    EditOutcome slow = detail::run_sgd_edit(base, plan, data, {}, 1);
    CHECK(bit_equal(fast.edited.network.layer(2).weight,
                    slow.edited.network.layer(2).weight));
    REQUIRE(fast.loss_trajectory.size() == slow.loss_trajectory.size());
    for (size_t i = 0; i < fast.loss_trajectory.size(); ++i)
      CHECK(fast.loss_trajectory[i] == slow.loss_trajectory[i]);
  }
}

TEST_CASE("plan validation errors") {
  Checkpoint base = small_base(90);
  SynthDataset data = random_images(4, 1, 8, 8, 3, 91);

  EditPlan plan;
  plan.method = EditMethod::surgical;
  plan.target_layer = 3;  // pool layer: no weights
  plan.lr = 0.1;
  CHECK_THROWS_AS(run_edit(base, plan, data), UsageError);

  plan.target_layer = 99;
  CHECK_THROWS_AS(run_edit(base, plan, data), UsageError);

  plan.target_layer = 2;
  plan.lr = 0.0;
  CHECK_THROWS_AS(run_edit(base, plan, data), UsageError);

  plan.lr = 0.1;
  SynthDataset empty;
  empty.class_count = 3;
  CHECK_THROWS_AS(run_edit(base, plan, empty), UsageError);

  EditPlan lr_plan;
  lr_plan.method = EditMethod::low_rank;
  lr_plan.target_layer = 2;
  lr_plan.rank = 0;
  CHECK_THROWS_AS(run_edit(base, lr_plan, data), UsageError);
}
