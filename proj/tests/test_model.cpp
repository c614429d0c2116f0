#include <doctest.h>

#include <cmath>
#include <vector>

#include "calibforge/model.hpp"
#include "calibforge/rng.hpp"

using namespace calibforge;

namespace {

ModelSpec small_spec() {
  ModelSpec s;
  s.input_dim = 3;
  s.hidden = {5, 5};
  s.classes = 4;
  s.dropout_keep = 0.5;
  s.blocks = 2;
  s.survival = 0.8;
  return s;
}

}  // namespace

TEST_CASE("init_params shapes and determinism") {
  ModelSpec s;
  s.input_dim = 7;
  s.classes = 3;
  auto p = init_params(s, RngStream(1, 0));
  CHECK(p.hidden.empty());
  CHECK(p.output.w.shape == std::vector<std::size_t>{7, 3});
  for (double b : p.output.b.data) CHECK(b == 0.0);

  auto p2 = init_params(s, RngStream(1, 0));
  CHECK(p.output.w.data == p2.output.w.data);
  auto p3 = init_params(s, RngStream(2, 0));
  CHECK(p.output.w.data != p3.output.w.data);
}

TEST_CASE("init_params weights have near-zero mean") {
  ModelSpec s;
  s.input_dim = 50;
  s.hidden = {40};
  s.classes = 5;
  double sum = 0.0;
  std::size_t count = 0;
  for (int rep = 0; rep < 5; ++rep) {
    auto p = init_params(s, RngStream(100 + rep, 0));
    for (double v : p.hidden[0].w.data) {
      sum += v;
      ++count;
    }
  }
  // uniform on [-b,b], b = sqrt(6/90); sd of the mean = b/sqrt(3n)
  const double b = std::sqrt(6.0 / 90.0);
  const double se = b / std::sqrt(3.0 * static_cast<double>(count));
  CHECK(std::abs(sum / static_cast<double>(count)) < 3.0 * se);
}

TEST_CASE("sample_mask degenerate, statistical, deterministic") {
  ModelSpec s = small_spec();
  s.dropout_keep = 1.0;
  s.survival = 1.0;
  auto m = sample_mask(s, RngStream(5, 0));
  for (const auto& site : m.unit_masks)
    for (double v : site) CHECK(v == 1.0);
  for (double g : m.gates) CHECK(g == 1.0);

  ModelSpec h = small_spec();
  h.hidden = {50};
  h.blocks = 0;
  h.dropout_keep = 0.5;
  double total = 0.0;
  std::size_t n = 0;
  for (int rep = 0; rep < 2000; ++rep) {
    auto mm = sample_mask(h, RngStream(77, rep));
    for (double v : mm.unit_masks[0]) {
      total += v;
      ++n;
    }
  }
  CHECK(total / static_cast<double>(n) == doctest::Approx(0.5).epsilon(0.02));

  auto a = sample_mask(small_spec(), RngStream(9, 3));
  auto b2 = sample_mask(small_spec(), RngStream(9, 3));
  CHECK(a.unit_masks == b2.unit_masks);
  CHECK(a.gates == b2.gates);
}

TEST_CASE("full mask with keep=1, survival=1 matches deterministic forward bit-exactly") {
  ModelSpec s = small_spec();
  s.dropout_keep = 1.0;
  s.survival = 1.0;
  auto params = init_params(s, RngStream(3, 0));
  Tensor x = Tensor::matrix(4, 3, {0.1, -0.5, 1.2, 0.0, 2.0, -1.0, 0.3, 0.3, 0.3, -2.0, 1.0, 0.0});
  auto mask = sample_mask(s, RngStream(1, 1));
  Tensor st = forward_stochastic(x, params, s, mask);
  Tensor de = forward_deterministic(x, params, s);
  CHECK(st.data == de.data);
}

TEST_CASE("zero gates make the residual stack an identity map") {
  ModelSpec s;
  s.input_dim = 4;
  s.hidden = {};
  s.classes = 3;
  s.dropout_keep = 1.0;
  s.blocks = 3;
  s.survival = 0.5;
  auto params = init_params(s, RngStream(8, 0));
  NoiseMask mask;
  mask.gates = {0.0, 0.0, 0.0};

  // with every gate closed, only the output layer acts on x
  Tensor x = Tensor::matrix(2, 4, {1, 2, 3, 4, -1, 0, 1, 0});
  Tensor probs = forward_stochastic(x, params, s, mask);

  ModelSpec plain = s;
  plain.blocks = 0;
  ParameterSet head;
  head.output = params.output;
  Tensor expect = forward_deterministic(x, head, plain);
  CHECK(probs.data == expect.data);
}

TEST_CASE("survival=0 would make deterministic residual stack identity") {
  // survival must be > 0 by contract; approximate the limiting case
  ModelSpec s;
  s.input_dim = 3;
  s.hidden = {};
  s.classes = 2;
  s.blocks = 2;
  s.survival = 1e-300;
  auto params = init_params(s, RngStream(4, 0));
  Tensor x = Tensor::matrix(1, 3, {0.5, -0.5, 2.0});
  ModelSpec plain = s;
  plain.blocks = 0;
  ParameterSet head;
  head.output = params.output;
  Tensor a = forward_deterministic(x, params, s);
  Tensor b = forward_deterministic(x, head, plain);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-12));
}

TEST_CASE("stochastic and deterministic outputs are valid distributions") {
  ModelSpec s = small_spec();
  auto params = init_params(s, RngStream(6, 0));
  Tensor x = Tensor::matrix(3, 3, {1, 0, -1, 0.2, 0.4, 0.6, -3, 3, 0});
  for (int rep = 0; rep < 5; ++rep) {
    Tensor p = forward_stochastic(x, params, s, sample_mask(s, RngStream(10, rep)));
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) sum += p.at(i, j);
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
  Tensor d = forward_deterministic(x, params, s);
  for (std::size_t i = 0; i < d.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < d.cols(); ++j) sum += d.at(i, j);
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("mean of stochastic forwards matches deterministic forward on a linear net") {
  // no hidden relu and one block whose inner relu is bypassed by zero
  // weights: expectation commutes with the forward map
  ModelSpec s;
  s.input_dim = 2;
  s.hidden = {};
  s.classes = 2;
  s.blocks = 1;
  s.survival = 0.7;
  s.dropout_keep = 1.0;
  auto params = init_params(s, RngStream(12, 0));
  for (double& v : params.blocks[0].first.w.data) v = 0.0;  // block output = b2
  params.blocks[0].second.b.data = {0.8, -0.6};
  Tensor x = Tensor::matrix(1, 2, {0.4, -0.9});

  const int n = 10000;
  std::vector<double> acc(2, 0.0);
  // average logits, not probabilities: softmax is nonlinear
  ModelSpec logit_spec = s;
  for (int i = 0; i < n; ++i) {
    auto mask = sample_mask(s, RngStream(99, i));
    Tape t;
    auto pv = detail::bind_params(t, params);
    std::vector<const NoiseMask*> masks{&mask};
    Tensor z = t.value(forward_logits(t, t.input(x), logit_spec, pv, &masks));
    acc[0] += z.data[0];
    acc[1] += z.data[1];
  }
  Tape t;
  auto pv = detail::bind_params(t, params);
  Tensor zdet = t.value(forward_logits(t, t.input(x), s, pv, nullptr));

  // MC standard error of the gate contribution
  const double b2norm = std::max(std::abs(params.blocks[0].second.b.data[0]), 1e-9);
  for (int j = 0; j < 2; ++j) {
    const double contrib =
        std::abs(params.output.w.data[j] * b2norm) + std::abs(params.output.w.data[2 + j] * b2norm);
    const double se = std::sqrt(s.survival * (1 - s.survival) / n) * std::max(contrib, 1e-6) * 4.0;
    CHECK(std::abs(acc[j] / n - zdet.data[j]) < std::max(3.0 * se, 1e-2));
  }
}

TEST_CASE("whole-block gating zeroes the gradients of a dropped block") {
  ModelSpec s;
  s.input_dim = 3;
  s.hidden = {3};
  s.classes = 2;
  s.dropout_keep = 1.0;
  s.blocks = 2;
  s.survival = 0.5;
  auto params = init_params(s, RngStream(21, 0));

  NoiseMask mask;
  mask.unit_masks = {std::vector<double>(3, 1.0)};
  mask.gates = {0.0, 1.0};

  Tape t;
  auto pv = detail::bind_params(t, params);
  std::vector<const NoiseMask*> masks{&mask};
  Var probs = forward_stochastic_node(t, t.input(Tensor::matrix(1, 3, {1.0, -0.5, 0.25})), s, pv, masks);
  t.backward(t.scale(t.log(t.row_gather(probs, {1})), -1.0));

  for (double g : t.grad(pv.blocks[0].first.w).data) CHECK(g == 0.0);
  for (double g : t.grad(pv.blocks[0].second.w).data) CHECK(g == 0.0);
  for (double g : t.grad(pv.blocks[0].first.b).data) CHECK(g == 0.0);
  for (double g : t.grad(pv.blocks[0].second.b).data) CHECK(g == 0.0);
  double live = 0.0;
  for (double g : t.grad(pv.blocks[1].second.w).data) live += std::abs(g);
  CHECK(live > 0.0);
}

TEST_CASE("forward rejects mismatched input shapes") {
  ModelSpec s = small_spec();
  auto params = init_params(s, RngStream(1, 0));
  CHECK_THROWS_AS(forward_deterministic(Tensor::matrix(2, 2, {1, 2, 3, 4}), params, s), std::invalid_argument);
}
