#include <doctest.h>

#include <cmath>
#include <vector>

#include "calibforge/data.hpp"
#include "calibforge/trainer.hpp"

using namespace calibforge;

TEST_CASE("lr schedule") {
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.decay = 0.2;
  cfg.milestones = {60, 120, 160, 200, 250};
  CHECK(lr_at_epoch(cfg, 0) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(lr_at_epoch(cfg, 59) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(lr_at_epoch(cfg, 60) == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(lr_at_epoch(cfg, 120) == doctest::Approx(0.004).epsilon(1e-12));
  CHECK(lr_at_epoch(cfg, 1000) == doctest::Approx(0.1 * std::pow(0.2, 5)).epsilon(1e-12));

  TrainConfig flat;
  flat.milestones = {};
  CHECK(lr_at_epoch(flat, 0) == lr_at_epoch(flat, 500));
}

TEST_CASE("sgd step hand arithmetic") {
  Tensor theta = Tensor::scalar(1.0);
  Tensor v = Tensor::scalar(0.0);
  Tensor g = Tensor::scalar(2.0);
  sgd_step(theta, g, v, 0.1, 0.9);
  CHECK(theta.data[0] == doctest::Approx(0.8).epsilon(1e-15));
  sgd_step(theta, g, v, 0.1, 0.9);
  CHECK(v.data[0] == doctest::Approx(3.8).epsilon(1e-15));
  CHECK(theta.data[0] == doctest::Approx(0.42).epsilon(1e-12));

  // momentum 0 reduces to plain gradient descent
  Tensor t2 = Tensor::scalar(1.0), v2 = Tensor::scalar(0.0);
  sgd_step(t2, Tensor::scalar(2.0), v2, 0.1, 0.0);
  CHECK(t2.data[0] == doctest::Approx(0.8).epsilon(1e-15));

  // zero gradient and velocity is a fixed point
  Tensor t3 = Tensor::scalar(5.0), v3 = Tensor::scalar(0.0);
  sgd_step(t3, Tensor::scalar(0.0), v3, 0.1, 0.9);
  CHECK(t3.data[0] == 5.0);

  Tensor t4 = Tensor::scalar(1.0), v4 = Tensor::scalar(0.0);
  CHECK_THROWS_AS(sgd_step(t4, Tensor::scalar(std::nan("")), v4, 0.1, 0.9), TrainDivergence);
}

TEST_CASE("weight decay shrinks parameters under zero data gradient") {
  // pure L2 objective: one step must strictly reduce the norm
  Tensor theta = Tensor::matrix(1, 2, {1.0, -2.0});
  Tensor v = Tensor::zeros({1, 2});
  Tape t;
  Var w = t.param(theta);
  t.backward(l2_penalty(t, {w}, 0.01));
  const double before = theta.data[0] * theta.data[0] + theta.data[1] * theta.data[1];
  sgd_step(theta, t.grad(w), v, 0.1, 0.9);
  const double after = theta.data[0] * theta.data[0] + theta.data[1] * theta.data[1];
  CHECK(after < before);
}

namespace {

ModelSpec blob_spec(std::size_t classes) {
  ModelSpec s;
  s.input_dim = 2;
  s.hidden = {16};
  s.classes = classes;
  s.dropout_keep = 0.8;
  return s;
}

}  // namespace

TEST_CASE("training on separable blobs reaches high accuracy") {
  auto ds = gen_blobs(2, 300, 2, 20.0, 1.0, 4);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 64;
  cfg.lr = 0.05;
  cfg.milestones = {30};
  cfg.seed = 4;
  auto result = train(blob_spec(2), ds, cfg);
  CHECK(result.log.size() == 50);
  CHECK(result.log.back().accuracy > 0.99);
  for (const auto& e : result.log) CHECK(e.lr == lr_at_epoch(cfg, e.epoch));
}

TEST_CASE("training is deterministic under a fixed seed") {
  auto ds = gen_blobs(3, 60, 2, 5.0, 1.0, 9);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 77;
  auto a = train(blob_spec(3), ds, cfg);
  auto b = train(blob_spec(3), ds, cfg);
  CHECK(a.params.output.w.data == b.params.output.w.data);
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);
}

TEST_CASE("vwci with T=1 and forced alpha 0 retraces the baseline bit-exactly") {
  auto ds = gen_blobs(3, 90, 2, 5.0, 1.0, 12);
  ModelSpec spec = blob_spec(3);
  spec.dropout_keep = 0.6;

  TrainConfig base;
  base.epochs = 4;
  base.seed = 5;
  base.loss.kind = LossKind::kBaseline;
  base.loss.weight_decay = 1e-4;

  TrainConfig vw = base;
  vw.loss.kind = LossKind::kVwci;
  vw.loss.samples = 1;
  vw.forced_alpha = 0.0;

  auto a = train(spec, ds, base);
  auto b = train(spec, ds, vw);
  CHECK(a.params.output.w.data == b.params.output.w.data);
  CHECK(a.params.hidden[0].w.data == b.params.hidden[0].w.data);
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);
}

TEST_CASE("vwci training runs and logs per-epoch entries") {
  auto ds = gen_blobs(2, 80, 2, 6.0, 1.5, 3);
  ModelSpec spec = blob_spec(2);
  spec.dropout_keep = 0.5;
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.loss.kind = LossKind::kVwci;
  cfg.loss.samples = 3;
  cfg.loss.weight_decay = 1e-4;
  cfg.seed = 8;
  auto r = train(spec, ds, cfg);
  CHECK(r.log.size() == 3);
  for (const auto& e : r.log) {
    CHECK(std::isfinite(e.loss));
    CHECK(e.accuracy >= 0.0);
    CHECK(e.accuracy <= 1.0);
  }
}

TEST_CASE("divergence aborts with a diagnostic") {
  auto ds = gen_blobs(2, 60, 2, 5.0, 1.0, 2);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.lr = 1e9;  // with L2 the update grows with theta until it overflows
  cfg.loss.weight_decay = 1e-4;
  cfg.seed = 1;
  CHECK_THROWS_AS(train(blob_spec(2), ds, cfg), TrainDivergence);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  cfg.milestones = {10, 10};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  TrainConfig cfg2;
  cfg2.momentum = 1.0;
  CHECK_THROWS_AS(cfg2.validate(), std::invalid_argument);
  TrainConfig cfg3;
  cfg3.lr = 0.0;
  CHECK_THROWS_AS(cfg3.validate(), std::invalid_argument);
}
