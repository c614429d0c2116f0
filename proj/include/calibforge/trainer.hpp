#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include "data.hpp"
#include "loss.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "stochastic.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace calibforge {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr = 0.1;
  double momentum = 0.9;
  double decay = 0.2;
  std::vector<std::size_t> milestones = {30, 60, 80};
  LossConfig loss;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;         // 0 = only final
  std::optional<double> forced_alpha;       // overrides the computed alpha (testing)

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("TrainConfig: momentum in [0,1)");
    if (batch_size == 0 || epochs == 0) throw std::invalid_argument("TrainConfig: batch size and epochs >= 1");
    for (std::size_t i = 1; i < milestones.size(); ++i)
      if (milestones[i] <= milestones[i - 1]) throw std::invalid_argument("TrainConfig: milestones must increase");
    loss.validate();
  }
};

struct TrainLogEntry {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

using TrainLog = std::vector<TrainLogEntry>;

struct TrainDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// lr0 * decay^(number of milestones <= epoch).
inline double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  std::size_t hit = 0;
  for (std::size_t m : cfg.milestones)
    if (m <= epoch) ++hit;
  return cfg.lr * std::pow(cfg.decay, static_cast<double>(hit));
}

/// Heavy-ball update: v <- momentum*v + g; theta <- theta - lr*v.
inline void sgd_step(Tensor& theta, const Tensor& grad, Tensor& velocity, double lr, double momentum) {
  if (!theta.same_shape(grad) || !theta.same_shape(velocity)) throw std::invalid_argument("sgd_step: shape mismatch");
  if (!grad.all_finite()) throw TrainDivergence("sgd_step: non-finite gradient");
  for (std::size_t i = 0; i < theta.size(); ++i) {
    velocity.data[i] = momentum * velocity.data[i] + grad.data[i];
    theta.data[i] -= lr * velocity.data[i];
  }
  if (!theta.all_finite()) throw TrainDivergence("sgd_step: parameter overflow");
}

namespace detail {

struct Velocity {
  ParameterSet v;

  static Velocity like(const ParameterSet& p) {
    Velocity out;
    out.v = p;
    out.v.for_each_layer([](ParameterSet::Layer& l) {
      l.w = Tensor::zeros(l.w.shape);
      l.b = Tensor::zeros(l.b.shape);
    });
    return out;
  }
};

// Collects the tape handles of every layer in the same order as
// ParameterSet::for_each_layer.
inline std::vector<ParamVars::Layer*> layer_vars(ParamVars& pv) {
  std::vector<ParamVars::Layer*> out;
  for (auto& l : pv.hidden) out.push_back(&l);
  for (auto& b : pv.blocks) {
    out.push_back(&b.first);
    out.push_back(&b.second);
  }
  out.push_back(&pv.output);
  return out;
}

}  // namespace detail

struct TrainResult {
  ParameterSet params;
  TrainLog log;
};

/// One optimizer step per batch; deterministic under seed. Masks for batch
/// example k with dataset index i use the stream (seed, kMask, epoch, batch,
/// i, sample); the non-VWCI paths are the sample = 0 special case, so a VWCI
/// run with T = 1 and forced alpha = 0 retraces the baseline bit-for-bit.
inline TrainResult train(const ModelSpec& spec, const Dataset& train_ds, const TrainConfig& cfg) {
  spec.validate();
  cfg.validate();
  train_ds.validate();
  if (train_ds.dim() != spec.input_dim || train_ds.classes != spec.classes)
    throw std::invalid_argument("train: dataset does not match model spec");

  ParameterSet params = init_params(spec, RngStream::derive(cfg.seed, {stream_label::kInit}));
  auto velocity = detail::Velocity::like(params);
  const std::size_t t_samples = cfg.loss.kind == LossKind::kVwci ? cfg.loss.samples : 1;
  const std::size_t n = train_ds.size(), d = train_ds.dim();
  TrainLog log;

  try {
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(cfg, epoch);
    double loss_sum = 0.0;
    std::size_t seen = 0;

    const auto batch_idx = batches(n, cfg.batch_size, cfg.seed, epoch);
    for (std::size_t bi = 0; bi < batch_idx.size(); ++bi) {
      const auto& ids = batch_idx[bi];
      const std::size_t b = ids.size();

      // rows: example-major, sample-minor
      Tensor x = Tensor::zeros({b * t_samples, d});
      std::vector<int> labels(b);
      std::vector<NoiseMask> masks;
      masks.reserve(b * t_samples);
      for (std::size_t k = 0; k < b; ++k) {
        labels[k] = train_ds.labels[ids[k]];
        for (std::size_t j = 0; j < t_samples; ++j) {
          for (std::size_t f = 0; f < d; ++f) x.data[(k * t_samples + j) * d + f] = train_ds.features.at(ids[k], f);
          masks.push_back(
              sample_mask(spec, RngStream::derive(cfg.seed, {stream_label::kMask, epoch, bi, ids[k], j})));
        }
      }

      Tape tape;
      auto pv = detail::bind_params(tape, params);
      std::vector<const NoiseMask*> mask_ptrs;
      mask_ptrs.reserve(masks.size());
      for (const auto& m : masks) mask_ptrs.push_back(&m);
      Var probs = forward_stochastic_node(tape, tape.input(std::move(x)), spec, pv, mask_ptrs);

      Var data_loss;
      switch (cfg.loss.kind) {
        case LossKind::kBaseline:
          data_loss = cross_entropy(tape, probs, labels);
          break;
        case LossKind::kCi:
          data_loss = ci_loss(tape, probs, labels, cfg.loss.beta);
          break;
        case LossKind::kEntropyCi:
          data_loss = entropy_ci_loss(tape, probs, labels, cfg.loss.gamma);
          break;
        case LossKind::kVwci: {
          // alpha from the same T passes whose terms enter the loss,
          // detached from the gradient
          std::vector<double> alphas(b);
          const Tensor& p = tape.value(probs);
          const std::size_t c = p.cols();
          for (std::size_t k = 0; k < b; ++k) {
            if (cfg.forced_alpha) {
              alphas[k] = *cfg.forced_alpha;
            } else {
              Tensor rows = Tensor::zeros({t_samples, c});
              for (std::size_t j = 0; j < t_samples * c; ++j) rows.data[j] = p.data[k * t_samples * c + j];
              alphas[k] = normalized_variance(StochasticPredictionSet{std::move(rows)}, cfg.loss.alpha_mode);
            }
          }
          data_loss = vwci_loss(tape, probs, labels, alphas, t_samples);
          break;
        }
      }

      Var total = data_loss;
      if (cfg.loss.weight_decay > 0.0) {
        std::vector<Var> weights;
        for (auto* l : detail::layer_vars(pv)) weights.push_back(l->w);
        total = tape.add(total, l2_penalty(tape, weights, cfg.loss.weight_decay));
      }

      const double loss_value = tape.value(total).item();
      if (!std::isfinite(loss_value))
        throw TrainDivergence("train: non-finite loss at epoch " + std::to_string(epoch));
      loss_sum += loss_value * static_cast<double>(b);
      seen += b;

      tape.backward(total);
      auto lv = detail::layer_vars(pv);
      std::vector<ParameterSet::Layer*> plist, vlist;
      params.for_each_layer([&](ParameterSet::Layer& l) { plist.push_back(&l); });
      velocity.v.for_each_layer([&](ParameterSet::Layer& l) { vlist.push_back(&l); });
      for (std::size_t i = 0; i < lv.size(); ++i) {
        sgd_step(plist[i]->w, tape.grad(lv[i]->w), vlist[i]->w, lr, cfg.momentum);
        sgd_step(plist[i]->b, tape.grad(lv[i]->b), vlist[i]->b, lr, cfg.momentum);
      }
    }

    // epoch metrics: mean batch loss and deterministic train accuracy
    Tensor p = forward_deterministic(train_ds.features, params, spec);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < p.cols(); ++j)
        if (p.at(i, j) > p.at(i, best)) best = j;
      if (static_cast<int>(best) == train_ds.labels[i]) ++correct;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.push_back({epoch, loss_sum / static_cast<double>(seen), static_cast<double>(correct) / static_cast<double>(n),
                   lr, secs});
  }
  } catch (const NonFiniteValue& e) {
    throw TrainDivergence(std::string("train: ") + e.what());
  }

  return {std::move(params), std::move(log)};
}

}  // namespace calibforge
