#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "rng.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace calibforge {

/// MLP classifier topology with dropout sites (one per hidden activation)
/// and gated residual blocks on the final hidden width.
struct ModelSpec {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden;  // widths of fully connected hidden layers
  std::size_t classes = 2;
  double dropout_keep = 1.0;   // keep probability per dropout site, (0,1]
  std::size_t blocks = 0;      // residual block count
  double survival = 0.8;       // block survival probability, (0,1]

  std::size_t block_width() const { return hidden.empty() ? input_dim : hidden.back(); }
  std::size_t dropout_sites() const { return hidden.size(); }

  void validate() const {
    if (input_dim == 0 || classes < 2) throw std::invalid_argument("ModelSpec: need input_dim>0 and classes>=2");
    if (dropout_keep <= 0.0 || dropout_keep > 1.0) throw std::invalid_argument("ModelSpec: dropout_keep in (0,1]");
    if (survival <= 0.0 || survival > 1.0) throw std::invalid_argument("ModelSpec: survival in (0,1]");
    for (std::size_t h : hidden)
      if (h == 0) throw std::invalid_argument("ModelSpec: zero hidden width");
  }
};

/// The deterministic parameters. Residual blocks hold two weight/bias pairs
/// each; the block input and output widths are equal.
struct ParameterSet {
  struct Layer {
    Tensor w;  // [in x out]
    Tensor b;  // [out]
  };
  struct Block {
    Layer first;
    Layer second;
  };
  std::vector<Layer> hidden;
  std::vector<Block> blocks;
  Layer output;

  template <typename Fn>
  void for_each_layer(Fn&& fn) {
    for (auto& l : hidden) fn(l);
    for (auto& b : blocks) {
      fn(b.first);
      fn(b.second);
    }
    fn(output);
  }
  template <typename Fn>
  void for_each_layer(Fn&& fn) const {
    for (const auto& l : hidden) fn(l);
    for (const auto& b : blocks) {
      fn(b.first);
      fn(b.second);
    }
    fn(output);
  }
};

/// One realization of the Bernoulli noise: a 0/1 mask per dropout unit and a
/// 0/1 gate per residual block. The stochastic parameters are the derived
/// view theta ⊙ eps and are never materialized.
struct NoiseMask {
  std::vector<std::vector<double>> unit_masks;  // one vector per dropout site
  std::vector<double> gates;                    // one entry per block, 0 or 1
};

inline ParameterSet::Layer init_layer(std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w = Tensor::zeros({fan_in, fan_out});
  for (double& v : w.data) v = (2.0 * rng.next_uniform() - 1.0) * bound;
  return {std::move(w), Tensor::zeros({fan_out})};
}

/// Scaled-uniform fan-in initialization; biases zero.
inline ParameterSet init_params(const ModelSpec& spec, RngStream rng) {
  spec.validate();
  ParameterSet p;
  std::size_t in = spec.input_dim;
  for (std::size_t h : spec.hidden) {
    p.hidden.push_back(init_layer(in, h, rng));
    in = h;
  }
  const std::size_t w = spec.block_width();
  for (std::size_t i = 0; i < spec.blocks; ++i)
    p.blocks.push_back({init_layer(w, w, rng), init_layer(w, w, rng)});
  p.output = init_layer(in, spec.classes, rng);
  return p;
}

/// Draws one noise realization: Bernoulli(keep) per dropout unit,
/// Bernoulli(survival) per block gate, independent across sites.
inline NoiseMask sample_mask(const ModelSpec& spec, RngStream rng) {
  NoiseMask m;
  for (std::size_t s = 0; s < spec.dropout_sites(); ++s) {
    std::vector<double> site(spec.hidden[s]);
    for (double& v : site) v = rng.next_bernoulli(spec.dropout_keep) ? 1.0 : 0.0;
    m.unit_masks.push_back(std::move(site));
  }
  m.gates.resize(spec.blocks);
  for (double& g : m.gates) g = rng.next_bernoulli(spec.survival) ? 1.0 : 0.0;
  return m;
}

namespace detail {

inline void check_input(const Tensor& x, const ModelSpec& spec) {
  if (x.shape.size() != 2 || x.cols() != spec.input_dim)
    throw std::invalid_argument("forward: input shape " + shape_str(x) + " does not match input_dim");
}

struct ParamVars {
  struct Layer {
    Var w, b;
  };
  std::vector<Layer> hidden;
  std::vector<std::pair<Layer, Layer>> blocks;
  Layer output;
};

inline ParamVars bind_params(Tape& tape, const ParameterSet& p) {
  ParamVars v;
  for (const auto& l : p.hidden) v.hidden.push_back({tape.param(l.w), tape.param(l.b)});
  for (const auto& b : p.blocks)
    v.blocks.push_back({{tape.param(b.first.w), tape.param(b.first.b)},
                        {tape.param(b.second.w), tape.param(b.second.b)}});
  v.output = {tape.param(p.output.w), tape.param(p.output.b)};
  return v;
}

inline Var linear(Tape& t, Var x, const ParamVars::Layer& l) { return t.add_rowvec(t.matmul(x, l.w), l.b); }

// Builds the [rows x width] constant that applies one mask row per example.
inline Tensor stack_site(const std::vector<const NoiseMask*>& masks, std::size_t site, std::size_t width,
                         double scale) {
  Tensor m = Tensor::zeros({masks.size(), width});
  for (std::size_t r = 0; r < masks.size(); ++r)
    for (std::size_t j = 0; j < width; ++j) m.data[r * width + j] = masks[r]->unit_masks[site][j] * scale;
  return m;
}

inline Tensor stack_gates(const std::vector<const NoiseMask*>& masks, std::size_t block, std::size_t width) {
  Tensor m = Tensor::zeros({masks.size(), width});
  for (std::size_t r = 0; r < masks.size(); ++r)
    for (std::size_t j = 0; j < width; ++j) m.data[r * width + j] = masks[r]->gates[block];
  return m;
}

}  // namespace detail

/// Shared forward graph. In stochastic mode each row of x is masked by its
/// own NoiseMask (inverted dropout, 1/keep scaling; hard 0/1 block gates).
/// In deterministic mode dropout sites pass unscaled and block gates are
/// replaced by their expectation (survival scaling).
inline Var forward_logits(Tape& tape, Var x, const ModelSpec& spec, const detail::ParamVars& pv,
                          const std::vector<const NoiseMask*>* masks) {
  Var h = x;
  for (std::size_t l = 0; l < pv.hidden.size(); ++l) {
    h = tape.relu(detail::linear(tape, h, pv.hidden[l]));
    if (masks) h = tape.mul_const(h, detail::stack_site(*masks, l, spec.hidden[l], 1.0 / spec.dropout_keep));
  }
  const std::size_t w = spec.block_width();
  for (std::size_t i = 0; i < pv.blocks.size(); ++i) {
    Var f = detail::linear(tape, tape.relu(detail::linear(tape, h, pv.blocks[i].first)), pv.blocks[i].second);
    Var gated = masks ? tape.mul_const(f, detail::stack_gates(*masks, i, w)) : tape.scale(f, spec.survival);
    h = tape.add(h, gated);
  }
  return detail::linear(tape, h, pv.output);
}

/// Tape-building stochastic forward; masks.size() must equal the row count
/// of x (or 1, broadcast to all rows).
inline Var forward_stochastic_node(Tape& tape, Var x, const ModelSpec& spec, const detail::ParamVars& pv,
                                   const std::vector<const NoiseMask*>& masks) {
  std::vector<const NoiseMask*> rows = masks;
  const std::size_t n = tape.value(x).rows();
  if (rows.size() == 1 && n > 1) rows.assign(n, masks[0]);
  if (rows.size() != n) throw std::invalid_argument("forward_stochastic: one mask per row required");
  return tape.softmax(forward_logits(tape, x, spec, pv, &rows));
}

inline Var forward_deterministic_node(Tape& tape, Var x, const ModelSpec& spec, const detail::ParamVars& pv) {
  return tape.softmax(forward_logits(tape, x, spec, pv, nullptr));
}

/// Value-only stochastic forward: probabilities [n x C].
inline Tensor forward_stochastic(const Tensor& x, const ParameterSet& params, const ModelSpec& spec,
                                 const NoiseMask& mask) {
  detail::check_input(x, spec);
  Tape tape;
  auto pv = detail::bind_params(tape, params);
  std::vector<const NoiseMask*> masks{&mask};
  return tape.value(forward_stochastic_node(tape, tape.input(x), spec, pv, masks));
}

inline Tensor forward_stochastic(const Tensor& x, const ParameterSet& params, const ModelSpec& spec,
                                 const std::vector<NoiseMask>& masks) {
  detail::check_input(x, spec);
  Tape tape;
  auto pv = detail::bind_params(tape, params);
  std::vector<const NoiseMask*> ptrs;
  ptrs.reserve(masks.size());
  for (const auto& m : masks) ptrs.push_back(&m);
  return tape.value(forward_stochastic_node(tape, tape.input(x), spec, pv, ptrs));
}

/// Value-only deterministic forward (the expected-parameter network).
inline Tensor forward_deterministic(const Tensor& x, const ParameterSet& params, const ModelSpec& spec) {
  detail::check_input(x, spec);
  Tape tape;
  auto pv = detail::bind_params(tape, params);
  return tape.value(forward_deterministic_node(tape, tape.input(x), spec, pv));
}

/// Deterministic logits, for temperature scaling.
inline Tensor deterministic_logits(const Tensor& x, const ParameterSet& params, const ModelSpec& spec) {
  detail::check_input(x, spec);
  Tape tape;
  auto pv = detail::bind_params(tape, params);
  return tape.value(forward_logits(tape, tape.input(x), spec, pv, nullptr));
}

}  // namespace calibforge
