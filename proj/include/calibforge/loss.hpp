#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "stochastic.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace calibforge {

enum class LossKind { kBaseline, kCi, kVwci, kEntropyCi };

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "baseline") return LossKind::kBaseline;
  if (s == "ci") return LossKind::kCi;
  if (s == "vwci") return LossKind::kVwci;
  if (s == "entropy-ci") return LossKind::kEntropyCi;
  throw std::invalid_argument("loss kind must be baseline|ci|vwci|entropy-ci, got '" + s + "'");
}

inline std::string loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::kBaseline: return "baseline";
    case LossKind::kCi: return "ci";
    case LossKind::kVwci: return "vwci";
    case LossKind::kEntropyCi: return "entropy-ci";
  }
  return "?";
}

struct LossConfig {
  LossKind kind = LossKind::kBaseline;
  double beta = 0.0;         // CI coefficient
  double gamma = 0.0;        // entropy coefficient
  double weight_decay = 0.0; // lambda
  std::size_t samples = 5;   // T, used by vwci
  AlphaMode alpha_mode = AlphaMode::kOneMinusBc;

  // Additive constant folded out of the KL-vs-cross-entropy rewrite;
  // recorded for reporting, never added to the optimized value.
  double xi(std::size_t classes) const { return std::log(static_cast<double>(classes)); }

  void validate() const {
    if (beta < 0.0 || gamma < 0.0 || weight_decay < 0.0)
      throw std::invalid_argument("LossConfig: coefficients must be nonnegative");
    if (kind == LossKind::kVwci && samples < 1) throw std::invalid_argument("LossConfig: vwci requires T >= 1");
  }
};

namespace detail {

inline void check_labels(std::size_t n, std::size_t c, const std::vector<int>& labels) {
  if (labels.size() != n) throw std::invalid_argument("loss: label count mismatch");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= c) throw std::invalid_argument("loss: label out of range");
}

// Per-row negative log-likelihood of the true label, [n x 1].
inline Var nll_rows(Tape& t, Var probs, const std::vector<int>& labels) {
  check_labels(t.value(probs).rows(), t.value(probs).cols(), labels);
  return t.scale(t.log(t.row_gather(probs, labels)), -1.0);
}

// Per-row KL(U || p) = -log C - (1/C) sum_c log p_c, [n x 1].
inline Var kl_uniform_rows(Tape& t, Var probs) {
  const double c = static_cast<double>(t.value(probs).cols());
  return t.add_scalar(t.scale(t.row_sum(t.log(probs)), -1.0 / c), -std::log(c));
}

// Per-row entropy H(p) = -sum_c p_c log p_c, [n x 1].
inline Var entropy_rows(Tape& t, Var probs) {
  return t.scale(t.row_sum(t.mul(probs, t.log(probs))), -1.0);
}

}  // namespace detail

/// Mean over examples of -log p(y_i), probabilities clamped at 1e-12.
inline Var cross_entropy(Tape& t, Var probs, const std::vector<int>& labels) {
  return t.mean(detail::nll_rows(t, probs, labels));
}

/// KL from the uniform distribution to one probability row.
inline double kl_uniform(const std::vector<double>& p) {
  const double c = static_cast<double>(p.size());
  double s = 0.0;
  for (double v : p) s += std::log(v > kLogClamp ? v : kLogClamp);
  return -std::log(c) - s / c;
}

/// Reverse direction KL(p || U) = -H(p) + log C.
inline double kl_uniform_reverse(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) h -= v * std::log(v > kLogClamp ? v : kLogClamp);
  return -h + std::log(static_cast<double>(p.size()));
}

/// Eq-style confidence-integrated objective: CE + beta * mean KL(U||p).
/// The additive constant xi is omitted.
inline Var ci_loss(Tape& t, Var probs, const std::vector<int>& labels, double beta) {
  if (beta < 0.0) throw std::invalid_argument("ci_loss: beta must be nonnegative");
  Var ce = cross_entropy(t, probs, labels);
  if (beta == 0.0) return ce;
  return t.add(ce, t.scale(t.mean(detail::kl_uniform_rows(t, probs)), beta));
}

/// Variance-weighted loss over stacked per-sample probabilities.
/// probs is [(n*T) x C] with the T rows of example i contiguous; alphas has
/// one entry per example and enters as a detached constant coefficient.
inline Var vwci_loss(Tape& t, Var probs, const std::vector<int>& labels, const std::vector<double>& alphas,
                     std::size_t samples) {
  const std::size_t rows = t.value(probs).rows();
  if (samples < 1 || rows % samples != 0) throw std::invalid_argument("vwci_loss: row count not a multiple of T");
  const std::size_t n = rows / samples;
  if (alphas.size() != n) throw std::invalid_argument("vwci_loss: one alpha per example required");
  for (double a : alphas)
    if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("vwci_loss: alpha out of [0,1]");

  std::vector<int> row_labels(rows);
  Tensor w_gt = Tensor::zeros({rows, 1});
  Tensor w_u = Tensor::zeros({rows, 1});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < samples; ++j) {
      row_labels[i * samples + j] = labels[i];
      w_gt.data[i * samples + j] = 1.0 - alphas[i];
      w_u.data[i * samples + j] = alphas[i];
    }
  }
  Var nll = detail::nll_rows(t, probs, row_labels);
  Var kl = detail::kl_uniform_rows(t, probs);
  // mean over n*T rows == (1/n) sum_i (1/T) sum_j
  return t.mean(t.add(t.mul_const(nll, std::move(w_gt)), t.mul_const(kl, std::move(w_u))));
}

/// CE - gamma * mean entropy.
inline Var entropy_ci_loss(Tape& t, Var probs, const std::vector<int>& labels, double gamma) {
  Var ce = cross_entropy(t, probs, labels);
  if (gamma == 0.0) return ce;
  return t.add(ce, t.scale(t.mean(detail::entropy_rows(t, probs)), -gamma));
}

/// lambda * sum of squared weights over the given weight nodes (biases are
/// excluded by the caller).
inline Var l2_penalty(Tape& t, const std::vector<Var>& weights, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("l2_penalty: lambda must be nonnegative");
  Var acc{-1};
  for (Var w : weights) {
    Var s = t.sum(t.mul(w, w));
    acc = acc.valid() ? t.add(acc, s) : s;
  }
  if (!acc.valid()) acc = t.input(Tensor::scalar(0.0));
  return t.scale(acc, lambda);
}

/// Value-only L2 penalty on a ParameterSet's weight matrices.
inline double l2_penalty_value(const ParameterSet& p, double lambda) {
  double s = 0.0;
  p.for_each_layer([&](const ParameterSet::Layer& l) {
    for (double v : l.w.data) s += v * v;
  });
  return lambda * s;
}

/// Two-component Gaussian-mixture prior spec for the closed-form approximate
/// KL diagnostic.
struct MixturePriorSpec {
  double theta_sq_1 = 0.0;  // squared norm of the first component mean
  double theta_sq_2 = 0.0;  // second component mean is zero by convention
  double e1 = 1.0, e2 = 0.0;
  double sigma = 1.0;
  std::size_t dim = 1;  // D

  void validate() const {
    if (sigma <= 0.0) throw std::invalid_argument("MixturePriorSpec: sigma must be positive");
    if (e1 < 0.0 || e2 < 0.0 || std::abs(e1 + e2 - 1.0) > 1e-12)
      throw std::invalid_argument("MixturePriorSpec: weights must be a distribution");
    if (dim < 1) throw std::invalid_argument("MixturePriorSpec: dim >= 1");
  }
};

/// Closed-form approximation of KL(q || p) for the two-component mixture;
/// diagnostic only, never added to a training loss.
inline double approx_kl_mixture(const MixturePriorSpec& s) {
  s.validate();
  const double d = static_cast<double>(s.dim);
  const double common = d * s.sigma - std::log(s.sigma) - d * (1.0 + std::log(2.0 * 3.14159265358979323846));
  auto plogp = [](double e) { return e > 0.0 ? e * std::log(e) : 0.0; };
  const double entropy = -(plogp(s.e1) + plogp(s.e2));
  return 0.5 * s.e1 * (s.theta_sq_1 + common) + 0.5 * s.e2 * (s.theta_sq_2 + common) - 0.5 * entropy;
}

}  // namespace calibforge
