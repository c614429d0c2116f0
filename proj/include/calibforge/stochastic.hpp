#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "model.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace calibforge {

struct StochasticConfig {
  std::size_t samples = 5;  // T
  std::uint64_t seed = 0;
};

/// T stochastic probability vectors for one example: [T x C].
struct StochasticPredictionSet {
  Tensor probs;

  std::size_t samples() const { return probs.rows(); }
  std::size_t classes() const { return probs.cols(); }
};

enum class AlphaMode {
  kOneMinusBc,  // alpha = 1 - mean Bhattacharyya coefficient (default)
  kBc,          // alpha = mean Bhattacharyya coefficient
};

inline AlphaMode parse_alpha_mode(const std::string& s) {
  if (s == "one-minus-bc") return AlphaMode::kOneMinusBc;
  if (s == "bc") return AlphaMode::kBc;
  throw std::invalid_argument("alpha mode must be 'one-minus-bc' or 'bc', got '" + s + "'");
}

/// Arithmetic mean over the T rows.
inline std::vector<double> predictive_mean(const StochasticPredictionSet& s) {
  const std::size_t t = s.samples(), c = s.classes();
  if (t == 0) throw std::invalid_argument("predictive_mean: empty set");
  std::vector<double> m(c, 0.0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < c; ++j) m[j] += s.probs.at(i, j);
  for (double& v : m) v /= static_cast<double>(t);
  return m;
}

/// Plug-in second-moment covariance estimator (divide by T).
inline Tensor predictive_covariance(const StochasticPredictionSet& s) {
  const std::size_t t = s.samples(), c = s.classes();
  if (t == 0) throw std::invalid_argument("predictive_covariance: empty set");
  const std::vector<double> m = predictive_mean(s);
  Tensor cov = Tensor::zeros({c, c});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t a = 0; a < c; ++a)
      for (std::size_t b = 0; b < c; ++b) cov.at(a, b) += s.probs.at(i, a) * s.probs.at(i, b);
  for (std::size_t a = 0; a < c; ++a)
    for (std::size_t b = 0; b < c; ++b) cov.at(a, b) = cov.at(a, b) / static_cast<double>(t) - m[a] * m[b];
  return cov;
}

/// Bhattacharyya coefficient sum_c sqrt(p_c q_c), in [0,1]; 1 iff p == q.
inline double bhattacharyya(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("bhattacharyya: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw std::invalid_argument("bhattacharyya: negative entry");
    s += std::sqrt(p[i] * q[i]);
  }
  return s;
}

/// Normalized variance alpha in [0,1] from the mean Bhattacharyya
/// coefficient between each sample and the predictive mean.
inline double normalized_variance(const StochasticPredictionSet& s, AlphaMode mode = AlphaMode::kOneMinusBc) {
  const std::size_t t = s.samples(), c = s.classes();
  if (t == 0) throw std::invalid_argument("normalized_variance: empty set");
  const std::vector<double> m = predictive_mean(s);
  double bc = 0.0;
  std::vector<double> row(c);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < c; ++j) row[j] = s.probs.at(i, j);
    bc += bhattacharyya(row, m);
  }
  bc /= static_cast<double>(t);
  bc = std::min(bc, 1.0);
  return mode == AlphaMode::kOneMinusBc ? 1.0 - bc : bc;
}

struct PredictiveSummary {
  std::vector<double> mean;
  Tensor covariance;
  double alpha = 0.0;
};

inline PredictiveSummary summarize(const StochasticPredictionSet& s, AlphaMode mode = AlphaMode::kOneMinusBc) {
  return {predictive_mean(s), predictive_covariance(s), normalized_variance(s, mode)};
}

/// T stochastic forward passes per example with independent masks drawn from
/// per-(example, sample) streams. All n*T rows are evaluated in one batched
/// forward; row r = example*T + sample.
inline std::vector<StochasticPredictionSet> mc_predict(const Tensor& x, const ParameterSet& params,
                                                       const ModelSpec& spec, const StochasticConfig& cfg) {
  if (cfg.samples == 0) throw std::invalid_argument("mc_predict: T must be >= 1");
  const std::size_t n = x.rows(), d = x.cols(), t = cfg.samples, c = spec.classes;
  Tensor stacked = Tensor::zeros({n * t, d});
  std::vector<NoiseMask> masks;
  masks.reserve(n * t);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      for (std::size_t k = 0; k < d; ++k) stacked.data[(i * t + j) * d + k] = x.at(i, k);
      masks.push_back(sample_mask(spec, RngStream::derive(cfg.seed, {stream_label::kMc, i, j})));
    }
  }
  Tensor probs = forward_stochastic(stacked, params, spec, masks);
  std::vector<StochasticPredictionSet> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor rows = Tensor::zeros({t, c});
    for (std::size_t j = 0; j < t * c; ++j) rows.data[j] = probs.data[i * t * c + j];
    out.push_back({std::move(rows)});
  }
  return out;
}

}  // namespace calibforge
