#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "tape.hpp"
#include "tensor.hpp"

namespace calibforge {

/// One scored test example. predicted is the argmax of scores (lowest index
/// wins ties) and confidence is scores[predicted].
struct PredictionRecord {
  std::size_t id = 0;
  int label = 0;
  int predicted = 0;
  double confidence = 0.0;
  std::vector<double> scores;

  bool correct() const { return predicted == label; }
};

inline int argmax_lowest(const std::vector<double>& v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

inline PredictionRecord make_record(std::size_t id, int label, std::vector<double> scores) {
  PredictionRecord r;
  r.id = id;
  r.label = label;
  r.predicted = argmax_lowest(scores);
  r.confidence = scores[r.predicted];
  r.scores = std::move(scores);
  return r;
}

enum class BinKey {
  kMax,    // bin on the predicted confidence p_i (default)
  kTruth,  // bin on the score of the ground-truth label
};

inline BinKey parse_bin_key(const std::string& s) {
  if (s == "max") return BinKey::kMax;
  if (s == "truth") return BinKey::kTruth;
  throw std::invalid_argument("bin key must be 'max' or 'truth', got '" + s + "'");
}

/// Interval ((m-1)/M, m/M] with per-bin counts and means.
struct CalibrationBin {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
  double accuracy = 0.0;    // mean correctness
  double confidence = 0.0;  // mean p_i
};

/// Streaming binned-statistics accumulator; the batch path below pushes
/// records one by one so the two agree bit-exactly.
class BinAccumulator {
 public:
  BinAccumulator(std::size_t bins, BinKey key = BinKey::kMax) : key_(key), count_(bins), acc_(bins), conf_(bins) {
    if (bins < 1) throw std::invalid_argument("BinAccumulator: M >= 1 required");
  }

  void push(const PredictionRecord& r) {
    const double c = key_ == BinKey::kMax ? r.confidence : r.scores[r.label];
    const std::size_t m = count_.size();
    // half-open ((m-1)/M, m/M]; confidence exactly 0 goes to the first bin
    std::size_t b = c <= 0.0 ? 0 : static_cast<std::size_t>(std::ceil(c * static_cast<double>(m))) - 1;
    b = std::min(b, m - 1);
    count_[b] += 1;
    acc_[b] += r.correct() ? 1.0 : 0.0;
    conf_[b] += r.confidence;
    n_ += 1;
  }

  std::size_t total() const { return n_; }

  std::vector<CalibrationBin> bins() const {
    const std::size_t m = count_.size();
    std::vector<CalibrationBin> out(m);
    for (std::size_t b = 0; b < m; ++b) {
      out[b].lo = static_cast<double>(b) / static_cast<double>(m);
      out[b].hi = static_cast<double>(b + 1) / static_cast<double>(m);
      out[b].count = count_[b];
      if (count_[b] > 0) {
        out[b].accuracy = acc_[b] / static_cast<double>(count_[b]);
        out[b].confidence = conf_[b] / static_cast<double>(count_[b]);
      }
    }
    return out;
  }

  double ece() const {
    if (n_ == 0) throw std::invalid_argument("ece: no records");
    double e = 0.0;
    for (std::size_t b = 0; b < count_.size(); ++b) {
      if (count_[b] == 0) continue;
      const double acc = acc_[b] / static_cast<double>(count_[b]);
      const double conf = conf_[b] / static_cast<double>(count_[b]);
      e += static_cast<double>(count_[b]) / static_cast<double>(n_) * std::abs(acc - conf);
    }
    return e;
  }

  double mce() const {
    double worst = 0.0;
    for (std::size_t b = 0; b < count_.size(); ++b) {
      if (count_[b] == 0) continue;
      const double acc = acc_[b] / static_cast<double>(count_[b]);
      const double conf = conf_[b] / static_cast<double>(count_[b]);
      worst = std::max(worst, std::abs(acc - conf));
    }
    return worst;
  }

 private:
  BinKey key_;
  std::vector<std::size_t> count_;
  std::vector<double> acc_;
  std::vector<double> conf_;
  std::size_t n_ = 0;
};

inline std::vector<CalibrationBin> bin_predictions(const std::vector<PredictionRecord>& records, std::size_t m,
                                                   BinKey key = BinKey::kMax) {
  BinAccumulator acc(m, key);
  for (const auto& r : records) acc.push(r);
  return acc.bins();
}

inline double ece(const std::vector<PredictionRecord>& records, std::size_t m, BinKey key = BinKey::kMax) {
  BinAccumulator acc(m, key);
  for (const auto& r : records) acc.push(r);
  return acc.ece();
}

inline double mce(const std::vector<PredictionRecord>& records, std::size_t m, BinKey key = BinKey::kMax) {
  BinAccumulator acc(m, key);
  for (const auto& r : records) acc.push(r);
  return acc.mce();
}

/// Sum over records of -log p(y_i); mean is sum / N'.
inline double nll_sum(const std::vector<PredictionRecord>& records) {
  double s = 0.0;
  for (const auto& r : records) {
    const double p = r.scores[r.label];
    s -= std::log(p > kLogClamp ? p : kLogClamp);
  }
  return s;
}

inline double nll(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw std::invalid_argument("nll: no records");
  return nll_sum(records) / static_cast<double>(records.size());
}

/// Sum over records of the squared distance to the one-hot label.
inline double brier_sum(const std::vector<PredictionRecord>& records) {
  double s = 0.0;
  for (const auto& r : records) {
    for (std::size_t j = 0; j < r.scores.size(); ++j) {
      const double t = static_cast<int>(j) == r.label ? 1.0 : 0.0;
      const double d = r.scores[j] - t;
      s += d * d;
    }
  }
  return s;
}

inline double brier(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw std::invalid_argument("brier: no records");
  return brier_sum(records) / static_cast<double>(records.size());
}

inline double accuracy(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw std::invalid_argument("accuracy: no records");
  std::size_t c = 0;
  for (const auto& r : records) c += r.correct() ? 1 : 0;
  return static_cast<double>(c) / static_cast<double>(records.size());
}

/// fraction(t) = #{confident >= t and correct} / N'.
inline std::vector<std::pair<double, double>> coverage_curve(const std::vector<PredictionRecord>& records,
                                                             const std::vector<double>& thresholds) {
  if (records.empty()) throw std::invalid_argument("coverage_curve: no records");
  std::vector<std::pair<double, double>> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("coverage_curve: threshold outside [0,1]");
    std::size_t k = 0;
    for (const auto& r : records)
      if (r.confidence >= t && r.correct()) ++k;
    out.emplace_back(t, static_cast<double>(k) / static_cast<double>(records.size()));
  }
  return out;
}

/// Per-bin stats of records bucketed by their normalized variance alpha.
/// Bins are alpha quantiles (equal-count groups in ascending alpha order),
/// not fixed-width intervals: alphas usually concentrate near 0, and the
/// quantile view is what makes the low-vs-high comparison informative.
struct VarianceBin {
  double lo = 0.0, hi = 0.0;  // alpha range covered by this group
  std::size_t count = 0;
  double accuracy = 0.0;
  double confidence = 0.0;
  double coverage = 0.0;  // cumulative fraction of records up to this bin
};

inline std::vector<VarianceBin> variance_histogram(const std::vector<double>& alphas,
                                                   const std::vector<PredictionRecord>& records, std::size_t bins) {
  if (alphas.size() != records.size()) throw std::invalid_argument("variance_histogram: length mismatch");
  if (bins < 1) throw std::invalid_argument("variance_histogram: bins >= 1");
  const std::size_t n = records.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return alphas[a] < alphas[b]; });

  std::vector<VarianceBin> out(bins);
  std::size_t running = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t begin = b * n / bins, end = (b + 1) * n / bins;
    VarianceBin& vb = out[b];
    vb.count = end - begin;
    for (std::size_t k = begin; k < end; ++k) {
      const std::size_t i = order[k];
      vb.accuracy += records[i].correct() ? 1.0 : 0.0;
      vb.confidence += records[i].confidence;
    }
    if (vb.count > 0) {
      vb.lo = alphas[order[begin]];
      vb.hi = alphas[order[end - 1]];
      vb.accuracy /= static_cast<double>(vb.count);
      vb.confidence /= static_cast<double>(vb.count);
    }
    running += vb.count;
    vb.coverage = n == 0 ? 0.0 : static_cast<double>(running) / static_cast<double>(n);
  }
  return out;
}

struct Temperature {
  double tau = 1.0;
};

/// softmax(z / tau) per row.
inline Tensor apply_temperature(const Tensor& logits, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("apply_temperature: tau must be positive");
  if (!logits.all_finite()) throw std::invalid_argument("apply_temperature: non-finite logits");
  Tensor scaled = logits;
  for (double& v : scaled.data) v /= tau;
  Tape t;
  return t.value(t.softmax(t.input(std::move(scaled))));
}

inline double nll_of_logits(const Tensor& logits, const std::vector<int>& labels, double tau) {
  const Tensor p = apply_temperature(logits, tau);
  double s = 0.0;
  const std::size_t n = p.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = p.at(i, labels[i]);
    s -= std::log(v > kLogClamp ? v : kLogClamp);
  }
  return s / static_cast<double>(n);
}

/// Fits tau by golden-section search on log tau in [log 0.05, log 20]
/// minimizing the holdout NLL; tolerance 1e-4 in log tau. Falls back to
/// tau = 1 if the search somehow lands worse than no scaling.
inline Temperature fit_temperature(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rows() == 0) throw std::invalid_argument("fit_temperature: empty holdout");
  if (labels.size() != logits.rows()) throw std::invalid_argument("fit_temperature: label count mismatch");
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = std::log(0.05), b = std::log(20.0);
  double c = b - phi * (b - a);
  double d = a + phi * (b - a);
  double fc = nll_of_logits(logits, labels, std::exp(c));
  double fd = nll_of_logits(logits, labels, std::exp(d));
  while (b - a > 1e-4) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = nll_of_logits(logits, labels, std::exp(c));
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = nll_of_logits(logits, labels, std::exp(d));
    }
  }
  const double tau = std::exp(0.5 * (a + b));
  if (nll_of_logits(logits, labels, tau) > nll_of_logits(logits, labels, 1.0)) return {1.0};
  return {tau};
}

inline std::vector<PredictionRecord> records_from_probs(const Tensor& probs, const std::vector<int>& labels) {
  std::vector<PredictionRecord> out;
  const std::size_t n = probs.rows(), c = probs.cols();
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(c);
    for (std::size_t j = 0; j < c; ++j) row[j] = probs.at(i, j);
    out.push_back(make_record(i, labels[i], std::move(row)));
  }
  return out;
}

/// Full report bundle for one record set.
struct CalibrationReport {
  double accuracy = 0.0;
  double ece = 0.0;
  double mce = 0.0;
  double nll = 0.0;
  double brier = 0.0;
  double nll_sum = 0.0;
  double brier_sum = 0.0;
  std::size_t n = 0;
  std::vector<CalibrationBin> bins;
  std::vector<std::pair<double, double>> coverage;
};

inline CalibrationReport make_report(const std::vector<PredictionRecord>& records, std::size_t m = 20,
                                     BinKey key = BinKey::kMax) {
  BinAccumulator acc(m, key);
  for (const auto& r : records) acc.push(r);
  CalibrationReport rep;
  rep.accuracy = accuracy(records);
  rep.ece = acc.ece();
  rep.mce = acc.mce();
  rep.nll = nll(records);
  rep.brier = brier(records);
  rep.nll_sum = nll_sum(records);
  rep.brier_sum = brier_sum(records);
  rep.n = records.size();
  rep.bins = acc.bins();
  std::vector<double> ts;
  for (int i = 0; i <= 20; ++i) ts.push_back(static_cast<double>(i) / 20.0);
  rep.coverage = coverage_curve(records, ts);
  return rep;
}

}  // namespace calibforge
