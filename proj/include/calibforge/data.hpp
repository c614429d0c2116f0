#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace calibforge {

struct Dataset {
  Tensor features;          // [N x d]
  std::vector<int> labels;  // class ids in [0, C)
  std::size_t classes = 0;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }

  void validate() const {
    if (size() == 0) throw std::invalid_argument("Dataset: empty");
    if (!features.all_finite()) throw std::invalid_argument("Dataset: non-finite feature");
    if (labels.size() != size()) throw std::invalid_argument("Dataset: label count mismatch");
    for (int l : labels)
      if (l < 0 || static_cast<std::size_t>(l) >= classes) throw std::invalid_argument("Dataset: label out of range");
  }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.classes = classes;
    out.features = Tensor::zeros({idx.size(), dim()});
    out.labels.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t j = 0; j < dim(); ++j) out.features.at(r, j) = features.at(idx[r], j);
      out.labels.push_back(labels[idx[r]]);
    }
    return out;
  }
};

struct SplitSpec {
  double train = 0.8;
  double holdout = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (train <= 0.0 || holdout < 0.0 || test < 0.0 || std::abs(train + holdout + test - 1.0) > 1e-9)
      throw std::invalid_argument("SplitSpec: fractions must be nonnegative (train positive) and sum to 1");
  }
};

/// C Gaussian clusters with centers uniform in [-spread, spread]^d.
inline Dataset gen_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double spread, double sigma,
                         std::uint64_t seed) {
  if (classes < 2 || per_class == 0 || dim == 0 || spread <= 0.0 || sigma <= 0.0)
    throw std::invalid_argument("gen_blobs: all parameters must be positive, classes >= 2");
  RngStream center_rng = RngStream::derive(seed, {stream_label::kData, 0});
  std::vector<double> centers(classes * dim);
  for (double& v : centers) v = (2.0 * center_rng.next_uniform() - 1.0) * spread;
  Dataset ds;
  ds.classes = classes;
  ds.features = Tensor::zeros({classes * per_class, dim});
  ds.labels.resize(classes * per_class);
  for (std::size_t c = 0; c < classes; ++c) {
    RngStream rng = RngStream::derive(seed, {stream_label::kData, 1, c});
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t row = c * per_class + i;
      for (std::size_t j = 0; j < dim; ++j) ds.features.at(row, j) = centers[c * dim + j] + sigma * rng.next_normal();
      ds.labels[row] = static_cast<int>(c);
    }
  }
  return ds;
}

/// Each label is independently resampled uniformly over the other C-1
/// classes with the given probability.
inline Dataset inject_label_noise(Dataset ds, double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("inject_label_noise: rate in [0,1]");
  RngStream rng = RngStream::derive(seed, {stream_label::kNoise});
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    if (rng.next_bernoulli(rate)) {
      const auto shift = 1 + rng.next_index(ds.classes - 1);
      ds.labels[i] = static_cast<int>((static_cast<std::size_t>(ds.labels[i]) + shift) % ds.classes);
    }
  }
  return ds;
}

/// CSV with header `f0,...,f{d-1},label`.
inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv: cannot open " + path);
  for (std::size_t j = 0; j < ds.dim(); ++j) out << "f" << j << ",";
  out << "label\n";
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.dim(); ++j) {
      auto res = std::to_chars(buf, buf + sizeof(buf), ds.features.at(i, j));
      out.write(buf, res.ptr - buf);
      out << ',';
    }
    out << ds.labels[i] << '\n';
  }
}

inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file");
  std::size_t dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  std::vector<double> feats;
  std::vector<int> labels;
  int max_label = -1;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col < dim) {
        double v;
        auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size())
          throw std::runtime_error("load_csv: malformed float at line " + std::to_string(lineno));
        feats.push_back(v);
      } else {
        int l;
        auto res = std::from_chars(cell.data(), cell.data() + cell.size(), l);
        if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size())
          throw std::runtime_error("load_csv: non-integer label at line " + std::to_string(lineno));
        labels.push_back(l);
        max_label = std::max(max_label, l);
      }
      ++col;
    }
    if (col != dim + 1) throw std::runtime_error("load_csv: inconsistent width at line " + std::to_string(lineno));
  }
  if (labels.empty()) throw std::runtime_error("load_csv: no data rows");
  Dataset ds;
  ds.features = Tensor({labels.size(), dim}, std::move(feats));
  ds.labels = std::move(labels);
  ds.classes = static_cast<std::size_t>(max_label) + 1;
  ds.validate();
  return ds;
}

struct Splits {
  Dataset train, holdout, test;
};

/// Seeded permutation partition. Train and holdout sizes round down; the
/// remainder goes to test.
inline Splits split(const Dataset& ds, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = ds.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  RngStream rng = RngStream::derive(spec.seed, {stream_label::kSplit});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.next_index(i)]);
  const std::size_t ntr = static_cast<std::size_t>(static_cast<double>(n) * spec.train);
  const std::size_t nho = static_cast<std::size_t>(static_cast<double>(n) * spec.holdout);
  Splits s;
  s.train = ds.subset({idx.begin(), idx.begin() + ntr});
  s.holdout = ds.subset({idx.begin() + ntr, idx.begin() + ntr + nho});
  s.test = ds.subset({idx.begin() + ntr + nho, idx.end()});
  return s;
}

/// Reshuffled mini-batch index slices for one epoch; the permutation is a
/// pure function of (seed, epoch).
inline std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                     std::size_t epoch) {
  if (batch_size == 0) throw std::invalid_argument("batches: batch size >= 1");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  RngStream rng = RngStream::derive(seed, {stream_label::kBatch, epoch});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.next_index(i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    out.emplace_back(idx.begin() + start, idx.begin() + std::min(start + batch_size, n));
  }
  return out;
}

/// Per-feature mean/stddev computed on the train split only.
struct Standardizer {
  std::vector<double> mean, stddev;

  static Standardizer fit(const Dataset& train) {
    const std::size_t n = train.size(), d = train.dim();
    Standardizer s;
    s.mean.assign(d, 0.0);
    s.stddev.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += train.features.at(i, j);
    for (double& v : s.mean) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double dv = train.features.at(i, j) - s.mean[j];
        s.stddev[j] += dv * dv;
      }
    for (double& v : s.stddev) v = std::sqrt(v / static_cast<double>(n));
    for (double& v : s.stddev)
      if (v == 0.0) v = 1.0;
    return s;
  }

  void apply(Dataset& ds) const {
    for (std::size_t i = 0; i < ds.size(); ++i)
      for (std::size_t j = 0; j < ds.dim(); ++j)
        ds.features.at(i, j) = (ds.features.at(i, j) - mean[j]) / stddev[j];
  }
};

}  // namespace calibforge
