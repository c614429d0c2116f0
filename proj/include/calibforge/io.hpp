#pragma once

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "calib.hpp"
#include "model.hpp"
#include "tensor.hpp"
#include "trainer.hpp"

namespace calibforge {

inline constexpr int kFormatVersion = 1;

// Hex-float strings round-trip bit-exactly across platforms.
inline std::string double_to_hex(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline double hex_to_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw std::runtime_error("hex_to_double: malformed '" + s + "'");
  return v;
}

/// Shortest decimal that round-trips the exact double.
inline std::string double_to_shortest(double v) {
  char buf[48];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline nlohmann::json tensor_to_json(const Tensor& t) {
  nlohmann::json j;
  j["shape"] = t.shape;
  std::vector<std::string> hex;
  hex.reserve(t.size());
  for (double v : t.data) hex.push_back(double_to_hex(v));
  j["hex"] = std::move(hex);
  return j;
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  std::vector<std::size_t> shape = j.at("shape").get<std::vector<std::size_t>>();
  std::vector<double> data;
  for (const auto& s : j.at("hex")) data.push_back(hex_to_double(s.get<std::string>()));
  return Tensor(std::move(shape), std::move(data));
}

inline nlohmann::json layer_to_json(const ParameterSet::Layer& l) {
  return {{"w", tensor_to_json(l.w)}, {"b", tensor_to_json(l.b)}};
}

inline ParameterSet::Layer layer_from_json(const nlohmann::json& j) {
  return {tensor_from_json(j.at("w")), tensor_from_json(j.at("b"))};
}

}  // namespace detail

inline nlohmann::json spec_to_json(const ModelSpec& s) {
  return {{"input_dim", s.input_dim}, {"hidden", s.hidden},     {"classes", s.classes},
          {"dropout_keep", s.dropout_keep}, {"blocks", s.blocks}, {"survival", s.survival}};
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  s.classes = j.at("classes").get<std::size_t>();
  s.dropout_keep = j.at("dropout_keep").get<double>();
  s.blocks = j.at("blocks").get<std::size_t>();
  s.survival = j.at("survival").get<double>();
  s.validate();
  return s;
}

/// Versioned JSON checkpoint; parameter floats are hex-encoded so the
/// round trip is bit-exact.
inline void save_checkpoint(const ModelSpec& spec, const ParameterSet& params, const std::string& path) {
  nlohmann::json j;
  j["format_version"] = kFormatVersion;
  j["spec"] = spec_to_json(spec);
  nlohmann::json hidden = nlohmann::json::array();
  for (const auto& l : params.hidden) hidden.push_back(detail::layer_to_json(l));
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : params.blocks)
    blocks.push_back({{"first", detail::layer_to_json(b.first)}, {"second", detail::layer_to_json(b.second)}});
  j["params"] = {{"hidden", std::move(hidden)}, {"blocks", std::move(blocks)},
                 {"output", detail::layer_to_json(params.output)}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << j.dump(2) << "\n";
}

inline std::pair<ModelSpec, ParameterSet> load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.at("format_version").get<int>() != kFormatVersion)
    throw std::runtime_error("load_checkpoint: unsupported format version");
  ModelSpec spec = spec_from_json(j.at("spec"));
  ParameterSet p;
  for (const auto& l : j.at("params").at("hidden")) p.hidden.push_back(detail::layer_from_json(l));
  for (const auto& b : j.at("params").at("blocks"))
    p.blocks.push_back({detail::layer_from_json(b.at("first")), detail::layer_from_json(b.at("second"))});
  p.output = detail::layer_from_json(j.at("params").at("output"));
  return {std::move(spec), std::move(p)};
}

/// Header `id,label,score_0,...,score_{C-1}`; shortest round-trip decimals.
inline void save_predictions_csv(const std::vector<PredictionRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_predictions_csv: cannot open " + path);
  if (records.empty()) throw std::invalid_argument("save_predictions_csv: no records");
  out << "id,label";
  for (std::size_t j = 0; j < records[0].scores.size(); ++j) out << ",score_" << j;
  out << "\n";
  for (const auto& r : records) {
    out << r.id << "," << r.label;
    for (double s : r.scores) out << "," << double_to_shortest(s);
    out << "\n";
  }
}

inline nlohmann::json report_to_json(const CalibrationReport& r) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.bins)
    bins.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"acc", b.accuracy}, {"conf", b.confidence}});
  nlohmann::json cov = nlohmann::json::array();
  for (const auto& [t, f] : r.coverage) cov.push_back({{"t", t}, {"frac", f}});
  return {{"format_version", kFormatVersion},
          {"accuracy", r.accuracy},
          {"ece", r.ece},
          {"mce", r.mce},
          {"nll", r.nll},
          {"brier", r.brier},
          {"nll_sum", r.nll_sum},
          {"brier_sum", r.brier_sum},
          {"n", r.n},
          {"bins", std::move(bins)},
          {"coverage", std::move(cov)}};
}

inline void save_report(const CalibrationReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_report: cannot open " + path);
  out << report_to_json(r).dump(2) << "\n";
}

inline void save_trainlog_csv(const TrainLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_trainlog_csv: cannot open " + path);
  out << "epoch,loss,acc,lr,seconds\n";
  for (const auto& e : log)
    out << e.epoch << "," << double_to_shortest(e.loss) << "," << double_to_shortest(e.accuracy) << ","
        << double_to_shortest(e.lr) << "," << double_to_shortest(e.seconds) << "\n";
}

}  // namespace calibforge
