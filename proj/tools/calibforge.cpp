// calibforge: train small stochastically regularized classifiers, run
// Monte-Carlo stochastic inference, and measure/repair confidence
// calibration. Subcommands: train, eval, temp, ablate-t.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "calibforge/calib.hpp"
#include "calibforge/data.hpp"
#include "calibforge/io.hpp"
#include "calibforge/loss.hpp"
#include "calibforge/model.hpp"
#include "calibforge/stochastic.hpp"
#include "calibforge/trainer.hpp"

namespace cf = calibforge;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct DataOpts {
  std::string source = "blobs";
  std::size_t blob_classes = 4;
  std::size_t blob_per_class = 1500;
  std::size_t blob_dim = 2;
  double blob_spread = 4.0;
  double blob_sigma = 1.0;
  double noise = 0.0;
  std::string split = "0.7,0.1,0.2";
  bool standardize = false;
  std::optional<std::uint64_t> data_seed;  // defaults to the master seed
};

struct ModelOpts {
  std::string hidden = "64,64";
  double dropout_keep = 0.5;
  std::size_t blocks = 0;
  double survival = 0.8;
};

std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    out.push_back(static_cast<std::size_t>(std::stoul(cell)));
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    out.push_back(std::stod(cell));
  }
  return out;
}

cf::ModelSpec make_spec(const ModelOpts& m, std::size_t input_dim, std::size_t classes) {
  cf::ModelSpec spec;
  spec.input_dim = input_dim;
  spec.hidden = parse_size_list(m.hidden);
  spec.classes = classes;
  spec.dropout_keep = m.dropout_keep;
  spec.blocks = m.blocks;
  spec.survival = m.survival;
  spec.validate();
  return spec;
}

cf::Splits make_splits(const DataOpts& d, std::uint64_t master_seed) {
  const std::uint64_t seed = d.data_seed.value_or(master_seed);
  cf::Dataset ds;
  if (d.source == "blobs") {
    ds = cf::gen_blobs(d.blob_classes, d.blob_per_class, d.blob_dim, d.blob_spread, d.blob_sigma, seed);
  } else {
    ds = cf::load_csv(d.source);
  }
  if (d.noise > 0.0) ds = cf::inject_label_noise(std::move(ds), d.noise, seed);
  auto fr = parse_double_list(d.split);
  if (fr.size() != 3) throw std::invalid_argument("--split needs three comma-separated fractions");
  cf::SplitSpec sp{fr[0], fr[1], fr[2], seed};
  cf::Splits splits = cf::split(ds, sp);
  if (d.standardize) {
    auto st = cf::Standardizer::fit(splits.train);
    st.apply(splits.train);
    st.apply(splits.holdout);
    st.apply(splits.test);
  }
  return splits;
}

nlohmann::json data_opts_json(const DataOpts& d) {
  return {{"source", d.source},           {"blob_classes", d.blob_classes}, {"blob_per_class", d.blob_per_class},
          {"blob_dim", d.blob_dim},       {"blob_spread", d.blob_spread},   {"blob_sigma", d.blob_sigma},
          {"noise", d.noise},             {"split", d.split},               {"standardize", d.standardize},
          {"data_seed", d.data_seed ? nlohmann::json(*d.data_seed) : nlohmann::json()}};
}

void write_config(const nlohmann::json& j, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "config.json");
  out << j.dump(2) << "\n";
}

std::vector<cf::PredictionRecord> eval_records(const cf::Dataset& ds, const cf::ModelSpec& spec,
                                               const cf::ParameterSet& params, std::size_t stochastic_t,
                                               std::uint64_t seed, cf::AlphaMode amode,
                                               std::vector<double>* alphas_out) {
  if (stochastic_t == 0) {
    return cf::records_from_probs(cf::forward_deterministic(ds.features, params, spec), ds.labels);
  }
  cf::StochasticConfig scfg{stochastic_t, seed};
  auto sets = cf::mc_predict(ds.features, params, spec, scfg);
  std::vector<cf::PredictionRecord> records;
  records.reserve(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    records.push_back(cf::make_record(i, ds.labels[i], cf::predictive_mean(sets[i])));
    if (alphas_out) alphas_out->push_back(cf::normalized_variance(sets[i], amode));
  }
  return records;
}

struct TrainCmd {
  DataOpts data;
  ModelOpts model;
  std::string loss = "baseline";
  std::optional<double> beta, gamma;
  std::size_t samples = 5;
  std::string alpha_mode = "one-minus-bc";
  std::size_t epochs = 100;
  std::size_t batch = 64;
  double lr = 0.1;
  double momentum = 0.9;
  double decay = 0.2;
  std::string milestones = "30,60,80";
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  std::string out = "run";
};

cf::TrainConfig make_train_config(const TrainCmd& c) {
  cf::TrainConfig cfg;
  cfg.epochs = c.epochs;
  cfg.batch_size = c.batch;
  cfg.lr = c.lr;
  cfg.momentum = c.momentum;
  cfg.decay = c.decay;
  cfg.milestones = parse_size_list(c.milestones);
  cfg.seed = c.seed;
  cfg.loss.kind = cf::parse_loss_kind(c.loss);
  cfg.loss.weight_decay = c.weight_decay;
  cfg.loss.samples = c.samples;
  cfg.loss.alpha_mode = cf::parse_alpha_mode(c.alpha_mode);
  if (cfg.loss.kind == cf::LossKind::kCi) {
    if (!c.beta) throw std::invalid_argument("--loss ci requires --beta");
    cfg.loss.beta = *c.beta;
  }
  if (cfg.loss.kind == cf::LossKind::kEntropyCi) {
    if (!c.gamma) throw std::invalid_argument("--loss entropy-ci requires --gamma");
    cfg.loss.gamma = *c.gamma;
  }
  cfg.validate();
  return cfg;
}

nlohmann::json train_cmd_json(const TrainCmd& c) {
  nlohmann::json j;
  j["format_version"] = cf::kFormatVersion;
  j["command"] = "train";
  j["data"] = data_opts_json(c.data);
  j["model"] = {{"hidden", c.model.hidden},
                {"dropout_keep", c.model.dropout_keep},
                {"blocks", c.model.blocks},
                {"survival", c.model.survival}};
  j["loss"] = c.loss;
  if (c.beta) j["beta"] = *c.beta;
  if (c.gamma) j["gamma"] = *c.gamma;
  j["samples"] = c.samples;
  j["alpha_mode"] = c.alpha_mode;
  j["epochs"] = c.epochs;
  j["batch"] = c.batch;
  j["lr"] = c.lr;
  j["momentum"] = c.momentum;
  j["decay"] = c.decay;
  j["milestones"] = c.milestones;
  j["weight_decay"] = c.weight_decay;
  j["seed"] = c.seed;
  j["out"] = c.out;
  return j;
}

int run_train(const TrainCmd& c) {
  auto splits = make_splits(c.data, c.seed);
  cf::ModelSpec spec = make_spec(c.model, splits.train.dim(), splits.train.classes);
  cf::TrainConfig cfg = make_train_config(c);
  write_config(train_cmd_json(c), c.out);
  auto result = cf::train(spec, splits.train, cfg);
  cf::save_checkpoint(spec, result.params, (fs::path(c.out) / "model.json").string());
  cf::save_trainlog_csv(result.log, (fs::path(c.out) / "trainlog.csv").string());
  std::cout << "trained " << cf::loss_kind_name(cfg.loss.kind) << " model for " << cfg.epochs << " epochs; final loss "
            << result.log.back().loss << ", train acc " << result.log.back().accuracy << "\n";
  return kExitOk;
}

struct EvalCmd {
  DataOpts data;
  std::string model_path;
  std::string subset = "test";
  std::size_t stochastic_t = 0;
  std::size_t bins = 20;
  std::string bin_key = "max";
  std::string alpha_mode = "one-minus-bc";
  std::uint64_t seed = 0;
  std::string out = "eval";
};

int run_eval(const EvalCmd& c) {
  auto [spec, params] = cf::load_checkpoint(c.model_path);
  auto splits = make_splits(c.data, c.seed);
  const cf::Dataset& ds = c.subset == "train" ? splits.train : c.subset == "holdout" ? splits.holdout : splits.test;
  std::vector<double> alphas;
  auto records = eval_records(ds, spec, params, c.stochastic_t, c.seed, cf::parse_alpha_mode(c.alpha_mode),
                              c.stochastic_t > 0 ? &alphas : nullptr);
  auto report = cf::make_report(records, c.bins, cf::parse_bin_key(c.bin_key));
  fs::create_directories(c.out);
  nlohmann::json cfgj;
  cfgj["format_version"] = cf::kFormatVersion;
  cfgj["command"] = "eval";
  cfgj["data"] = data_opts_json(c.data);
  cfgj["model"] = c.model_path;
  cfgj["subset"] = c.subset;
  cfgj["stochastic"] = c.stochastic_t;
  cfgj["bins"] = c.bins;
  cfgj["bin_key"] = c.bin_key;
  cfgj["alpha_mode"] = c.alpha_mode;
  cfgj["seed"] = c.seed;
  cfgj["out"] = c.out;
  write_config(cfgj, c.out);
  cf::save_predictions_csv(records, (fs::path(c.out) / "predictions.csv").string());
  cf::save_report(report, (fs::path(c.out) / "report.json").string());
  if (c.stochastic_t > 0) {
    std::ofstream af(fs::path(c.out) / "alphas.csv");
    af << "id,alpha\n";
    for (std::size_t i = 0; i < alphas.size(); ++i) af << i << "," << cf::double_to_shortest(alphas[i]) << "\n";
    auto hist = cf::variance_histogram(alphas, records, 10);
    nlohmann::json hj = nlohmann::json::array();
    for (const auto& b : hist)
      hj.push_back({{"lo", b.lo},
                    {"hi", b.hi},
                    {"count", b.count},
                    {"acc", b.accuracy},
                    {"conf", b.confidence},
                    {"coverage", b.coverage}});
    std::ofstream hf(fs::path(c.out) / "variance_hist.json");
    hf << nlohmann::json{{"format_version", cf::kFormatVersion}, {"bins", std::move(hj)}}.dump(2) << "\n";
  }
  std::cout << "eval n=" << report.n << " acc=" << report.accuracy << " ece=" << report.ece << " mce=" << report.mce
            << " nll=" << report.nll << " brier=" << report.brier << "\n";
  return kExitOk;
}

struct TempCmd {
  DataOpts data;
  std::string model_path;
  std::string calibrate_on = "holdout";
  std::size_t bins = 20;
  std::uint64_t seed = 0;
  std::string out = "temp";
};

int run_temp(const TempCmd& c) {
  auto [spec, params] = cf::load_checkpoint(c.model_path);
  auto splits = make_splits(c.data, c.seed);
  const cf::Dataset& ds =
      c.calibrate_on == "train" ? splits.train : c.calibrate_on == "test" ? splits.test : splits.holdout;
  if (ds.size() == 0) throw std::invalid_argument("temp: empty calibration set");
  cf::Tensor logits = cf::deterministic_logits(ds.features, params, spec);
  cf::Temperature t = cf::fit_temperature(logits, ds.labels);
  auto before = cf::make_report(cf::records_from_probs(cf::apply_temperature(logits, 1.0), ds.labels), c.bins);
  auto after = cf::make_report(cf::records_from_probs(cf::apply_temperature(logits, t.tau), ds.labels), c.bins);
  fs::create_directories(c.out);
  nlohmann::json j;
  j["format_version"] = cf::kFormatVersion;
  j["tau"] = t.tau;
  j["calibrate_on"] = c.calibrate_on;
  j["before"] = cf::report_to_json(before);
  j["after"] = cf::report_to_json(after);
  std::ofstream out(fs::path(c.out) / "temperature.json");
  out << j.dump(2) << "\n";
  nlohmann::json cfgj;
  cfgj["format_version"] = cf::kFormatVersion;
  cfgj["command"] = "temp";
  cfgj["data"] = data_opts_json(c.data);
  cfgj["model"] = c.model_path;
  cfgj["calibrate_on"] = c.calibrate_on;
  cfgj["bins"] = c.bins;
  cfgj["seed"] = c.seed;
  cfgj["out"] = c.out;
  write_config(cfgj, c.out);
  std::cout << "tau=" << t.tau << " nll " << before.nll << " -> " << after.nll << " ece " << before.ece << " -> "
            << after.ece << "\n";
  return kExitOk;
}

struct AblateCmd {
  TrainCmd base;
  std::string t_list = "1,2,5,10,30";
  std::size_t repeats = 1;
};

int run_ablate(const AblateCmd& c) {
  auto t_values = parse_size_list(c.t_list);
  if (t_values.empty()) throw std::invalid_argument("--t-list must not be empty");
  fs::create_directories(c.base.out);
  nlohmann::json cfgj = train_cmd_json(c.base);
  cfgj["command"] = "ablate-t";
  cfgj["t_list"] = c.t_list;
  cfgj["repeats"] = c.repeats;
  write_config(cfgj, c.base.out);
  std::ofstream csv(fs::path(c.base.out) / "ablation.csv");
  csv << "T,ece,mce,nll,brier,acc\n";
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  for (std::size_t t : t_values) {
    std::vector<double> e, m, nl, br, ac;
    for (std::size_t r = 0; r < c.repeats; ++r) {
      TrainCmd tc = c.base;
      tc.loss = "vwci";
      tc.samples = t;
      tc.seed = c.base.seed + r;
      // one fixed data split across all T and repeats for a controlled
      // comparison
      auto splits = make_splits(tc.data, c.base.seed);
      cf::ModelSpec spec = make_spec(tc.model, splits.train.dim(), splits.train.classes);
      cf::TrainConfig cfg = make_train_config(tc);
      auto result = cf::train(spec, splits.train, cfg);
      auto records = cf::records_from_probs(cf::forward_deterministic(splits.test.features, result.params, spec),
                                            splits.test.labels);
      auto rep = cf::make_report(records);
      e.push_back(rep.ece);
      m.push_back(rep.mce);
      nl.push_back(rep.nll);
      br.push_back(rep.brier);
      ac.push_back(rep.accuracy);
    }
    csv << t << "," << cf::double_to_shortest(median(e)) << "," << cf::double_to_shortest(median(m)) << ","
        << cf::double_to_shortest(median(nl)) << "," << cf::double_to_shortest(median(br)) << ","
        << cf::double_to_shortest(median(ac)) << "\n";
    csv.flush();
    std::cout << "T=" << t << " median ece=" << median(e) << " acc=" << median(ac) << "\n";
  }
  return kExitOk;
}

void add_data_flags(CLI::App* app, DataOpts& d) {
  app->add_option("--data", d.source, "dataset source: 'blobs' or a CSV path");
  app->add_option("--blob-classes", d.blob_classes, "blob class count");
  app->add_option("--blob-per-class", d.blob_per_class, "examples per class");
  app->add_option("--blob-dim", d.blob_dim, "feature dimension");
  app->add_option("--blob-spread", d.blob_spread, "center spread");
  app->add_option("--blob-sigma", d.blob_sigma, "cluster sigma");
  app->add_option("--noise", d.noise, "label noise rate in [0,1]");
  app->add_option("--split", d.split, "train,holdout,test fractions");
  app->add_flag("--standardize", d.standardize, "z-score features using train statistics");
  app->add_option("--data-seed",
                  [&d](const CLI::results_t& r) {
                    d.data_seed = std::stoull(r[0]);
                    return true;
                  },
                  "seed for data generation/noise/split (default: --seed)");
}

void add_model_flags(CLI::App* app, ModelOpts& m) {
  app->add_option("--hidden", m.hidden, "hidden widths, e.g. 64,64");
  app->add_option("--dropout-keep", m.dropout_keep, "dropout keep probability");
  app->add_option("--blocks", m.blocks, "residual block count");
  app->add_option("--survival", m.survival, "block survival probability");
}

void add_train_flags(CLI::App* app, TrainCmd& c) {
  add_data_flags(app, c.data);
  add_model_flags(app, c.model);
  app->add_option("--loss", c.loss, "baseline|ci|vwci|entropy-ci");
  app->add_option("--beta", [&c](const CLI::results_t& r) { c.beta = std::stod(r[0]); return true; },
                  "CI coefficient beta");
  app->add_option("--gamma", [&c](const CLI::results_t& r) { c.gamma = std::stod(r[0]); return true; },
                  "entropy coefficient gamma");
  app->add_option("--samples", c.samples, "stochastic sample count T");
  app->add_option("--alpha-mode", c.alpha_mode, "one-minus-bc|bc");
  app->add_option("--epochs", c.epochs, "training epochs");
  app->add_option("--batch", c.batch, "batch size");
  app->add_option("--lr", c.lr, "initial learning rate");
  app->add_option("--momentum", c.momentum, "SGD momentum");
  app->add_option("--decay", c.decay, "milestone decay factor");
  app->add_option("--milestones", c.milestones, "decay epochs, e.g. 30,60,80");
  app->add_option("--weight-decay", c.weight_decay, "L2 coefficient lambda");
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--out", c.out, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"calibration-aware training and evaluation for small stochastic classifiers"};
  app.require_subcommand(1);

  int threads = 1;
  if (const char* env = std::getenv("CALIBFORGE_THREADS")) threads = std::atoi(env);
  app.add_option("--threads", threads, "worker threads (1 = fully deterministic; current build is always serial)");

  TrainCmd train_cmd;
  auto* train_app = app.add_subcommand("train", "train a model");
  add_train_flags(train_app, train_cmd);

  EvalCmd eval_cmd;
  auto* eval_app = app.add_subcommand("eval", "evaluate a checkpoint and emit calibration reports");
  add_data_flags(eval_app, eval_cmd.data);
  eval_app->add_option("--model", eval_cmd.model_path, "checkpoint path")->required();
  eval_app->add_option("--subset", eval_cmd.subset, "train|holdout|test");
  eval_app->add_option("--stochastic", eval_cmd.stochastic_t, "MC sample count T (0 = deterministic)");
  eval_app->add_option("--bins", eval_cmd.bins, "calibration bin count M");
  eval_app->add_option("--bin-key", eval_cmd.bin_key, "max|truth");
  eval_app->add_option("--alpha-mode", eval_cmd.alpha_mode, "one-minus-bc|bc");
  eval_app->add_option("--seed", eval_cmd.seed, "master seed");
  eval_app->add_option("--out", eval_cmd.out, "output directory");

  TempCmd temp_cmd;
  auto* temp_app = app.add_subcommand("temp", "fit and apply temperature scaling");
  add_data_flags(temp_app, temp_cmd.data);
  temp_app->add_option("--model", temp_cmd.model_path, "checkpoint path")->required();
  temp_app->add_option("--calibrate-on", temp_cmd.calibrate_on, "train|holdout|test");
  temp_app->add_option("--bins", temp_cmd.bins, "calibration bin count M");
  temp_app->add_option("--seed", temp_cmd.seed, "master seed");
  temp_app->add_option("--out", temp_cmd.out, "output directory");

  AblateCmd ablate_cmd;
  auto* ablate_app = app.add_subcommand("ablate-t", "train VWCI models across sample counts T");
  add_train_flags(ablate_app, ablate_cmd.base);
  ablate_app->add_option("--t-list", ablate_cmd.t_list, "comma-separated T values");
  ablate_app->add_option("--repeats", ablate_cmd.repeats, "seeds per T (median reported)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*train_app) return run_train(train_cmd);
    if (*eval_app) return run_eval(eval_cmd);
    if (*temp_app) return run_temp(temp_cmd);
    if (*ablate_app) return run_ablate(ablate_cmd);
  } catch (const cf::TrainDivergence& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
