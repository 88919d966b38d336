#pragma once

// Experiment runner: JSON configuration, dataset presets, repeated optimizer
// comparisons and their on-disk outputs.
//
// Output layout under output_dir:
//   config.json                 resolved configuration
//   normalization.txt           key=value affine maps of the dataset
//   runs/<optimizer>_seed<s>.csv   iteration,objective,wall_ms
//   runs/<optimizer>_seed<s>.json  full run record
//   runs/<optimizer>_seed<s>_roc.csv  (binary tasks) fpr,tpr
//   summary.csv, band_<optimizer>.csv, failures.log

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stosca/baselines.hpp"
#include "stosca/block_parallel.hpp"
#include "stosca/data.hpp"
#include "stosca/metrics.hpp"
#include "stosca/sca_engine.hpp"
#include "stosca/training.hpp"

namespace stosca {

using json = nlohmann::json;

struct DatasetPreset {
  std::string name;
  std::string url;
  std::string file;
  char delimiter = ',';
  std::string target;
  std::vector<std::string> drop;
  Task task = Task::Regression;
  Index rows = 0;            // expected sample count
  Index listed_features = 0; // feature count as listed by the UCI repository
  Index inputs = 0;          // input columns after dropping the target and identifiers
  std::string topology;
};

/// UCI datasets used for the regression benchmarks. Files are user supplied; see fetch-data.
inline const std::vector<DatasetPreset>& dataset_presets() {
  static const std::vector<DatasetPreset> presets = {
      {"casp", "https://archive.ics.uci.edu/ml/machine-learning-databases/00265/CASP.csv", "CASP.csv", ',', "RMSD",
       {}, Task::Regression, 45730, 9, 9, "9/10/6/1"},
      {"parkinsons",
       "https://archive.ics.uci.edu/ml/machine-learning-databases/parkinsons/telemonitoring/parkinsons_updrs.data",
       "parkinsons_updrs.data", ',', "total_UPDRS", {"subject#", "motor_UPDRS"}, Task::Regression, 5875, 19, 19,
       "19/10/6/1"},
      {"skillcraft", "https://archive.ics.uci.edu/ml/machine-learning-databases/00272/SkillCraft1_Dataset.csv",
       "SkillCraft1_Dataset.csv", ',', "LeagueIndex", {"GameID"}, Task::Regression, 3395, 20, 18, "18/15/10/1"},
      {"wine", "https://archive.ics.uci.edu/ml/machine-learning-databases/wine-quality/winequality-white.csv",
       "winequality-white.csv", ';', "quality", {}, Task::Regression, 4898, 12, 11, "11/10/4/1"},
  };
  return presets;
}

inline const DatasetPreset& find_preset(const std::string& name) {
  for (const auto& p : dataset_presets()) {
    if (p.name == name) return p;
  }
  throw std::invalid_argument("unknown dataset preset '" + name + "'");
}

/// $STOSCA_DATA_DIR, or ./data.
inline std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("STOSCA_DATA_DIR"); env && *env) return env;
  return "data";
}

inline Dataset load_preset(const DatasetPreset& p, const std::filesystem::path& dir) {
  CsvSchema schema;
  schema.delimiter = p.delimiter;
  schema.target_name = p.target;
  schema.drop_columns = p.drop;
  Dataset ds = prepare_dataset(load_csv((dir / p.file).string(), schema), p.task, p.name);
  ds.provenance["source"] = p.url;
  ds.provenance["file"] = (dir / p.file).string();
  return ds;
}

struct ExperimentConfig {
  json dataset = {{"kind", "synthetic_regression"}};
  std::string topology;
  LossKind loss = LossKind::Squared;
  json regularizer = {{"kind", "l2"}, {"lambda", 1e-3}};
  json optimizers = json::array();
  Index iterations = 500;
  Index repetitions = 20;
  Index batch_size = 20;
  std::uint64_t seed = 1;
  double test_fraction = 0.25;
  Index log_every = 1;
  Index eval_rows = 2000;
  std::string output_dir;
  Index parallel_runs = 1;

  json to_json() const {
    return {{"dataset", dataset},       {"topology", topology},          {"loss", std::string(to_string(loss))},
            {"regularizer", regularizer}, {"optimizers", optimizers},    {"iterations", iterations},
            {"repetitions", repetitions}, {"batch_size", batch_size},    {"seed", seed},
            {"test_fraction", test_fraction}, {"log_every", log_every},  {"eval_rows", eval_rows},
            {"output_dir", output_dir},   {"parallel_runs", parallel_runs}};
  }
};

namespace detail {

inline void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw std::invalid_argument("unknown key '" + key + "' in " + where);
    }
  }
}

inline json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

}  // namespace detail

/// Applies "a.b.0.c=value"; value is read as JSON when it parses, otherwise as a string.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override must look like key=value");
  const std::string path = assignment.substr(0, eq);
  json* node = &cfg;
  std::stringstream keys(path);
  std::string key;
  std::vector<std::string> parts;
  while (std::getline(keys, key, '.')) parts.push_back(key);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::string& k = parts[i];
    const bool last = i + 1 == parts.size();
    if (node->is_array()) {
      const std::size_t idx = std::stoul(k);
      if (idx >= node->size()) throw std::out_of_range("override index " + k + " out of range in " + path);
      node = &(*node)[idx];
    } else {
      node = &(*node)[k];
    }
    if (last) *node = detail::parse_scalar(assignment.substr(eq + 1));
  }
}

inline ExperimentConfig parse_config(const json& j) {
  detail::reject_unknown(j,
                         {"dataset", "topology", "loss", "regularizer", "optimizers", "iterations", "repetitions",
                          "batch_size", "seed", "test_fraction", "log_every", "eval_rows", "output_dir",
                          "parallel_runs", "name"},
                         "experiment config");
  ExperimentConfig c;
  if (j.contains("dataset")) c.dataset = j.at("dataset");
  c.topology = j.value("topology", std::string());
  c.loss = parse_loss(j.value("loss", std::string("squared")));
  if (j.contains("regularizer")) c.regularizer = j.at("regularizer");
  c.optimizers = j.value("optimizers", json::array());
  c.iterations = j.value("iterations", c.iterations);
  c.repetitions = j.value("repetitions", c.repetitions);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.test_fraction = j.value("test_fraction", c.test_fraction);
  c.log_every = j.value("log_every", c.log_every);
  c.eval_rows = j.value("eval_rows", c.eval_rows);
  c.output_dir = j.value("output_dir", std::string());
  c.parallel_runs = j.value("parallel_runs", c.parallel_runs);
  if (!c.optimizers.is_array() || c.optimizers.empty()) throw std::invalid_argument("config needs at least one optimizer");
  for (auto& o : c.optimizers) {
    if (o.is_string()) o = json{{"name", o}};
    if (!o.is_object() || !o.contains("name")) throw std::invalid_argument("optimizer entries need a name");
  }
  if (c.repetitions < 1) throw std::invalid_argument("repetitions must be >= 1");
  if (c.iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (c.parallel_runs < 1) throw std::invalid_argument("parallel_runs must be >= 1");
  return c;
}

inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read config '" + path + "'");
  json j = json::parse(in);
  for (const auto& o : overrides) apply_override(j, o);
  return parse_config(j);
}

/// Loads and preprocesses the configured dataset. Topology defaults to the preset's.
inline Dataset build_dataset(const ExperimentConfig& cfg, std::string* default_topology = nullptr) {
  const json& d = cfg.dataset;
  const std::string kind = d.value("kind", std::string("synthetic_regression"));
  Dataset ds;
  if (kind == "synthetic_regression") {
    detail::reject_unknown(d, {"kind", "samples", "features", "noise", "seed"}, "dataset");
    ds = synth_regression(d.value("samples", Index{2000}), d.value("features", Index{10}), d.value("noise", 0.0),
                          d.value("seed", std::uint64_t{7}));
  } else if (kind == "synthetic_binary") {
    detail::reject_unknown(d, {"kind", "samples", "features", "seed"}, "dataset");
    ds = synth_binary(d.value("samples", Index{50000}), d.value("features", Index{18}), d.value("seed", std::uint64_t{7}));
  } else if (kind == "preset") {
    detail::reject_unknown(d, {"kind", "name", "dir"}, "dataset");
    const DatasetPreset& p = find_preset(d.at("name").get<std::string>());
    ds = load_preset(p, d.contains("dir") ? std::filesystem::path(d.at("dir").get<std::string>()) : default_data_dir());
    if (default_topology) *default_topology = p.topology;
  } else if (kind == "csv") {
    detail::reject_unknown(d, {"kind", "path", "target", "target_index", "delimiter", "header", "drop", "task", "name"},
                           "dataset");
    CsvSchema schema;
    schema.target_name = d.value("target", std::string());
    schema.target_index = d.value("target_index", Index{-1});
    const std::string delim = d.value("delimiter", std::string(","));
    if (delim.size() != 1) throw std::invalid_argument("csv delimiter must be one character");
    schema.delimiter = delim[0];
    schema.header = d.value("header", true);
    schema.drop_columns = d.value("drop", std::vector<std::string>{});
    const std::string task = d.value("task", std::string("regression"));
    if (task != "regression" && task != "binary") throw std::invalid_argument("task must be regression or binary");
    ds = prepare_dataset(load_csv(d.at("path").get<std::string>(), schema),
                         task == "binary" ? Task::Binary : Task::Regression, d.value("name", std::string("csv")));
  } else {
    throw std::invalid_argument("unknown dataset kind '" + kind + "'");
  }
  return ds;
}

/// Builds the regularizer; the manifold graph is built on `train` (sigma <= 0 selects the median distance).
inline Regularizer build_regularizer(const json& r, const Dataset& train, const Topology& topology) {
  detail::reject_unknown(r, {"kind", "lambda", "mix", "k", "sigma"}, "regularizer");
  const std::string kind = r.value("kind", std::string("l2"));
  const double lambda = r.value("lambda", 1e-3);
  if (kind == "l2") return Regularizer::l2(lambda);
  if (kind == "l1") return Regularizer::l1(lambda);
  if (kind == "elastic_net") return Regularizer::elastic_net(lambda, r.value("mix", 0.5));
  if (kind == "group_sparse") return Regularizer::group_sparse(lambda, neuron_groups(topology));
  if (kind == "manifold") {
    double sigma = r.value("sigma", 0.0);
    if (sigma <= 0.0) sigma = median_pairwise_distance(train.inputs);
    return Regularizer::manifold(lambda, build_knn_graph(train.inputs, r.value("k", Index{10}), sigma), train.inputs);
  }
  throw std::invalid_argument("unknown regularizer '" + kind + "'");
}

inline Sequence parse_sequence(const json& o, const std::string& prefix, double initial, double rate) {
  const std::string kind = o.value(prefix + "_kind", std::string("quadratic"));
  const double start = o.value(prefix + "0", initial);
  if (kind == "quadratic") return Sequence::quadratic(start, o.value("eps_" + prefix, rate));
  if (kind == "power") return Sequence::power(start, o.value(prefix + "_exponent", 1.0));
  if (kind == "constant") return Sequence::constant(start);
  throw std::invalid_argument("unknown sequence kind '" + kind + "'");
}

/// SCA settings from an optimizer entry. tau defaults to 0.1 here: with tau = 0 and a small
/// lambda, the null space of the rank-L curvature amplifies d_n by 1/(2 lambda).
inline ScaConfig sca_config_from(const json& o, const ExperimentConfig& cfg, const Regularizer& reg,
                                 std::uint64_t seed) {
  detail::reject_unknown(o,
                         {"name", "alpha0", "eps_alpha", "alpha_kind", "alpha_exponent", "rho0", "eps_rho",
                          "rho_kind", "rho_exponent", "tau", "blocks", "workers", "policy", "d_init", "label"},
                         "sca optimizer");
  ScaConfig s;
  s.batch_size = cfg.batch_size;
  s.loss = cfg.loss;
  s.reg = reg;
  s.schedule.alpha = parse_sequence(o, "alpha", 0.5, 0.01);
  s.schedule.rho = parse_sequence(o, "rho", 0.9, 0.01);
  s.tau = o.value("tau", 0.1);
  s.max_iters = cfg.iterations;
  s.seed = seed;
  s.blocks.blocks = o.value("blocks", Index{1});
  s.blocks.workers = o.value("workers", Index{1});
  const std::string policy = o.value("policy", std::string("static"));
  if (policy != "static" && policy != "random") throw std::invalid_argument("block policy must be static or random");
  s.blocks.policy = policy == "static" ? AssignmentPolicy::Static : AssignmentPolicy::RandomPerIteration;
  const std::string d_init = o.value("d_init", std::string("zero"));
  if (d_init != "zero" && d_init != "first_batch") throw std::invalid_argument("d_init must be zero or first_batch");
  s.d_init = d_init == "zero" ? GradientInit::Zero : GradientInit::FirstBatch;
  s.log_every = cfg.log_every;
  s.eval_rows = cfg.eval_rows;
  return s;
}

inline BaselineConfig baseline_config_from(const json& o) {
  const std::string name = o.at("name").get<std::string>();
  const std::string where = name + " optimizer";
  BaselineConfig c;
  if (name == "sgd") {
    detail::reject_unknown(o, {"name", "label", "rate", "alpha0", "eps", "stability"}, where);
    c = BaselineConfig::sgd(o.value("alpha0", o.value("rate", 0.1)), o.value("eps", 0.01));
  } else if (name == "adagrad") {
    detail::reject_unknown(o, {"name", "label", "rate", "stability"}, where);
    c = BaselineConfig::adagrad(o.value("rate", 0.01));
  } else if (name == "rmsprop") {
    detail::reject_unknown(o, {"name", "label", "rate", "gamma", "stability"}, where);
    c = BaselineConfig::rmsprop(o.value("rate", 0.01), o.value("gamma", 0.9));
  } else if (name == "adam") {
    detail::reject_unknown(o, {"name", "label", "rate", "beta1", "beta2", "stability"}, where);
    c = BaselineConfig::adam(o.value("rate", 0.001), o.value("beta1", 0.9), o.value("beta2", 0.999));
  } else {
    throw std::invalid_argument("unknown optimizer '" + name + "'");
  }
  c.stability = o.value("stability", c.stability);
  c.validate();
  return c;
}

/// Identifier used in file names and summaries: the optional label, else the name.
inline std::string optimizer_id(const json& o) { return o.value("label", o.at("name").get<std::string>()); }

inline json record_to_json(const RunRecord& r) {
  json rows = json::array();
  for (const auto& row : r.rows) rows.push_back({row.iteration, row.objective, row.wall_ms});
  return {{"optimizer", r.optimizer}, {"seed", r.seed},       {"initial_objective", r.initial_objective},
          {"rows", rows},             {"metrics", r.metrics}, {"info", r.info},
          {"failed", r.failed},       {"failure", r.failure}};
}

inline RunRecord record_from_json(const json& j) {
  RunRecord r;
  r.optimizer = j.at("optimizer").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.initial_objective = j.at("initial_objective").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                            : j.at("initial_objective").get<double>();
  for (const auto& row : j.at("rows")) r.rows.push_back({row[0].get<Index>(), row[1].get<double>(), row[2].get<double>()});
  r.metrics = j.value("metrics", std::map<std::string, double>{});
  r.info = j.value("info", std::map<std::string, std::string>{});
  r.failed = j.value("failed", false);
  r.failure = j.value("failure", std::string());
  return r;
}

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

}  // namespace detail

inline std::string rows_csv(const RunRecord& r) {
  std::ostringstream out;
  out << "iteration,objective,wall_ms\n";
  for (const auto& row : r.rows) out << row.iteration << ',' << detail::fmt(row.objective) << ',' << detail::fmt(row.wall_ms) << '\n';
  return out.str();
}

inline std::string summary_csv(const std::vector<OptimizerSummary>& summary) {
  std::ostringstream out;
  out << "optimizer,runs,failures,metric,mean,std,count\n";
  for (const auto& s : summary) {
    for (const auto& [k, st] : s.metrics) {
      out << s.optimizer << ',' << s.runs << ',' << s.failures << ',' << k << ',' << detail::fmt(st.mean) << ','
          << detail::fmt(st.std) << ',' << st.count << '\n';
    }
    if (s.metrics.empty()) out << s.optimizer << ',' << s.runs << ',' << s.failures << ",,,,0\n";
  }
  return out.str();
}

inline std::string band_csv(const OptimizerSummary& s) {
  std::ostringstream out;
  out << "iteration,mean,std,count\n";
  for (const auto& b : s.band) out << b.iteration << ',' << detail::fmt(b.mean) << ',' << detail::fmt(b.std) << ',' << b.count << '\n';
  return out.str();
}

/// Writes summary.csv and one band file per optimizer.
inline std::vector<OptimizerSummary> write_summary(const std::vector<RunRecord>& records,
                                                   const std::filesystem::path& dir) {
  const auto summary = summarize(records);
  std::filesystem::create_directories(dir);
  detail::write_text(dir / "summary.csv", summary_csv(summary));
  for (const auto& s : summary) detail::write_text(dir / ("band_" + s.optimizer + ".csv"), band_csv(s));
  return summary;
}

/// Reads every run record under dir/runs (or dir itself), sorted by file name.
inline std::vector<RunRecord> read_records(const std::filesystem::path& dir) {
  std::filesystem::path runs = std::filesystem::exists(dir / "runs") ? dir / "runs" : dir;
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(runs)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<RunRecord> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    out.push_back(record_from_json(json::parse(in)));
  }
  return out;
}

struct ExperimentResult {
  std::vector<RunRecord> records;  // repetition-major, optimizers in config order
  Index failures = 0;
  std::vector<OptimizerSummary> summary;
};

/// Seed of repetition r.
inline std::uint64_t repetition_seed(std::uint64_t base, Index r) { return base + static_cast<std::uint64_t>(r); }

/// For each repetition: a fresh split and a fresh initialization shared by all optimizers,
/// then one run per optimizer over the same mini-batch stream. Run failures are recorded
/// and do not stop the sweep.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  std::string preset_topology;
  const Dataset data = build_dataset(cfg, &preset_topology);
  const Topology topology = Topology::parse(cfg.topology.empty() ? preset_topology : cfg.topology);
  if (topology.input_dim() != data.dim()) {
    throw DimensionError("topology expects " + std::to_string(topology.input_dim()) + " inputs, dataset has " +
                         std::to_string(data.dim()));
  }
  if ((data.task == Task::Binary) != (cfg.loss == LossKind::CrossEntropy)) {
    throw std::invalid_argument("binary datasets use the cross-entropy loss, regression datasets the squared loss");
  }
  const std::filesystem::path out_dir = cfg.output_dir;
  const bool write = !cfg.output_dir.empty();
  if (write) {
    std::filesystem::create_directories(out_dir / "runs");
    json echo = cfg.to_json();
    echo["topology"] = topology.to_string();
    echo["dataset_provenance"] = data.provenance;
    detail::write_text(out_dir / "config.json", echo.dump(2) + "\n");
    detail::write_text(out_dir / "normalization.txt",
                       serialize(data.input_norm, "input") + serialize(data.target_norm, "target"));
  }

  const Index n_opt = static_cast<Index>(cfg.optimizers.size());
  ExperimentResult result;
  result.records.resize(static_cast<std::size_t>(cfg.repetitions * n_opt));
  for_each_block(cfg.repetitions * n_opt, cfg.parallel_runs, [&](Index job) {
    const Index rep = job / n_opt;
    const json& opt = cfg.optimizers[static_cast<std::size_t>(job % n_opt)];
    const std::uint64_t seed = repetition_seed(cfg.seed, rep);
    RunRecord rec;
    rec.optimizer = optimizer_id(opt);
    rec.seed = seed;
    try {
      const auto [train_set, test_set] = split(data, {cfg.test_fraction, seed});
      const Regularizer reg = build_regularizer(cfg.regularizer, train_set, topology);
      const MlpModel init(topology, glorot_init(topology, seed), head_for(cfg.loss));
      const LoopSettings loop{cfg.iterations, cfg.batch_size, cfg.log_every, cfg.eval_rows, seed};
      const std::string name = opt.at("name").get<std::string>();
      TrainResult tr = name == "sca" ? [&] {
        ScaTrainResult r = train(init, train_set, sca_config_from(opt, cfg, reg, seed));
        return TrainResult{std::move(r.model), std::move(r.record)};
      }()
                                     : train_baseline(init, train_set, baseline_config_from(opt), loop, cfg.loss, reg);
      rec = std::move(tr.record);
      rec.optimizer = optimizer_id(opt);
      const Vector pred = predict(tr.model, test_set.inputs);
      if (data.task == Task::Regression) {
        rec.metrics["test_mse"] = compute_mse(pred, test_set.targets);
      } else {
        const RocCurve roc = compute_roc_auc(pred, test_set.targets);
        rec.metrics["test_auc"] = roc.auc;
        if (write) {
          std::ostringstream csv;
          csv << "fpr,tpr\n";
          for (const auto& [f, t] : roc.points) csv << detail::fmt(f) << ',' << detail::fmt(t) << '\n';
          detail::write_text(out_dir / "runs" / (rec.optimizer + "_seed" + std::to_string(seed) + "_roc.csv"), csv.str());
        }
      }
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.failure = e.what();
    }
    if (write) {
      const std::string stem = rec.optimizer + "_seed" + std::to_string(seed);
      detail::write_text(out_dir / "runs" / (stem + ".csv"), rows_csv(rec));
      detail::write_text(out_dir / "runs" / (stem + ".json"), record_to_json(rec).dump(2) + "\n");
    }
    result.records[static_cast<std::size_t>(job)] = std::move(rec);
  });

  std::ostringstream failures;
  for (const auto& r : result.records) {
    if (r.failed) {
      ++result.failures;
      failures << r.optimizer << " seed " << r.seed << ": " << r.failure << '\n';
    }
  }
  result.summary = write ? write_summary(result.records, out_dir) : summarize(result.records);
  if (write) detail::write_text(out_dir / "failures.log", failures.str());
  return result;
}

}  // namespace stosca
