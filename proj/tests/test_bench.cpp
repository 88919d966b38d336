#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "stosca/bench.hpp"

using namespace stosca;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("stosca_bench_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

ExperimentConfig tiny_config(std::vector<std::string> optimizers, Index reps = 1, Index iters = 10) {
  json j = {{"dataset", {{"kind", "synthetic_regression"}, {"samples", 200}, {"features", 4}, {"noise", 0.05}}},
            {"topology", "4/5/1"},
            {"iterations", iters},
            {"repetitions", reps},
            {"batch_size", 10},
            {"eval_rows", 100},
            {"optimizers", optimizers}};
  return parse_config(j);
}

}  // namespace

TEST(Metrics, MseExamplesAndOracle) {
  EXPECT_EQ(compute_mse(Vector{{1.0, 2.0}}, Vector{{1.0, 2.0}}), 0.0);
  EXPECT_DOUBLE_EQ(compute_mse(Vector{{0.0, 0.0}}, Vector{{1.0, -3.0}}), 5.0);
  std::mt19937_64 rng(1);
  const Vector a = oracle::random_vector(37, rng);
  const Vector b = oracle::random_vector(37, rng);
  double naive = 0.0;
  for (Index i = 0; i < 37; ++i) naive += (a(i) - b(i)) * (a(i) - b(i));
  EXPECT_NEAR(compute_mse(a, b), naive / 37.0, 1e-14);
  EXPECT_THROW(compute_mse(Vector(), Vector()), std::invalid_argument);
  EXPECT_THROW(compute_mse(a, Vector::Zero(3)), DimensionError);
}

TEST(Metrics, AucExamples) {
  EXPECT_EQ(compute_roc_auc(Vector{{0.9, 0.8, 0.2, 0.1}}, Vector{{1.0, 1.0, 0.0, 0.0}}).auc, 1.0);
  EXPECT_EQ(compute_roc_auc(Vector{{0.1, 0.2, 0.8, 0.9}}, Vector{{1.0, 1.0, 0.0, 0.0}}).auc, 0.0);
  EXPECT_EQ(compute_roc_auc(Vector::Constant(6, 0.3), Vector{{1.0, 0.0, 1.0, 0.0, 1.0, 0.0}}).auc, 0.5);
  const RocCurve roc = compute_roc_auc(Vector{{0.9, 0.4, 0.6}}, Vector{{1.0, 0.0, 1.0}});
  EXPECT_EQ(roc.points.front(), std::make_pair(0.0, 0.0));
  EXPECT_EQ(roc.points.back(), std::make_pair(1.0, 1.0));
  EXPECT_THROW(compute_roc_auc(Vector{{0.1, 0.2}}, Vector{{1.0, 1.0}}), std::invalid_argument);
  EXPECT_THROW(compute_roc_auc(Vector{{0.1, 0.2}}, Vector{{1.0, 0.5}}), std::invalid_argument);
}

TEST(Metrics, AucMatchesPairwiseOracle) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> level(0, 4);
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = 2 + trial % 99;
    Vector scores(n), labels(n);
    for (Index i = 0; i < n; ++i) {
      scores(i) = trial % 2 ? level(rng) * 0.25 : oracle::random_vector(1, rng)(0);  // ties on odd trials
      labels(i) = coin(rng);
    }
    labels(0) = 1.0;
    labels(1) = 0.0;
    EXPECT_NEAR(compute_roc_auc(scores, labels).auc, oracle::pairwise_auc(scores, labels), 1e-12);
  }
}

TEST(Metrics, MeanStdAndBand) {
  const Stat s = mean_std({0.1, 0.3});
  EXPECT_NEAR(s.mean, 0.2, 1e-15);
  EXPECT_NEAR(s.std, 0.1414213562373095, 1e-12);
  EXPECT_EQ(mean_std({4.0}).std, 0.0);
  EXPECT_EQ(mean_std({}).count, 0);

  std::vector<RunRecord> recs(3);
  for (int r = 0; r < 3; ++r) {
    recs[r].optimizer = r < 2 ? "sca" : "sgd";
    recs[r].initial_objective = 1.0;
    recs[r].rows = {{1, 0.5 + r, 1.0}, {2, 0.25 * (r + 1), 2.0}};
    recs[r].metrics["test_mse"] = 0.1 * (r + 1);
  }
  RunRecord failed;
  failed.optimizer = "sca";
  failed.failed = true;
  recs.push_back(failed);
  const auto sum = summarize(recs);
  ASSERT_EQ(sum.size(), 2u);
  EXPECT_EQ(sum[0].optimizer, "sca");
  EXPECT_EQ(sum[0].runs, 3);
  EXPECT_EQ(sum[0].failures, 1);
  EXPECT_NEAR(sum[0].metrics.at("test_mse").mean, 0.15, 1e-15);
  ASSERT_EQ(sum[0].band.size(), 3u);
  EXPECT_EQ(sum[0].band[0].iteration, 0);
  EXPECT_EQ(sum[0].band[1].mean, 1.0);
  EXPECT_NEAR(sum[0].band[2].std, mean_std({0.25, 0.5}).std, 1e-15);
}

TEST(Config, OverridesAndValidation) {
  json j = {{"iterations", 5}, {"optimizers", {{{"name", "sca"}, {"tau", 0.1}}, "sgd"}}};
  apply_override(j, "iterations=7");
  apply_override(j, "optimizers.0.tau=0.3");
  apply_override(j, "output_dir=out/x");
  apply_override(j, "dataset.kind=\"synthetic_binary\"");
  const ExperimentConfig c = parse_config(j);
  EXPECT_EQ(c.iterations, 7);
  EXPECT_EQ(c.optimizers[0]["tau"].get<double>(), 0.3);
  EXPECT_EQ(c.optimizers[1]["name"], "sgd");
  EXPECT_EQ(c.output_dir, "out/x");
  EXPECT_EQ(c.dataset["kind"], "synthetic_binary");
  EXPECT_THROW(apply_override(j, "optimizers.5.tau=1"), std::out_of_range);
  EXPECT_THROW(apply_override(j, "novalue"), std::invalid_argument);
  EXPECT_THROW(parse_config(json{{"optimizers", json::array()}}), std::invalid_argument);
  EXPECT_THROW(parse_config(json{{"optimizers", {"sgd"}}, {"bogus", 1}}), std::invalid_argument);
  EXPECT_THROW(baseline_config_from(json{{"name", "lbfgs"}}), std::invalid_argument);
  EXPECT_THROW(baseline_config_from(json{{"name", "sgd"}, {"beta1", 0.5}}), std::invalid_argument);
}

TEST(Config, ScaSettingsFromJson) {
  const ExperimentConfig cfg = tiny_config({"sca"});
  const json o = {{"name", "sca"}, {"rho_kind", "power"}, {"rho_exponent", 0.6}, {"blocks", 2}, {"policy", "random"}};
  const ScaConfig s = sca_config_from(o, cfg, Regularizer::l2(1e-3), 11);
  EXPECT_EQ(s.tau, 0.1);
  EXPECT_EQ(s.schedule.alpha.initial, 0.5);
  EXPECT_EQ(s.schedule.rho.kind, Sequence::Kind::Power);
  EXPECT_EQ(s.blocks.blocks, 2);
  EXPECT_EQ(s.blocks.policy, AssignmentPolicy::RandomPerIteration);
  EXPECT_EQ(s.seed, 11u);
  EXPECT_THROW(sca_config_from(json{{"name", "sca"}, {"policy", "x"}}, cfg, Regularizer::l2(0.1), 1),
               std::invalid_argument);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* f : {"synthetic_regression.json", "wine.json", "synthetic_binary.json", "sparse_blocks.json"}) {
    const std::string path = std::string(STOSCA_SOURCE_DIR) + "/configs/" + f;
    EXPECT_NO_THROW(load_config(path)) << path;
  }
}

TEST(Records, JsonRoundTrip) {
  RunRecord r;
  r.optimizer = "adam";
  r.seed = 42;
  r.initial_objective = 0.75;
  r.rows = {{1, 0.5, 0.1}, {2, 0.25, 0.3}};
  r.metrics["test_mse"] = 0.01;
  r.info["tau"] = "0.1";
  const RunRecord back = record_from_json(json::parse(record_to_json(r).dump()));
  EXPECT_TRUE(back.same_trajectory(r));
  EXPECT_EQ(back.info, r.info);
  EXPECT_EQ(back.rows[1].wall_ms, 0.3);
  EXPECT_EQ(rows_csv(r), "iteration,objective,wall_ms\n1,0.5,0.10000000000000001\n2,0.25,0.29999999999999999\n");
}

TEST(Experiment, OneRunLogsEveryIteration) {
  const ExperimentResult res = run_experiment(tiny_config({"sgd"}));
  ASSERT_EQ(res.records.size(), 1u);
  const RunRecord& r = res.records[0];
  EXPECT_FALSE(r.failed) << r.failure;
  ASSERT_EQ(r.rows.size(), 10u);
  for (Index i = 0; i < 10; ++i) EXPECT_EQ(r.rows[static_cast<std::size_t>(i)].iteration, i + 1);
  EXPECT_TRUE(std::isfinite(r.initial_objective));
  EXPECT_TRUE(r.metrics.count("test_mse"));
  EXPECT_EQ(r.seed, 1u);
}

TEST(Experiment, OptimizersShareInitAndRepetitionsDiffer) {
  const ExperimentResult res = run_experiment(tiny_config({"sca", "sgd", "adagrad", "rmsprop", "adam"}, 3));
  ASSERT_EQ(res.records.size(), 15u);
  EXPECT_EQ(res.failures, 0);
  for (Index rep = 0; rep < 3; ++rep) {
    const double init = res.records[static_cast<std::size_t>(rep * 5)].initial_objective;
    for (Index k = 1; k < 5; ++k) EXPECT_EQ(res.records[static_cast<std::size_t>(rep * 5 + k)].initial_objective, init);
  }
  EXPECT_NE(res.records[0].initial_objective, res.records[5].initial_objective);
  EXPECT_NE(res.records[5].initial_objective, res.records[10].initial_objective);
  ASSERT_EQ(res.summary.size(), 5u);
  EXPECT_EQ(res.summary[0].runs, 3);
}

TEST(Experiment, ReproducibleAndComplete) {
  TempDir a, b;
  ExperimentConfig cfg = tiny_config({"sca", "adam"}, 2, 5);
  cfg.output_dir = a.path().string();
  const ExperimentResult ra = run_experiment(cfg);
  cfg.output_dir = b.path().string();
  cfg.parallel_runs = 3;
  const ExperimentResult rb = run_experiment(cfg);
  ASSERT_EQ(ra.records.size(), rb.records.size());
  for (std::size_t i = 0; i < ra.records.size(); ++i) EXPECT_TRUE(ra.records[i].same_trajectory(rb.records[i]));

  for (const char* f : {"config.json", "normalization.txt", "failures.log", "summary.csv", "band_sca.csv",
                        "band_adam.csv", "runs/sca_seed1.csv", "runs/sca_seed2.json", "runs/adam_seed2.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(a.path() / f)) << f;
  }
  std::ifstream sa(a.path() / "summary.csv"), sb(b.path() / "summary.csv");
  const std::string ta((std::istreambuf_iterator<char>(sa)), {}), tb((std::istreambuf_iterator<char>(sb)), {});
  EXPECT_EQ(ta, tb);

  const auto back = read_records(a.path());
  ASSERT_EQ(back.size(), 4u);
  const auto resummary = summarize(back);
  EXPECT_EQ(resummary[0].optimizer, "adam");  // files are read in name order
  EXPECT_EQ(resummary[0].band.size(), ra.summary[1].band.size());
  EXPECT_NEAR(resummary[0].metrics.at("test_mse").mean, ra.summary[1].metrics.at("test_mse").mean, 1e-15);
}

TEST(Experiment, FailuresAreRecordedNotFatal) {
  json j = {{"dataset", {{"kind", "synthetic_regression"}, {"samples", 200}, {"features", 4}}},
            {"topology", "4/5/1"},
            {"iterations", 5},
            {"repetitions", 1},
            {"batch_size", 10},
            {"optimizers", {{{"name", "sca"}, {"tau", 0.0}}, {{"name", "sgd"}}}},
            {"regularizer", {{"kind", "l2"}, {"lambda", 0.0}}}};
  const ExperimentResult res = run_experiment(parse_config(j));
  EXPECT_EQ(res.failures, 1);
  EXPECT_TRUE(res.records[0].failed);
  EXPECT_NE(res.records[0].failure.find("strongly convex"), std::string::npos);
  EXPECT_FALSE(res.records[1].failed);
}

TEST(Experiment, RejectsMismatchedSetup) {
  ExperimentConfig cfg = tiny_config({"sgd"});
  cfg.topology = "3/5/1";
  EXPECT_THROW(run_experiment(cfg), DimensionError);
  cfg = tiny_config({"sgd"});
  cfg.loss = LossKind::CrossEntropy;
  EXPECT_THROW(run_experiment(cfg), std::invalid_argument);
  cfg = tiny_config({"sgd"});
  cfg.dataset = {{"kind", "preset"}, {"name", "wine"}, {"dir", "/nonexistent"}};
  EXPECT_THROW(run_experiment(cfg), CsvError);
}

TEST(Presets, Known) {
  EXPECT_NO_THROW(find_preset("wine"));
  EXPECT_THROW(find_preset("nope"), std::invalid_argument);
  for (const auto& p : dataset_presets()) {
    EXPECT_FALSE(p.url.empty());
    EXPECT_NO_THROW(Topology::parse(p.topology));
  }
}
