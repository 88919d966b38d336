#pragma once

// Shared training-loop plumbing: mini-batch stream, objective logging and the
// per-run record. SCA and the baselines both run through run_training_loop, so
// for a given seed they see the same batches and the same evaluation subset.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stosca/data.hpp"
#include "stosca/nn.hpp"
#include "stosca/objective.hpp"
#include "stosca/types.hpp"

namespace stosca {

struct RunRow {
  Index iteration = 0;
  double objective = 0.0;
  double wall_ms = 0.0;  // cumulative optimizer time, logging excluded
};

struct RunRecord {
  std::string optimizer;
  std::uint64_t seed = 0;
  double initial_objective = std::numeric_limits<double>::quiet_NaN();
  std::vector<RunRow> rows;
  std::map<std::string, double> metrics;
  std::map<std::string, std::string> info;
  bool failed = false;
  std::string failure;

  double final_objective() const { return rows.empty() ? initial_objective : rows.back().objective; }

  /// Equality ignoring wall-clock columns.
  bool same_trajectory(const RunRecord& o) const {
    if (optimizer != o.optimizer || seed != o.seed || failed != o.failed || rows.size() != o.rows.size()) return false;
    if (!(initial_objective == o.initial_objective || (std::isnan(initial_objective) && std::isnan(o.initial_objective))))
      return false;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].iteration != o.rows[i].iteration || rows[i].objective != o.rows[i].objective) return false;
    }
    return metrics == o.metrics;
  }
};

struct TrainResult {
  MlpModel model;
  RunRecord record;
};

struct LoopSettings {
  Index iterations = 500;
  Index batch_size = 20;
  Index log_every = 1;
  Index eval_rows = 2000;  // 0 = every training row
  std::uint64_t seed = 0;

  void validate() const {
    if (iterations < 0) throw std::invalid_argument("iteration count must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (log_every < 1) throw std::invalid_argument("log cadence must be >= 1");
    if (eval_rows < 0) throw std::invalid_argument("evaluation subsample size must be >= 0");
  }
};

/// U(w) on a fixed subsample of the training set; the regularizer is always evaluated in full.
class ObjectiveProbe {
 public:
  ObjectiveProbe(const Dataset& train, Index eval_rows, std::uint64_t seed, LossKind loss, Regularizer reg)
      : loss_(loss), reg_(std::move(reg)) {
    const auto idx = evaluation_indices(train.size(), eval_rows, seed);
    const Dataset sub = train.subset(idx);
    inputs_ = sub.inputs;
    targets_ = sub.targets;
  }

  double operator()(const MlpModel& model) const { return objective_value(model, inputs_, targets_, loss_, reg_); }

  Index rows() const { return inputs_.rows(); }

 private:
  LossKind loss_;
  Regularizer reg_;
  Matrix inputs_;
  Vector targets_;
};

/// Runs `step(w, batch, iteration)` for iterations 1..T. Rows are logged at every
/// multiple of log_every and at the last iteration. Exceptions and non-finite values
/// end the run with a failed record; the returned model holds the last finite iterate.
template <class Step>
TrainResult run_training_loop(const MlpModel& init, const Dataset& train, const LoopSettings& settings,
                              LossKind loss, const Regularizer& reg, std::string optimizer, Step&& step) {
  settings.validate();
  if (train.size() == 0) throw std::invalid_argument("training set is empty");
  if (settings.batch_size > train.size()) throw std::invalid_argument("batch size exceeds the training set");
  const ObjectiveProbe probe(train, settings.eval_rows, settings.seed, loss, reg);
  BatchSampler sampler(settings.seed);

  RunRecord rec;
  rec.optimizer = std::move(optimizer);
  rec.seed = settings.seed;
  rec.initial_objective = probe(init);
  Vector w = init.weights();
  Vector last_good = w;
  double elapsed_ms = 0.0;
  for (Index n = 1; n <= settings.iterations; ++n) {
    try {
      const MiniBatch batch = sample_minibatch(train, settings.batch_size, sampler);
      const auto start = std::chrono::steady_clock::now();
      step(w, batch, n);
      elapsed_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      if (!w.allFinite()) throw NumericalError("non-finite weights at iteration " + std::to_string(n));
      if (n % settings.log_every == 0 || n == settings.iterations) {
        const double obj = probe(init.with_weights(w));
        if (!std::isfinite(obj)) throw NumericalError("non-finite objective at iteration " + std::to_string(n));
        rec.rows.push_back({n, obj, elapsed_ms});
      }
      last_good = w;
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.failure = e.what();
      break;
    }
  }
  rec.metrics["final_objective"] = rec.final_objective();
  return {init.with_weights(std::move(last_good)), std::move(rec)};
}

}  // namespace stosca
