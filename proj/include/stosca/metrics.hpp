#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "stosca/training.hpp"
#include "stosca/types.hpp"

namespace stosca {

/// Mean squared difference; both vectors in the same (normalized) units.
inline double compute_mse(const Vector& predictions, const Vector& targets) {
  detail::require_dim(predictions.size(), targets.size(), "prediction count");
  if (predictions.size() == 0) throw std::invalid_argument("MSE of an empty sample");
  return (predictions - targets).squaredNorm() / static_cast<double>(predictions.size());
}

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (false positive rate, true positive rate), from (0,0) to (1,1)
  double auc = 0.0;
};

/// ROC over descending score thresholds. Tied scores form one step, joined by a straight
/// segment, which makes the trapezoidal area equal to the Mann-Whitney statistic.
inline RocCurve compute_roc_auc(const Vector& scores, const Vector& labels) {
  detail::require_dim(scores.size(), labels.size(), "label count");
  double pos = 0.0, neg = 0.0;
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels(i) == 1.0) {
      pos += 1.0;
    } else if (labels(i) == 0.0) {
      neg += 1.0;
    } else {
      throw std::invalid_argument("ROC labels must be 0 or 1");
    }
  }
  if (pos == 0.0 || neg == 0.0) throw std::invalid_argument("ROC needs both classes among the labels");
  std::vector<Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return scores(a) > scores(b); });
  RocCurve roc;
  roc.points.emplace_back(0.0, 0.0);
  double tp = 0.0, fp = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores(order[i]);
    double dtp = 0.0, dfp = 0.0;
    for (; i < order.size() && scores(order[i]) == s; ++i) {
      if (labels(order[i]) == 1.0) {
        dtp += 1.0;
      } else {
        dfp += 1.0;
      }
    }
    roc.auc += (dfp / neg) * ((tp + 0.5 * dtp) / pos);
    tp += dtp;
    fp += dfp;
    roc.points.emplace_back(fp / neg, tp / pos);
  }
  return roc;
}

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  Index count = 0;
};

inline Stat mean_std(const std::vector<double>& v) {
  Stat s;
  s.count = static_cast<Index>(v.size());
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double sq = 0.0;
    for (double x : v) sq += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct BandPoint {
  Index iteration = 0;
  double mean = 0.0;
  double std = 0.0;
  Index count = 0;
};

struct OptimizerSummary {
  std::string optimizer;
  Index runs = 0;
  Index failures = 0;
  std::map<std::string, Stat> metrics;
  std::vector<BandPoint> band;  // iteration 0 is the initial objective
};

/// Per-optimizer mean and sample std of every metric, and the per-iteration objective band.
/// Failed runs are counted but excluded from the statistics. Order follows first appearance.
inline std::vector<OptimizerSummary> summarize(const std::vector<RunRecord>& records) {
  std::vector<OptimizerSummary> out;
  std::map<std::string, std::size_t> slot;
  std::vector<std::vector<const RunRecord*>> groups;
  for (const auto& r : records) {
    auto [it, fresh] = slot.emplace(r.optimizer, out.size());
    if (fresh) {
      out.push_back({});
      out.back().optimizer = r.optimizer;
      groups.emplace_back();
    }
    OptimizerSummary& s = out[it->second];
    ++s.runs;
    if (r.failed) {
      ++s.failures;
    } else {
      groups[it->second].push_back(&r);
    }
  }
  for (std::size_t g = 0; g < out.size(); ++g) {
    std::map<std::string, std::vector<double>> metric_values;
    std::map<Index, std::vector<double>> by_iter;
    for (const RunRecord* r : groups[g]) {
      for (const auto& [k, v] : r->metrics) metric_values[k].push_back(v);
      if (std::isfinite(r->initial_objective)) by_iter[0].push_back(r->initial_objective);
      for (const auto& row : r->rows) by_iter[row.iteration].push_back(row.objective);
    }
    for (const auto& [k, v] : metric_values) out[g].metrics[k] = mean_std(v);
    for (const auto& [it, v] : by_iter) {
      const Stat s = mean_std(v);
      out[g].band.push_back({it, s.mean, s.std, s.count});
    }
  }
  return out;
}

}  // namespace stosca
