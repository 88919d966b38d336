#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "stosca/loss.hpp"
#include "stosca/nn.hpp"
#include "stosca/types.hpp"

namespace stosca {

/// kNN similarity graph over a fixed sample set.
struct NeighborGraph {
  Index k = 0;
  double sigma = 1.0;
  /// Exact k nearest neighbours of each sample (Euclidean, ties to the lower index).
  std::vector<std::vector<Index>> knn;
  /// Symmetrized weights q_ij = max(q_ij, q_ji), sorted by neighbour index.
  std::vector<std::vector<std::pair<Index, double>>> adjacency;

  Index size() const { return static_cast<Index>(adjacency.size()); }

  double weight(Index i, Index j) const {
    const auto& row = adjacency[static_cast<std::size_t>(i)];
    auto it = std::lower_bound(row.begin(), row.end(), j, [](const auto& e, Index v) { return e.first < v; });
    return (it != row.end() && it->first == j) ? it->second : 0.0;
  }
};

/// q_ij = exp(-|x_i - x_j|^2 / (2 sigma^2)) on the k nearest neighbours of i, symmetrized by max.
inline NeighborGraph build_knn_graph(const Matrix& inputs, Index k, double sigma) {
  const Index n = inputs.rows();
  if (k < 1 || k >= n) throw std::invalid_argument("kNN graph needs 1 <= k < N");
  if (!(sigma > 0.0)) throw std::invalid_argument("kNN kernel width must be positive");
  NeighborGraph g;
  g.k = k;
  g.sigma = sigma;
  g.knn.resize(static_cast<std::size_t>(n));
  std::vector<std::vector<std::pair<Index, double>>> directed(static_cast<std::size_t>(n));
  std::vector<std::pair<double, Index>> dist(static_cast<std::size_t>(n - 1));
  for (Index i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      dist[m++] = {(inputs.row(i) - inputs.row(j)).squaredNorm(), j};
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    for (Index r = 0; r < k; ++r) {
      const auto [d2, j] = dist[static_cast<std::size_t>(r)];
      g.knn[static_cast<std::size_t>(i)].push_back(j);
      directed[static_cast<std::size_t>(i)].emplace_back(j, std::exp(-d2 / (2.0 * sigma * sigma)));
    }
  }
  g.adjacency.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    for (const auto& [j, q] : directed[static_cast<std::size_t>(i)]) {
      g.adjacency[static_cast<std::size_t>(i)].emplace_back(j, q);
      g.adjacency[static_cast<std::size_t>(j)].emplace_back(i, q);
    }
  }
  for (auto& row : g.adjacency) {
    std::sort(row.begin(), row.end());
    // duplicates (mutual neighbours) collapse to the larger weight
    std::vector<std::pair<Index, double>> merged;
    for (const auto& e : row) {
      if (!merged.empty() && merged.back().first == e.first) {
        merged.back().second = std::max(merged.back().second, e.second);
      } else {
        merged.push_back(e);
      }
    }
    row = std::move(merged);
  }
  return g;
}

/// Median Euclidean distance over all pairs of a random subsample.
inline double median_pairwise_distance(const Matrix& inputs, Index max_samples = 1000, std::uint64_t seed = 0) {
  std::vector<Index> idx(static_cast<std::size_t>(inputs.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  if (inputs.rows() > max_samples) {
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(max_samples));
  }
  std::vector<double> d;
  for (std::size_t a = 0; a < idx.size(); ++a) {
    for (std::size_t b = a + 1; b < idx.size(); ++b) d.push_back((inputs.row(idx[a]) - inputs.row(idx[b])).norm());
  }
  if (d.empty()) throw std::invalid_argument("need at least two samples for a pairwise distance");
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  if (d.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(d.begin(), mid);
  return 0.5 * (lower + upper);
}

struct L2Penalty {};
struct L1Penalty {};
/// mix * l1 + (1 - mix) * 0.5 * l2^2.
struct ElasticNetPenalty {
  double mix = 0.5;
};
struct GroupSparsePenalty {
  std::vector<std::vector<Index>> groups;
  std::vector<double> weights;  // a_p = sqrt(|group p|)
};
/// Non-convex output-smoothness penalty over a kNN graph.
struct ManifoldPenalty {
  std::shared_ptr<const NeighborGraph> graph;
  std::shared_ptr<const Matrix> inputs;  // the samples the graph indexes
};

using Penalty = std::variant<L2Penalty, L1Penalty, ElasticNetPenalty, GroupSparsePenalty, ManifoldPenalty>;

struct Regularizer {
  Penalty penalty = L2Penalty{};
  double lambda = 1e-3;

  static Regularizer l2(double lambda) { return {L2Penalty{}, lambda}; }
  static Regularizer l1(double lambda) { return {L1Penalty{}, lambda}; }
  static Regularizer elastic_net(double lambda, double mix) {
    if (mix < 0.0 || mix > 1.0) throw std::invalid_argument("elastic-net mix must lie in [0,1]");
    return {ElasticNetPenalty{mix}, lambda};
  }
  static Regularizer group_sparse(double lambda, std::vector<std::vector<Index>> groups) {
    GroupSparsePenalty p;
    for (const auto& g : groups) p.weights.push_back(std::sqrt(static_cast<double>(g.size())));
    p.groups = std::move(groups);
    return {std::move(p), lambda};
  }
  static Regularizer manifold(double lambda, NeighborGraph graph, Matrix inputs) {
    if (graph.size() != inputs.rows()) throw DimensionError("manifold graph and input set differ in size");
    return {ManifoldPenalty{std::make_shared<const NeighborGraph>(std::move(graph)),
                            std::make_shared<const Matrix>(std::move(inputs))},
            lambda};
  }

  template <class P>
  bool is() const {
    return std::holds_alternative<P>(penalty);
  }
  bool convex() const { return !is<ManifoldPenalty>(); }

  std::string name() const {
    switch (penalty.index()) {
      case 0: return "l2";
      case 1: return "l1";
      case 2: return "elastic_net";
      case 3: return "group_sparse";
      default: return "manifold";
    }
  }
};

/// Checks that group indices are in range and partition {0..dim-1}.
inline void validate_groups(const GroupSparsePenalty& p, Index dim) {
  if (p.groups.size() != p.weights.size()) throw std::invalid_argument("group weight count mismatch");
  std::vector<char> seen(static_cast<std::size_t>(dim), 0);
  for (const auto& g : p.groups) {
    if (g.empty()) throw std::invalid_argument("empty regularizer group");
    for (Index i : g) {
      if (i < 0 || i >= dim) throw std::out_of_range("group index " + std::to_string(i) + " out of range");
      if (seen[static_cast<std::size_t>(i)]++) throw std::invalid_argument("regularizer groups overlap");
    }
  }
  for (char s : seen) {
    if (!s) throw std::invalid_argument("regularizer groups do not cover every parameter");
  }
}

namespace detail {

inline double group_norm_sum(const GroupSparsePenalty& p, const Vector& w) {
  double total = 0.0;
  for (std::size_t g = 0; g < p.groups.size(); ++g) {
    double sq = 0.0;
    for (Index i : p.groups[g]) {
      if (i < 0 || i >= w.size()) throw std::out_of_range("group index " + std::to_string(i) + " out of range");
      sq += w(i) * w(i);
    }
    total += p.weights[g] * std::sqrt(sq);
  }
  return total;
}

inline double manifold_value(const ManifoldPenalty& p, const Vector& outputs) {
  const NeighborGraph& g = *p.graph;
  detail::require_dim(outputs.size(), g.size(), "manifold output count");
  double total = 0.0;
  for (Index i = 0; i < g.size(); ++i) {
    double row = 0.0;
    for (const auto& [j, q] : g.adjacency[static_cast<std::size_t>(i)]) {
      const double diff = outputs(i) - outputs(j);
      row += q * diff * diff;
    }
    total += row / static_cast<double>(g.k);
  }
  return total;
}

}  // namespace detail

/// r(w) for the convex penalties. The manifold penalty needs the network: use the model overload.
inline double regularizer_value(const Regularizer& reg, const Vector& w) {
  return std::visit(
      [&](const auto& p) -> double {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, L2Penalty>) {
          return 0.5 * w.squaredNorm();
        } else if constexpr (std::is_same_v<P, L1Penalty>) {
          return w.lpNorm<1>();
        } else if constexpr (std::is_same_v<P, ElasticNetPenalty>) {
          return p.mix * w.lpNorm<1>() + (1.0 - p.mix) * 0.5 * w.squaredNorm();
        } else if constexpr (std::is_same_v<P, GroupSparsePenalty>) {
          return detail::group_norm_sum(p, w);
        } else {
          throw std::invalid_argument("manifold regularizer needs the network; pass the model");
        }
      },
      reg.penalty);
}

inline double regularizer_value(const Regularizer& reg, const MlpModel& model) {
  if (const auto* m = std::get_if<ManifoldPenalty>(&reg.penalty)) {
    return detail::manifold_value(*m, predict(model, *m->inputs));
  }
  return regularizer_value(reg, model.weights());
}

/// Block-separable part of r restricted to the coordinates in `block`.
inline double regularizer_block_value(const Regularizer& reg, const Vector& w, const std::vector<Index>& block) {
  if (const auto* g = std::get_if<GroupSparsePenalty>(&reg.penalty)) {
    std::vector<char> in(static_cast<std::size_t>(w.size()), 0);
    for (Index i : block) in[static_cast<std::size_t>(i)] = 1;
    double total = 0.0;
    for (std::size_t p = 0; p < g->groups.size(); ++p) {
      if (!in[static_cast<std::size_t>(g->groups[p].front())]) continue;
      double sq = 0.0;
      for (Index i : g->groups[p]) sq += w(i) * w(i);
      total += g->weights[p] * std::sqrt(sq);
    }
    return total;
  }
  Vector sub(static_cast<Index>(block.size()));
  for (std::size_t i = 0; i < block.size(); ++i) sub(static_cast<Index>(i)) = w(block[i]);
  return regularizer_value(reg, sub);
}

/// A subgradient of r at w (sign(0) = 0 for the l1 parts, zero for a zero group).
inline Vector regularizer_subgradient(const Regularizer& reg, const Vector& w) {
  auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  return std::visit(
      [&](const auto& p) -> Vector {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, L2Penalty>) {
          return w;
        } else if constexpr (std::is_same_v<P, L1Penalty>) {
          return w.unaryExpr(sign);
        } else if constexpr (std::is_same_v<P, ElasticNetPenalty>) {
          return (p.mix * w.unaryExpr(sign) + (1.0 - p.mix) * w).eval();
        } else if constexpr (std::is_same_v<P, GroupSparsePenalty>) {
          Vector g = Vector::Zero(w.size());
          for (std::size_t k = 0; k < p.groups.size(); ++k) {
            double sq = 0.0;
            for (Index i : p.groups[k]) sq += w(i) * w(i);
            if (sq == 0.0) continue;
            const double scale = p.weights[k] / std::sqrt(sq);
            for (Index i : p.groups[k]) g(i) = scale * w(i);
          }
          return g;
        } else {
          throw std::invalid_argument("manifold regularizer gradient needs the network");
        }
      },
      reg.penalty);
}

/// Gradient of the manifold penalty restricted to anchor samples `batch` (indices into the
/// graph's sample set), times `scale`. With every sample as anchor and scale 1 this is the
/// exact gradient of the full penalty.
inline Vector manifold_gradient(const ManifoldPenalty& p, const MlpModel& model, const std::vector<Index>& batch,
                                double scale = 1.0) {
  const NeighborGraph& g = *p.graph;
  const Matrix& x = *p.inputs;
  const Index q = model.parameter_count();
  Vector grad = Vector::Zero(q);
  detail::Workspace ws(model.topology());
  Vector ji(q), jj(q);
  for (Index i : batch) {
    const double fi = detail::forward_pass(model, x.row(i).transpose(), ws);
    detail::backward_pass(model, ws, ji.data());
    double fi_out = fi;
    if (model.head() == OutputHead::Sigmoid) {
      fi_out = sigmoid(fi);
      ji *= fi_out * (1.0 - fi_out);
    }
    for (const auto& [j, w_ij] : g.adjacency[static_cast<std::size_t>(i)]) {
      double fj = detail::forward_pass(model, x.row(j).transpose(), ws);
      detail::backward_pass(model, ws, jj.data());
      if (model.head() == OutputHead::Sigmoid) {
        fj = sigmoid(fj);
        jj *= fj * (1.0 - fj);
      }
      grad.noalias() += (scale * 2.0 * w_ij * (fi_out - fj) / static_cast<double>(g.k)) * (ji - jj);
    }
  }
  return grad;
}

/// U(w) = (1/N) sum_i l(y_i, f(w; x_i)) + lambda * r(w).
inline double objective_value(const MlpModel& model, const Matrix& inputs, const Vector& targets, LossKind loss,
                              const Regularizer& reg) {
  detail::require_dim(targets.size(), inputs.rows(), "target count");
  if (inputs.rows() == 0) throw std::invalid_argument("objective over an empty dataset");
  detail::check_loss_head(model, loss);
  const Vector z = predict(model, inputs, /*pre_squash=*/true);
  double total = 0.0;
  for (Index i = 0; i < z.size(); ++i) {
    if (loss == LossKind::Squared) {
      total += loss_value(loss, targets(i), z(i));
    } else {
      const double y = targets(i);
      if (y != 0.0 && y != 1.0) throw std::domain_error("cross-entropy loss needs {0,1} targets");
      total += cross_entropy_from_logit(y, z(i));
    }
  }
  return total / static_cast<double>(z.size()) + reg.lambda * regularizer_value(reg, model);
}

}  // namespace stosca
