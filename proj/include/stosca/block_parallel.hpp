#pragma once

// Jacobi-style block decomposition of the surrogate: every block is solved with
// the remaining coordinates frozen at the current iterate, then the block
// solutions are concatenated.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>
#include <vector>

#include "stosca/objective.hpp"
#include "stosca/surrogate.hpp"
#include "stosca/types.hpp"

namespace stosca {

enum class AssignmentPolicy { Static, RandomPerIteration };

struct BlockPartition {
  std::vector<std::vector<Index>> blocks;  // each sorted ascending
  AssignmentPolicy policy = AssignmentPolicy::Static;
  Index dim = 0;

  Index size() const { return static_cast<Index>(blocks.size()); }
  const std::vector<Index>& block(Index c) const { return blocks.at(static_cast<std::size_t>(c)); }

  /// Throws unless the blocks are non-empty, disjoint and cover {0..dim-1}.
  void validate() const {
    std::vector<char> seen(static_cast<std::size_t>(dim), 0);
    for (const auto& b : blocks) {
      if (b.empty()) throw std::invalid_argument("empty block in partition");
      for (Index i : b) {
        if (i < 0 || i >= dim) throw std::out_of_range("block index out of range");
        if (seen[static_cast<std::size_t>(i)]++) throw std::invalid_argument("blocks overlap");
      }
    }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end()) throw std::invalid_argument("blocks do not cover");
  }
};

namespace detail {

/// Splits `order` into c consecutive chunks whose sizes differ by at most one.
inline std::vector<std::vector<Index>> even_chunks(const std::vector<Index>& order, Index c) {
  const Index q = static_cast<Index>(order.size());
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(c));
  Index pos = 0;
  for (Index k = 0; k < c; ++k) {
    const Index len = q / c + (k < q % c ? 1 : 0);
    auto& b = out[static_cast<std::size_t>(k)];
    b.assign(order.begin() + pos, order.begin() + pos + len);
    std::sort(b.begin(), b.end());
    pos += len;
  }
  return out;
}

}  // namespace detail

/// Near-equal blocks. Under a group-sparse regularizer whole groups are assigned
/// (largest first, to the currently smallest block), so groups never straddle blocks.
inline BlockPartition make_partition(Index q, Index c, AssignmentPolicy policy, const Regularizer& reg,
                                     std::uint64_t seed = 0) {
  if (c < 1 || c > q) throw std::invalid_argument("block count must satisfy 1 <= C <= Q");
  BlockPartition part;
  part.policy = policy;
  part.dim = q;
  std::mt19937_64 rng(seed);
  if (const auto* g = std::get_if<GroupSparsePenalty>(&reg.penalty)) {
    validate_groups(*g, q);
    const Index groups = static_cast<Index>(g->groups.size());
    if (c > groups) {
      throw std::invalid_argument("block count " + std::to_string(c) + " exceeds the number of regularizer groups " +
                                  std::to_string(groups));
    }
    std::vector<Index> order(static_cast<std::size_t>(groups));
    std::iota(order.begin(), order.end(), Index{0});
    if (policy == AssignmentPolicy::RandomPerIteration) std::shuffle(order.begin(), order.end(), rng);
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
      return g->groups[static_cast<std::size_t>(a)].size() > g->groups[static_cast<std::size_t>(b)].size();
    });
    part.blocks.resize(static_cast<std::size_t>(c));
    for (Index gi : order) {
      auto smallest = std::min_element(part.blocks.begin(), part.blocks.end(),
                                       [](const auto& a, const auto& b) { return a.size() < b.size(); });
      const auto& members = g->groups[static_cast<std::size_t>(gi)];
      smallest->insert(smallest->end(), members.begin(), members.end());
    }
    for (auto& b : part.blocks) std::sort(b.begin(), b.end());
    return part;
  }
  std::vector<Index> order(static_cast<std::size_t>(q));
  std::iota(order.begin(), order.end(), Index{0});
  if (policy == AssignmentPolicy::RandomPerIteration) std::shuffle(order.begin(), order.end(), rng);
  part.blocks = detail::even_chunks(order, c);
  return part;
}

/// The surrogate over the coordinates in `block` with every other coordinate frozen at
/// s.anchor: b_c - A_{c,-c} w_{-c}, tau and lambda unchanged, anchor w_c. The off-diagonal
/// block is applied as a product and never materialized when only the factor is stored.
inline RidgeSurrogate restrict_to_block(const RidgeSurrogate& s, const std::vector<Index>& block) {
  const Index q = s.dim();
  for (Index i : block) {
    if (i < 0 || i >= q) throw std::out_of_range("block index out of range");
  }
  Vector frozen = s.anchor;
  for (Index i : block) frozen(i) = 0.0;
  RidgeSurrogate sub;
  sub.lambda = s.lambda;
  sub.tau = s.tau;
  sub.anchor = s.anchor(block);
  sub.b = s.b(block);
  if (s.has_factor()) {
    sub.factor = s.factor(Eigen::all, block);
    const Vector fw = s.factor * frozen;
    sub.b.noalias() -= sub.factor.transpose() * fw;
    if (s.has_dense()) sub.A = s.A(block, block);
  } else if (s.has_dense()) {
    sub.A = s.A(block, block);
    sub.b.noalias() -= s.A(block, Eigen::all) * frozen;
  }
  return sub;
}

/// Solution of block c with the others frozen at w_n.
inline Vector solve_block_ridge(const RidgeSurrogate& s, const BlockPartition& part, Index c,
                                SolvePath path = SolvePath::Auto) {
  if (c < 0 || c >= part.size()) throw std::out_of_range("block id out of range");
  detail::require_dim(part.dim, s.dim(), "partition dimension");
  const RidgeSurrogate sub = restrict_to_block(s, part.block(c));
  if (path == SolvePath::LowRank && !sub.has_factor()) path = SolvePath::Dense;
  return solve_ridge(sub, path);
}

/// Runs fn(c) for every block id on up to `workers` threads pulling ids from a shared
/// counter. The first exception thrown by any block is rethrown after all threads join.
template <class Fn>
void for_each_block(Index count, Index workers, Fn&& fn) {
  if (workers < 1) throw std::invalid_argument("worker count must be >= 1");
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (Index c = 0; c < count; ++c) fn(c);
    return;
  }
  std::atomic<Index> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (Index t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (Index c = next++; c < count && !failed.load(); c = next++) {
          try {
            fn(c);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
            failed = true;
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

/// Solves all blocks from the same frozen w_n and aggregates. The result does not depend
/// on the worker count or on the order in which blocks finish.
inline Vector parallel_surrogate_step(const RidgeSurrogate& s, const BlockPartition& part, Index workers = 1,
                                      SolvePath path = SolvePath::Auto) {
  detail::require_dim(part.dim, s.dim(), "partition dimension");
  Vector w_hat(s.dim());
  for_each_block(part.size(), workers, [&](Index c) {
    const Vector wc = solve_block_ridge(s, part, c, path);
    const auto& idx = part.block(c);
    for (std::size_t i = 0; i < idx.size(); ++i) w_hat(idx[i]) = wc(static_cast<Index>(i));
  });
  return w_hat;
}

namespace detail {

/// Group structure of `reg` re-indexed to the positions inside `block`.
inline GroupSparsePenalty restrict_groups(const GroupSparsePenalty& g, const std::vector<Index>& block, Index dim) {
  std::vector<Index> local(static_cast<std::size_t>(dim), -1);
  for (std::size_t i = 0; i < block.size(); ++i) local[static_cast<std::size_t>(block[i])] = static_cast<Index>(i);
  GroupSparsePenalty out;
  for (std::size_t p = 0; p < g.groups.size(); ++p) {
    const auto& members = g.groups[p];
    const bool inside = local[static_cast<std::size_t>(members.front())] >= 0;
    std::vector<Index> mapped;
    for (Index i : members) {
      const Index li = local[static_cast<std::size_t>(i)];
      if ((li >= 0) != inside) throw std::invalid_argument("regularizer group straddles a block boundary");
      if (inside) mapped.push_back(li);
    }
    if (inside) {
      out.groups.push_back(std::move(mapped));
      out.weights.push_back(g.weights[p]);
    }
  }
  return out;
}

}  // namespace detail

/// Block version of solve_l1_fista.
inline Vector parallel_sparse_step(const RidgeSurrogate& s, const BlockPartition& part, Index workers,
                                   double l1_weight, const GroupSparsePenalty* groups = nullptr,
                                   FistaOptions opt = {}) {
  detail::require_dim(part.dim, s.dim(), "partition dimension");
  Vector w_hat(s.dim());
  for_each_block(part.size(), workers, [&](Index c) {
    const auto& idx = part.block(c);
    const RidgeSurrogate sub = restrict_to_block(s, idx);
    Vector wc;
    if (groups) {
      const GroupSparsePenalty local = detail::restrict_groups(*groups, idx, s.dim());
      wc = solve_l1_fista(sub, l1_weight, &local, opt);
    } else {
      wc = solve_l1_fista(sub, l1_weight, nullptr, opt);
    }
    for (std::size_t i = 0; i < idx.size(); ++i) w_hat(idx[i]) = wc(static_cast<Index>(i));
  });
  return w_hat;
}

struct SpeedupRow {
  Index blocks = 1;
  Index workers = 1;
  double median_ms = 0.0;
  double speedup = 1.0;  // relative to C = 1 with one worker
};

/// Median wall time of one surrogate solve for every (C, workers) pair.
inline std::vector<SpeedupRow> measure_speedup(const RidgeSurrogate& instance, const std::vector<Index>& block_counts,
                                               const std::vector<Index>& worker_counts, int repetitions = 20,
                                               SolvePath path = SolvePath::Dense) {
  if (repetitions < 1) throw std::invalid_argument("need at least one repetition");
  const Regularizer l2 = Regularizer::l2(instance.lambda);
  auto time_one = [&](Index c, Index workers) {
    const BlockPartition part = make_partition(instance.dim(), c, AssignmentPolicy::Static, l2);
    std::vector<double> times;
    for (int r = 0; r < repetitions; ++r) {
      const auto start = std::chrono::steady_clock::now();
      const Vector w = parallel_surrogate_step(instance, part, workers, path);
      const auto stop = std::chrono::steady_clock::now();
      if (!w.allFinite()) throw SolverError("non-finite block solution while timing");
      times.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    }
    std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2), times.end());
    return times[times.size() / 2];
  };
  const double base = time_one(1, 1);
  std::vector<SpeedupRow> rows;
  for (Index c : block_counts) {
    for (Index w : worker_counts) {
      SpeedupRow row;
      row.blocks = c;
      row.workers = w;
      row.median_ms = (c == 1 && w == 1) ? base : time_one(c, w);
      row.speedup = (c == 1 && w == 1) ? 1.0 : base / row.median_ms;
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace stosca
