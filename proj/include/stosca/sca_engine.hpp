#pragma once

// Stochastic SCA outer loop. One iteration:
//   w_hat   = argmin of the surrogate at (w_n, d_n, rho_n, tau)
//   w_{n+1} = (1 - alpha_n) w_n + alpha_n w_hat
//   d_{n+1} = (1 - rho_n) d_n + rho_n * (mini-batch loss gradient at w_n)

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stosca/block_parallel.hpp"
#include "stosca/data.hpp"
#include "stosca/nn.hpp"
#include "stosca/objective.hpp"
#include "stosca/surrogate.hpp"
#include "stosca/training.hpp"
#include "stosca/types.hpp"

namespace stosca {

/// current * (1 - eps * current); requires current < 1/eps so the sequence stays positive.
inline double step_size_next(double current, double eps) {
  if (!(current > 0.0)) throw std::invalid_argument("step size must be positive");
  if (eps < 0.0) throw std::invalid_argument("decay rate must be nonnegative");
  if (eps > 0.0 && current * eps >= 1.0) {
    throw std::invalid_argument("step size " + std::to_string(current) + " >= 1/eps would turn nonpositive");
  }
  return current * (1.0 - eps * current);
}

/// A positive step-size sequence indexed from n = 0.
struct Sequence {
  enum class Kind { Quadratic, Power, Constant };
  Kind kind = Kind::Quadratic;
  double initial = 0.5;
  double rate = 0.01;  // eps for Quadratic, the exponent p of initial / (n+1)^p for Power

  static Sequence quadratic(double initial, double eps) { return {Kind::Quadratic, initial, eps}; }
  static Sequence power(double initial, double exponent) { return {Kind::Power, initial, exponent}; }
  static Sequence constant(double value) { return {Kind::Constant, value, 0.0}; }

  void validate() const {
    if (!(initial > 0.0 && initial <= 1.0)) throw std::invalid_argument("sequence start must lie in (0,1]");
    if (rate < 0.0) throw std::invalid_argument("sequence rate must be nonnegative");
    if (kind == Kind::Quadratic && rate * initial >= 1.0) throw std::invalid_argument("quadratic rule needs initial < 1/eps");
  }

  /// Value at index n + 1 given the value at index n.
  double next(double current, Index n) const {
    switch (kind) {
      case Kind::Quadratic: return current == 0.0 ? 0.0 : step_size_next(current, rate);  // a forced stall stays put
      case Kind::Power: return initial / std::pow(static_cast<double>(n + 2), rate);
      case Kind::Constant: return initial;
    }
    return current;
  }

  std::vector<double> generate(Index count) const {
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(count));
    double cur = initial;
    for (Index n = 0; n < count; ++n) {
      v.push_back(cur);
      cur = next(cur, n);
    }
    return v;
  }
};

struct Schedule {
  Sequence alpha = Sequence::quadratic(0.5, 0.01);
  Sequence rho = Sequence::quadratic(0.9, 0.01);

  static Schedule defaults() { return {}; }
};

struct ScheduleCondition {
  std::string name;
  bool satisfied = true;
  std::string detail;
};

struct ScheduleReport {
  Index horizon = 0;
  double alpha_tail_exponent = 0.0;
  double rho_tail_exponent = 0.0;
  double ratio_tail_exponent = 0.0;
  double final_ratio = 0.0;
  std::vector<ScheduleCondition> conditions;

  bool ok() const {
    for (const auto& c : conditions) {
      if (!c.satisfied) return false;
    }
    return true;
  }
  bool condition_ok(const std::string& name) const {
    for (const auto& c : conditions) {
      if (c.name == name) return c.satisfied;
    }
    throw std::out_of_range("no schedule condition named " + name);
  }
  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    for (const auto& c : conditions) {
      if (!c.satisfied) out.push_back(c.name + ": " + c.detail);
    }
    return out;
  }
};

/// Numerical audit of the convergence conditions over n = 0..horizon:
///   (i)   alpha_n -> 0, sum alpha_n = inf, sum alpha_n^2 < inf
///   (ii)  the same for rho_n
///   (iii) alpha_n / rho_n -> 0
/// Tail behaviour is read off the local decay exponent p = log(v(H/2) / v(H)) / log(2):
/// a sum diverges iff p <= 1, a sum of squares converges iff 2p > 1. `margin` keeps
/// borderline exponents from passing on rounding.
inline ScheduleReport verify_schedule(const Schedule& schedule, Index horizon, double margin = 0.05) {
  ScheduleReport rep;
  rep.horizon = horizon;
  auto add = [&](std::string name, bool ok, std::string detail) {
    rep.conditions.push_back({std::move(name), ok, std::move(detail)});
  };
  if (horizon < 1000) {
    add("horizon", false, "horizon must be at least 1000");
    return rep;
  }
  const auto a = schedule.alpha.generate(horizon + 1);
  const auto r = schedule.rho.generate(horizon + 1);
  const auto half = static_cast<std::size_t>(horizon / 2);
  const auto last = static_cast<std::size_t>(horizon);
  const double span = std::log(static_cast<double>(last + 1) / static_cast<double>(half + 1));
  auto tail = [&](double at_half, double at_end) { return std::log(at_half / at_end) / span; };

  bool positive = true, mono_a = true, mono_r = true;
  for (std::size_t n = 0; n <= last; ++n) {
    positive = positive && a[n] > 0.0 && r[n] > 0.0 && std::isfinite(a[n]) && std::isfinite(r[n]);
    if (n > 0) {
      mono_a = mono_a && a[n] <= a[n - 1];
      mono_r = mono_r && r[n] <= r[n - 1];
    }
  }
  add("positive", positive, positive ? "" : "a sequence value is not positive and finite");
  add("alpha nonincreasing", mono_a, mono_a ? "" : "alpha increases somewhere");
  add("rho nonincreasing", mono_r, mono_r ? "" : "rho increases somewhere");
  if (!positive) return rep;

  rep.alpha_tail_exponent = tail(a[half], a[last]);
  rep.rho_tail_exponent = tail(r[half], r[last]);
  rep.ratio_tail_exponent = tail(a[half] / r[half], a[last] / r[last]);
  rep.final_ratio = a[last] / r[last];

  auto audit = [&](const std::string& tag, double p) {
    const std::string ps = " (tail exponent " + std::to_string(p) + ")";
    const bool vanishes = p > margin;
    const bool diverges = p <= 1.0 + margin;
    const bool squares = 2.0 * p > 1.0 + margin;
    const bool all = vanishes && diverges && squares;
    std::string why;
    if (!vanishes) why += "does not tend to zero; ";
    if (!diverges) why += "sum converges; ";
    if (!squares) why += "sum of squares diverges; ";
    add(tag, all, all ? ps : why + ps);
  };
  audit("(i) alpha", rep.alpha_tail_exponent);
  audit("(ii) rho", rep.rho_tail_exponent);
  const bool ratio_ok = rep.ratio_tail_exponent > margin && a[last] / r[last] < a[half] / r[half];
  add("(iii) alpha/rho -> 0", ratio_ok,
      (ratio_ok ? std::string() : std::string("ratio does not vanish; ")) + "ratio at horizon " +
          std::to_string(rep.final_ratio) + ", tail exponent " + std::to_string(rep.ratio_tail_exponent));
  return rep;
}

struct BlockConfig {
  Index blocks = 1;
  AssignmentPolicy policy = AssignmentPolicy::Static;
  Index workers = 1;
};

enum class GradientInit { Zero, FirstBatch };

struct ScaConfig {
  Index batch_size = 20;
  LossKind loss = LossKind::Squared;
  Regularizer reg = Regularizer::l2(1e-3);
  Schedule schedule = Schedule::defaults();
  double tau = 0.0;
  Index max_iters = 500;
  std::uint64_t seed = 0;
  BlockConfig blocks;
  Index log_every = 1;
  Index eval_rows = 2000;
  GradientInit d_init = GradientInit::Zero;
  SolvePath path = SolvePath::Auto;
  FistaOptions fista;
  LogisticOptions logistic;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (max_iters < 0) throw std::invalid_argument("iteration count must be >= 0");
    if (tau < 0.0) throw std::invalid_argument("tau must be nonnegative");
    if (reg.lambda < 0.0) throw std::invalid_argument("lambda must be nonnegative");
    if (blocks.blocks < 1 || blocks.workers < 1) throw std::invalid_argument("block and worker counts must be >= 1");
    schedule.alpha.validate();
    schedule.rho.validate();
    if (reg.is<ManifoldPenalty>() && !(tau > 0.0)) {
      throw std::invalid_argument("manifold regularization needs tau > 0 for a strongly convex surrogate");
    }
    if (loss == LossKind::CrossEntropy && blocks.blocks > 1) {
      throw std::invalid_argument("block decomposition is only available for the squared-loss surrogates");
    }
    if (loss == LossKind::CrossEntropy && !(reg.is<L2Penalty>() || reg.is<L1Penalty>() || reg.is<ManifoldPenalty>())) {
      throw std::invalid_argument("cross-entropy surrogate supports l2, l1 and manifold regularizers");
    }
  }

  LoopSettings loop() const { return {max_iters, batch_size, log_every, eval_rows, seed}; }
};

struct ScaState {
  Vector w;
  Vector d;
  Vector w_hat;  // last surrogate solution
  Index n = 0;
  double alpha = 0.0;
  double rho = 0.0;
  double tau = 0.0;

  static ScaState initial(Vector w0, const ScaConfig& cfg) {
    ScaState s;
    s.d = Vector::Zero(w0.size());
    s.w = std::move(w0);
    s.alpha = cfg.schedule.alpha.initial;
    s.rho = cfg.schedule.rho.initial;
    s.tau = cfg.tau;
    return s;
  }
};

/// Raised when an iteration fails; carries the iteration index.
class IterationError : public std::runtime_error {
 public:
  IterationError(Index iteration, const std::string& what)
      : std::runtime_error("iteration " + std::to_string(iteration) + ": " + what), iteration_(iteration) {}
  Index iteration() const { return iteration_; }

 private:
  Index iteration_;
};

struct SurrogateSolution {
  Vector w_hat;
  Vector batch_gradient;  // (1/L) sum grad l_i at w_n
};

/// Builds and solves the surrogate selected by (loss, regularizer) at the model's weights.
inline SurrogateSolution solve_surrogate(const MlpModel& at, const MiniBatch& batch, const Vector& d, double rho,
                                         double tau, const ScaConfig& cfg, const BlockPartition* part = nullptr) {
  detail::check_loss_head(at, cfg.loss);
  const Vector& wn = at.weights();
  const double lambda = cfg.reg.lambda;
  const Index l = batch.size();
  const Index workers = cfg.blocks.workers;
  SurrogateSolution out;

  auto manifold_for = [&](const ManifoldPenalty& m) {
    const double scale = static_cast<double>(m.graph->size()) / static_cast<double>(l);
    return manifold_terms(at, m, batch.indices, scale);
  };

  if (cfg.loss == LossKind::Squared) {
    const Linearization lin = linearize_model(at, batch, JacobianTarget::FullOutput);
    out.batch_gradient = (-2.0 / static_cast<double>(l)) * (lin.jacobian.transpose() * (batch.targets - lin.values));
    const Vector& dd = (d.size() ? d : out.batch_gradient);
    auto ridge = [&](double ridge_weight) {
      return detail::assemble_ridge(lin.jacobian, lin.values, batch.targets, dd, rho, ridge_weight, tau, wn, cfg.path);
    };
    auto sparse = [&](const RidgeSurrogate& s, double l1, const GroupSparsePenalty* g) {
      return part ? parallel_sparse_step(s, *part, workers, l1, g, cfg.fista) : solve_l1_fista(s, l1, g, cfg.fista);
    };
    auto quadratic = [&](const RidgeSurrogate& s) {
      return part ? parallel_surrogate_step(s, *part, workers, cfg.path) : solve_ridge(s, cfg.path);
    };
    std::visit(
        [&](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, L2Penalty>) {
            out.w_hat = quadratic(ridge(lambda));
          } else if constexpr (std::is_same_v<P, L1Penalty>) {
            out.w_hat = sparse(ridge(0.0), lambda, nullptr);
          } else if constexpr (std::is_same_v<P, ElasticNetPenalty>) {
            out.w_hat = sparse(ridge((1.0 - p.mix) * lambda), p.mix * lambda, nullptr);
          } else if constexpr (std::is_same_v<P, GroupSparsePenalty>) {
            out.w_hat = sparse(ridge(0.0), lambda, &p);
          } else {
            RidgeSurrogate s = ridge(0.0);
            add_manifold(s, manifold_for(p), lambda);
            out.w_hat = quadratic(s);
          }
        },
        cfg.reg.penalty);
    return out;
  }

  const Linearization lin = linearize_model(at, batch, JacobianTarget::PreSquash);
  Vector resid(l);
  for (Index i = 0; i < l; ++i) resid(i) = sigmoid(lin.values(i)) - batch.targets(i);
  out.batch_gradient = (1.0 / static_cast<double>(l)) * (lin.jacobian.transpose() * resid);
  const Vector& dd = (d.size() ? d : out.batch_gradient);
  if (const auto* m = std::get_if<ManifoldPenalty>(&cfg.reg.penalty)) {
    LogisticSurrogate s = build_logistic(lin, batch.targets, dd, rho, 0.0, tau, LogisticPenalty::L2);
    const ManifoldTerms t = manifold_for(*m);
    s.extra_factor = std::sqrt(lambda) * t.factor;
    s.extra_linear = lambda * t.linear;
    out.w_hat = solve_logistic(s, cfg.logistic);
  } else {
    const LogisticPenalty pen = cfg.reg.is<L1Penalty>() ? LogisticPenalty::L1 : LogisticPenalty::L2;
    out.w_hat = solve_logistic(build_logistic(lin, batch.targets, dd, rho, lambda, tau, pen), cfg.logistic);
  }
  return out;
}

/// One iteration of the stochastic SCA loop. Failures are rethrown as IterationError.
inline ScaState sca_iteration(const ScaState& state, const MiniBatch& batch, const MlpModel& model,
                              const ScaConfig& cfg, const BlockPartition* part = nullptr) {
  try {
    const MlpModel at = model.with_weights(state.w);
    ScaState next = state;
    // With d_0 taken from the first batch, the solve below sees that gradient as d_0.
    const bool seed_d = state.n == 0 && cfg.d_init == GradientInit::FirstBatch;
    SurrogateSolution sol = solve_surrogate(at, batch, seed_d ? Vector() : state.d, state.rho, state.tau, cfg, part);
    const Vector& d_now = seed_d ? sol.batch_gradient : state.d;
    if (!sol.w_hat.allFinite()) throw NumericalError("non-finite surrogate solution");
    next.w = (1.0 - state.alpha) * state.w + state.alpha * sol.w_hat;
    next.d = (1.0 - state.rho) * d_now + state.rho * sol.batch_gradient;
    next.w_hat = std::move(sol.w_hat);
    next.alpha = cfg.schedule.alpha.next(state.alpha, state.n);
    next.rho = cfg.schedule.rho.next(state.rho, state.n);
    next.n = state.n + 1;
    return next;
  } catch (const IterationError&) {
    throw;
  } catch (const std::exception& e) {
    throw IterationError(state.n + 1, e.what());
  }
}

struct ScaTrainResult {
  MlpModel model;
  RunRecord record;
  ScaState state;
};

/// Runs cfg.max_iters iterations on `train`; deterministic for a fixed seed.
inline ScaTrainResult train(const MlpModel& model, const Dataset& train_set, const ScaConfig& cfg) {
  cfg.validate();
  detail::check_loss_head(model, cfg.loss);
  ScaState state = ScaState::initial(model.weights(), cfg);
  std::optional<BlockPartition> part;
  std::mt19937_64 part_rng(cfg.seed ^ 0xb10c5eedULL);
  if (cfg.blocks.blocks > 1) {
    part = make_partition(model.parameter_count(), cfg.blocks.blocks, cfg.blocks.policy, cfg.reg, part_rng());
  }
  TrainResult res = run_training_loop(model, train_set, cfg.loop(), cfg.loss, cfg.reg, "sca",
                                      [&](Vector& w, const MiniBatch& batch, Index) {
                                        if (part && cfg.blocks.policy == AssignmentPolicy::RandomPerIteration) {
                                          part = make_partition(model.parameter_count(), cfg.blocks.blocks,
                                                                cfg.blocks.policy, cfg.reg, part_rng());
                                        }
                                        state = sca_iteration(state, batch, model, cfg, part ? &*part : nullptr);
                                        w = state.w;
                                      });
  res.record.info["tau"] = std::to_string(cfg.tau);
  res.record.info["blocks"] = std::to_string(cfg.blocks.blocks);
  return {std::move(res.model), std::move(res.record), std::move(state)};
}

}  // namespace stosca
