#pragma once

// Strongly convex surrogate problems built from a partial linearization of the
// network around the current iterate w_n, and their solvers.
//
// Ridge family (squared loss). With A = (rho/L) sum_i J_i J_i^T and
//   b = (rho/L) sum_i J_i r_i - ((1 - rho)/2) d_n,   r_i = y_i - f(w_n; x_i) + J_i^T w_n,
// the surrogate minimized is
//   S(w) = w^T (A + (lambda + tau) I) w - 2 (b + tau w_n)^T w,
// whose minimizer is (A + (lambda + tau) I)^{-1} (b + tau w_n). Relative to
// literally expanding lambda * 0.5 |w|^2 this doubles the effective ridge weight.
//
// The sparse variant replaces the ridge term with lambda |w|_1 (or a weighted
// group norm) and is solved with FISTA.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <unordered_map>
#include <vector>

#include "stosca/loss.hpp"
#include "stosca/nn.hpp"
#include "stosca/objective.hpp"
#include "stosca/types.hpp"

namespace stosca {

/// First-order model of the network on a mini-batch: f~_i(w) = values_i + J_i^T (w - anchor).
struct Linearization {
  Vector values;
  Matrix jacobian;
  Vector anchor;

  double evaluate(Index i, const Vector& w) const { return values(i) + jacobian.row(i).dot(w - anchor); }
};

inline Linearization linearize_model(const MlpModel& model, const MiniBatch& batch,
                                     JacobianTarget wrt = JacobianTarget::FullOutput) {
  Linearization lin;
  lin.jacobian = weight_jacobian(model, batch, wrt, &lin.values);
  lin.anchor = model.weights();
  return lin;
}

enum class SolvePath { Auto, Dense, LowRank };

/// Solves (A + shift I) x = v for symmetric PSD A, either by a dense Cholesky
/// factorization or, when A = F^T F with few rows, through the Woodbury identity
///   (shift I + F^T F)^{-1} = (I - F^T (shift I + F F^T)^{-1} F) / shift.
class ShiftedSystem {
 public:
  static ShiftedSystem dense(const Matrix& a, double shift) {
    ShiftedSystem s;
    s.shift_ = shift;
    s.a_ = &a;
    Matrix m = a;
    m.diagonal().array() += shift;
    s.llt_.compute(m);
    if (s.llt_.info() != Eigen::Success) throw SolverError("Cholesky factorization failed");
    return s;
  }

  static ShiftedSystem low_rank(const Matrix& factor, double shift) {
    if (!(shift > 0.0)) throw SolverError("low-rank solve needs a positive diagonal shift");
    ShiftedSystem s;
    s.shift_ = shift;
    s.f_ = &factor;
    Matrix k = factor * factor.transpose();
    k.diagonal().array() += shift;
    s.llt_.compute(k);
    if (s.llt_.info() != Eigen::Success) throw SolverError("Woodbury capacitance factorization failed");
    return s;
  }

  /// (A + shift I) v
  Vector apply(const Vector& v) const {
    Vector out = shift_ * v;
    if (a_) {
      out.noalias() += (*a_) * v;
    } else {
      out.noalias() += f_->transpose() * ((*f_) * v);
    }
    return out;
  }

  /// One step of iterative refinement follows the direct solve.
  Vector solve(const Vector& v) const {
    Vector x = raw_solve(v);
    const Vector r = v - apply(x);
    x += raw_solve(r);
    return x;
  }

 private:
  Vector raw_solve(const Vector& v) const {
    if (a_) return llt_.solve(v);
    const Vector fv = (*f_) * v;
    return (v - f_->transpose() * llt_.solve(fv)) / shift_;
  }

  double shift_ = 0.0;
  const Matrix* a_ = nullptr;
  const Matrix* f_ = nullptr;
  Eigen::LLT<Matrix> llt_;
};

struct RidgeSurrogate {
  /// Dense Q x Q curvature; empty when only the factor is kept.
  Matrix A;
  /// m x Q factor with A = factor^T factor; empty when A was given directly.
  Matrix factor;
  Vector b;
  double lambda = 0.0;
  double tau = 0.0;
  Vector anchor;

  Index dim() const { return b.size(); }
  bool has_dense() const { return A.rows() == dim() && A.cols() == dim() && dim() > 0; }
  bool has_factor() const { return factor.cols() == dim() && factor.rows() > 0; }

  Matrix dense_matrix() const {
    if (has_dense()) return A;
    if (has_factor()) return factor.transpose() * factor;
    return Matrix::Zero(dim(), dim());
  }

  /// A v
  Vector apply(const Vector& v) const {
    if (has_factor()) return factor.transpose() * (factor * v);
    if (has_dense()) return A * v;
    return Vector::Zero(dim());
  }

  Vector rhs() const { return b + tau * anchor; }

  double objective(const Vector& w) const {
    return w.dot(apply(w)) + (lambda + tau) * w.squaredNorm() - 2.0 * rhs().dot(w);
  }

  /// Gradient of w^T A w - 2 b^T w: the data-fit part plus the (1 - rho) d_n term.
  Vector loss_gradient(const Vector& w) const { return 2.0 * apply(w) - 2.0 * b; }

  static RidgeSurrogate from_dense(Matrix a, Vector b, double lambda, double tau, Vector anchor) {
    detail::require_dim(a.rows(), b.size(), "surrogate matrix rows");
    detail::require_dim(a.cols(), b.size(), "surrogate matrix cols");
    detail::require_dim(anchor.size(), b.size(), "anchor length");
    RidgeSurrogate s;
    s.A = std::move(a);
    s.b = std::move(b);
    s.lambda = lambda;
    s.tau = tau;
    s.anchor = std::move(anchor);
    return s;
  }
};

/// r_i = y_i - f(w_n; x_i) + J_i^T w_n
inline Vector compute_residuals(const Matrix& jacobian, const Vector& values, const Vector& targets,
                                const Vector& anchor) {
  detail::require_dim(values.size(), jacobian.rows(), "linearization values");
  detail::require_dim(targets.size(), jacobian.rows(), "targets");
  detail::require_dim(anchor.size(), jacobian.cols(), "anchor length");
  Vector r = targets - values + jacobian * anchor;
  if (!r.allFinite()) throw NumericalError("non-finite surrogate residual");
  return r;
}

namespace detail {

inline void check_mixing(double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("mixing weight rho must lie in (0,1]");
}

inline void check_strong_convexity(double lambda, double tau) {
  if (lambda < 0.0 || tau < 0.0) throw std::invalid_argument("lambda and tau must be nonnegative");
  if (!(lambda + tau > 0.0)) throw std::invalid_argument("surrogate not strongly convex (lambda + tau must be > 0)");
}

}  // namespace detail

namespace detail {

/// build_ridge without the strong-convexity check (the l1 surrogates may have lambda = tau = 0).
inline RidgeSurrogate assemble_ridge(const Matrix& jacobian, const Vector& values, const Vector& targets,
                                     const Vector& gradient_average, double rho, double lambda, double tau,
                                     const Vector& anchor, SolvePath path) {
  check_mixing(rho);
  if (lambda < 0.0 || tau < 0.0) throw std::invalid_argument("lambda and tau must be nonnegative");
  require_dim(gradient_average.size(), jacobian.cols(), "gradient average length");
  const Index l = jacobian.rows();
  const Index q = jacobian.cols();
  const Vector r = compute_residuals(jacobian, values, targets, anchor);
  const double scale = rho / static_cast<double>(l);
  RidgeSurrogate s;
  s.factor = std::sqrt(scale) * jacobian;
  s.b.noalias() = scale * (jacobian.transpose() * r);
  s.b -= 0.5 * (1.0 - rho) * gradient_average;
  s.lambda = lambda;
  s.tau = tau;
  s.anchor = anchor;
  if (path == SolvePath::Dense || (path == SolvePath::Auto && q <= 4 * l)) {
    s.A.noalias() = s.factor.transpose() * s.factor;
  }
  return s;
}

}  // namespace detail

/// Builds the ridge surrogate. The dense matrix is only materialized when the
/// low-rank path would not be chosen (Q <= 4L) or when Dense is requested.
inline RidgeSurrogate build_ridge(const Matrix& jacobian, const Vector& values, const Vector& targets,
                                  const Vector& gradient_average, double rho, double lambda, double tau,
                                  const Vector& anchor, SolvePath path = SolvePath::Auto) {
  detail::check_strong_convexity(lambda, tau);
  return detail::assemble_ridge(jacobian, values, targets, gradient_average, rho, lambda, tau, anchor, path);
}

namespace detail {

inline bool use_low_rank(const RidgeSurrogate& s, SolvePath path) {
  if (path == SolvePath::Dense || !s.has_factor()) {
    if (path == SolvePath::LowRank) throw std::invalid_argument("low-rank solve requested without a factor");
    return false;
  }
  if (path == SolvePath::LowRank) return true;
  return s.dim() > 4 * s.factor.rows();
}

}  // namespace detail

/// (A + (lambda + tau) I)^{-1} (b + tau w_n)
inline Vector solve_ridge(const RidgeSurrogate& s, SolvePath path = SolvePath::Auto) {
  detail::check_strong_convexity(s.lambda, s.tau);
  const double shift = s.lambda + s.tau;
  Vector w;
  if (detail::use_low_rank(s, path)) {
    w = ShiftedSystem::low_rank(s.factor, shift).solve(s.rhs());
  } else if (s.has_dense()) {
    w = ShiftedSystem::dense(s.A, shift).solve(s.rhs());
  } else {
    const Matrix a = s.dense_matrix();
    w = ShiftedSystem::dense(a, shift).solve(s.rhs());
  }
  if (!w.allFinite()) throw SolverError("ridge surrogate solution is not finite");
  return w;
}

/// Largest eigenvalue of a symmetric PSD operator by power iteration.
/// A clearly negative Rayleigh quotient means the operator is not PSD.
inline double largest_eigenvalue(const std::function<Vector(const Vector&)>& apply, Index n,
                                 int max_iterations = 1000, double tolerance = 1e-9) {
  if (n == 0) return 0.0;
  std::mt19937_64 rng(0x5eed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = gauss(rng);
  v.normalize();
  double estimate = 0.0;
  for (int it = 0; it < max_iterations; ++it) {
    Vector u = apply(v);
    const double rq = v.dot(u);
    const double un = u.norm();
    if (rq < -1e-10 * std::max(1.0, un)) throw SolverError("matrix is not positive semidefinite (negative curvature)");
    if (un == 0.0) return 0.0;
    const bool done = std::abs(rq - estimate) <= tolerance * std::abs(rq);
    estimate = rq;
    if (done) break;
    v = u / un;
  }
  return estimate;
}

struct FistaOptions {
  double tolerance = 1e-10;   // max-norm change between iterates
  int max_iterations = 5000;
  double safety = 1.05;       // multiplies the power-iteration Lipschitz estimate
  bool adaptive_restart = true;
};

struct FistaResult {
  Vector w;
  int iterations = 0;
  bool converged = false;
  double lipschitz = 0.0;
};

namespace detail {

inline void soft_threshold(Vector& u, double t) {
  for (Index j = 0; j < u.size(); ++j) {
    const double v = u(j);
    u(j) = std::abs(v) <= t ? 0.0 : (v > 0.0 ? v - t : v + t);
  }
}

inline void group_soft_threshold(Vector& u, double t, const GroupSparsePenalty& g) {
  for (std::size_t p = 0; p < g.groups.size(); ++p) {
    double sq = 0.0;
    for (Index i : g.groups[p]) sq += u(i) * u(i);
    const double norm = std::sqrt(sq);
    const double cut = t * g.weights[p];
    if (norm <= cut) {
      for (Index i : g.groups[p]) u(i) = 0.0;
    } else {
      const double scale = 1.0 - cut / norm;
      for (Index i : g.groups[p]) u(i) *= scale;
    }
  }
}

}  // namespace detail

/// Minimizes w^T (A + (lambda + tau) I) w - 2 (b + tau w_n)^T w + l1_weight * R(w), where R is
/// |w|_1, or sum_p a_p |w_p| when groups are given. Here s.lambda acts as an extra ridge weight
/// (zero for a pure l1 problem). Zeros in the result come from the thresholding operator and are exact.
inline FistaResult solve_l1_fista_detailed(const RidgeSurrogate& s, double l1_weight,
                                           const GroupSparsePenalty* groups = nullptr, FistaOptions opt = {}) {
  if (l1_weight < 0.0) throw std::invalid_argument("l1 weight must be nonnegative");
  if (s.lambda < 0.0 || s.tau < 0.0) throw std::invalid_argument("lambda and tau must be nonnegative");
  if (groups) validate_groups(*groups, s.dim());
  const Index q = s.dim();
  const double mu = s.lambda + s.tau;
  const Vector h = s.rhs();
  const double top = largest_eigenvalue([&](const Vector& v) { return s.apply(v); }, q);
  FistaResult res;
  res.lipschitz = 2.0 * (top + mu) * opt.safety;
  auto prox = [&](Vector& u, double t) {
    if (groups) {
      detail::group_soft_threshold(u, t, *groups);
    } else {
      detail::soft_threshold(u, t);
    }
  };
  if (res.lipschitz == 0.0) {
    // Purely linear objective: bounded only if the threshold dominates, in which case 0 is optimal.
    Vector u = 2.0 * h;
    prox(u, l1_weight);
    if (u.lpNorm<Eigen::Infinity>() > 0.0) throw SolverError("l1 surrogate is unbounded below");
    res.w = Vector::Zero(q);
    res.converged = true;
    return res;
  }
  const double step = 1.0 / res.lipschitz;
  Vector x = (s.anchor.size() == q) ? s.anchor : Vector::Zero(q);
  prox(x, 0.0);
  Vector y = x;
  Vector x_new(q);
  double t = 1.0;
  for (int it = 1; it <= opt.max_iterations; ++it) {
    x_new = y - step * (2.0 * (s.apply(y) + mu * y) - 2.0 * h);
    prox(x_new, step * l1_weight);
    const double change = (x_new - x).lpNorm<Eigen::Infinity>();
    const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    if (opt.adaptive_restart && (y - x_new).dot(x_new - x) > 0.0) {
      y = x_new;
      t = 1.0;
    } else {
      y = x_new + ((t - 1.0) / t_new) * (x_new - x);
      t = t_new;
    }
    x.swap(x_new);
    res.iterations = it;
    if (change < opt.tolerance) {
      res.converged = true;
      break;
    }
  }
  if (!x.allFinite()) throw SolverError("FISTA iterate is not finite");
  res.w = std::move(x);
  return res;
}

inline Vector solve_l1_fista(const RidgeSurrogate& s, double l1_weight, const GroupSparsePenalty* groups = nullptr,
                             FistaOptions opt = {}) {
  return solve_l1_fista_detailed(s, l1_weight, groups, opt).w;
}

/// Linear and quadratic coefficients of the linearized manifold penalty
///   r~(w) = scale * sum_{i in anchors} (1/k) sum_{j in N_i} q_ij (Delta_ij + J_ij^T w)^2
///         = |factor w|^2 - 2 linear^T w + constant,
/// with J_ij = J_i - J_j and Delta_ij = f(x_i; w_n) - f(x_j; w_n) - J_ij^T w_n.
struct ManifoldTerms {
  Matrix factor;
  Vector linear;
  double constant = 0.0;

  Matrix quadratic() const { return factor.transpose() * factor; }
  double value(const Vector& w) const { return (factor * w).squaredNorm() - 2.0 * linear.dot(w) + constant; }
  Vector gradient(const Vector& w) const { return 2.0 * (factor.transpose() * (factor * w)) - 2.0 * linear; }
};

inline ManifoldTerms manifold_terms(const MlpModel& model, const ManifoldPenalty& penalty,
                                    const std::vector<Index>& anchors, double scale = 1.0) {
  if (!penalty.graph || !penalty.inputs) throw std::invalid_argument("manifold penalty has no neighbour data");
  const NeighborGraph& g = *penalty.graph;
  const Matrix& x = *penalty.inputs;
  const Index q = model.parameter_count();
  const Vector& wn = model.weights();

  std::unordered_map<Index, std::pair<double, Vector>> cache;
  detail::Workspace ws(model.topology());
  auto eval = [&](Index i) -> const std::pair<double, Vector>& {
    auto it = cache.find(i);
    if (it != cache.end()) return it->second;
    Vector jac(q);
    double f = detail::forward_pass(model, x.row(i).transpose(), ws);
    detail::backward_pass(model, ws, jac.data());
    if (model.head() == OutputHead::Sigmoid) {
      f = sigmoid(f);
      jac *= f * (1.0 - f);
    }
    return cache.emplace(i, std::pair{f, std::move(jac)}).first->second;
  };

  Index rows = 0;
  for (Index i : anchors) {
    if (i < 0 || i >= g.size()) throw std::out_of_range("manifold anchor " + std::to_string(i) + " has no neighbour data");
    rows += static_cast<Index>(g.adjacency[static_cast<std::size_t>(i)].size());
  }
  ManifoldTerms t;
  t.factor = Matrix::Zero(rows, q);
  t.linear = Vector::Zero(q);
  Index r = 0;
  for (Index i : anchors) {
    for (const auto& [j, w_ij] : g.adjacency[static_cast<std::size_t>(i)]) {
      const auto& [fi, ji] = eval(i);
      const auto& [fj, jj] = eval(j);
      const double c = scale * w_ij / static_cast<double>(g.k);
      const Vector diff = ji - jj;
      const double delta = (fi - fj) - diff.dot(wn);
      t.factor.row(r++) = std::sqrt(c) * diff.transpose();
      t.linear.noalias() -= (c * delta) * diff;
      t.constant += c * delta * delta;
    }
  }
  return t;
}

/// Adds weight * (|F w|^2 - 2 l^T w) to a ridge surrogate.
inline void add_manifold(RidgeSurrogate& s, const ManifoldTerms& t, double weight) {
  detail::require_dim(t.linear.size(), s.dim(), "manifold term length");
  if (t.factor.rows() > 0) {
    Matrix scaled = std::sqrt(weight) * t.factor;
    if (s.has_dense()) s.A.noalias() += scaled.transpose() * scaled;
    if (s.has_factor()) {
      Matrix stacked(s.factor.rows() + scaled.rows(), s.dim());
      stacked << s.factor, scaled;
      s.factor = std::move(stacked);
    } else if (!s.has_dense()) {
      s.factor = std::move(scaled);
    }
  }
  s.b += weight * t.linear;
}

enum class LogisticPenalty { L2, L1 };

/// Surrogate for the cross-entropy loss with a sigmoid head: the pre-squash output is
/// linearized and the sigmoid + cross-entropy composition is kept exact.
///   Phi(w) = (rho/L) sum_i ce(y_i, sigmoid(z_i + J_i^T (w - w_n))) + lambda r(w)
///            + (1 - rho) d_n^T (w - w_n) + tau |w - w_n|^2 [+ |E w|^2 - 2 e^T w]
/// with r = 0.5 |w|^2 (L2) or |w|_1 (L1).
struct LogisticSurrogate {
  Vector logits;
  Matrix jacobian;
  Vector targets;
  double rho = 1.0;
  double lambda = 0.0;
  double tau = 0.0;
  Vector gradient_average;
  Vector anchor;
  LogisticPenalty penalty = LogisticPenalty::L2;
  Matrix extra_factor;  // optional
  Vector extra_linear;  // optional

  Index dim() const { return anchor.size(); }
  Index batch() const { return logits.size(); }
  bool has_extra() const { return extra_factor.rows() > 0 && extra_factor.cols() == dim(); }

  Vector linear_logits(const Vector& w) const { return logits + jacobian * (w - anchor); }

  double loss_part(const Vector& w) const {
    const Vector z = linear_logits(w);
    double total = 0.0;
    for (Index i = 0; i < z.size(); ++i) total += cross_entropy_from_logit(targets(i), z(i));
    return rho / static_cast<double>(batch()) * total + (1.0 - rho) * gradient_average.dot(w - anchor);
  }

  /// Gradient of the loss part and the (1 - rho) d_n term only.
  Vector loss_gradient(const Vector& w) const {
    const Vector z = linear_logits(w);
    Vector resid(z.size());
    for (Index i = 0; i < z.size(); ++i) resid(i) = sigmoid(z(i)) - targets(i);
    Vector g = (rho / static_cast<double>(batch())) * (jacobian.transpose() * resid);
    g += (1.0 - rho) * gradient_average;
    return g;
  }

  /// Everything except lambda * r.
  double smooth_value(const Vector& w) const {
    double v = loss_part(w) + tau * (w - anchor).squaredNorm();
    if (has_extra()) v += (extra_factor * w).squaredNorm() - 2.0 * extra_linear.dot(w);
    return v;
  }

  Vector smooth_gradient(const Vector& w) const {
    Vector g = loss_gradient(w) + 2.0 * tau * (w - anchor);
    if (has_extra()) g += 2.0 * (extra_factor.transpose() * (extra_factor * w)) - 2.0 * extra_linear;
    return g;
  }

  double objective(const Vector& w) const {
    const double r = penalty == LogisticPenalty::L2 ? 0.5 * w.squaredNorm() : w.lpNorm<1>();
    return smooth_value(w) + lambda * r;
  }
};

inline LogisticSurrogate build_logistic(const Linearization& pre_squash, const Vector& targets,
                                        const Vector& gradient_average, double rho, double lambda, double tau,
                                        LogisticPenalty penalty = LogisticPenalty::L2) {
  detail::check_mixing(rho);
  if (lambda < 0.0 || tau < 0.0) throw std::invalid_argument("lambda and tau must be nonnegative");
  detail::require_dim(targets.size(), pre_squash.values.size(), "targets");
  detail::require_dim(gradient_average.size(), pre_squash.jacobian.cols(), "gradient average length");
  for (Index i = 0; i < targets.size(); ++i) {
    if (targets(i) != 0.0 && targets(i) != 1.0) throw std::domain_error("logistic surrogate needs {0,1} targets");
  }
  LogisticSurrogate s;
  s.logits = pre_squash.values;
  s.jacobian = pre_squash.jacobian;
  s.targets = targets;
  s.rho = rho;
  s.lambda = lambda;
  s.tau = tau;
  s.gradient_average = gradient_average;
  s.anchor = pre_squash.anchor;
  s.penalty = penalty;
  if (!s.logits.allFinite() || !s.jacobian.allFinite()) throw NumericalError("non-finite logistic linearization");
  return s;
}

struct LogisticOptions {
  double gradient_tolerance = 1e-8;
  int max_newton_iterations = 200;
  int max_halvings = 50;
  int max_prox_iterations = 20000;
};

namespace detail {

inline Vector solve_logistic_newton(const LogisticSurrogate& s, const LogisticOptions& opt) {
  const double c = s.lambda + 2.0 * s.tau;
  if (!(c > 0.0)) throw std::invalid_argument("surrogate not strongly convex (lambda + 2 tau must be > 0)");
  const Index l = s.batch();
  const Index extra = s.has_extra() ? s.extra_factor.rows() : 0;
  const double scale = s.rho / static_cast<double>(l);
  Vector w = s.anchor;
  double value = s.objective(w);
  Matrix g_mat(l + extra, s.dim());
  if (extra) g_mat.bottomRows(extra) = std::sqrt(2.0) * s.extra_factor;
  for (int it = 0; it < opt.max_newton_iterations; ++it) {
    const Vector grad = s.smooth_gradient(w) + s.lambda * w;
    if (grad.norm() <= opt.gradient_tolerance) return w;
    // Hessian = c I + G^T G with G = [diag(sqrt(scale * p (1 - p))) J ; sqrt(2) E].
    const Vector z = s.linear_logits(w);
    for (Index i = 0; i < l; ++i) {
      const double p = sigmoid(z(i));
      g_mat.row(i) = std::sqrt(scale * p * (1.0 - p)) * s.jacobian.row(i);
    }
    Matrix k = g_mat * g_mat.transpose();
    k.diagonal().array() += c;
    Eigen::LLT<Matrix> llt(k);
    if (llt.info() != Eigen::Success) throw SolverError("Newton system factorization failed");
    const Vector gg = g_mat * grad;
    const Vector dir = -(grad - g_mat.transpose() * llt.solve(gg)) / c;
    const double slope = grad.dot(dir);
    if (!(slope < 0.0)) {
      if (grad.norm() <= 10.0 * opt.gradient_tolerance) return w;
      throw SolverError("Newton direction is not a descent direction");
    }
    double step = 1.0;
    bool accepted = false;
    for (int h = 0; h <= opt.max_halvings; ++h) {
      const Vector trial = w + step * dir;
      const double tv = s.objective(trial);
      if (tv <= value + 1e-4 * step * slope) {
        w = trial;
        value = tv;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) throw SolverError("logistic line search failed after " + std::to_string(opt.max_halvings) + " halvings");
  }
  const Vector grad = s.smooth_gradient(w) + s.lambda * w;
  if (grad.norm() > opt.gradient_tolerance) throw SolverError("Newton iteration limit reached");
  return w;
}

inline Vector solve_logistic_prox(const LogisticSurrogate& s, const LogisticOptions& opt) {
  const double scale = s.rho / static_cast<double>(s.batch());
  double lip = 0.25 * scale * largest_eigenvalue([&](const Vector& v) { return Vector(s.jacobian.transpose() * (s.jacobian * v)); },
                                                 s.dim());
  if (s.has_extra()) {
    lip += 2.0 * largest_eigenvalue(
                     [&](const Vector& v) { return Vector(s.extra_factor.transpose() * (s.extra_factor * v)); }, s.dim());
  }
  lip = 1.05 * (lip + 2.0 * s.tau);
  if (!(lip > 0.0)) throw std::invalid_argument("logistic surrogate has no curvature");
  const double step = 1.0 / lip;
  Vector x = s.anchor;
  Vector y = x;
  double t = 1.0;
  for (int it = 0; it < opt.max_prox_iterations; ++it) {
    Vector x_new = y - step * s.smooth_gradient(y);
    soft_threshold(x_new, step * s.lambda);
    if (lip * (y - x_new).norm() <= opt.gradient_tolerance) return x_new;
    const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    if ((y - x_new).dot(x_new - x) > 0.0) {
      y = x_new;
      t = 1.0;
    } else {
      y = x_new + ((t - 1.0) / t_new) * (x_new - x);
      t = t_new;
    }
    x = std::move(x_new);
  }
  throw SolverError("proximal gradient did not reach the gradient-mapping tolerance");
}

}  // namespace detail

/// Damped Newton (L2 penalty) or accelerated proximal gradient (L1 penalty).
inline Vector solve_logistic(const LogisticSurrogate& s, LogisticOptions opt = {}) {
  Vector w = s.penalty == LogisticPenalty::L2 ? detail::solve_logistic_newton(s, opt) : detail::solve_logistic_prox(s, opt);
  if (!w.allFinite()) throw SolverError("logistic surrogate solution is not finite");
  return w;
}

}  // namespace stosca
