#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "stosca/sca_engine.hpp"

using namespace stosca;

TEST(StepSize, Examples) {
  EXPECT_NEAR(step_size_next(0.5, 0.01), 0.4975, 1e-15);
  EXPECT_NEAR(step_size_next(0.9, 0.01), 0.89190, 1e-15);
  EXPECT_EQ(step_size_next(0.3, 0.0), 0.3);
  EXPECT_LT(step_size_next(0.3, 1e-12), 0.3);
  EXPECT_THROW(step_size_next(0.5, 2.0), std::invalid_argument);
  EXPECT_THROW(step_size_next(0.5, 3.0), std::invalid_argument);
  EXPECT_THROW(step_size_next(0.0, 0.1), std::invalid_argument);
}

TEST(StepSize, SequencesArePositiveAndDecreasing) {
  for (const Sequence& s : {Sequence::quadratic(0.5, 0.01), Sequence::quadratic(0.9, 0.5), Sequence::power(1.0, 0.6)}) {
    const auto v = s.generate(5000);
    EXPECT_EQ(v.front(), s.initial);
    for (std::size_t n = 1; n < v.size(); ++n) {
      EXPECT_GT(v[n], 0.0);
      EXPECT_LT(v[n], v[n - 1]);
    }
  }
  const auto p = Sequence::power(0.8, 0.5).generate(4);
  EXPECT_DOUBLE_EQ(p[3], 0.8 / 2.0);
  EXPECT_THROW(Sequence::quadratic(1.5, 0.01).validate(), std::invalid_argument);
  EXPECT_THROW(Sequence::quadratic(0.5, 2.0).validate(), std::invalid_argument);
}

TEST(Schedule, DefaultsViolateRatioCondition) {
  const ScheduleReport rep = verify_schedule(Schedule::defaults(), 100000);
  EXPECT_FALSE(rep.ok());
  EXPECT_FALSE(rep.condition_ok("(iii) alpha/rho -> 0"));
  EXPECT_TRUE(rep.condition_ok("(i) alpha"));
  EXPECT_TRUE(rep.condition_ok("(ii) rho"));
  EXPECT_TRUE(rep.condition_ok("positive"));
  EXPECT_GT(rep.final_ratio, 0.9);
  EXPECT_FALSE(rep.violations().empty());
}

TEST(Schedule, DifferentRatesStillViolate) {
  const Schedule s{Sequence::quadratic(0.5, 0.1), Sequence::quadratic(0.9, 0.01)};
  const ScheduleReport rep = verify_schedule(s, 100000);
  EXPECT_FALSE(rep.condition_ok("(iii) alpha/rho -> 0"));
  EXPECT_NEAR(rep.final_ratio, 0.1, 0.01);
}

TEST(Schedule, ConstantRhoViolatesSquareSummability) {
  const Schedule s{Sequence::quadratic(0.5, 0.01), Sequence::constant(0.9)};
  const ScheduleReport rep = verify_schedule(s, 100000);
  EXPECT_FALSE(rep.condition_ok("(ii) rho"));
  EXPECT_TRUE(rep.condition_ok("(iii) alpha/rho -> 0"));
}

TEST(Schedule, CompliantPairPasses) {
  const Schedule s{Sequence::power(0.5, 1.0), Sequence::power(0.9, 0.6)};
  const ScheduleReport rep = verify_schedule(s, 100000);
  EXPECT_TRUE(rep.ok()) << (rep.violations().empty() ? "" : rep.violations().front());
  EXPECT_NEAR(rep.alpha_tail_exponent, 1.0, 1e-6);
  EXPECT_NEAR(rep.rho_tail_exponent, 0.6, 1e-6);
}

TEST(Schedule, ShortHorizonIsReported) {
  const ScheduleReport rep = verify_schedule(Schedule::defaults(), 999);
  EXPECT_FALSE(rep.ok());
  EXPECT_FALSE(rep.condition_ok("horizon"));
  EXPECT_THROW(rep.condition_ok("nope"), std::out_of_range);
}

namespace {

struct Problem {
  Dataset data;
  MlpModel model;
};

Problem small_problem(std::uint64_t seed, Index n = 200) {
  Dataset data = synth_regression(n, 4, 0.05, seed);
  MlpModel model(Topology({4, 6, 1}), glorot_init(Topology({4, 6, 1}), seed + 1));
  return {std::move(data), std::move(model)};
}

ScaConfig base_config() {
  ScaConfig cfg;
  cfg.batch_size = 10;
  cfg.tau = 0.1;
  cfg.max_iters = 20;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST(Iteration, AlphaAndRhoExtremes) {
  const Problem p = small_problem(1);
  ScaConfig cfg = base_config();
  std::mt19937_64 rng(2);
  ScaState st = ScaState::initial(p.model.weights(), cfg);
  st.d = oracle::random_vector(st.w.size(), rng, 0.1);
  BatchSampler sampler(5);
  const MiniBatch batch = sample_minibatch(p.data, 10, sampler);

  ScaState frozen = st;
  frozen.alpha = 0.0;
  const ScaState a0 = sca_iteration(frozen, batch, p.model, cfg);
  EXPECT_EQ(a0.w, st.w);
  EXPECT_EQ(a0.n, 1);

  ScaState full = st;
  full.alpha = 1.0;
  const ScaState a1 = sca_iteration(full, batch, p.model, cfg);
  EXPECT_EQ(a1.w, a1.w_hat);

  ScaState track = st;
  track.rho = 1.0;
  const ScaState r1 = sca_iteration(track, batch, p.model, cfg);
  EXPECT_LT((r1.d - batch_gradient(p.model, batch, LossKind::Squared)).lpNorm<Eigen::Infinity>(), 1e-14);

  // schedules advance by their recurrences
  EXPECT_DOUBLE_EQ(a1.alpha, 0.99);
  EXPECT_DOUBLE_EQ(r1.rho, cfg.schedule.rho.next(1.0, 0));
}

TEST(Iteration, UpdatesFollowTheirFormulas) {
  const Problem p = small_problem(2);
  const ScaConfig cfg = base_config();
  std::mt19937_64 rng(3);
  ScaState st = ScaState::initial(p.model.weights(), cfg);
  st.d = oracle::random_vector(st.w.size(), rng, 0.1);
  BatchSampler sampler(6);
  const MiniBatch batch = sample_minibatch(p.data, 10, sampler);
  const ScaState next = sca_iteration(st, batch, p.model, cfg);
  const Vector g = batch_gradient(p.model, batch, LossKind::Squared);
  EXPECT_LT((next.w - ((1.0 - st.alpha) * st.w + st.alpha * next.w_hat)).lpNorm<Eigen::Infinity>(), 1e-15);
  EXPECT_LT((next.d - ((1.0 - st.rho) * st.d + st.rho * g)).lpNorm<Eigen::Infinity>(), 1e-14);
  EXPECT_DOUBLE_EQ(next.alpha, 0.4975);
  EXPECT_DOUBLE_EQ(next.rho, 0.8919);
  // convex combination stays in the box spanned by w_n and w_hat
  for (Index i = 0; i < st.w.size(); ++i) {
    EXPECT_GE(next.w(i), std::min(st.w(i), next.w_hat(i)) - 1e-15);
    EXPECT_LE(next.w(i), std::max(st.w(i), next.w_hat(i)) + 1e-15);
  }
}

TEST(Iteration, FirstBatchInitialization) {
  const Problem p = small_problem(3);
  ScaConfig cfg = base_config();
  cfg.d_init = GradientInit::FirstBatch;
  const ScaState st = ScaState::initial(p.model.weights(), cfg);
  BatchSampler sampler(7);
  const MiniBatch batch = sample_minibatch(p.data, 10, sampler);
  const ScaState next = sca_iteration(st, batch, p.model, cfg);
  EXPECT_LT((next.d - batch_gradient(p.model, batch, LossKind::Squared)).lpNorm<Eigen::Infinity>(), 1e-14);
}

TEST(Iteration, FailureCarriesIterationIndex) {
  const MlpModel m = oracle::random_model({3, 2, 1}, 1, 0.5, OutputHead::Sigmoid);
  MiniBatch batch = oracle::random_batch(4, 3, 2);  // real-valued targets
  ScaConfig cfg = base_config();
  cfg.loss = LossKind::CrossEntropy;
  ScaState st = ScaState::initial(m.weights(), cfg);
  st.n = 6;
  try {
    sca_iteration(st, batch, m, cfg);
    FAIL();
  } catch (const IterationError& e) {
    EXPECT_EQ(e.iteration(), 7);
    EXPECT_NE(std::string(e.what()).find("iteration 7"), std::string::npos);
  }
}

TEST(Train, ZeroIterationsReturnsInitialModel) {
  const Problem p = small_problem(4);
  ScaConfig cfg = base_config();
  cfg.max_iters = 0;
  const ScaTrainResult res = train(p.model, p.data, cfg);
  EXPECT_EQ(res.model.weights(), p.model.weights());
  EXPECT_TRUE(res.record.rows.empty());
  EXPECT_FALSE(res.record.failed);
}

TEST(Train, AffineModelReachesRidgeSolutionInOneStep) {
  const Index n = 40, dim = 3;
  const Dataset data = synth_regression(n, dim, 0.1, 8);
  const MlpModel model(Topology({dim, 1}), glorot_init(Topology({dim, 1}), 9));
  ScaConfig cfg;
  cfg.batch_size = n;
  cfg.reg = Regularizer::l2(1e-3);
  cfg.schedule = {Sequence::constant(1.0), Sequence::constant(1.0)};
  cfg.tau = 0.0;
  cfg.max_iters = 1;
  const ScaTrainResult res = train(model, data, cfg);

  // ridge regression on [x, 1]: (1/N) sum (y - x^T v - c)^2 + lambda |(v, c)|^2
  Matrix normal = Matrix::Zero(dim + 1, dim + 1);
  Vector rhs = Vector::Zero(dim + 1);
  for (Index i = 0; i < n; ++i) {
    Vector row(dim + 1);
    row << data.inputs.row(i).transpose(), 1.0;
    normal += row * row.transpose() / static_cast<double>(n);
    rhs += row * data.targets(i) / static_cast<double>(n);
  }
  normal += 1e-3 * Matrix::Identity(dim + 1, dim + 1);
  const Vector expect = oracle::conjugate_gradient([&](const Vector& v) { return Vector(normal * v); }, rhs, 1e-15);
  EXPECT_LT((res.model.weights() - expect).lpNorm<Eigen::Infinity>(), 1e-10);
}

TEST(Train, FullBatchUnitRhoIsBatchStep) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Problem p = small_problem(20 + seed, 30);
    ScaConfig cfg = base_config();
    cfg.reg = Regularizer::l2(1e-2);
    cfg.tau = 0.05;
    cfg.schedule = {Sequence::quadratic(0.5, 0.01), Sequence::constant(1.0)};
    std::mt19937_64 rng(seed);
    ScaState st = ScaState::initial(p.model.weights(), cfg);
    st.d = oracle::random_vector(st.w.size(), rng);  // irrelevant when rho = 1
    const MiniBatch all = full_batch(p.data.inputs, p.data.targets);
    const ScaState next = sca_iteration(st, all, p.model, cfg);

    const Index q = p.model.parameter_count();
    const Index nrows = all.size();
    Vector f;
    const Matrix j = weight_jacobian(p.model, all, JacobianTarget::FullOutput, &f);
    Matrix normal = 0.05 * Matrix::Identity(q, q) + 1e-2 * Matrix::Identity(q, q);
    Vector rhs = 0.05 * st.w;
    for (Index i = 0; i < nrows; ++i) {
      const double r = all.targets(i) - f(i) + j.row(i).dot(st.w);
      for (Index a = 0; a < q; ++a) {
        rhs(a) += j(i, a) * r / static_cast<double>(nrows);
        for (Index b = 0; b < q; ++b) normal(a, b) += j(i, a) * j(i, b) / static_cast<double>(nrows);
      }
    }
    const Vector w_hat = normal.ldlt().solve(rhs);
    const Vector expect = (1.0 - st.alpha) * st.w + st.alpha * w_hat;
    EXPECT_LT((next.w - expect).lpNorm<Eigen::Infinity>(), 1e-12);
  }
}

TEST(Train, GradientAverageTracksFullGradient) {
  const Dataset data = synth_regression(300, 4, 0.05, 40);
  const MlpModel model(Topology({4, 6, 1}), glorot_init(Topology({4, 6, 1}), 41));
  const MiniBatch all = full_batch(data.inputs, data.targets);
  const Vector full = batch_gradient(model, all, LossKind::Squared);
  ScaConfig cfg = base_config();
  cfg.batch_size = 20;
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ScaState st = ScaState::initial(model.weights(), cfg);
    BatchSampler sampler(seed);
    bool reached = false;
    for (int it = 0; it < 2000 && !reached; ++it) {
      st.alpha = 0.0;
      st = sca_iteration(st, sample_minibatch(data, 20, sampler), model, cfg);
      reached = (st.d - full).norm() < 0.05 * full.norm();
    }
    hits += reached;
  }
  EXPECT_GE(hits, 18);
}

TEST(Train, DeterministicForFixedSeed) {
  const Problem p = small_problem(50);
  ScaConfig cfg = base_config();
  cfg.max_iters = 15;
  const ScaTrainResult a = train(p.model, p.data, cfg);
  const ScaTrainResult b = train(p.model, p.data, cfg);
  EXPECT_TRUE(a.record.same_trajectory(b.record));
  EXPECT_EQ(a.model.weights(), b.model.weights());
  cfg.seed = 4;
  const ScaTrainResult c = train(p.model, p.data, cfg);
  EXPECT_NE(a.model.weights(), c.model.weights());
}

TEST(Train, BlockAndSparseVariantsRun) {
  const Problem p = small_problem(60);
  ScaConfig cfg = base_config();
  cfg.blocks = {3, AssignmentPolicy::RandomPerIteration, 2};
  const ScaTrainResult blocks = train(p.model, p.data, cfg);
  EXPECT_FALSE(blocks.record.failed) << blocks.record.failure;
  EXPECT_LT(blocks.record.final_objective(), blocks.record.initial_objective);

  cfg.blocks = {};
  cfg.reg = Regularizer::l1(0.05);
  cfg.tau = 0.1;
  const ScaTrainResult sparse = train(p.model, p.data, cfg);
  EXPECT_FALSE(sparse.record.failed) << sparse.record.failure;
  EXPECT_GT((sparse.state.w_hat.array() == 0.0).count(), 0);
}

TEST(Train, CostDecreasesOnSyntheticTask) {
  const Problem p = small_problem(70, 500);
  ScaConfig cfg = base_config();
  cfg.max_iters = 200;
  cfg.log_every = 10;
  const ScaTrainResult res = train(p.model, p.data, cfg);
  ASSERT_EQ(res.record.rows.size(), 20u);
  EXPECT_LT(res.record.rows.back().objective, 0.5 * res.record.initial_objective);
  EXPECT_LT(res.record.rows.back().objective, res.record.rows[1].objective);
}

TEST(Config, Validation) {
  ScaConfig cfg = base_config();
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = base_config();
  cfg.reg = Regularizer::manifold(0.1, build_knn_graph(Matrix::Identity(4, 2), 1, 1.0), Matrix::Identity(4, 2));
  cfg.tau = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = base_config();
  cfg.loss = LossKind::CrossEntropy;
  cfg.blocks.blocks = 2;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = base_config();
  cfg.schedule.alpha = Sequence::quadratic(0.0, 0.01);
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}
