#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "stosca/objective.hpp"

using namespace stosca;

TEST(Loss, Values) {
  EXPECT_EQ(loss_value(LossKind::Squared, 0.3, 0.3), 0.0);
  EXPECT_DOUBLE_EQ(loss_value(LossKind::Squared, 1.0, 0.5), 0.25);
  EXPECT_NEAR(loss_value(LossKind::CrossEntropy, 1.0, 0.5), std::log(2.0), 1e-15);
  EXPECT_THROW(loss_value(LossKind::CrossEntropy, 1.0, 1.0), std::domain_error);
  EXPECT_THROW(loss_value(LossKind::CrossEntropy, 1.0, 0.0), std::domain_error);
  EXPECT_THROW(loss_value(LossKind::CrossEntropy, 0.5, 0.4), std::domain_error);
}

TEST(Loss, CrossEntropyNonnegativeAndLogitForm) {
  for (double y : {0.0, 1.0}) {
    for (double f = 0.01; f < 1.0; f += 0.01) {
      const double v = loss_value(LossKind::CrossEntropy, y, f);
      EXPECT_GT(v, 0.0);
      const double z = std::log(f / (1.0 - f));
      EXPECT_NEAR(cross_entropy_from_logit(y, z), v, 1e-12);
    }
    // approaches zero as f -> y
    const double near = y == 1.0 ? 1.0 - 1e-9 : 1e-9;
    EXPECT_LT(loss_value(LossKind::CrossEntropy, y, near), 1e-8);
  }
}

TEST(Regularizer, Examples) {
  EXPECT_DOUBLE_EQ(regularizer_value(Regularizer::l2(1.0), Vector{{3.0, 4.0}}), 12.5);
  EXPECT_DOUBLE_EQ(regularizer_value(Regularizer::l1(1.0), Vector{{3.0, -4.0}}), 7.0);
  const Regularizer g = Regularizer::group_sparse(1.0, {{0, 1}});
  EXPECT_NEAR(regularizer_value(g, Vector{{3.0, 4.0}}), std::sqrt(2.0) * 5.0, 1e-12);
  EXPECT_NEAR(std::sqrt(2.0) * 5.0, 7.0711, 1e-4);
  const Regularizer en = Regularizer::elastic_net(1.0, 0.25);
  EXPECT_DOUBLE_EQ(regularizer_value(en, Vector{{3.0, -4.0}}), 0.25 * 7.0 + 0.75 * 12.5);
}

TEST(Regularizer, GroupErrors) {
  EXPECT_THROW(regularizer_value(Regularizer::group_sparse(1.0, {{0, 5}}), Vector::Zero(3)), std::out_of_range);
  GroupSparsePenalty p{{{0, 1}, {1, 2}}, {1.0, 1.0}};
  EXPECT_THROW(validate_groups(p, 3), std::invalid_argument);
  GroupSparsePenalty out{{{0, 3}}, {1.0}};
  EXPECT_THROW(validate_groups(out, 3), std::out_of_range);
  const Regularizer g = Regularizer::group_sparse(1.0, {{0, 1}, {2}});
  EXPECT_THROW(regularizer_value(g, Vector{{1.0, 2.0}}), std::out_of_range);
}

TEST(Regularizer, ConvexMidpoint) {
  std::mt19937_64 rng(3);
  const std::vector<Regularizer> regs{Regularizer::l2(1.0), Regularizer::l1(1.0), Regularizer::elastic_net(1.0, 0.4),
                                      Regularizer::group_sparse(1.0, {{0, 1, 2}, {3}, {4, 5}})};
  for (const auto& reg : regs) {
    EXPECT_TRUE(reg.convex());
    for (int i = 0; i < 1000; ++i) {
      const Vector a = oracle::random_vector(6, rng);
      const Vector b = oracle::random_vector(6, rng);
      EXPECT_LE(regularizer_value(reg, Vector(0.5 * (a + b))),
                0.5 * (regularizer_value(reg, a) + regularizer_value(reg, b)) + 1e-12);
    }
  }
}

TEST(Regularizer, BlockSeparable) {
  std::mt19937_64 rng(4);
  const Vector w = oracle::random_vector(6, rng);
  const std::vector<std::vector<Index>> blocks{{0, 1, 2}, {3}, {4, 5}};
  const std::vector<Regularizer> regs{Regularizer::l2(1.0), Regularizer::l1(1.0), Regularizer::elastic_net(1.0, 0.4),
                                      Regularizer::group_sparse(1.0, {{0, 1}, {2}, {3}, {4, 5}})};
  for (const auto& reg : regs) {
    double total = 0.0;
    for (const auto& b : blocks) total += regularizer_block_value(reg, w, b);
    EXPECT_NEAR(total, regularizer_value(reg, w), 1e-13);
  }
}

TEST(Regularizer, SubgradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const Vector w = oracle::random_vector(6, rng);
  const std::vector<Regularizer> regs{Regularizer::l2(1.0), Regularizer::l1(1.0), Regularizer::elastic_net(1.0, 0.4),
                                      Regularizer::group_sparse(1.0, {{0, 1}, {2, 3, 4}, {5}})};
  for (const auto& reg : regs) {
    const Vector fd = oracle::fd_gradient([&](const Vector& v) { return regularizer_value(reg, v); }, w);
    EXPECT_LT(oracle::max_rel_error(regularizer_subgradient(reg, w), fd), 1e-6);
  }
}

TEST(Objective, Examples) {
  const Topology t({2, 3, 1});
  const MlpModel m = oracle::random_model({2, 3, 1}, 8);
  const MiniBatch b = oracle::random_batch(10, 2, 9);
  const Vector f = predict(m, b.inputs);
  EXPECT_EQ(objective_value(m, b.inputs, f, LossKind::Squared, Regularizer::l2(0.0)), 0.0);

  const Matrix one = b.inputs.topRows(1);
  const Vector y1 = b.targets.head(1);
  EXPECT_DOUBLE_EQ(objective_value(m, one, y1, LossKind::Squared, Regularizer::l2(0.0)),
                   loss_value(LossKind::Squared, y1(0), f(0)));

  const Regularizer reg = Regularizer::l1(0.03);
  double total = 0.0;
  for (Index i = 0; i < b.size(); ++i) total += loss_value(LossKind::Squared, b.targets(i), f(i));
  EXPECT_NEAR(objective_value(m, b.inputs, b.targets, LossKind::Squared, reg),
              total / 10.0 + 0.03 * m.weights().lpNorm<1>(), 1e-12);

  const MlpModel mc = oracle::random_model({2, 3, 1}, 8, 0.5, OutputHead::Sigmoid);
  const MiniBatch bc = oracle::random_batch(10, 2, 9, true);
  const Vector p = predict(mc, bc.inputs);
  double ce = 0.0;
  for (Index i = 0; i < bc.size(); ++i) ce += loss_value(LossKind::CrossEntropy, bc.targets(i), p(i));
  EXPECT_NEAR(objective_value(mc, bc.inputs, bc.targets, LossKind::CrossEntropy, Regularizer::l2(0.1)),
              ce / 10.0 + 0.1 * 0.5 * mc.weights().squaredNorm(), 1e-12);
}

TEST(KnnGraph, IdenticalPoints) {
  Matrix x(2, 2);
  x << 0.3, 0.1, 0.3, 0.1;
  const NeighborGraph g = build_knn_graph(x, 1, 0.5);
  EXPECT_EQ(g.weight(0, 1), 1.0);
  EXPECT_EQ(g.weight(1, 0), 1.0);
}

TEST(KnnGraph, CollinearNeighbour) {
  Matrix x(3, 1);
  x << 0.0, 1.0, 10.0;
  const NeighborGraph g = build_knn_graph(x, 1, 1.0);
  EXPECT_EQ(g.knn[1], std::vector<Index>{0});
  EXPECT_EQ(g.knn[2], std::vector<Index>{1});
  EXPECT_NEAR(g.weight(0, 1), std::exp(-0.5), 1e-15);
}

TEST(KnnGraph, TiesGoToLowerIndex) {
  Matrix x(3, 1);
  x << 0.0, -1.0, 1.0;
  const NeighborGraph g = build_knn_graph(x, 1, 1.0);
  EXPECT_EQ(g.knn[0], std::vector<Index>{1});
}

TEST(KnnGraph, MatchesBruteForce) {
  std::mt19937_64 rng(10);
  const Matrix x = oracle::random_matrix(20, 3, rng);
  const Index k = 4;
  const double sigma = 0.8;
  const NeighborGraph g = build_knn_graph(x, k, sigma);
  std::vector<std::vector<double>> q(20, std::vector<double>(20, 0.0));
  for (Index i = 0; i < 20; ++i) {
    std::vector<std::pair<double, Index>> all;
    for (Index j = 0; j < 20; ++j) {
      if (j != i) all.emplace_back((x.row(i) - x.row(j)).squaredNorm(), j);
    }
    std::sort(all.begin(), all.end());
    std::set<Index> expect;
    for (Index r = 0; r < k; ++r) {
      expect.insert(all[static_cast<std::size_t>(r)].second);
      const Index j = all[static_cast<std::size_t>(r)].second;
      q[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          std::exp(-all[static_cast<std::size_t>(r)].first / (2.0 * sigma * sigma));
    }
    const auto& got = g.knn[static_cast<std::size_t>(i)];
    EXPECT_EQ(std::set<Index>(got.begin(), got.end()), expect);
  }
  for (Index i = 0; i < 20; ++i) {
    for (Index j = 0; j < 20; ++j) {
      const double sym = std::max(q[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)],
                                  q[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)]);
      EXPECT_NEAR(g.weight(i, j), sym, 1e-15);
      EXPECT_EQ(g.weight(i, j), g.weight(j, i));
      EXPECT_GE(g.weight(i, j), 0.0);
    }
  }
}

TEST(KnnGraph, Errors) {
  const Matrix x = Matrix::Zero(3, 2);
  EXPECT_THROW(build_knn_graph(x, 3, 1.0), std::invalid_argument);
  EXPECT_THROW(build_knn_graph(x, 1, 0.0), std::invalid_argument);
}

TEST(Manifold, ValueAndZeroForConstantNetwork) {
  std::mt19937_64 rng(12);
  const Matrix x = oracle::random_matrix(15, 3, rng, 0.3);
  const Regularizer reg = Regularizer::manifold(1.0, build_knn_graph(x, 3, 0.5), x);
  EXPECT_FALSE(reg.convex());
  const MlpModel m = oracle::random_model({3, 4, 1}, 13);
  const auto& p = std::get<ManifoldPenalty>(reg.penalty);
  const Vector f = predict(m, x);
  double expect = 0.0;
  for (Index i = 0; i < 15; ++i) {
    double row = 0.0;
    for (const auto& [j, q] : p.graph->adjacency[static_cast<std::size_t>(i)]) row += q * (f(i) - f(j)) * (f(i) - f(j));
    expect += row / 3.0;
  }
  EXPECT_NEAR(regularizer_value(reg, m), expect, 1e-14);
  EXPECT_THROW(regularizer_value(reg, m.weights()), std::invalid_argument);

  // only biases nonzero: the network is constant in x
  Vector w = Vector::Zero(m.parameter_count());
  const Topology& t = m.topology();
  for (Index k = 0; k < t.num_layers(); ++k) w.segment(t.bias_offset(k), t.fan_out(k)).setConstant(0.3);
  EXPECT_EQ(regularizer_value(reg, m.with_weights(w)), 0.0);
}

TEST(Manifold, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(14);
  const Matrix x = oracle::random_matrix(12, 3, rng, 0.3);
  const Regularizer reg = Regularizer::manifold(1.0, build_knn_graph(x, 2, 0.5), x);
  const auto& p = std::get<ManifoldPenalty>(reg.penalty);
  for (OutputHead head : {OutputHead::Identity, OutputHead::Sigmoid}) {
    const MlpModel m = oracle::random_model({3, 4, 1}, 15, 0.7, head);
    std::vector<Index> all(12);
    std::iota(all.begin(), all.end(), Index{0});
    const Vector g = manifold_gradient(p, m, all);
    const Vector fd = oracle::fd_gradient([&](const Vector& w) { return regularizer_value(reg, m.with_weights(w)); },
                                          m.weights());
    EXPECT_LT(oracle::max_rel_error(g, fd), 1e-5);
  }
}

TEST(MedianDistance, SmallCase) {
  Matrix x(3, 1);
  x << 0.0, 1.0, 3.0;
  EXPECT_DOUBLE_EQ(median_pairwise_distance(x), 2.0);
  Matrix y(4, 1);
  y << 0.0, 1.0, 3.0, 7.0;  // distances 1,2,3,4,6,7
  EXPECT_DOUBLE_EQ(median_pairwise_distance(y), 3.5);
}
