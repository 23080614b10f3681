#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "bspde/lattice.hpp"
#include "bspde/oracles.hpp"

using namespace bspde;

namespace {

PathTree tree_of(double horizon, int n, int dp, TreeMode mode) {
  return PathTree::build(TimeGrid::make(horizon, n), dp, mode);
}

std::vector<double> child_values(const PathTree& tree, auto&& fn) {
  std::vector<double> v;
  for (int s = 0; s < tree.branching(); ++s) v.push_back(fn(tree.increment(s)));
  return v;
}

}  // namespace

TEST(TimeGrid, LastTimeIsHorizonExactly) {
  const auto g = TimeGrid::make(0.3, 7);
  EXPECT_EQ(g.time(7), 0.3);
  EXPECT_DOUBLE_EQ(g.time(3), 3 * 0.3 / 7);
}

TEST(PathTree, FullTreeSizes) {
  const auto t = tree_of(1.0, 3, 2, TreeMode::full);
  EXPECT_EQ(t.branching(), 4);
  EXPECT_EQ(t.level_size(3), 64);
  EXPECT_EQ(t.total_nodes(), 1 + 4 + 16 + 64);
}

TEST(PathTree, RecombiningSizes) {
  const auto t = tree_of(1.0, 10, 1, TreeMode::recombining);
  EXPECT_EQ(t.branching(), 2);
  EXPECT_EQ(t.level_size(10), 11);
  EXPECT_EQ(t.total_nodes(), 66);
}

TEST(PathTree, BudgetIsEnforced) {
  EXPECT_THROW(tree_of(1.0, 12, 2, TreeMode::full), BudgetError);
  EXPECT_NO_THROW(tree_of(1.0, 11, 2, TreeMode::full));
  try {
    tree_of(1.0, 23, 1, TreeMode::full);
    FAIL();
  } catch (const BudgetError& e) {
    EXPECT_EQ(e.budget(), kFullTreeExponentBudget);
  }
}

TEST(PathTree, RecombiningNeedsOneComponent) {
  EXPECT_THROW(tree_of(1.0, 4, 2, TreeMode::recombining), UnsupportedMode);
}

TEST(PathTree, FlatIndexRoundTrip) {
  for (auto mode : {TreeMode::full, TreeMode::recombining}) {
    const auto t = tree_of(1.0, 5, 1, mode);
    for (std::int64_t i = 0; i < t.total_nodes(); ++i) EXPECT_EQ(t.flat_index(t.node_at(i)), i);
  }
}

TEST(PathTree, WienerIsSumOfIncrements) {
  const auto t = tree_of(1.0, 4, 2, TreeMode::full);
  const NodeId a = t.child(t.child(t.root(), 1), 2);
  EXPECT_TRUE(t.wiener(a).isApprox(t.increment(1) + t.increment(2)));
}

TEST(PathTree, PathProbabilitiesSumToOne) {
  for (auto mode : {TreeMode::full, TreeMode::recombining}) {
    const auto t = tree_of(1.0, 6, 1, mode);
    for (int n = 0; n <= 6; ++n) {
      double s = 0;
      for (std::int64_t j = 0; j < t.level_size(n); ++j) s += t.path_probability({n, j});
      EXPECT_NEAR(s, 1.0, 1e-14);
    }
  }
}

TEST(PathTree, RecombiningParentsAreConsistent) {
  const auto t = tree_of(1.0, 5, 1, TreeMode::recombining);
  for (int n = 1; n <= 5; ++n) {
    for (std::int64_t j = 0; j < t.level_size(n); ++j) {
      for (const auto& link : t.parents({n, j})) EXPECT_EQ(t.child(link.parent, link.slot), (NodeId{n, j}));
    }
  }
}

TEST(ConditionalExpectation, SpecExamples) {
  const auto t = tree_of(0.25, 4, 1, TreeMode::full);
  const double dt = t.dt();
  EXPECT_DOUBLE_EQ(conditional_expectation<double>(t, std::vector<double>{1.0, 3.0}), 2.0);
  EXPECT_DOUBLE_EQ(conditional_expectation<double>(t, child_values(t, [](auto& w) { return w(0); })), 0.0);
  EXPECT_NEAR(conditional_expectation<double>(t, child_values(t, [](auto& w) { return w(0) * w(0); })), dt, 1e-16);
}

TEST(ConditionalExpectation, MissingChildThrows) {
  const auto t = tree_of(1.0, 2, 2, TreeMode::full);
  EXPECT_THROW(conditional_expectation<double>(t, std::vector<double>{1.0, 2.0}), IncompleteField);
  EXPECT_THROW(martingale_representation<double>(t, std::vector<double>{1.0}), IncompleteField);
}

TEST(MartingaleRepresentation, SpecExamples) {
  const auto t = tree_of(0.5, 3, 2, TreeMode::full);
  const auto q = martingale_representation<double>(t, child_values(t, [](auto& w) { return w(0); }));
  EXPECT_NEAR(q[0], 1.0, 1e-14);
  EXPECT_NEAR(q[1], 0.0, 1e-14);
  const auto c = martingale_representation<double>(t, child_values(t, [](auto&) { return 4.0; }));
  EXPECT_NEAR(c[0], 0.0, 1e-14);
  const auto sq = martingale_representation<double>(t, child_values(t, [](auto& w) { return w(0) * w(0); }));
  EXPECT_NEAR(sq[0], 0.0, 1e-14);
}

TEST(TreeExpectation, SpecExamples) {
  for (auto mode : {TreeMode::full, TreeMode::recombining}) {
    const auto t = tree_of(0.8, 6, 1, mode);
    const int last = t.n_steps();
    std::vector<double> c(t.level_size(last), 2.5), w(t.level_size(last)), w2(t.level_size(last));
    for (std::int64_t j = 0; j < t.level_size(last); ++j) {
      const double x = t.wiener({last, j})(0);
      w[j] = x;
      w2[j] = x * x;
    }
    EXPECT_NEAR(tree_expectation<double>(t, last, c), 2.5, 1e-14);
    EXPECT_NEAR(tree_expectation<double>(t, last, w), 0.0, 1e-14);
    EXPECT_NEAR(tree_expectation<double>(t, last, w2), 0.8, 1e-14);
  }
}

TEST(TreeExpectation, WrongSizeThrows) {
  const auto t = tree_of(1.0, 3, 1, TreeMode::full);
  EXPECT_THROW(tree_expectation<double>(t, 2, std::vector<double>(3)), IncompleteField);
}

TEST(MomentIdentities, EveryNodeByEnumeration) {
  const auto t = tree_of(0.6, 3, 2, TreeMode::full);
  for (int k = 0; k < 2; ++k) {
    EXPECT_NEAR(conditional_expectation<double>(t, child_values(t, [k](auto& w) { return w(k); })), 0.0, 1e-16);
    for (int l = 0; l < 2; ++l) {
      const double m = conditional_expectation<double>(t, child_values(t, [k, l](auto& w) { return w(k) * w(l); }));
      EXPECT_NEAR(m, k == l ? t.dt() : 0.0, 1e-16);
    }
  }
}

TEST(RecombiningEquivalence, LevelMarkovFieldsAgree) {
  const auto full = tree_of(1.0, 8, 1, TreeMode::full);
  const auto rec = tree_of(1.0, 8, 1, TreeMode::recombining);
  auto fn = [](double w, double t) { return std::cos(w) + t * w * w * w; };
  for (int n = 0; n <= 8; ++n) {
    std::vector<double> a(full.level_size(n)), b(rec.level_size(n));
    for (std::int64_t j = 0; j < full.level_size(n); ++j) a[j] = fn(full.wiener({n, j})(0), full.time({n, j}));
    for (std::int64_t j = 0; j < rec.level_size(n); ++j) b[j] = fn(rec.wiener({n, j})(0), rec.time({n, j}));
    EXPECT_NEAR(tree_expectation<double>(full, n, a), tree_expectation<double>(rec, n, b), 1e-12);
  }
}

TEST(ExpectedPathSupremum, ModesAgreeOnLevelMarkovValues) {
  const auto full = tree_of(1.0, 7, 1, TreeMode::full);
  const auto rec = tree_of(1.0, 7, 1, TreeMode::recombining);
  NodeMap<double> a(full), b(rec);
  for (std::int64_t i = 0; i < full.total_nodes(); ++i) a.at_flat(i) = std::abs(full.wiener(full.node_at(i))(0));
  for (std::int64_t i = 0; i < rec.total_nodes(); ++i) b.at_flat(i) = std::abs(rec.wiener(rec.node_at(i))(0));
  EXPECT_NEAR(expected_path_supremum(full, a), expected_path_supremum(rec, b), 1e-12);
}

TEST(ExpectedPathSupremum, MatchesDirectEnumeration) {
  const auto t = tree_of(1.0, 4, 1, TreeMode::full);
  NodeMap<double> v(t);
  for (std::int64_t i = 0; i < t.total_nodes(); ++i) v.at_flat(i) = std::sin(3.0 * i);
  double direct = 0.0;
  const int last = t.n_steps();
  for (std::int64_t leaf = 0; leaf < t.level_size(last); ++leaf) {
    double best = -1e300;
    std::int64_t j = leaf;
    for (int n = last; n >= 0; --n) {
      best = std::max(best, v[{n, j}]);
      j /= t.branching();
    }
    direct += best * t.path_probability({last, leaf});
  }
  EXPECT_NEAR(expected_path_supremum(t, v), direct, 1e-13);
}

TEST(BruteForceLeafExpectation, MatchesBackwardTower) {
  const auto t = tree_of(1.0, 5, 1, TreeMode::full);
  std::vector<double> leaves(t.level_size(5));
  for (std::size_t j = 0; j < leaves.size(); ++j) leaves[j] = std::cos(1.7 * j);
  const auto direct = brute_force_leaf_expectation<double>(t, leaves);
  NodeMap<double> tower(t);
  for (std::int64_t j = 0; j < t.level_size(5); ++j) tower[{5, j}] = leaves[j];
  for (int n = 4; n >= 0; --n) {
    for (std::int64_t j = 0; j < t.level_size(n); ++j) {
      std::vector<double> ch;
      for (int s = 0; s < 2; ++s) ch.push_back(tower[t.child({n, j}, s)]);
      tower[{n, j}] = conditional_expectation<double>(t, ch);
    }
  }
  for (std::int64_t i = 0; i < t.total_nodes(); ++i) EXPECT_NEAR(direct.at_flat(i), tower.at_flat(i), 1e-14);
}
