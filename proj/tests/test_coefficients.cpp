#include <gtest/gtest.h>

#include <cmath>

#include "bspde/coefficients.hpp"
#include "bspde/random_fields.hpp"

using namespace bspde;

namespace {

constexpr double kPi = 3.141592653589793;

PathTree small_tree(int dp = 2) { return PathTree::build(TimeGrid::make(1.0, 2), dp, TreeMode::full); }

CoefficientFields at_root(const CoefficientSet& set, const Grid& grid, const PathTree& tree) {
  return set.sample(grid, NodeContext::at(tree, tree.root()));
}

double min_eig(const Eigen::MatrixXd& m) { return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m).eigenvalues()(0); }

std::vector<Field> matrix_fields(const Grid& g, const std::function<Eigen::Matrix2d(double, double)>& fn) {
  std::vector<Field> out(4, Field(g.size()));
  for (Eigen::Index p = 0; p < g.size(); ++p) {
    const auto m = fn(g.coordinate(p, 0), g.coordinate(p, 1));
    for (int ij = 0; ij < 4; ++ij) out[ij](p) = m(ij / 2, ij % 2);
  }
  return out;
}

}  // namespace

TEST(Counterexamples, FirstHasAlphaHalfIdentity) {
  const Grid g = Grid::make(2, kPi, 16);
  const auto tree = small_tree();
  const auto cf = at_root(builtin_counterexamples()[0], g, tree);
  const auto derived = derive(cf, g);
  for (Eigen::Index p = 0; p < g.size(); ++p) {
    EXPECT_NEAR(derived.alpha[0](p), 0.5, 1e-14);
    EXPECT_NEAR(derived.alpha[1](p), 0.0, 1e-14);
    EXPECT_NEAR(derived.alpha[3](p), 0.5, 1e-14);
  }
}

TEST(Counterexamples, MatricesMatchClosedForms) {
  const Grid g = Grid::make(2, 2.0, 8);
  const auto tree = small_tree();
  const auto sets = builtin_counterexamples();
  ASSERT_EQ(sets.size(), 3u);
  const Eigen::Index p = g.flat(3, 6);
  const double x1 = g.coordinate(p, 0), x2 = g.coordinate(p, 1);
  const double r = std::hypot(x1, x2), q = 1.0 / std::sqrt(1 + r * r);
  Eigen::Matrix2d expected[3];
  expected[0] << std::sin(x1 + x2), std::cos(x1 + x2), std::cos(x1 + x2), -std::sin(x1 + x2);
  expected[1] << q, 1.0, 0.0, -q;
  expected[2] << std::sin(r), std::cos(r), std::cos(r), -std::sin(r);
  for (int c = 0; c < 3; ++c) {
    const auto cf = at_root(sets[c], g, tree);
    EXPECT_TRUE(cf.sigma_matrix(p).isApprox(expected[c], 1e-14));
    EXPECT_TRUE(cf.a_matrix(p).isApprox(0.5 * expected[c] * expected[c].transpose(), 1e-14));
  }
}

TEST(Counterexamples, DegenerateParabolicButNotSymmetric) {
  // tolerance is 10 h^2, so the grid must resolve the weakest violation (about 0.38)
  const Grid g = Grid::make(2, kPi, 64);
  const auto tree = small_tree();
  for (const auto& set : builtin_counterexamples()) {
    const auto nodes = sample_nodes(tree, set.dependence);
    const auto rep = check_parabolicity(set, g, tree, nodes, ParabolicityMode::degenerate);
    EXPECT_TRUE(rep.passed) << set.name;
    EXPECT_NEAR(rep.min_eigenvalue, 0.0, 1e-10) << set.name;
    const auto sym = check_symmetry(at_root(set, g, tree), g);
    EXPECT_FALSE(sym.satisfied) << set.name;
    EXPECT_GT(sym.max_violation, 0.2) << set.name;
  }
}

TEST(Symmetry, FirstCounterexampleViolationIsTwo) {
  const Grid g = Grid::make(2, kPi, 64);
  const auto tree = small_tree();
  const auto sym = check_symmetry(at_root(builtin_counterexamples()[0], g, tree), g);
  EXPECT_NEAR(sym.max_violation, 2.0, 10 * g.spacing() * g.spacing());
}

TEST(Symmetry, ExactlyZeroForConstantSigmaOrOneDimension) {
  const auto tree = small_tree();
  PointCoefficients pc;
  pc.a = Eigen::Matrix2d::Identity();
  pc.b = Eigen::Vector2d::Zero();
  pc.sigma = (Eigen::Matrix2d() << 0.3, -0.2, 0.7, 0.1).finished();
  pc.nu = Eigen::Vector2d::Zero();
  const Grid g2 = Grid::make(2, 1.0, 16);
  EXPECT_EQ(check_symmetry(at_root(CoefficientSet::constant("const", pc), g2, tree), g2).max_violation, 0.0);

  const Grid g1 = Grid::make(1, kPi, 32);
  const auto one_d = CoefficientSet::from_pointwise(
      "1d", 1, 2, Dependence::spatial, [](double, std::span<const double> x, std::span<const double>, PointCoefficients& p) {
        p.a(0, 0) = 2.0;
        p.sigma(0, 0) = std::sin(x[0]);
        p.sigma(0, 1) = std::cos(2 * x[0]);
      });
  EXPECT_EQ(check_symmetry(at_root(one_d, g1, tree), g1).max_violation, 0.0);
}

TEST(Parabolicity, ViolationHasWitness) {
  const Grid g = Grid::make(2, kPi, 16);
  const auto tree = small_tree();
  auto set = builtin_counterexamples()[0];
  auto inner = set.sample;
  set.sample = [inner](const Grid& grid, const NodeContext& ctx) {
    auto cf = inner(grid, ctx);
    for (auto& a : cf.a) a.setZero();
    return cf;
  };
  const auto nodes = sample_nodes(tree, set.dependence);
  const auto rep = check_parabolicity(set, g, tree, nodes, ParabolicityMode::degenerate);
  EXPECT_FALSE(rep.passed);
  EXPECT_EQ(rep.verdict, ParabolicityVerdict::violated);
  EXPECT_NEAR(rep.min_eigenvalue, -1.0, 1e-12);
  ASSERT_TRUE(rep.witness.has_value());
  EXPECT_EQ(rep.witness->x.size(), 2u);
}

TEST(Parabolicity, SuperParabolicWithViscosity) {
  const Grid g = Grid::make(2, kPi, 16);
  const auto tree = small_tree();
  const auto set = builtin_counterexamples()[0];
  const auto nodes = sample_nodes(tree, set.dependence);
  const auto strict = check_parabolicity(set, g, tree, nodes, ParabolicityMode::super, 1e-6);
  EXPECT_FALSE(strict.passed);
  const auto viscous = check_parabolicity(set, g, tree, nodes, ParabolicityMode::super, 1e-6, 0.05);
  EXPECT_TRUE(viscous.passed);
  EXPECT_EQ(viscous.verdict, ParabolicityVerdict::super_parabolic);
  EXPECT_NEAR(viscous.delta, 0.1, 1e-10);
}

TEST(Derive, AlphaIsPsdAndATakesItOff) {
  const Grid g = Grid::make(2, kPi, 16);
  const auto tree = small_tree();
  for (const auto& set : builtin_counterexamples()) {
    const auto cf = at_root(set, g, tree);
    const auto dc = derive(cf, g);
    for (Eigen::Index p = 0; p < g.size(); ++p) {
      Eigen::Matrix2d alpha;
      alpha << dc.alpha[0](p), dc.alpha[1](p), dc.alpha[2](p), dc.alpha[3](p);
      EXPECT_GE(min_eig(alpha), -1e-12);
      for (int ij = 0; ij < 4; ++ij) EXPECT_NEAR(dc.A[ij](p), cf.a[ij](p) - dc.alpha[ij](p), 1e-15);
    }
  }
}

TEST(Derive, RejectsNonSymmetricA) {
  const Grid g = Grid::make(2, 1.0, 8);
  auto cf = CoefficientFields::zeros(g, 2);
  cf.a_at(0, 1).setConstant(0.1);
  EXPECT_THROW(derive(cf, g), DataError);
}

TEST(Derive, BtildeForFirstCounterexample) {
  // sigma' = [[c, -s], [-s, -c]] against column sums (s + c, c - s) gives btilde = (-1, 1)
  const Grid g = Grid::make(2, kPi, 128);
  const auto tree = small_tree();
  const auto dc = derive(at_root(builtin_counterexamples()[0], g, tree), g);
  EXPECT_LT((dc.btilde[0] + 1.0).abs().maxCoeff(), 1e-3);
  EXPECT_LT((dc.btilde[1] - 1.0).abs().maxCoeff(), 1e-3);
}

TEST(Oleinik, FiniteAndStableUnderRefinement) {
  double est[2];
  for (int i = 0; i < 2; ++i) {
    const Grid g = Grid::make(2, 3.0, 32 << i);
    const auto tree = small_tree();
    const auto cf = at_root(builtin_counterexamples()[1], g, tree);
    std::vector<Field> A(4);
    for (int ij = 0; ij < 4; ++ij) A[ij] = (ij == 0 || ij == 3 ? 1.5 : 0.0) - cf.a[ij];
    const std::vector<Field> probes{Field(g.coordinates(0).square() * g.coordinates(1)),
                                    Field(g.coordinates(0) * g.coordinates(1))};
    est[i] = oleinik_constant(g, A, probes, 4 << i).constant;
    EXPECT_TRUE(std::isfinite(est[i]));
    EXPECT_GT(est[i], 0.0);
  }
  EXPECT_NEAR(est[1] / est[0], 1.0, 0.2);
}

TEST(Oleinik, AddingConstantKeepsNumeratorAndNeverIncreases) {
  const Grid g = Grid::make(2, kPi, 32);
  const auto A = matrix_fields(g, [](double x, double y) {
    Eigen::Matrix2d m;
    m << 1.0 + 0.5 * std::sin(x), 0.2 * std::cos(y), 0.2 * std::cos(y), 1.0 + 0.5 * std::cos(x + y);
    return m;
  });
  auto shifted = A;
  shifted[0] += 0.7;
  shifted[3] += 0.7;
  const std::vector<Field> probes{random_smooth_field(g, 3, 1, 0), random_smooth_field(g, 3, 1, 1)};
  const auto base = oleinik_constant(g, A, probes);
  const auto more = oleinik_constant(g, shifted, probes);
  EXPECT_LE(more.constant, base.constant * (1 + 1e-12));
  // numerator only sees derivatives of A
  for (int ij = 0; ij < 4; ++ij) EXPECT_LT((d1(g, A[ij], 0) - d1(g, shifted[ij], 0)).abs().maxCoeff(), 1e-12);
}

TEST(Oleinik, RejectsIndefiniteA) {
  const Grid g = Grid::make(2, 1.0, 8);
  std::vector<Field> A{Field::Constant(64, -1.0), Field::Zero(64), Field::Zero(64), Field::Ones(64)};
  const std::vector<Field> probes{g.coordinates(0)};
  EXPECT_THROW(oleinik_constant(g, A, probes), PreconditionError);
}

TEST(SampleNodes, DependsOnDependence) {
  const auto tree = PathTree::build(TimeGrid::make(1.0, 4), 1, TreeMode::full);
  EXPECT_EQ(sample_nodes(tree, Dependence::spatial).size(), 1u);
  EXPECT_EQ(sample_nodes(tree, Dependence::time).size(), 5u);
  const auto spread = sample_nodes(tree, Dependence::path, 8);
  EXPECT_LT(spread.size(), static_cast<std::size_t>(tree.total_nodes()));
  EXPECT_EQ(spread.front(), tree.root());
  EXPECT_EQ(sample_nodes(tree, Dependence::path).size(), static_cast<std::size_t>(tree.total_nodes()));
}

TEST(EstimateBound, ConstantCoefficients) {
  const Grid g = Grid::make(1, 1.0, 16);
  const auto tree = small_tree(1);
  PointCoefficients pc;
  pc.a = Eigen::MatrixXd::Constant(1, 1, 0.4);
  pc.b = Eigen::VectorXd::Constant(1, -2.5);
  pc.c = 1.0;
  pc.sigma = Eigen::MatrixXd::Constant(1, 1, 0.3);
  pc.nu = Eigen::VectorXd::Constant(1, 0.1);
  const auto set = CoefficientSet::constant("c", pc);
  const auto nodes = sample_nodes(tree, set.dependence);
  EXPECT_NEAR(estimate_bound(set, g, tree, nodes, 2), 2.5, 1e-12);
}
