#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "bspde/coefficients.hpp"
#include "bspde/random_fields.hpp"
#include "bspde/solver.hpp"

using namespace bspde;

namespace {

constexpr double kPi = 3.141592653589793;

std::shared_ptr<const PathTree> tree_of(double T, int n, int dp, TreeMode mode) {
  return std::make_shared<const PathTree>(PathTree::build(TimeGrid::make(T, n), dp, mode));
}

// Variable smooth 1-d coefficients with 2a - sigma^2 >= 0.2.
CoefficientSet smooth_1d() {
  return CoefficientSet::from_pointwise(
      "smooth-1d", 1, 1, Dependence::time,
      [](double t, std::span<const double> x, std::span<const double>, PointCoefficients& p) {
        const double s = 0.4 + 0.1 * std::sin(x[0]);
        p.sigma(0, 0) = s;
        p.a(0, 0) = 0.5 * s * s + 0.1 + 0.05 * std::cos(x[0] + t);
        p.b(0) = 0.3 * std::cos(x[0]);
        p.c = -0.2 + 0.1 * std::sin(2 * x[0]);
        p.nu(0) = 0.1 * std::cos(x[0]);
      });
}

ProblemData problem_1d(std::shared_ptr<const PathTree> tree, const Grid& grid, double scale, std::uint64_t seed) {
  ProblemData p;
  p.tree = std::move(tree);
  p.grid = grid;
  p.coeffs = smooth_1d();
  const Field base = random_smooth_field(grid, 4, seed, 0), slope = random_smooth_field(grid, 4, seed, 1);
  const Field force = random_smooth_field(grid, 4, seed, 2);
  p.terminal = [=](const Grid&, const NodeContext& ctx) { return Field(scale * (base + ctx.wiener(0) * slope)); };
  p.forcing = [=](const Grid&, const NodeContext& ctx) { return Field(scale * (1.0 + ctx.time) * force); };
  return p;
}

double max_abs_diff(const NodeMap<Field>& a, const NodeMap<Field>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, (a.at_flat(i) - b.at_flat(i)).abs().maxCoeff());
  return m;
}

}  // namespace

TEST(Solver, LinearInData) {
  const auto tree = tree_of(0.2, 6, 1, TreeMode::full);
  const Grid grid = Grid::make(1, kPi, 24);
  SolverConfig cfg;
  cfg.time_stepping = TimeStepping::explicit_euler;
  const auto p1 = problem_1d(tree, grid, 1.0, 1), p2 = problem_1d(tree, grid, 1.0, 2);
  ProblemData combo = p1;
  const double lambda = -2.5;
  combo.terminal = [&](const Grid& g, const NodeContext& c) { return Field(lambda * p1.terminal(g, c) + p2.terminal(g, c)); };
  combo.forcing = [&](const Grid& g, const NodeContext& c) { return Field(lambda * p1.forcing(g, c) + p2.forcing(g, c)); };
  const auto s1 = solve(p1, cfg), s2 = solve(p2, cfg), sc = solve(combo, cfg);
  double err = 0;
  for (std::int64_t i = 0; i < tree->total_nodes(); ++i) {
    err = std::max(err, (sc.u.at_flat(i) - lambda * s1.u.at_flat(i) - s2.u.at_flat(i)).abs().maxCoeff());
  }
  EXPECT_LT(err, 1e-12);
}

TEST(Solver, AdaptedToTheFiltration) {
  const auto tree = tree_of(0.2, 5, 1, TreeMode::full);
  const Grid grid = Grid::make(1, kPi, 16);
  const auto base = problem_1d(tree, grid, 1.0, 3);
  // change the terminal only below node (1, 1)
  ProblemData perturbed = base;
  perturbed.terminal = [&](const Grid& g, const NodeContext& c) {
    Field v = base.terminal(g, c);
    if (c.node.index >= tree->level_size(c.node.level) / 2) v += 1.0;
    return v;
  };
  const auto a = solve(base, SolverConfig{}), b = solve(perturbed, SolverConfig{});
  for (int n = 1; n <= 5; ++n) {
    for (std::int64_t j = 0; j < tree->level_size(n) / 2; ++j) {
      EXPECT_TRUE((a.u[{n, j}] == b.u[{n, j}]).all());
      if (n < 5) EXPECT_TRUE((a.q[{n, j}] == b.q[{n, j}]).all());
    }
  }
  EXPECT_FALSE((a.u[tree->root()] == b.u[tree->root()]).all());
}

TEST(Solver, RIsQPlusSigmaGradU) {
  const auto tree = tree_of(0.2, 4, 2, TreeMode::full);
  const Grid grid = Grid::make(2, kPi, 16);
  ProblemData p;
  p.tree = tree;
  p.grid = grid;
  p.coeffs = builtin_counterexamples()[0];
  const auto term = std::make_shared<RandomTerminal>(random_terminal(grid, 2, 0.2, 2, 1, 5));
  p.terminal = [term](const Grid&, const NodeContext& c) { return term->at(c.wiener); };
  const auto sol = solve(p, SolverConfig{});
  const auto cf = p.coeffs.sample(grid, NodeContext::at(*tree, tree->root()));
  for (int n = 0; n < 4; ++n) {
    for (std::int64_t j = 0; j < tree->level_size(n); ++j) {
      const NodeId node{n, j};
      for (int k = 0; k < 2; ++k) {
        Field r = sol.q[node].col(k);
        for (int i = 0; i < 2; ++i) r += cf.sigma_at(i, k) * d1(grid, sol.u[node], i);
        EXPECT_EQ((r - sol.r[node].col(k)).abs().maxCoeff(), 0.0);
      }
    }
  }
}

TEST(Solver, WeakFormHoldsForBothModes) {
  const Grid grid = Grid::make(1, kPi, 32);
  for (auto stepping : {TimeStepping::explicit_euler, TimeStepping::semi_implicit}) {
    const auto tree = tree_of(0.2, 8, 1, TreeMode::recombining);
    const auto p = problem_1d(tree, grid, 1.0, 4);
    SolverConfig cfg;
    cfg.time_stepping = stepping;
    cfg.viscosity = 0.01;
    const auto sol = solve(p, cfg);
    const auto tests = default_test_functions(grid);
    ASSERT_FALSE(tests.empty());
    EXPECT_LT(weak_form_residual(sol, p, tests, cfg).max_residual, 1e-9) << to_string(stepping);
  }
}

TEST(Solver, WeakFormDetectsATamperedSolution) {
  const Grid grid = Grid::make(1, kPi, 32);
  const auto tree = tree_of(0.2, 4, 1, TreeMode::full);
  const auto p = problem_1d(tree, grid, 1.0, 4);
  auto sol = solve(p, SolverConfig{});
  sol.u[{2, 1}] += 1e-3 * grid.coordinates(0).cos();
  const auto report = weak_form_residual(sol, p, default_test_functions(grid), SolverConfig{});
  EXPECT_GT(report.max_residual, 1e-4);
}

TEST(Solver, ExplicitStepRespectsCfl) {
  const Grid grid = Grid::make(1, kPi, 64);
  const auto tree = tree_of(1.0, 4, 1, TreeMode::recombining);
  const auto p = problem_1d(tree, grid, 1.0, 1);
  SolverConfig cfg;
  cfg.time_stepping = TimeStepping::explicit_euler;
  try {
    solve(p, cfg);
    FAIL();
  } catch (const StabilityError& e) {
    EXPECT_GT(e.suggested_dt(), 0.0);
    EXPECT_LT(e.suggested_dt(), tree->dt());
  }
  const auto bounds = cfl_bounds(p, cfg);
  EXPECT_LE(bounds.limit(TimeStepping::explicit_euler), bounds.diffusion);
  cfg.allow_cfl_violation = true;
  EXPECT_NO_THROW(solve(p, cfg));
}

TEST(Solver, RejectsNonDegenerateParabolicData) {
  const Grid grid = Grid::make(1, kPi, 16);
  ProblemData p;
  p.tree = tree_of(0.1, 2, 1, TreeMode::full);
  p.grid = grid;
  PointCoefficients pc;
  pc.a = Eigen::MatrixXd::Constant(1, 1, 0.1);
  pc.sigma = Eigen::MatrixXd::Constant(1, 1, 1.0);
  p.coeffs = CoefficientSet::constant("bad", pc);
  p.terminal = [](const Grid& g, const NodeContext&) { return Field(g.coordinates(0).cos()); };
  EXPECT_THROW(solve(p, SolverConfig{}), PreconditionError);
}

TEST(Solver, RecombiningNeedsMarkovData) {
  const Grid grid = Grid::make(1, kPi, 16);
  auto p = problem_1d(tree_of(0.1, 2, 1, TreeMode::recombining), grid, 1.0, 1);
  p.level_markov = false;
  EXPECT_THROW(solve(p, SolverConfig{}), UnsupportedMode);
}

TEST(Solver, ThreadCountDoesNotChangeResults) {
  const Grid grid = Grid::make(1, kPi, 16);
  const auto p = problem_1d(tree_of(0.2, 6, 1, TreeMode::full), grid, 1.0, 8);
  SolverConfig one, four;
  four.threads = 4;
  EXPECT_EQ(max_abs_diff(solve(p, one).u, solve(p, four).u), 0.0);
}

TEST(Solver, ModesAgreeOnMarkovData) {
  const Grid grid = Grid::make(1, kPi, 16);
  const auto full = solve(problem_1d(tree_of(0.2, 6, 1, TreeMode::full), grid, 1.0, 9), SolverConfig{});
  const auto rec = solve(problem_1d(tree_of(0.2, 6, 1, TreeMode::recombining), grid, 1.0, 9), SolverConfig{});
  EXPECT_LT((full.u[{0, 0}] - rec.u[{0, 0}]).abs().maxCoeff(), 1e-12);
}

TEST(Solver, DeterministicHeatHasNoMartingalePart) {
  const Grid grid = Grid::make(1, kPi, 32);
  ProblemData p;
  p.tree = tree_of(0.5, 8, 1, TreeMode::recombining);
  p.grid = grid;
  PointCoefficients pc;
  pc.a = Eigen::MatrixXd::Constant(1, 1, 0.5);
  pc.sigma = Eigen::MatrixXd::Constant(1, 1, 0.3);
  p.coeffs = CoefficientSet::constant("heat", pc);
  p.terminal = [](const Grid& g, const NodeContext&) { return Field(g.coordinates(0).cos()); };
  const auto sol = solve(p, SolverConfig{});
  for (std::int64_t i = 0; i < p.tree->flat_index({8, 0}); ++i) EXPECT_LT(sol.q.at_flat(i).abs().maxCoeff(), 1e-13);
  // semi-implicit decay factor of the cos mode with the compact stencil
  const double h = grid.spacing();
  const double lambda = 0.5 * 4 * std::pow(std::sin(h / 2), 2) / (h * h);
  const double factor = std::pow(1.0 / (1.0 + 0.5 / 8 * lambda), 8);
  EXPECT_LT((sol.u[{0, 0}] - factor * grid.coordinates(0).cos()).abs().maxCoeff(), 1e-12);
}

TEST(Continuation, DifferencesShrinkAlongTheSchedule) {
  const Grid grid = Grid::make(1, kPi, 32);
  ProblemData p;
  p.tree = tree_of(0.25, 6, 1, TreeMode::recombining);
  p.grid = grid;
  PointCoefficients pc;
  pc.a = Eigen::MatrixXd::Constant(1, 1, 0.5);
  pc.sigma = Eigen::MatrixXd::Constant(1, 1, 1.0);
  p.coeffs = CoefficientSet::constant("degenerate", pc);
  p.terminal = [](const Grid& g, const NodeContext& c) { return Field(c.wiener(0) * g.coordinates(0).sin()); };
  const std::vector<double> schedule{1e-1, 1e-2, 1e-3};
  const auto rep = viscosity_continuation(p, schedule, SolverConfig{}, 1);
  ASSERT_EQ(rep.solutions.size(), 3u);
  EXPECT_TRUE(rep.monotone);
  EXPECT_TRUE(rep.failure.empty());
  EXPECT_GT(rep.sup_u_difference[0], rep.sup_u_difference[1]);
  EXPECT_EQ(sup_difference(rep.solutions[0], rep.solutions[0], 1), 0.0);
  EXPECT_EQ(r_difference(rep.solutions[1], rep.solutions[1], 0), 0.0);
}

TEST(BackwardStep, MatchesSolveAtRoot) {
  const Grid grid = Grid::make(1, kPi, 16);
  const auto p = problem_1d(tree_of(0.2, 3, 1, TreeMode::full), grid, 1.0, 10);
  const auto sol = solve(p, SolverConfig{});
  std::vector<Field> children{sol.u[{1, 0}], sol.u[{1, 1}]};
  const auto step = backward_step(children, {0, 0}, p, SolverConfig{});
  EXPECT_TRUE((step.u == sol.u[{0, 0}]).all());
}
