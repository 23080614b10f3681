// Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.
// Exit status is the number of failed criteria (0 when everything passes).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "bspde/coefficients.hpp"
#include "bspde/control.hpp"
#include "bspde/energy.hpp"
#include "bspde/expr.hpp"
#include "bspde/grid.hpp"
#include "bspde/lattice.hpp"
#include "bspde/oracles.hpp"
#include "bspde/random_fields.hpp"
#include "bspde/solver.hpp"

#include "expr_golden.hpp"

using namespace bspde;

namespace {

constexpr double kPi = 3.141592653589793;

// criterion 1
constexpr double kWienerMaxError = 5e-2;
constexpr double kWienerWallSeconds = 10.0;
// halving within +-30%
constexpr double kHalvingLow = 0.35;
constexpr double kHalvingHigh = 0.65;
// criterion 2
constexpr double kHeatTimeOrder = 0.8;
constexpr double kHeatSpaceOrder = 1.7;
// criteria 3, 4
constexpr double kSymmetryViolationFloor = 0.5;
constexpr double kGridStabilityFactor = 2.0;
constexpr double kDegenerateWallSeconds = 60.0;
constexpr double kSweepRatioCap = 2.0;
// criterion 5
constexpr double kRefitAgreement = 0.25;
// criterion 6
constexpr double kStructureTol = 1e-12;
constexpr int kStructureCases = 1200;
// criterion 7
constexpr double kPolicyCostTol = 1e-10;
constexpr double kMaxPrincipleFactor = 5.0;
constexpr double kControlWallSeconds = 30.0;
// criterion 8
constexpr double kDualityRelativeDefect = 1e-2;
// criterion 9
constexpr double kGoldenTol = 1e-12;

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

bool halves(double coarse, double fine) {
  const double ratio = fine / coarse;
  return ratio >= kHalvingLow && ratio <= kHalvingHigh;
}

std::shared_ptr<const PathTree> make_tree(double horizon, int n_steps, int wiener_dim, TreeMode mode) {
  return std::make_shared<const PathTree>(PathTree::build(TimeGrid::make(horizon, n_steps), wiener_dim, mode));
}

void wiener_oracle() {
  const auto start = std::chrono::steady_clock::now();
  const Grid grid = Grid::make(1, kPi, 64);
  const Field g = grid.coordinates(0).cos();
  const auto oracle = wiener_linear_oracle(grid, g, 0.5, 1.0, 1.0);
  OracleError err[2];
  for (int i = 0; i < 2; ++i) {
    const auto tree = make_tree(1.0, 32 << i, 1, TreeMode::recombining);
    const auto problem = wiener_problem(tree, grid, g, 0.5, 1.0);
    err[i] = compare_to_oracle(solve(problem, SolverConfig{}), oracle);
  }
  const double elapsed = seconds_since(start);
  const bool pass = err[0].u_error <= kWienerMaxError && err[0].q_error <= kWienerMaxError &&
                    halves(err[0].u_error, err[1].u_error) && halves(err[0].q_error, err[1].q_error) &&
                    elapsed < kWienerWallSeconds;
  report(1, pass,
         fmt("u err %.3e -> %.3e (ratio %.3f), q err %.3e -> %.3e (ratio %.3f), %.1fs", err[0].u_error,
             err[1].u_error, err[1].u_error / err[0].u_error, err[0].q_error, err[1].q_error,
             err[1].q_error / err[0].q_error, elapsed));
}

double heat_error(int points, int n_steps) {
  const double horizon = 0.5;
  const Grid grid = Grid::make(1, kPi, points);
  const Field phi = grid.coordinates(0).sin().exp();
  const Eigen::MatrixXd a = Eigen::MatrixXd::Constant(1, 1, 0.5);
  const Eigen::MatrixXd sigma = Eigen::MatrixXd::Constant(1, 1, 0.5);
  const auto tree = make_tree(horizon, n_steps, 1, TreeMode::recombining);
  const auto problem = heat_problem(tree, grid, phi, a, sigma);
  return compare_to_oracle(solve(problem, SolverConfig{}), heat_smoothing_oracle(grid, phi, a, horizon)).u_error;
}

void heat_oracle() {
  // time pair on a fine grid, space pair with a fine time step
  const double t16 = heat_error(128, 16), t32 = heat_error(128, 32);
  const double s16 = heat_error(16, 512), s32 = heat_error(32, 512);
  const double time_order = std::log2(t16 / t32);
  const double space_order = std::log2(s16 / s32);
  report(2, time_order >= kHeatTimeOrder && space_order >= kHeatSpaceOrder,
         fmt("dt: %.3e -> %.3e order %.2f; h: %.3e -> %.3e order %.2f", t16, t32, time_order, s16, s32,
             space_order));
}

ProblemData degenerate_problem(int points) {
  const auto tree = make_tree(0.25, 5, 2, TreeMode::full);
  const Grid grid = Grid::make(2, kPi, points);
  ProblemData p;
  p.tree = tree;
  p.grid = grid;
  p.coeffs = builtin_counterexamples()[0];
  auto terminal = std::make_shared<RandomTerminal>(random_terminal(grid, 2, 0.25, 3, 1, 20240611));
  p.terminal = [terminal](const Grid&, const NodeContext& ctx) { return terminal->at(ctx.wiener); };
  return p;
}

void degenerate_wellposedness() {
  const auto start = std::chrono::steady_clock::now();
  double violation = 0.0;
  double fit_l2[2] = {0, 0}, fit_lp[2] = {0, 0};
  bool solved = true;
  std::string failure;
  for (int i = 0; i < 2; ++i) {
    const auto problem = degenerate_problem(32 << i);
    const auto fields = problem.coeffs.sample(problem.grid, NodeContext::at(*problem.tree, problem.tree->root()));
    violation = std::max(violation, check_symmetry(fields, problem.grid).max_violation);
    try {
      const auto sol = solve(problem, SolverConfig{});
      const auto est = verify_main_estimates(sol, problem, 1, 2.0);
      fit_l2[i] = est.l2.c_fit;
      fit_lp[i] = est.lp.c_fit;
    } catch (const Error& e) {
      solved = false;
      failure = e.what();
    }
  }
  const double elapsed = seconds_since(start);
  auto stable = [](const double* c) {
    return std::isfinite(c[0]) && std::isfinite(c[1]) && c[0] > 0 && c[1] > 0 &&
           std::max(c[0], c[1]) / std::min(c[0], c[1]) <= kGridStabilityFactor;
  };
  const bool pass = solved && violation >= kSymmetryViolationFloor && stable(fit_l2) && stable(fit_lp) &&
                    elapsed < kDegenerateWallSeconds;
  report(3, pass,
         fmt("symmetry violation %.3f; C_fit l2 %.4g / %.4g, lp %.4g / %.4g (M = 32 / 64); %.1fs%s%s", violation,
             fit_l2[0], fit_l2[1], fit_lp[0], fit_lp[1], elapsed, solved ? "" : "; solve failed: ",
             failure.c_str()));
}

void viscosity_independence() {
  const auto problem = degenerate_problem(32);
  const std::vector<double> schedule{1e-1, 1e-2, 1e-3, 1e-4};
  const auto table = viscosity_sweep(problem, SolverConfig{}, schedule, 0);
  std::string diffs;
  for (double d : table.continuation.sup_u_difference) diffs += fmt(" %.3e", d);
  const bool pass = table.continuation.failure.empty() && table.rows.size() == schedule.size() &&
                    table.max_min_ratio <= kSweepRatioCap && table.continuation.monotone;
  report(4, pass, fmt("max/min C_fit %.4f; Cauchy differences%s", table.max_min_ratio, diffs.c_str()));
}

struct Triple {
  Field u, f;
  VectorField r;
};

// r = q + sigma^T grad u with random q, as the transform produces it.
Triple random_triple(const Grid& grid, const CoefficientFields& coeffs, std::uint64_t seed) {
  Triple t;
  t.u = random_smooth_field(grid, 3, seed, 0);
  t.r.resize(grid.size(), 2);
  for (int k = 0; k < 2; ++k) {
    t.r.col(k) = random_smooth_field(grid, 3, seed, 1 + k);
    for (int i = 0; i < 2; ++i) t.r.col(k) += coeffs.sigma_at(i, k) * d1(grid, t.u, i);
  }
  t.f = random_smooth_field(grid, 3, seed, 3);
  return t;
}

void basic_estimate() {
  const EnergyConfig config{1, 2.0};
  const auto coeffs = builtin_counterexamples()[0];
  // shared constant: the largest tight (signed) constant over the triples
  double shared[2] = {-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  bool holds = true;
  for (int level = 0; level < 2; ++level) {
    const Grid grid = Grid::make(2, kPi, 32 << level);
    const auto tree = make_tree(1.0, 1, 2, TreeMode::full);
    const auto fields = coeffs.sample(grid, NodeContext::at(*tree, tree->root()));
    std::vector<Triple> triples;
    for (std::uint64_t s = 0; s < 10; ++s) {
      triples.push_back(random_triple(grid, fields, 7000 + s));
      const auto& t = triples.back();
      shared[level] = std::max(shared[level],
                               check_basic_estimate(grid, t.u, t.r, t.f, fields, config, 0.5, 0.0).tight_constant);
    }
    for (const auto& t : triples) {
      // the maximizing triple sits on equality, so allow rounding
      const auto est = check_basic_estimate(grid, t.u, t.r, t.f, fields, config, 0.5, shared[level]);
      holds = holds && est.slack >= -1e-12 * (std::abs(est.lhs) + std::abs(est.rhs));
    }
  }
  const double agreement = std::abs(shared[1] - shared[0]) / std::max(std::abs(shared[0]), std::abs(shared[1]));
  report(5, holds && std::isfinite(shared[0]) && std::isfinite(shared[1]) && agreement <= kRefitAgreement,
         fmt("shared constant %.4g (M = 32), %.4g (M = 64), relative change %.3f", shared[0], shared[1], agreement));
}

void exact_structure() {
  std::mt19937_64 rng(424242);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  double ibp = 0.0, tower = 0.0, representation = 0.0;
  int cases = 0;
  for (int c = 0; c < kStructureCases; ++c, ++cases) {
    switch (c % 3) {
      case 0: {
        const int dim = 1 + static_cast<int>(rng() % 2);
        const int points = 8 + 2 * static_cast<int>(rng() % (dim == 1 ? 29 : 9));
        const Grid grid = Grid::make(dim, 0.5 + 3.0 * (unit(rng) + 1.0), points);
        Field f(grid.size()), g(grid.size());
        for (Eigen::Index i = 0; i < grid.size(); ++i) f(i) = unit(rng), g(i) = unit(rng);
        for (int axis = 0; axis < dim; ++axis) {
          const double lhs = inner_product(grid, d1(grid, f, axis), g);
          const double rhs = -inner_product(grid, f, d1(grid, g, axis));
          ibp = std::max(ibp, std::abs(lhs - rhs));
        }
        break;
      }
      case 1: {
        const TreeMode mode = rng() % 2 ? TreeMode::full : TreeMode::recombining;
        const int wiener_dim = mode == TreeMode::full ? 1 + static_cast<int>(rng() % 2) : 1;
        const int n_steps = 1 + static_cast<int>(rng() % (mode == TreeMode::full ? 6 : 12));
        const auto tree = PathTree::build(TimeGrid::make(0.1 + unit(rng) + 1.0, n_steps), wiener_dim, mode);
        const int n = static_cast<int>(rng() % n_steps);
        std::vector<double> next(tree.level_size(n + 1));
        for (double& v : next) v = unit(rng);
        std::vector<double> pushed(tree.level_size(n));
        for (std::int64_t j = 0; j < tree.level_size(n); ++j) {
          std::vector<double> children;
          for (int s = 0; s < tree.branching(); ++s) children.push_back(next[tree.child({n, j}, s).index]);
          pushed[j] = conditional_expectation<double>(tree, children);
        }
        tower = std::max(tower, std::abs(tree_expectation<double>(tree, n + 1, next) -
                                         tree_expectation<double>(tree, n, pushed)));
        break;
      }
      default: {
        const auto tree = PathTree::build(TimeGrid::make(0.05 + unit(rng) + 1.0, 3), 1, TreeMode::full);
        const std::vector<double> children{unit(rng), unit(rng)};
        const double mean = conditional_expectation<double>(tree, children);
        const double q = martingale_representation<double>(tree, children)[0];
        for (int s = 0; s < 2; ++s) {
          representation =
              std::max(representation, std::abs(children[s] - mean - q * tree.increment(s)(0)));
        }
      }
    }
  }
  report(6, std::max({ibp, tower, representation}) <= kStructureTol,
         fmt("%d cases: integration by parts %.2e, tower %.2e, representation %.2e", cases, ibp, tower,
             representation));
}

ControlProblem tiny_control() {
  ControlProblem p;
  p.tree = make_tree(0.4, 4, 1, TreeMode::full);
  p.grid = Grid::make(1, kPi, 16);
  p.gamma = {-1.0, 1.0};
  p.coefficients = [](const Grid& grid, const NodeContext&, double) {
    auto cf = CoefficientFields::zeros(grid, 1);
    cf.a[0].setConstant(0.2);
    cf.sigma[0].setConstant(0.3);
    return cf;
  };
  p.F = [](const Grid& grid, const NodeContext&, double v) { return Field(v * grid.coordinates(0).cos()); };
  p.f = [](const Grid& grid, const NodeContext& ctx, double) {
    const double w = ctx.wiener(0);
    return Field((4.0 * w - 0.3) * grid.coordinates(0).cos() + 0.3 * grid.coordinates(0).sin());
  };
  p.phi = 0.1 * p.grid.coordinates(0).sin();
  p.xi0 = (p.grid.coordinates(0).cos() + 1.5).eval();
  return p;
}

void maximum_principle() {
  const auto start = std::chrono::steady_clock::now();
  const ControlProblem problem = tiny_control();
  const auto brute = brute_force_optimum(problem);
  const auto iteration = iterate_policy(problem, ControlPolicy::constant(*problem.tree), 20);
  const auto xi = solve_forward(problem, iteration.policy);
  const double j_iter = cost(problem, iteration.policy, xi);
  const auto adjoint = solve_adjoint(problem, iteration.policy);
  const auto check = check_max_principle(problem, iteration.policy, xi, adjoint, 0.0, kMaxPrincipleFactor);
  const double elapsed = seconds_since(start);
  int switches = 0;
  for (int n = 0; n < problem.tree->n_steps(); ++n) {
    for (std::int64_t j = 0; j < problem.tree->level_size(n); ++j) switches += brute.policy.choice[{n, j}];
  }
  const bool pass = std::abs(j_iter - brute.cost) <= kPolicyCostTol && check.pass_fraction == 1.0 &&
                    elapsed < kControlWallSeconds;
  report(7, pass,
         fmt("%lld policies, J* %.12f (gamma[1] at %d nodes), iterated J %.12f (%d iterations), max principle "
             "%.0f%% of nodes, %.1fs",
             brute.evaluated, brute.cost, switches, j_iter, iteration.iterations, 100.0 * check.pass_fraction,
             elapsed));
}

ControlProblem random_linear_control(int n_steps) {
  ControlProblem p;
  p.tree = make_tree(0.125, n_steps, 1, TreeMode::recombining);
  p.grid = Grid::make(1, kPi, 64);
  p.gamma = {0.0, 1.0};
  const std::uint64_t seed = 99;
  auto unit_field = [&](std::uint64_t stream) {
    Field f = random_smooth_field(p.grid, 3, seed, stream);
    return Field(f / f.abs().maxCoeff());
  };
  const Field s1 = unit_field(1), s2 = unit_field(2), s3 = unit_field(3), s4 = unit_field(4), s5 = unit_field(5);
  p.coefficients = [=](const Grid& grid, const NodeContext&, double v) {
    auto cf = CoefficientFields::zeros(grid, 1);
    cf.a[0] = 0.3 + 0.05 * s1;
    cf.b[0] = 0.2 * s2 + 0.1 * v;
    cf.c = 0.1 * s3;
    cf.sigma[0] = 0.4 + 0.1 * s4;
    cf.nu[0] = 0.1 * s5;
    return cf;
  };
  const Field F0 = unit_field(6), G0 = unit_field(7), f0 = unit_field(8);
  p.F = [=](const Grid&, const NodeContext&, double v) { return Field((1.0 + v) * F0); };
  p.G = [=](const Grid&, const NodeContext& ctx, double v) {
    VectorField g(G0.size(), 1);
    g.col(0) = (0.5 + 0.5 * v + ctx.time) * G0;
    return g;
  };
  p.f = [=](const Grid&, const NodeContext& ctx, double) { return Field(f0 * (1.0 + ctx.wiener(0))); };
  p.phi = unit_field(9);
  p.xi0 = (1.0 + 0.5 * unit_field(10)).eval();
  return p;
}

ControlPolicy mixed_policy(const PathTree& tree) {
  auto policy = ControlPolicy::constant(tree);
  for (int n = 0; n < tree.n_steps(); ++n) {
    for (std::int64_t j = 0; j < tree.level_size(n); ++j) policy.choice[{n, j}] = static_cast<int>((n + j) % 2);
  }
  return policy;
}

void duality() {
  DualityReport rep[2];
  for (int i = 0; i < 2; ++i) {
    const auto problem = random_linear_control(16 << i);
    const auto policy = mixed_policy(*problem.tree);
    const auto xi = solve_forward(problem, policy);
    rep[i] = duality_check(problem, policy, xi, solve_adjoint(problem, policy));
  }
  const bool pass = rep[0].defect <= kDualityRelativeDefect * std::abs(rep[0].cost) && halves(rep[0].defect, rep[1].defect);
  report(8, pass,
         fmt("J %.6f, defect %.3e (%.2e of |J|) -> %.3e, ratio %.3f", rep[0].cost, rep[0].defect,
             rep[0].defect / std::abs(rep[0].cost), rep[1].defect, rep[1].defect / rep[0].defect));
}

void parser_golden() {
  const auto& cases = golden::cases();
  int matched = 0;
  double worst = 0.0;
  std::string first_failure;
  for (const auto& c : cases) {
    try {
      const double got = expr::parse(c.source).eval(c.bindings);
      const double err = std::abs(got - c.expected);
      worst = std::max(worst, err);
      if (err <= kGoldenTol) {
        ++matched;
      } else if (first_failure.empty()) {
        first_failure = c.source;
      }
    } catch (const Error& e) {
      if (first_failure.empty()) first_failure = c.source + std::string(": ") + e.what();
    }
  }
  report(9, cases.size() >= 200 && matched == static_cast<int>(cases.size()),
         fmt("%d / %zu golden cases within %.0e (worst %.2e)%s%s", matched, cases.size(), kGoldenTol, worst,
             first_failure.empty() ? "" : "; first mismatch: ", first_failure.c_str()));
}

}  // namespace

int main() {
  const std::vector<std::function<void()>> criteria{wiener_oracle,  heat_oracle,       degenerate_wellposedness,
                                                    viscosity_independence, basic_estimate, exact_structure,
                                                    maximum_principle, duality,  parser_golden};
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    try {
      criteria[i]();
    } catch (const std::exception& e) {
      report(static_cast<int>(i + 1), false, std::string("threw: ") + e.what());
    }
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures;
}
