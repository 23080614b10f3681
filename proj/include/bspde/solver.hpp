#pragma once

// Backward induction for the linear BSPDE
//   du = -(a^{ij} u_ij + b^i u_i + c u + sigma^{ik} q^k_i + nu^k q^k + f) dt + q^k dW^k,
//   u(T) = phi,
// on a path tree x periodic grid, with optional viscosity eps*Laplacian.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bspde/coefficients.hpp"
#include "bspde/grid.hpp"
#include "bspde/lattice.hpp"

namespace bspde {

using NodeFieldFn = std::function<Field(const Grid&, const NodeContext&)>;

struct ProblemData {
  std::shared_ptr<const PathTree> tree;
  Grid grid;
  CoefficientSet coeffs;
  NodeFieldFn forcing;   // f; empty means zero
  NodeFieldFn terminal;  // phi, evaluated at leaves
  /// Data depends on the path only through (t_n, W_n); required by recombining trees.
  bool level_markov = true;
};

enum class TimeStepping { explicit_euler, semi_implicit };
std::string to_string(TimeStepping s);
TimeStepping time_stepping_from_string(const std::string& name);

struct SolverConfig {
  double viscosity = 0.0;
  TimeStepping time_stepping = TimeStepping::semi_implicit;
  int corrector_iterations = 1;
  double cfl_safety = 0.9;
  bool allow_cfl_violation = false;
  bool check_parabolicity = true;
  int threads = 1;
};

struct SchemeMetadata {
  double dt = 0.0;
  double h = 0.0;
  double viscosity = 0.0;
  TimeStepping time_stepping = TimeStepping::semi_implicit;
  TreeMode mode = TreeMode::full;
  int n_steps = 0;
  int points_per_dim = 0;
  int dim = 1;
  int wiener_dim = 1;
};

/// (u, q, r) over the whole tree. q and r live on non-leaf nodes (they
/// describe the step [t_n, t_{n+1}]); at leaves they are empty.
struct SolutionPair {
  std::shared_ptr<const PathTree> tree;
  Grid grid;
  NodeMap<Field> u;
  NodeMap<VectorField> q;
  NodeMap<VectorField> r;
  SchemeMetadata meta;
};

struct StepResult {
  Field u;
  VectorField q;
  VectorField r;
};

/// Stability limits for the explicit parts of the scheme.
struct CflBounds {
  double diffusion = 0.0;  // h^2 / (2 d (eps + max|a|)), explicit mode only
  double transport = 0.0;  // h / max|btilde|, infinity when btilde == 0
  double limit(TimeStepping s) const;
};
CflBounds cfl_bounds(const ProblemData& problem, const SolverConfig& config);

/// One backward step at `node` from u on its children (slot order).
StepResult backward_step(std::span<const Field> u_next, NodeId node, const ProblemData& problem,
                         const SolverConfig& config);

/// Full backward sweep leaf level -> root. Throws PreconditionError (DP
/// violated), StabilityError (CFL), UnsupportedMode (non-Markov data on a
/// recombining tree) or SingularOperator.
SolutionPair solve(const ProblemData& problem, const SolverConfig& config);

struct WeakFormReport {
  double max_residual = 0.0;  // max |residual| / dt over nodes, children, tests
  NodeId worst_node;
  int worst_test = -1;
};

/// Discrete weak form tested against each eta (integrated by parts with
/// (b - div a) and (nu - div sigma)), aggregated over nodes. The residual
/// of each child is projected on span{1, dW}, which for d' = 1 is the
/// residual itself.
WeakFormReport weak_form_residual(const SolutionPair& solution, const ProblemData& problem,
                                  std::span<const Field> test_functions, const SolverConfig& config);

/// Smooth bumps supported inside the box, usable as weak-form test functions.
std::vector<Field> default_test_functions(const Grid& grid);

struct ContinuationReport {
  std::vector<double> schedule;
  std::vector<SolutionPair> solutions;
  /// (E sup_t ||u^{eps_i} - u^{eps_{i+1}}||^2_{m1,2})^{1/2}
  std::vector<double> sup_u_difference;
  /// E sum_n dt ||r^{eps_i} - r^{eps_{i+1}}||^2_{m1,2}
  std::vector<double> r_difference;
  bool monotone = true;  // sup_u_difference strictly decreasing
  std::string failure;   // set when a solve aborted the schedule
};

ContinuationReport viscosity_continuation(const ProblemData& problem, std::span<const double> schedule,
                                          const SolverConfig& config, int m1 = 0);

/// (E sup_t ||u - v||^2_{m,2})^{1/2} and E sum_n dt ||r - s||^2_{m,2} between
/// two solutions on the same tree and grid.
double sup_difference(const SolutionPair& a, const SolutionPair& b, int m);
double r_difference(const SolutionPair& a, const SolutionPair& b, int m);

}  // namespace bspde
