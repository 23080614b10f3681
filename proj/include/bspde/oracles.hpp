#pragma once

// Closed-form and brute-force references. Closed forms are evaluated
// spectrally on the periodic box (exact for the trigonometric interpolant
// of the data) and never call the solver.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bspde/coefficients.hpp"
#include "bspde/grid.hpp"
#include "bspde/lattice.hpp"
#include "bspde/solver.hpp"

namespace bspde {

struct OracleSolution {
  std::string derivation;
  NodeFieldFn u;
  std::function<VectorField(const Grid&, const NodeContext&)> q;
};

/// Periodic trigonometric interpolant of a grid field, with heat-semigroup
/// and derivative evaluation in Fourier space.
class SpectralField {
 public:
  SpectralField(const Grid& grid, const Field& values);

  const Grid& grid() const { return grid_; }
  /// D^alpha exp(tau * sum_ij a_ij d_i d_j) applied to the interpolant, at
  /// the grid points. Odd derivatives drop the Nyquist mode.
  Field evaluate(const Eigen::MatrixXd& a, double tau, MultiIndex alpha = {}) const;

 private:
  Grid grid_;
  Eigen::MatrixXcd coeffs_;  // (k0, k1), k1 extent 1 in d = 1
  Eigen::VectorXd wavenumbers_;
};

/// u(t) = exp((T - t) a:D^2) phi, q = 0, for deterministic phi and constant a.
OracleSolution heat_smoothing_oracle(const Grid& grid, const Field& phi, const Eigen::MatrixXd& a, double horizon);

/// Terminal g(x) W_T with constant a >= sigma^2 / 2, d = d' = 1:
///   u = W_t h + m,  q = h,  h(t) = exp((T - t) a D^2) g,  m = sigma (T - t) D h.
OracleSolution wiener_linear_oracle(const Grid& grid, const Field& g, double a, double sigma, double horizon);

/// The BSPDE data each oracle solves (constant coefficients, b = c = nu = f = 0).
ProblemData heat_problem(std::shared_ptr<const PathTree> tree, const Grid& grid, const Field& phi,
                         const Eigen::MatrixXd& a, const Eigen::MatrixXd& sigma);
ProblemData wiener_problem(std::shared_ptr<const PathTree> tree, const Grid& grid, const Field& g, double a,
                           double sigma);

struct OracleError {
  /// sup over levels of (E ||u_n - u(t_n)||^2_{0,2})^{1/2}
  double u_error = 0.0;
  /// the same for q on non-leaf levels, against q(t_{n+1}) (q is the
  /// martingale part of the step ending at t_{n+1})
  double q_error = 0.0;
  /// literal max over nodes of ||u - u_exact||_{0,2}
  double u_node_max = 0.0;
  double q_node_max = 0.0;
};
OracleError compare_to_oracle(const SolutionPair& solution, const OracleSolution& oracle);

struct OracleResidual {
  double max_residual = 0.0;  // max over nodes of ||backward_step(oracle children) - oracle(node)||_{0,2} / dt
  double scale = 0.0;         // dt + h^2
  double constant = 0.0;      // max_residual / scale
};
/// Substitutes the oracle into one backward step at every non-leaf node (at
/// most `max_nodes`, spread over the levels).
OracleResidual oracle_step_residual(const OracleSolution& oracle, const ProblemData& problem,
                                    const SolverConfig& config, std::size_t max_nodes = 512);

inline constexpr int kBruteForceMaxSteps = 8;

/// E[leaf value | node] for every node of a full tree by summing over the
/// descendant leaves directly. T is double or an Eigen array.
template <typename T>
NodeMap<T> brute_force_leaf_expectation(const PathTree& tree, std::span<const T> leaf_values) {
  if (tree.mode() != TreeMode::full) throw UnsupportedMode("leaf enumeration needs a full tree");
  if (tree.n_steps() > kBruteForceMaxSteps) {
    throw BudgetError("leaf enumeration is limited to n_steps <= " + std::to_string(kBruteForceMaxSteps),
                      tree.n_steps(), kBruteForceMaxSteps);
  }
  const int last = tree.n_steps();
  if (leaf_values.size() != static_cast<std::size_t>(tree.level_size(last))) {
    throw IncompleteField("leaf value count does not match the leaf level");
  }
  NodeMap<T> out(tree);
  for (int n = 0; n <= last; ++n) {
    const std::int64_t width = tree.level_size(last) / tree.level_size(n);
    for (std::int64_t j = 0; j < tree.level_size(n); ++j) {
      T sum = leaf_values[j * width];
      for (std::int64_t l = 1; l < width; ++l) sum += leaf_values[j * width + l];
      out[{n, j}] = sum / static_cast<double>(width);
    }
  }
  return out;
}

}  // namespace bspde
