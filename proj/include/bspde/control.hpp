#pragma once

// Controlled linear SPDE
//   dxi = (L(v) xi + F(v)) dt + (M^k(v) xi + G^k(v)) dW^k,  xi(0) = xi0,
//   L xi = D_i(a^{ij} D_j xi) + b^i D_i xi + c xi,  M^k xi = sigma^{ik} D_i xi + nu^k xi,
// with cost J = E sum_n dt <f(v), xi_n> + E <phi, xi_N>, its adjoint BSPDE and
// the Hamiltonian maximum condition over a finite control set.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bspde/coefficients.hpp"
#include "bspde/grid.hpp"
#include "bspde/lattice.hpp"
#include "bspde/solver.hpp"

namespace bspde {

using ControlFieldFn = std::function<Field(const Grid&, const NodeContext&, double v)>;
using ControlVectorFn = std::function<VectorField(const Grid&, const NodeContext&, double v)>;
using ControlCoefficientFn = std::function<CoefficientFields(const Grid&, const NodeContext&, double v)>;

struct ControlProblem {
  std::shared_ptr<const PathTree> tree;
  Grid grid;
  std::vector<double> gamma;  // control set, declared order breaks ties
  ControlCoefficientFn coefficients;
  ControlFieldFn F;   // empty means zero
  ControlVectorFn G;  // d' columns; empty means zero
  ControlFieldFn f;   // cost density; empty means zero
  Field phi;
  Field xi0;
  double cfl_safety = 0.9;
  int threads = 1;

  void validate() const;
};

/// Index into gamma at every non-leaf node.
struct ControlPolicy {
  NodeMap<int> choice;

  static ControlPolicy constant(const PathTree& tree, int index = 0);
  double value(const ControlProblem& problem, NodeId node) const { return problem.gamma[choice[node]]; }
  friend bool operator==(const ControlPolicy& a, const ControlPolicy& b);
};

/// Largest stable dt of the explicit forward scheme over the control set.
double forward_cfl_limit(const ControlProblem& problem);

/// Explicit Euler-Maruyama on the tree. On a recombining lattice each node
/// holds the conditional mean of the state given that node, which is all the
/// cost and the duality pairing need.
NodeMap<Field> solve_forward(const ControlProblem& problem, const ControlPolicy& policy);

double cost(const ControlProblem& problem, const ControlPolicy& policy, const NodeMap<Field>& xi);

/// Adjoint BSPDE data: a, b' = div a - b, c' = c - div b, sigma' = -sigma,
/// nu' = nu - div sigma, forcing f(t, V), terminal phi. In that form the
/// explicit backward step is the exact transpose of the forward step.
ProblemData adjoint_problem(const ControlProblem& problem, const ControlPolicy& policy);
SolutionPair solve_adjoint(const ControlProblem& problem, const ControlPolicy& policy);

double hamiltonian(const ControlProblem& problem, NodeId node, const Field& xi, double v, const Field& u,
                   const VectorField& q);

struct NodeCheck {
  NodeId node;
  double chosen = 0.0;  // H at the policy's control
  double best = 0.0;    // max over gamma
  int best_index = 0;   // first maximizer in declared order
  bool flat = false;    // H constant across gamma (vacuous pass)
  bool passed = true;
};

struct MaxPrincipleReport {
  std::vector<NodeCheck> nodes;
  double tolerance = 0.0;
  double pass_fraction = 1.0;
  int flat_nodes = 0;
  double scale = 0.0;  // max |H| seen
};

/// H is evaluated with the adjoint pair of the node's step, (E_n[u_{n+1}], q_n).
/// A node passes when H(chosen) >= max_v H(v) - tol with
/// tol = abs_tol + rel_factor * (dt + h^2) * max |H|.
MaxPrincipleReport check_max_principle(const ControlProblem& problem, const ControlPolicy& policy,
                                       const NodeMap<Field>& xi, const SolutionPair& adjoint, double abs_tol,
                                       double rel_factor = 0.0);

struct DualityReport {
  double cost = 0.0;
  double dual = 0.0;  // E<xi0, u_0> + sum_n dt E[<F, u_n> + <G^k, q^k_n>]
  double defect = 0.0;
};
DualityReport duality_check(const ControlProblem& problem, const ControlPolicy& policy, const NodeMap<Field>& xi,
                            const SolutionPair& adjoint);

/// One sweep of pointwise Hamiltonian maximization (same adjoint pair as above).
ControlPolicy improve_policy(const ControlProblem& problem, const ControlPolicy& policy, const SolutionPair& adjoint,
                             const NodeMap<Field>& xi);

struct PolicyIteration {
  ControlPolicy policy;
  std::vector<double> costs;
  std::vector<double> defects;
  std::vector<double> pass_fractions;
  int iterations = 0;
  bool converged = false;
  bool oscillation = false;
  std::string warning;
};

/// Iterates improve_policy to a fixed point. A period-2 cycle stops the
/// iteration and returns the iterate with the smallest cost.
PolicyIteration iterate_policy(const ControlProblem& problem, const ControlPolicy& start, int max_iters,
                               double tol_scale = 5.0);

inline constexpr int kBruteForcePolicyBits = 20;

struct BruteForceResult {
  ControlPolicy policy;
  double cost = 0.0;
  long long evaluated = 0;
};
/// Exhaustive search over every policy; first minimizer in enumeration order.
BruteForceResult brute_force_optimum(const ControlProblem& problem);

}  // namespace bspde
