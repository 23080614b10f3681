#include "bspde/control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bspde/parallel.hpp"

namespace bspde {

void ControlProblem::validate() const {
  if (!tree) throw DataError("control problem has no path tree");
  if (gamma.empty()) throw DataError("control set is empty");
  for (double v : gamma) {
    if (!std::isfinite(v)) throw DataError("control values must be finite");
  }
  if (!coefficients) throw DataError("control problem has no coefficient sampler");
  if (phi.size() != grid.size() || xi0.size() != grid.size()) throw DataError("phi / xi0 do not match the grid");
}

ControlPolicy ControlPolicy::constant(const PathTree& tree, int index) {
  ControlPolicy p{NodeMap<int>(tree)};
  for (std::int64_t i = 0; i < tree.total_nodes(); ++i) p.choice.at_flat(i) = index;
  return p;
}

bool operator==(const ControlPolicy& a, const ControlPolicy& b) {
  if (a.choice.size() != b.choice.size()) return false;
  const PathTree& tree = a.choice.tree();
  const std::int64_t non_leaf = tree.flat_index({tree.n_steps(), 0});
  for (std::int64_t i = 0; i < non_leaf; ++i) {
    if (a.choice.at_flat(i) != b.choice.at_flat(i)) return false;
  }
  return true;
}

namespace {

/// Everything one forward step needs at a node for a fixed control value.
struct StepData {
  CoefficientFields cf;
  std::vector<Field> div_b;  // D_i b^i, per i
  Field F;
  VectorField G;
  Field f;
};

StepData make_step_data(const ControlProblem& problem, NodeId node, double v) {
  const Grid& grid = problem.grid;
  const NodeContext ctx = NodeContext::at(*problem.tree, node);
  StepData s;
  s.cf = problem.coefficients(grid, ctx, v);
  if (s.cf.dim != grid.dim() || s.cf.wiener_dim != problem.tree->wiener_dim()) {
    throw DataError("control coefficients do not match grid/tree dimensions");
  }
  for (int i = 0; i < s.cf.dim; ++i) s.div_b.push_back(d1(grid, s.cf.b[i], i));
  s.F = problem.F ? problem.F(grid, ctx, v) : Field::Zero(grid.size());
  s.G = problem.G ? problem.G(grid, ctx, v) : VectorField::Zero(grid.size(), problem.tree->wiener_dim());
  s.f = problem.f ? problem.f(grid, ctx, v) : Field::Zero(grid.size());
  if (s.F.size() != grid.size() || s.f.size() != grid.size() || s.G.rows() != grid.size() ||
      s.G.cols() != problem.tree->wiener_dim()) {
    throw DataError("control forcing fields do not match grid/tree dimensions");
  }
  return s;
}

// The transport term is applied as D_i(b xi) - (D_i b) xi, which is b D_i xi
// in the continuum and transposes exactly to -b D_i u - (D_i b) u.
Field apply_L(const Grid& grid, const StepData& s, const Field& xi) {
  const auto& cf = s.cf;
  Field out = cf.c * xi;
  for (int i = 0; i < cf.dim; ++i) {
    out += flux_second(grid, cf.a_at(i, i), xi, i);
    for (int j = 0; j < cf.dim; ++j) {
      if (j != i) out += d1(grid, Field(cf.a_at(i, j) * d1(grid, xi, j)), i);
    }
    out += d1(grid, Field(cf.b[i] * xi), i) - s.div_b[i] * xi;
  }
  return out;
}

Field apply_M(const Grid& grid, const StepData& s, const Field& xi, int k) {
  Field out = s.cf.nu[k] * xi;
  for (int i = 0; i < s.cf.dim; ++i) out += s.cf.sigma_at(i, k) * d1(grid, xi, i);
  return out;
}

template <typename Provider>
NodeMap<Field> forward_with(const ControlProblem& problem, const ControlPolicy& policy, Provider&& data) {
  const PathTree& tree = *problem.tree;
  const Grid& grid = problem.grid;
  const double dt = tree.dt();
  const int dp = tree.wiener_dim();
  NodeMap<Field> xi(tree);
  xi[tree.root()] = problem.xi0;

  for (int n = 0; n < tree.n_steps(); ++n) {
    std::vector<Field> drift(tree.level_size(n));
    std::vector<VectorField> noise(tree.level_size(n));
    parallel_for(tree.level_size(n), problem.threads, [&](std::size_t j) {
      const NodeId node{n, static_cast<std::int64_t>(j)};
      const StepData& s = data(node, policy.choice[node]);
      const Field& x = xi[node];
      drift[j] = x + dt * (apply_L(grid, s, x) + s.F);
      noise[j].resize(grid.size(), dp);
      for (int k = 0; k < dp; ++k) noise[j].col(k) = apply_M(grid, s, x, k) + s.G.col(k);
    });
    if (tree.mode() == TreeMode::full) {
      for (std::int64_t j = 0; j < tree.level_size(n); ++j) {
        for (int slot = 0; slot < tree.branching(); ++slot) {
          Field next = drift[j];
          for (int k = 0; k < dp; ++k) next += tree.increment(slot)(k) * noise[j].col(k);
          xi[tree.child({n, j}, slot)] = std::move(next);
        }
      }
    } else {
      for (std::int64_t j = 0; j <= n + 1; ++j) {
        const NodeId child{n + 1, j};
        const double pc = tree.path_probability(child);
        Field next = Field::Zero(grid.size());
        for (const auto& link : tree.parents(child)) {
          const double w = tree.path_probability(link.parent) * tree.child_probability() / pc;
          next += w * (drift[link.parent.index] + tree.increment(link.slot)(0) * noise[link.parent.index].col(0));
        }
        xi[child] = std::move(next);
      }
    }
  }
  return xi;
}

template <typename Provider>
double cost_with(const ControlProblem& problem, const ControlPolicy& policy, const NodeMap<Field>& xi,
                 Provider&& data) {
  const PathTree& tree = *problem.tree;
  const Grid& grid = problem.grid;
  double total = 0.0;
  if (problem.f) {
    for (int n = 0; n < tree.n_steps(); ++n) {
      std::vector<double> level(tree.level_size(n));
      for (std::int64_t j = 0; j < tree.level_size(n); ++j) {
        const NodeId node{n, j};
        level[j] = inner_product(grid, data(node, policy.choice[node]).f, xi[node]);
      }
      total += tree.dt() * tree_expectation<double>(tree, n, level);
    }
  }
  const int last = tree.n_steps();
  std::vector<double> terminal(tree.level_size(last));
  for (std::int64_t j = 0; j < tree.level_size(last); ++j) terminal[j] = inner_product(grid, problem.phi, xi[{last, j}]);
  return total + tree_expectation<double>(tree, last, terminal);
}

void require_forward_stable(const ControlProblem& problem) {
  const double limit = forward_cfl_limit(problem);
  if (problem.tree->dt() > limit) {
    throw StabilityError("forward time step " + std::to_string(problem.tree->dt()) + " exceeds the stability bound " +
                             std::to_string(limit),
                         limit);
  }
}

void require_policy(const ControlProblem& problem, const ControlPolicy& policy) {
  if (policy.choice.size() != static_cast<std::size_t>(problem.tree->total_nodes())) {
    throw IncompleteField("policy is not defined on every node of the tree");
  }
  const std::int64_t non_leaf = problem.tree->flat_index({problem.tree->n_steps(), 0});
  for (std::int64_t i = 0; i < non_leaf; ++i) {
    const int c = policy.choice.at_flat(i);
    if (c < 0 || c >= static_cast<int>(problem.gamma.size())) throw DataError("policy index outside the control set");
  }
}

ProblemData fixed_control_problem(const ControlProblem& problem, double v) {
  ProblemData p;
  p.tree = problem.tree;
  p.grid = problem.grid;
  p.coeffs.dim = problem.grid.dim();
  p.coeffs.wiener_dim = problem.tree->wiener_dim();
  p.coeffs.dependence = Dependence::path;
  p.coeffs.sample = [&problem, v](const Grid& g, const NodeContext& ctx) { return problem.coefficients(g, ctx, v); };
  return p;
}

}  // namespace

double forward_cfl_limit(const ControlProblem& problem) {
  problem.validate();
  SolverConfig config;
  config.time_stepping = TimeStepping::explicit_euler;
  config.cfl_safety = problem.cfl_safety;
  double limit = std::numeric_limits<double>::infinity();
  for (double v : problem.gamma) {
    limit = std::min(limit, cfl_bounds(fixed_control_problem(problem, v), config).limit(TimeStepping::explicit_euler));
  }
  return limit;
}

NodeMap<Field> solve_forward(const ControlProblem& problem, const ControlPolicy& policy) {
  problem.validate();
  require_policy(problem, policy);
  require_forward_stable(problem);
  // One StepData per node in flight; levels are processed in order.
  std::vector<StepData> scratch(problem.tree->level_size(problem.tree->n_steps()));
  return forward_with(problem, policy, [&](NodeId node, int c) -> const StepData& {
    scratch[node.index] = make_step_data(problem, node, problem.gamma[c]);
    return scratch[node.index];
  });
}

double cost(const ControlProblem& problem, const ControlPolicy& policy, const NodeMap<Field>& xi) {
  problem.validate();
  require_policy(problem, policy);
  StepData s;
  return cost_with(problem, policy, xi, [&](NodeId node, int c) -> const StepData& {
    s.f = problem.f(problem.grid, NodeContext::at(*problem.tree, node), problem.gamma[c]);
    return s;
  });
}

ProblemData adjoint_problem(const ControlProblem& problem, const ControlPolicy& policy) {
  problem.validate();
  require_policy(problem, policy);
  auto shared = std::make_shared<ControlProblem>(problem);
  auto pol = std::make_shared<ControlPolicy>(policy);
  ProblemData p;
  p.tree = problem.tree;
  p.grid = problem.grid;
  p.level_markov = true;  // the policy is a function of the node
  p.coeffs.name = "adjoint";
  p.coeffs.dim = problem.grid.dim();
  p.coeffs.wiener_dim = problem.tree->wiener_dim();
  p.coeffs.dependence = Dependence::path;
  p.coeffs.sample = [shared, pol](const Grid& grid, const NodeContext& ctx) {
    const PathTree& tree = *shared->tree;
    const bool leaf = ctx.node.level == tree.n_steps();
    const double v = shared->gamma[leaf ? 0 : pol->choice[ctx.node]];
    CoefficientFields cf = shared->coefficients(grid, ctx, v);
    const int d = cf.dim;
    for (int i = 0; i < d; ++i) {
      Field div_a = Field::Zero(grid.size());
      for (int j = 0; j < d; ++j) div_a += d1(grid, cf.a_at(i, j), j);
      cf.c -= d1(grid, cf.b[i], i);
      cf.b[i] = div_a - cf.b[i];
    }
    for (int k = 0; k < cf.wiener_dim; ++k) {
      for (int i = 0; i < d; ++i) {
        cf.nu[k] -= d1(grid, cf.sigma_at(i, k), i);
        cf.sigma_at(i, k) = -cf.sigma_at(i, k);
      }
    }
    return cf;
  };
  if (problem.f) {
    p.forcing = [shared, pol](const Grid& grid, const NodeContext& ctx) {
      return shared->f(grid, ctx, shared->gamma[pol->choice[ctx.node]]);
    };
  }
  p.terminal = [shared](const Grid&, const NodeContext&) { return shared->phi; };
  return p;
}

SolutionPair solve_adjoint(const ControlProblem& problem, const ControlPolicy& policy) {
  SolverConfig config;
  config.time_stepping = TimeStepping::explicit_euler;
  config.cfl_safety = problem.cfl_safety;
  config.threads = problem.threads;
  return solve(adjoint_problem(problem, policy), config);
}

namespace {

double hamiltonian_with(const Grid& grid, const StepData& s, const Field& xi, const Field& u, const VectorField& q) {
  double h = -inner_product(grid, apply_L(grid, s, xi), u) - inner_product(grid, s.F, u) - inner_product(grid, s.f, xi);
  for (int k = 0; k < s.cf.wiener_dim; ++k) {
    h -= inner_product(grid, apply_M(grid, s, xi, k), q.col(k)) + inner_product(grid, s.G.col(k), q.col(k));
  }
  return h;
}

/// H over gamma at one node.
std::vector<double> hamiltonians(const ControlProblem& problem, NodeId node, const Field& xi, const Field& u,
                                 const VectorField& q) {
  std::vector<double> h;
  for (double v : problem.gamma) h.push_back(hamiltonian_with(problem.grid, make_step_data(problem, node, v), xi, u, q));
  return h;
}

int first_argmax(const std::vector<double>& h) {
  double scale = 0.0;
  for (double x : h) scale = std::max(scale, std::abs(x));
  const double tie = 1e-12 * scale;
  int best = 0;
  for (std::size_t i = 1; i < h.size(); ++i) {
    if (h[i] > h[best] + tie) best = static_cast<int>(i);
  }
  return best;
}

std::int64_t non_leaf_count(const PathTree& tree) { return tree.flat_index({tree.n_steps(), 0}); }

// E_n[u_{n+1}]: with q_n it is the adjoint pair of the step [t_n, t_{n+1}],
// which is what a control choice at the node actually pairs with.
Field step_mean(const PathTree& tree, const SolutionPair& adjoint, NodeId node) {
  std::vector<Field> children;
  children.reserve(tree.branching());
  for (int slot = 0; slot < tree.branching(); ++slot) children.push_back(adjoint.u[tree.child(node, slot)]);
  return conditional_expectation<Field>(tree, children);
}

}  // namespace

double hamiltonian(const ControlProblem& problem, NodeId node, const Field& xi, double v, const Field& u,
                   const VectorField& q) {
  return hamiltonian_with(problem.grid, make_step_data(problem, node, v), xi, u, q);
}

MaxPrincipleReport check_max_principle(const ControlProblem& problem, const ControlPolicy& policy,
                                       const NodeMap<Field>& xi, const SolutionPair& adjoint, double abs_tol,
                                       double rel_factor) {
  problem.validate();
  require_policy(problem, policy);
  const PathTree& tree = *problem.tree;
  const std::int64_t count = non_leaf_count(tree);
  std::vector<std::vector<double>> values(count);
  parallel_for(count, problem.threads, [&](std::size_t i) {
    const NodeId node = tree.node_at(static_cast<std::int64_t>(i));
    values[i] = hamiltonians(problem, node, xi[node], step_mean(tree, adjoint, node), adjoint.q[node]);
  });

  MaxPrincipleReport report;
  for (const auto& h : values) {
    for (double x : h) report.scale = std::max(report.scale, std::abs(x));
  }
  const double h = problem.grid.spacing();
  report.tolerance = abs_tol + rel_factor * (tree.dt() + h * h) * report.scale;
  int passed = 0;
  for (std::int64_t i = 0; i < count; ++i) {
    const auto& hv = values[i];
    NodeCheck c;
    c.node = tree.node_at(i);
    c.best_index = first_argmax(hv);
    c.best = hv[c.best_index];
    c.chosen = hv[policy.choice.at_flat(i)];
    const auto [lo, hi] = std::minmax_element(hv.begin(), hv.end());
    c.flat = *hi - *lo <= 1e-12 * std::max(1.0, std::abs(*hi));
    c.passed = c.chosen >= c.best - report.tolerance;
    if (c.flat) ++report.flat_nodes;
    if (c.passed) ++passed;
    report.nodes.push_back(c);
  }
  report.pass_fraction = count ? static_cast<double>(passed) / count : 1.0;
  return report;
}

DualityReport duality_check(const ControlProblem& problem, const ControlPolicy& policy, const NodeMap<Field>& xi,
                            const SolutionPair& adjoint) {
  problem.validate();
  require_policy(problem, policy);
  const PathTree& tree = *problem.tree;
  const Grid& grid = problem.grid;
  DualityReport r;
  r.cost = cost(problem, policy, xi);
  r.dual = inner_product(grid, problem.xi0, adjoint.u[tree.root()]);
  if (problem.F || problem.G) {
    for (int n = 0; n < tree.n_steps(); ++n) {
      std::vector<double> level(tree.level_size(n));
      for (std::int64_t j = 0; j < tree.level_size(n); ++j) {
        const NodeId node{n, j};
        const NodeContext ctx = NodeContext::at(tree, node);
        const double v = policy.value(problem, node);
        double s = 0.0;
        if (problem.F) s += inner_product(grid, problem.F(grid, ctx, v), adjoint.u[node]);
        if (problem.G) {
          const VectorField g = problem.G(grid, ctx, v);
          for (int k = 0; k < tree.wiener_dim(); ++k) s += inner_product(grid, g.col(k), adjoint.q[node].col(k));
        }
        level[j] = s;
      }
      r.dual += tree.dt() * tree_expectation<double>(tree, n, level);
    }
  }
  r.defect = std::abs(r.cost - r.dual);
  return r;
}

ControlPolicy improve_policy(const ControlProblem& problem, const ControlPolicy& policy, const SolutionPair& adjoint,
                             const NodeMap<Field>& xi) {
  problem.validate();
  require_policy(problem, policy);
  const PathTree& tree = *problem.tree;
  ControlPolicy next = policy;
  if (problem.gamma.size() == 1) return next;
  parallel_for(non_leaf_count(tree), problem.threads, [&](std::size_t i) {
    const NodeId node = tree.node_at(static_cast<std::int64_t>(i));
    next.choice.at_flat(i) =
        first_argmax(hamiltonians(problem, node, xi[node], step_mean(tree, adjoint, node), adjoint.q[node]));
  });
  return next;
}

PolicyIteration iterate_policy(const ControlProblem& problem, const ControlPolicy& start, int max_iters,
                               double tol_scale) {
  if (max_iters < 1) throw DataError("policy iteration needs max_iters >= 1");
  PolicyIteration out;
  std::vector<ControlPolicy> history{start};
  ControlPolicy policy = start;
  for (int it = 0; it <= max_iters; ++it) {
    const NodeMap<Field> xi = solve_forward(problem, policy);
    const SolutionPair adj = solve_adjoint(problem, policy);
    const DualityReport dual = duality_check(problem, policy, xi, adj);
    out.costs.push_back(dual.cost);
    out.defects.push_back(dual.defect);
    out.pass_fractions.push_back(check_max_principle(problem, policy, xi, adj, 0.0, tol_scale).pass_fraction);
    if (it == max_iters) break;
    ControlPolicy next = improve_policy(problem, policy, adj, xi);
    if (next == policy) {
      out.converged = true;
      break;
    }
    out.iterations = it + 1;
    if (history.size() >= 2 && next == history[history.size() - 2]) {
      out.oscillation = true;
      break;
    }
    history.push_back(next);
    policy = std::move(next);
  }
  if (out.oscillation) {
    const auto best = std::min_element(out.costs.begin(), out.costs.end()) - out.costs.begin();
    out.policy = history[best];
    out.warning = "policy iteration oscillates with period 2; returning the iterate with the smallest cost";
  } else {
    out.policy = policy;
    if (!out.converged) out.warning = "policy iteration stopped at max_iters without reaching a fixed point";
  }
  return out;
}

BruteForceResult brute_force_optimum(const ControlProblem& problem) {
  problem.validate();
  require_forward_stable(problem);
  const PathTree& tree = *problem.tree;
  const std::int64_t nodes = non_leaf_count(tree);
  const double bits = nodes * std::log2(static_cast<double>(problem.gamma.size()));
  if (bits > kBruteForcePolicyBits) {
    throw BudgetError("exhaustive policy search needs 2^" + std::to_string(static_cast<long long>(std::ceil(bits))) +
                          " evaluations",
                      static_cast<long long>(std::ceil(bits)), kBruteForcePolicyBits);
  }
  const int k = static_cast<int>(problem.gamma.size());
  std::vector<StepData> cache;
  cache.reserve(nodes * k);
  for (std::int64_t i = 0; i < nodes; ++i) {
    for (double v : problem.gamma) cache.push_back(make_step_data(problem, tree.node_at(i), v));
  }
  auto provider = [&](NodeId node, int c) -> const StepData& { return cache[tree.flat_index(node) * k + c]; };

  ControlProblem serial = problem;
  serial.threads = 1;
  ControlPolicy policy = ControlPolicy::constant(tree, 0);
  BruteForceResult best{policy, std::numeric_limits<double>::infinity(), 0};
  while (true) {
    const double j = cost_with(serial, policy, forward_with(serial, policy, provider), provider);
    ++best.evaluated;
    if (j < best.cost) {
      best.cost = j;
      best.policy = policy;
    }
    std::int64_t i = 0;
    while (i < nodes && ++policy.choice.at_flat(i) == k) policy.choice.at_flat(i++) = 0;
    if (i == nodes) break;
  }
  return best;
}

}  // namespace bspde
