#include "bspde/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "bspde/parallel.hpp"

namespace bspde {

std::string to_string(TimeStepping s) { return s == TimeStepping::explicit_euler ? "explicit" : "semi_implicit"; }

TimeStepping time_stepping_from_string(const std::string& name) {
  if (name == "explicit") return TimeStepping::explicit_euler;
  if (name == "semi_implicit" || name == "semi-implicit") return TimeStepping::semi_implicit;
  throw UnsupportedMode("unknown time stepping '" + name + "'");
}

double CflBounds::limit(TimeStepping s) const {
  return s == TimeStepping::explicit_euler ? std::min(diffusion, transport) : transport;
}

namespace {

using SparseMatrix = Eigen::SparseMatrix<double>;

SparseMatrix first_difference_matrix(const Grid& grid, int axis) {
  const Eigen::Index n = grid.size();
  const int m = grid.points_per_dim();
  const double w = 0.5 / grid.spacing();
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(2 * n);
  for (Eigen::Index p = 0; p < n; ++p) {
    const int i0 = grid.axis_index(p, 0);
    const int i1 = grid.dim() == 2 ? grid.axis_index(p, 1) : 0;
    Eigen::Index plus, minus;
    if (axis == 0) {
      plus = grid.flat((i0 + 1) % m, i1);
      minus = grid.flat((i0 - 1 + m) % m, i1);
    } else {
      plus = grid.flat(i0, (i1 + 1) % m);
      minus = grid.flat(i0, (i1 - 1 + m) % m);
    }
    t.emplace_back(p, plus, w);
    t.emplace_back(p, minus, -w);
  }
  SparseMatrix d(n, n);
  d.setFromTriplets(t.begin(), t.end());
  return d;
}

/// (f(x) - f(x - h)) / h as a matrix.
SparseMatrix backward_difference_matrix(const Grid& grid, int axis) {
  const Eigen::Index n = grid.size();
  const int m = grid.points_per_dim();
  const double w = 1.0 / grid.spacing();
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(2 * n);
  for (Eigen::Index p = 0; p < n; ++p) {
    const int i0 = grid.axis_index(p, 0);
    const int i1 = grid.dim() == 2 ? grid.axis_index(p, 1) : 0;
    const Eigen::Index minus = axis == 0 ? grid.flat((i0 - 1 + m) % m, i1) : grid.flat(i0, (i1 - 1 + m) % m);
    t.emplace_back(p, p, w);
    t.emplace_back(p, minus, -w);
  }
  SparseMatrix d(n, n);
  d.setFromTriplets(t.begin(), t.end());
  return d;
}

/// Coefficients of one node plus the derivative fields the scheme needs.
struct NodeOperator {
  CoefficientFields coeffs;
  std::vector<Field> div_a;      // sum_j D_j a^{ij}, per i
  std::vector<Field> div_sigma;  // sum_i D_i sigma^{ik}, per k
  std::shared_ptr<Eigen::SimplicialLDLT<SparseMatrix>> implicit;
};

std::shared_ptr<NodeOperator> build_operator(const ProblemData& problem, const SolverConfig& config,
                                             const NodeContext& ctx) {
  const Grid& grid = problem.grid;
  auto op = std::make_shared<NodeOperator>();
  op->coeffs = problem.coeffs.sample(grid, ctx);
  const auto& cf = op->coeffs;
  const int d = cf.dim;
  if (d != grid.dim() || cf.wiener_dim != problem.tree->wiener_dim()) {
    throw DataError("coefficient dimensions do not match grid/tree");
  }
  for (int i = 0; i < d; ++i) {
    Field s = Field::Zero(grid.size());
    for (int j = 0; j < d; ++j) s += d1(grid, cf.a_at(i, j), j);
    op->div_a.push_back(std::move(s));
  }
  for (int k = 0; k < cf.wiener_dim; ++k) {
    Field s = Field::Zero(grid.size());
    for (int i = 0; i < d; ++i) s += d1(grid, cf.sigma_at(i, k), i);
    op->div_sigma.push_back(std::move(s));
  }
  if (config.time_stepping == TimeStepping::semi_implicit) {
    const double dt = problem.tree->dt();
    std::vector<SparseMatrix> D, B;
    for (int i = 0; i < d; ++i) {
      D.push_back(first_difference_matrix(grid, i));
      B.push_back(backward_difference_matrix(grid, i));
    }
    // diagonal terms in compact flux form, -B^T diag(abar) B; mixed terms central
    SparseMatrix K(grid.size(), grid.size());
    for (int i = 0; i < d; ++i) {
      const Eigen::VectorXd face = (face_average(grid, cf.a_at(i, i), i) + config.viscosity).matrix();
      K -= SparseMatrix(B[i].transpose()) * face.asDiagonal() * B[i];
      for (int j = 0; j < d; ++j) {
        if (j == i) continue;
        const Eigen::VectorXd diag = cf.a_at(i, j).matrix();
        K += D[j] * diag.asDiagonal() * D[i];
      }
    }
    SparseMatrix I(grid.size(), grid.size());
    I.setIdentity();
    SparseMatrix system = I - dt * K;
    system.makeCompressed();
    op->implicit = std::make_shared<Eigen::SimplicialLDLT<SparseMatrix>>(system);
    if (op->implicit->info() != Eigen::Success) {
      throw SingularOperator("semi-implicit system factorization failed at level " + std::to_string(ctx.node.level) +
                             " (is a positive semidefinite?)");
    }
  }
  return op;
}

/// sum_i D+_i((a^{ii} + eps)~ D-_i u) + sum_{i != j} D_j(a^{ij} D_i u)
Field implicit_part(const Grid& grid, const NodeOperator& op, double viscosity, const Field& u) {
  const auto& cf = op.coeffs;
  Field out = Field::Zero(grid.size());
  for (int i = 0; i < cf.dim; ++i) {
    out += flux_second(grid, Field(cf.a_at(i, i) + viscosity), u, i);
    if (cf.dim == 1) continue;
    const Field du = d1(grid, u, i);
    for (int j = 0; j < cf.dim; ++j) {
      if (j != i) out += d1(grid, Field(cf.a_at(i, j) * du), j);
    }
  }
  return out;
}

/// Terms kept explicit in both modes: -(div a) . grad u + b . grad u + c u
/// + D_i(sigma^{ik} q^k) - (div sigma)_k q^k + nu^k q^k + f.
Field explicit_part(const Grid& grid, const NodeOperator& op, const Field& u, const VectorField& q, const Field& f) {
  const auto& cf = op.coeffs;
  Field out = cf.c * u + f;
  for (int i = 0; i < cf.dim; ++i) out += (cf.b[i] - op.div_a[i]) * d1(grid, u, i);
  for (int k = 0; k < cf.wiener_dim; ++k) {
    const Field qk = q.col(k);
    for (int i = 0; i < cf.dim; ++i) out += d1(grid, Field(cf.sigma_at(i, k) * qk), i);
    out += (cf.nu[k] - op.div_sigma[k]) * qk;
  }
  return out;
}

Field forcing_at(const ProblemData& problem, const NodeContext& ctx) {
  if (!problem.forcing) return Field::Zero(problem.grid.size());
  Field f = problem.forcing(problem.grid, ctx);
  if (f.size() != problem.grid.size()) throw DataError("forcing field does not match grid");
  return f;
}

StepResult step_with(const NodeOperator& op, std::span<const Field> u_next, const PathTree& tree, const Grid& grid,
                     const SolverConfig& config, const Field& f) {
  const double dt = tree.dt();
  const Field mean = conditional_expectation<Field>(tree, u_next);
  const std::vector<Field> qs = martingale_representation<Field>(tree, u_next);
  StepResult out;
  out.q.resize(grid.size(), tree.wiener_dim());
  for (int k = 0; k < tree.wiener_dim(); ++k) out.q.col(k) = qs[k];

  if (config.time_stepping == TimeStepping::explicit_euler) {
    out.u = mean + dt * (implicit_part(grid, op, config.viscosity, mean) + explicit_part(grid, op, mean, out.q, f));
  } else {
    Field lagged = mean;
    const int passes = std::max(1, config.corrector_iterations);
    for (int pass = 0; pass < passes; ++pass) {
      const Field rhs = mean + dt * explicit_part(grid, op, lagged, out.q, f);
      Eigen::VectorXd sol = op.implicit->solve(rhs.matrix());
      if (op.implicit->info() != Eigen::Success || !sol.allFinite()) {
        throw SingularOperator("semi-implicit solve failed");
      }
      lagged = sol.array();
    }
    out.u = std::move(lagged);
  }
  if (!out.u.allFinite()) throw SingularOperator("non-finite values produced by the backward step");

  out.r = out.q;
  for (int k = 0; k < tree.wiener_dim(); ++k) {
    for (int i = 0; i < grid.dim(); ++i) out.r.col(k) += op.coeffs.sigma_at(i, k) * d1(grid, out.u, i);
  }
  return out;
}

/// Operators shared across nodes according to the coefficient dependence.
class OperatorCache {
 public:
  OperatorCache(const ProblemData& problem, const SolverConfig& config) : problem_(problem), config_(config) {}

  std::shared_ptr<NodeOperator> get(NodeId node) {
    const auto dep = problem_.coeffs.dependence;
    if (dep == Dependence::path) return build_operator(problem_, config_, NodeContext::at(*problem_.tree, node));
    const int key = dep == Dependence::spatial ? 0 : node.level;
    std::lock_guard lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    auto op = build_operator(problem_, config_, NodeContext::at(*problem_.tree, dep == Dependence::spatial ? NodeId{0, 0} : NodeId{node.level, 0}));
    if (dep == Dependence::time) cache_.clear();  // levels are visited one at a time
    cache_.emplace(key, op);
    return op;
  }

 private:
  const ProblemData& problem_;
  const SolverConfig& config_;
  std::map<int, std::shared_ptr<NodeOperator>> cache_;
  std::mutex mutex_;
};

void validate(const ProblemData& problem) {
  if (!problem.tree) throw DataError("problem has no path tree");
  if (!problem.terminal) throw DataError("problem has no terminal condition");
  if (!problem.coeffs.sample) throw DataError("problem has no coefficient sampler");
  if (problem.tree->mode() == TreeMode::recombining && !problem.level_markov) {
    throw UnsupportedMode("problem data is path dependent; it needs a full tree (recombining requires level-Markov data)");
  }
}

}  // namespace

CflBounds cfl_bounds(const ProblemData& problem, const SolverConfig& config) {
  const Grid& grid = problem.grid;
  const double h = grid.spacing();
  double max_a = 0.0;
  double max_bt = 0.0;
  for (const NodeId& node : sample_nodes(*problem.tree, problem.coeffs.dependence, 256)) {
    const CoefficientFields cf = problem.coeffs.sample(grid, NodeContext::at(*problem.tree, node));
    const DerivedCoefficients der = derive(cf, grid);
    for (Eigen::Index p = 0; p < grid.size(); ++p) {
      const Eigen::MatrixXd a = cf.a_matrix(p);
      max_a = std::max(max_a, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a, Eigen::EigenvaluesOnly)
                                  .eigenvalues()
                                  .cwiseAbs()
                                  .maxCoeff());
      double bt2 = 0.0;
      for (const Field& b : der.btilde) bt2 += b(p) * b(p);
      max_bt = std::max(max_bt, std::sqrt(bt2));
    }
  }
  CflBounds bounds;
  const double diffusivity = config.viscosity + max_a;
  bounds.diffusion = diffusivity > 0.0 ? config.cfl_safety * h * h / (2.0 * grid.dim() * diffusivity)
                                       : std::numeric_limits<double>::infinity();
  bounds.transport = max_bt > 1e-12 ? config.cfl_safety * h / max_bt : std::numeric_limits<double>::infinity();
  return bounds;
}

StepResult backward_step(std::span<const Field> u_next, NodeId node, const ProblemData& problem,
                         const SolverConfig& config) {
  validate(problem);
  const NodeContext ctx = NodeContext::at(*problem.tree, node);
  const auto op = build_operator(problem, config, ctx);
  return step_with(*op, u_next, *problem.tree, problem.grid, config, forcing_at(problem, ctx));
}

SolutionPair solve(const ProblemData& problem, const SolverConfig& config) {
  validate(problem);
  const PathTree& tree = *problem.tree;
  const Grid& grid = problem.grid;
  if (config.viscosity < 0.0) throw DataError("viscosity must be nonnegative");
  if (!(config.cfl_safety > 0.0 && config.cfl_safety <= 1.0)) throw DataError("cfl_safety must lie in (0, 1]");

  if (config.check_parabolicity) {
    const auto nodes = sample_nodes(tree, problem.coeffs.dependence, 256);
    const auto report = check_parabolicity(problem.coeffs, grid, tree, nodes, ParabolicityMode::degenerate);
    if (!report.passed) {
      throw PreconditionError("degenerate parabolicity violated: min eigenvalue of 2a - sigma sigma^T is " +
                              std::to_string(report.min_eigenvalue));
    }
  }
  const CflBounds bounds = cfl_bounds(problem, config);
  const double limit = bounds.limit(config.time_stepping);
  if (tree.dt() > limit && !config.allow_cfl_violation) {
    throw StabilityError("time step " + std::to_string(tree.dt()) + " exceeds the stability bound " +
                             std::to_string(limit) + "; use dt <= " + std::to_string(limit) +
                             (config.time_stepping == TimeStepping::explicit_euler ? " or semi_implicit stepping" : ""),
                         limit);
  }

  SolutionPair sol{problem.tree, grid, NodeMap<Field>(tree), NodeMap<VectorField>(tree), NodeMap<VectorField>(tree), {}};
  sol.meta = {tree.dt(),     grid.spacing(),         config.viscosity, config.time_stepping, tree.mode(),
              tree.n_steps(), grid.points_per_dim(), grid.dim(),       tree.wiener_dim()};

  const int last = tree.n_steps();
  parallel_for(tree.level_size(last), config.threads, [&](std::size_t j) {
    const NodeId leaf{last, static_cast<std::int64_t>(j)};
    Field phi = problem.terminal(grid, NodeContext::at(tree, leaf));
    if (phi.size() != grid.size()) throw DataError("terminal field does not match grid");
    sol.u[leaf] = std::move(phi);
  });

  OperatorCache cache(problem, config);
  for (int n = last - 1; n >= 0; --n) {
    parallel_for(tree.level_size(n), config.threads, [&](std::size_t j) {
      const NodeId node{n, static_cast<std::int64_t>(j)};
      std::vector<Field> children;
      children.reserve(tree.branching());
      for (int slot = 0; slot < tree.branching(); ++slot) children.push_back(sol.u[tree.child(node, slot)]);
      const auto op = cache.get(node);
      StepResult s = step_with(*op, children, tree, grid, config, forcing_at(problem, NodeContext::at(tree, node)));
      sol.u[node] = std::move(s.u);
      sol.q[node] = std::move(s.q);
      sol.r[node] = std::move(s.r);
    });
  }
  return sol;
}

WeakFormReport weak_form_residual(const SolutionPair& solution, const ProblemData& problem,
                                  std::span<const Field> test_functions, const SolverConfig& config) {
  const PathTree& tree = *solution.tree;
  const Grid& grid = solution.grid;
  const double dt = tree.dt();
  const double viscosity = solution.meta.viscosity;
  const bool semi = solution.meta.time_stepping == TimeStepping::semi_implicit;
  SolverConfig op_config = config;
  op_config.time_stepping = TimeStepping::explicit_euler;  // no factorization needed here
  OperatorCache cache(problem, op_config);

  std::vector<std::vector<Field>> grad_eta, back_eta;
  for (const Field& eta : test_functions) {
    std::vector<Field> g, b;
    for (int j = 0; j < grid.dim(); ++j) {
      g.push_back(d1(grid, eta, j));
      b.push_back(d1_backward(grid, eta, j));
    }
    grad_eta.push_back(std::move(g));
    back_eta.push_back(std::move(b));
  }

  WeakFormReport report;
  for (int n = 0; n < tree.n_steps(); ++n) {
    for (std::int64_t j = 0; j < tree.level_size(n); ++j) {
      const NodeId node{n, j};
      std::vector<Field> children;
      for (int slot = 0; slot < tree.branching(); ++slot) children.push_back(solution.u[tree.child(node, slot)]);
      const Field mean = conditional_expectation<Field>(tree, children);
      const Field& un = solution.u[node];
      const VectorField& q = solution.q[node];
      const Field& u_impl = semi ? un : mean;
      const auto op = cache.get(node);
      const auto& cf = op->coeffs;
      const Field f = forcing_at(problem, NodeContext::at(tree, node));

      // central flux_j = a^{ij} D_i u (i != j) + sigma^{jk} q^k, face flux_i = (a^{ii} + eps)~ D-_i u
      std::vector<Field> flux(grid.dim(), Field::Zero(grid.size()));
      std::vector<Field> face(grid.dim());
      Field lower = cf.c * mean + f;
      for (int i = 0; i < grid.dim(); ++i) {
        face[i] = face_average(grid, Field(cf.a_at(i, i) + viscosity), i) * d1_backward(grid, u_impl, i);
        if (grid.dim() == 2) {
          const Field du_impl = d1(grid, u_impl, i);
          for (int jj = 0; jj < grid.dim(); ++jj) {
            if (jj != i) flux[jj] += cf.a_at(i, jj) * du_impl;
          }
        }
        lower += (cf.b[i] - op->div_a[i]) * d1(grid, mean, i);
      }
      for (int k = 0; k < tree.wiener_dim(); ++k) {
        for (int jj = 0; jj < grid.dim(); ++jj) flux[jj] += cf.sigma_at(jj, k) * q.col(k);
        lower += (cf.nu[k] - op->div_sigma[k]) * q.col(k);
      }

      for (std::size_t t = 0; t < test_functions.size(); ++t) {
        const Field& eta = test_functions[t];
        double drift = inner_product(grid, lower, eta);
        for (int jj = 0; jj < grid.dim(); ++jj) {
          drift -= inner_product(grid, flux[jj], grad_eta[t][jj]);
          drift -= inner_product(grid, face[jj], back_eta[t][jj]);
        }
        const double un_eta = inner_product(grid, un, eta);
        Eigen::VectorXd q_eta(tree.wiener_dim());
        for (int k = 0; k < tree.wiener_dim(); ++k) q_eta(k) = inner_product(grid, q.col(k), eta);

        std::vector<double> res(tree.branching());
        for (int slot = 0; slot < tree.branching(); ++slot) {
          res[slot] = un_eta - inner_product(grid, children[slot], eta) - dt * drift + q_eta.dot(tree.increment(slot));
        }
        const double res_mean = conditional_expectation<double>(tree, res);
        const std::vector<double> res_q = martingale_representation<double>(tree, res);
        for (int slot = 0; slot < tree.branching(); ++slot) {
          double projected = res_mean;
          for (int k = 0; k < tree.wiener_dim(); ++k) projected += res_q[k] * tree.increment(slot)(k);
          const double value = std::abs(projected) / dt;
          if (value > report.max_residual) {
            report.max_residual = value;
            report.worst_node = node;
            report.worst_test = static_cast<int>(t);
          }
        }
      }
    }
  }
  return report;
}

std::vector<Field> default_test_functions(const Grid& grid) {
  const double R = grid.half_width();
  std::vector<std::array<double, 2>> centers = {{0.0, 0.0}, {0.3 * R, -0.2 * R}, {-0.35 * R, 0.25 * R}};
  const double radius = 0.45 * R;
  std::vector<Field> out;
  for (const auto& c : centers) {
    out.push_back(grid.sample([&](const std::array<double, kMaxDimension>& x) {
      double r2 = 0.0;
      for (int a = 0; a < grid.dim(); ++a) r2 += (x[a] - c[a]) * (x[a] - c[a]);
      r2 /= radius * radius;
      return r2 < 1.0 ? std::exp(1.0 / (r2 - 1.0)) : 0.0;
    }));
  }
  return out;
}

double sup_difference(const SolutionPair& a, const SolutionPair& b, int m) {
  const PathTree& tree = *a.tree;
  NodeMap<double> gap(tree);
  for (std::int64_t f = 0; f < tree.total_nodes(); ++f) {
    const NodeId node = tree.node_at(f);
    gap[node] = sobolev_norm_pow(a.grid, Field(a.u[node] - b.u[node]), m, 2.0);
  }
  return std::sqrt(expected_path_supremum(tree, gap));
}

double r_difference(const SolutionPair& a, const SolutionPair& b, int m) {
  const PathTree& tree = *a.tree;
  double total = 0.0;
  for (int n = 0; n < tree.n_steps(); ++n) {
    std::vector<double> level;
    for (std::int64_t j = 0; j < tree.level_size(n); ++j) {
      level.push_back(sobolev_norm_pow(a.grid, VectorField(a.r[{n, j}] - b.r[{n, j}]), m, 2.0));
    }
    total += tree.dt() * tree_expectation<double>(tree, n, level);
  }
  return total;
}

ContinuationReport viscosity_continuation(const ProblemData& problem, std::span<const double> schedule,
                                          const SolverConfig& config, int m1) {
  if (schedule.empty()) throw DataError("viscosity schedule is empty");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (!(schedule[i] > 0.0)) throw DataError("viscosity schedule must be positive");
    if (i > 0 && !(schedule[i] < schedule[i - 1])) throw DataError("viscosity schedule must be strictly decreasing");
  }
  ContinuationReport report;
  for (double eps : schedule) {
    SolverConfig c = config;
    c.viscosity = eps;
    try {
      report.solutions.push_back(solve(problem, c));
    } catch (const Error& e) {
      report.failure = "eps = " + std::to_string(eps) + ": " + e.what();
      break;
    }
    report.schedule.push_back(eps);
  }
  for (std::size_t i = 0; i + 1 < report.solutions.size(); ++i) {
    report.sup_u_difference.push_back(sup_difference(report.solutions[i], report.solutions[i + 1], m1));
    report.r_difference.push_back(r_difference(report.solutions[i], report.solutions[i + 1], m1));
    if (i > 0 && !(report.sup_u_difference[i] < report.sup_u_difference[i - 1])) report.monotone = false;
  }
  return report;
}

}  // namespace bspde
