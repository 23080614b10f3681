#include "bspde/oracles.hpp"

#include <cmath>
#include <complex>
#include <numbers>

namespace bspde {

namespace {

using cd = std::complex<double>;

/// Row k: exp(-i kappa_k x_j) over the grid points of one axis.
Eigen::MatrixXcd forward_matrix(const Grid& grid, const Eigen::VectorXd& kappa) {
  const int m = grid.points_per_dim();
  Eigen::MatrixXcd w(m, m);
  for (int k = 0; k < m; ++k) {
    for (int j = 0; j < m; ++j) {
      const double x = -grid.half_width() + j * grid.spacing();
      w(k, j) = std::polar(1.0, -kappa(k) * x);
    }
  }
  return w;
}

}  // namespace

SpectralField::SpectralField(const Grid& grid, const Field& values) : grid_(grid) {
  if (values.size() != grid.size()) throw DataError("field does not match grid");
  const int m = grid.points_per_dim();
  wavenumbers_.resize(m);
  for (int k = 0; k < m; ++k) {
    const int mode = k < m / 2 ? k : k - m;
    wavenumbers_(k) = std::numbers::pi * mode / grid.half_width();
  }
  const Eigen::MatrixXcd w = forward_matrix(grid, wavenumbers_);
  if (grid.dim() == 1) {
    coeffs_ = w * values.matrix().cast<cd>() / static_cast<double>(m);
  } else {
    const Eigen::MatrixXcd f = Eigen::Map<const Eigen::MatrixXd>(values.data(), m, m).cast<cd>();
    coeffs_ = w * f * w.transpose() / static_cast<double>(m * m);
  }
}

Field SpectralField::evaluate(const Eigen::MatrixXd& a, double tau, MultiIndex alpha) const {
  const int m = grid_.points_per_dim();
  const int d = grid_.dim();
  if (a.rows() != d || a.cols() != d) throw DataError("diffusion matrix does not match grid dimension");
  const int nyquist = m / 2;
  auto factor = [&](int k, int axis) -> cd {
    const int order = alpha.orders[axis];
    if (order % 2 == 1 && k == nyquist) return 0.0;
    return std::pow(cd(0.0, wavenumbers_(k)), order);
  };
  Eigen::MatrixXcd c = coeffs_;
  for (Eigen::Index k1 = 0; k1 < c.cols(); ++k1) {
    for (Eigen::Index k0 = 0; k0 < c.rows(); ++k0) {
      double quad = a(0, 0) * wavenumbers_(k0) * wavenumbers_(k0);
      cd mult = factor(static_cast<int>(k0), 0);
      if (d == 2) {
        const double k1v = wavenumbers_(k1);
        quad += 2.0 * a(0, 1) * wavenumbers_(k0) * k1v + a(1, 1) * k1v * k1v;
        mult *= factor(static_cast<int>(k1), 1);
      }
      c(k0, k1) *= mult * std::exp(-tau * quad);
    }
  }
  const Eigen::MatrixXcd v = forward_matrix(grid_, wavenumbers_).adjoint();
  Field out(grid_.size());
  if (d == 1) {
    out = (v * c).real().array();
  } else {
    const Eigen::MatrixXd f = (v * c * v.transpose()).real();
    out = Eigen::Map<const Field>(f.data(), grid_.size());
  }
  return out;
}

OracleSolution heat_smoothing_oracle(const Grid& grid, const Field& phi, const Eigen::MatrixXd& a, double horizon) {
  if (a.rows() != grid.dim() || a.cols() != grid.dim()) throw DataError("diffusion matrix does not match grid");
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-14) throw DataError("diffusion matrix must be symmetric");
  if (Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a).eigenvalues()(0) < -kTolPsd) {
    throw PreconditionError("diffusion matrix must be positive semidefinite");
  }
  if (!(horizon > 0.0)) throw DataError("horizon must be positive");
  auto spec = std::make_shared<SpectralField>(grid, phi);
  OracleSolution o;
  o.derivation = "heat: q = 0, u(t) = exp((T - t) a:D^2) phi";
  o.u = [spec, a, horizon](const Grid& g, const NodeContext& ctx) {
    if (!(g == spec->grid())) throw DataError("oracle evaluated on a different grid");
    return spec->evaluate(a, horizon - ctx.time);
  };
  o.q = [spec](const Grid& g, const NodeContext& ctx) {
    return VectorField::Zero(g.size(), std::max<Eigen::Index>(1, ctx.wiener.size())).eval();
  };
  return o;
}

OracleSolution wiener_linear_oracle(const Grid& grid, const Field& g, double a, double sigma, double horizon) {
  if (grid.dim() != 1) throw DataError("wiener oracle is one-dimensional");
  if (!(2.0 * a - sigma * sigma >= -kTolPsd)) throw PreconditionError("wiener oracle needs a >= sigma^2 / 2");
  if (!(horizon > 0.0)) throw DataError("horizon must be positive");
  auto spec = std::make_shared<SpectralField>(grid, g);
  const Eigen::MatrixXd am = Eigen::MatrixXd::Constant(1, 1, a);
  OracleSolution o;
  o.derivation = "wiener: u = W_t h + sigma (T - t) D h, q = h, h(t) = exp((T - t) a D^2) g";
  o.u = [spec, am, sigma, horizon](const Grid& gr, const NodeContext& ctx) {
    if (!(gr == spec->grid())) throw DataError("oracle evaluated on a different grid");
    const double tau = horizon - ctx.time;
    const double w = ctx.wiener.size() ? ctx.wiener(0) : 0.0;
    Field u = w * spec->evaluate(am, tau);
    if (sigma != 0.0 && tau != 0.0) u += sigma * tau * spec->evaluate(am, tau, MultiIndex::axis(0));
    return u;
  };
  o.q = [spec, am, horizon](const Grid& gr, const NodeContext& ctx) {
    if (!(gr == spec->grid())) throw DataError("oracle evaluated on a different grid");
    VectorField q(gr.size(), 1);
    q.col(0) = spec->evaluate(am, horizon - ctx.time);
    return q;
  };
  return o;
}

ProblemData heat_problem(std::shared_ptr<const PathTree> tree, const Grid& grid, const Field& phi,
                         const Eigen::MatrixXd& a, const Eigen::MatrixXd& sigma) {
  PointCoefficients pc;
  pc.a = a;
  pc.b = Eigen::VectorXd::Zero(a.rows());
  pc.sigma = sigma;
  pc.nu = Eigen::VectorXd::Zero(sigma.cols());
  ProblemData p{std::move(tree), grid, CoefficientSet::constant("heat-oracle", pc), {}, {}, true};
  p.terminal = [phi](const Grid&, const NodeContext&) { return phi; };
  return p;
}

ProblemData wiener_problem(std::shared_ptr<const PathTree> tree, const Grid& grid, const Field& g, double a,
                           double sigma) {
  PointCoefficients pc;
  pc.a = Eigen::MatrixXd::Constant(1, 1, a);
  pc.b = Eigen::VectorXd::Zero(1);
  pc.sigma = Eigen::MatrixXd::Constant(1, 1, sigma);
  pc.nu = Eigen::VectorXd::Zero(1);
  ProblemData p{std::move(tree), grid, CoefficientSet::constant("wiener-oracle", pc), {}, {}, true};
  p.terminal = [g](const Grid&, const NodeContext& ctx) { return Field(g * ctx.wiener(0)); };
  return p;
}

OracleError compare_to_oracle(const SolutionPair& solution, const OracleSolution& oracle) {
  const PathTree& tree = *solution.tree;
  const Grid& grid = solution.grid;
  OracleError err;
  for (int n = 0; n <= tree.n_steps(); ++n) {
    std::vector<double> u_sq, q_sq;
    for (std::int64_t j = 0; j < tree.level_size(n); ++j) {
      const NodeId node{n, j};
      const NodeContext ctx = NodeContext::at(tree, node);
      const double eu = sobolev_norm_pow(grid, Field(solution.u[node] - oracle.u(grid, ctx)), 0, 2.0);
      u_sq.push_back(eu);
      err.u_node_max = std::max(err.u_node_max, std::sqrt(eu));
      if (n < tree.n_steps()) {
        NodeContext next = ctx;
        next.time = tree.time_grid().time(n + 1);
        const double eq = sobolev_norm_pow(grid, VectorField(solution.q[node] - oracle.q(grid, next)), 0, 2.0);
        q_sq.push_back(eq);
        err.q_node_max = std::max(err.q_node_max, std::sqrt(eq));
      }
    }
    err.u_error = std::max(err.u_error, std::sqrt(tree_expectation<double>(tree, n, u_sq)));
    if (n < tree.n_steps()) err.q_error = std::max(err.q_error, std::sqrt(tree_expectation<double>(tree, n, q_sq)));
  }
  return err;
}

OracleResidual oracle_step_residual(const OracleSolution& oracle, const ProblemData& problem,
                                    const SolverConfig& config, std::size_t max_nodes) {
  const PathTree& tree = *problem.tree;
  const Grid& grid = problem.grid;
  OracleResidual res;
  res.scale = tree.dt() + grid.spacing() * grid.spacing();
  for (const NodeId& node : sample_nodes(tree, Dependence::path, max_nodes)) {
    if (node.level == tree.n_steps()) continue;
    std::vector<Field> children;
    for (int slot = 0; slot < tree.branching(); ++slot) {
      children.push_back(oracle.u(grid, NodeContext::at(tree, tree.child(node, slot))));
    }
    const StepResult step = backward_step(children, node, problem, config);
    const Field exact = oracle.u(grid, NodeContext::at(tree, node));
    res.max_residual = std::max(res.max_residual, sobolev_norm(grid, Field(step.u - exact), 0, 2.0) / tree.dt());
  }
  res.constant = res.max_residual / res.scale;
  return res;
}

}  // namespace bspde
