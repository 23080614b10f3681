#include "bspde/energy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "bspde/lattice.hpp"

namespace bspde {

void EnergyConfig::validate() const {
  if (m < 0 || m > 3) throw DataError("energy order m must lie in [0, 3]");
  if (!(power == 1.0 || power >= 2.0)) throw DataError("G(s) = s^p needs p == 1 or p >= 2");
}

double EnergyConfig::G(double s) const { return std::pow(s, power); }
double EnergyConfig::dG(double s) const { return power == 1.0 ? 1.0 : power * std::pow(s, power - 1.0); }
double EnergyConfig::d2G(double s) const {
  if (power == 1.0) return 0.0;
  if (power == 2.0) return 2.0;
  return power * (power - 1.0) * std::pow(s, power - 2.0);
}

EnergyFields energy_fields(const Grid& grid, const Field& u, const VectorField& r, int m) {
  EnergyFields e{Field::Zero(grid.size()), Field::Zero(grid.size())};
  for (const auto& alpha : multi_indices(grid.dim(), m)) {
    e.psi += diff(grid, u, alpha).square();
    for (Eigen::Index k = 0; k < r.cols(); ++k) e.upsilon += diff(grid, r.col(k), alpha).square();
  }
  return e;
}

Field theta(const Grid& grid, const Field& u, const VectorField& r, const Field& f, const CoefficientFields& coeffs,
            const EnergyConfig& config) {
  config.validate();
  const int d = coeffs.dim;
  const int dp = coeffs.wiener_dim;
  if (r.cols() != dp) throw DataError("r must have wiener_dim components");
  const DerivedCoefficients der = derive(coeffs, grid);

  std::vector<Field> grad_u;
  for (int i = 0; i < d; ++i) grad_u.push_back(d1(grid, u, i));

  Field drift = coeffs.c * u + f;
  for (int i = 0; i < d; ++i) {
    drift += der.btilde[i] * grad_u[i];
    for (int j = 0; j < d; ++j) {
      drift += (coeffs.a_at(i, j) - 2.0 * der.alpha[i * d + j]) * d2(grid, u, i, j);
    }
  }
  VectorField z(grid.size(), dp);  // r - sigma^T grad u
  for (int k = 0; k < dp; ++k) {
    const Field rk = r.col(k);
    drift += coeffs.nu[k] * rk;
    Field zk = rk;
    for (int i = 0; i < d; ++i) {
      drift += coeffs.sigma_at(i, k) * d1(grid, rk, i);
      zk -= coeffs.sigma_at(i, k) * grad_u[i];
    }
    z.col(k) = zk;
  }

  Field psi = Field::Zero(grid.size());
  Field pairing = Field::Zero(grid.size());  // sum_b D^b u D^b drift
  Field z_energy = Field::Zero(grid.size());
  VectorField cross = VectorField::Zero(grid.size(), dp);  // sum_b D^b u D^b z^k
  for (const auto& beta : multi_indices(grid.dim(), config.m)) {
    const Field du = diff(grid, u, beta);
    psi += du.square();
    pairing += du * diff(grid, drift, beta);
    for (int k = 0; k < dp; ++k) {
      const Field dz = diff(grid, z.col(k), beta);
      z_energy += dz.square();
      cross.col(k) += du * dz;
    }
  }
  const Field g1 = psi.unaryExpr([&](double s) { return config.dG(s); });
  const Field g2 = psi.unaryExpr([&](double s) { return config.d2G(s); });
  return 2.0 * g1 * pairing - g1 * z_energy - 2.0 * g2 * cross.square().rowwise().sum();
}

BasicEstimate check_basic_estimate(const Grid& grid, const Field& u, const VectorField& r, const Field& f,
                                   const CoefficientFields& coeffs, const EnergyConfig& config, double eps_split,
                                   double constant) {
  if (!(eps_split > 0.0 && eps_split < 1.0)) throw DataError("eps_split must lie in (0, 1)");
  for (Eigen::Index p = 0; p < grid.size(); ++p) {
    const Eigen::MatrixXd s = coeffs.sigma_matrix(p);
    const Eigen::MatrixXd m = 2.0 * coeffs.a_matrix(p) - s * s.transpose();
    if (Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues()(0) < -kTolPsd) {
      throw PreconditionError("coefficients violate degenerate parabolicity at grid point " + std::to_string(p));
    }
  }
  BasicEstimate est;
  const EnergyFields e = energy_fields(grid, u, r, config.m);
  const Field g1 = e.psi.unaryExpr([&](double s) { return config.dG(s); });
  const Field g0 = e.psi.unaryExpr([&](double s) { return config.G(s); });
  const double vol = grid.cell_volume();
  est.lhs = theta(grid, u, r, f, coeffs, config).sum() * vol;
  est.absorption = (g1 * e.upsilon).sum() * vol;
  est.growth = (g0 + g1 * e.psi).sum() * vol;
  Field f_energy = Field::Zero(grid.size());
  for (const auto& beta : multi_indices(grid.dim(), config.m)) f_energy += diff(grid, f, beta).square();
  est.forcing = (g1 * f_energy).sum() * vol;

  const double base = -(1.0 - eps_split) * est.absorption + est.forcing;
  est.rhs = base + constant / eps_split * est.growth;
  est.holds = est.lhs <= est.rhs;
  est.slack = est.rhs - est.lhs;
  if (est.growth > 0.0) {
    est.tight_constant = eps_split * (est.lhs - base) / est.growth;
  } else {
    est.tight_constant = est.lhs <= base ? -std::numeric_limits<double>::infinity()
                                         : std::numeric_limits<double>::infinity();
  }
  if (est.lhs <= base) {
    est.minimal_constant = 0.0;
  } else if (est.growth > 0.0) {
    est.minimal_constant = eps_split * (est.lhs - base) / est.growth;
  } else {
    est.minimal_constant = std::numeric_limits<double>::infinity();
  }
  return est;
}

std::vector<EpsilonScanRow> scan_basic_estimate(const Grid& grid, const Field& u, const VectorField& r,
                                                const Field& f, const CoefficientFields& coeffs,
                                                const EnergyConfig& config, std::span<const double> eps_grid) {
  std::vector<double> sorted(eps_grid.begin(), eps_grid.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<EpsilonScanRow> rows;
  double running = std::numeric_limits<double>::infinity();
  for (double eps : sorted) {
    const BasicEstimate est = check_basic_estimate(grid, u, r, f, coeffs, config, eps, 0.0);
    running = std::min(running, est.minimal_constant);
    rows.push_back({eps, est.minimal_constant, running});
  }
  return rows;
}

namespace {

InequalityCheck make_check(std::string name, double lhs, double rhs) {
  InequalityCheck c;
  c.name = std::move(name);
  c.lhs = lhs;
  c.rhs = rhs;
  if (rhs > 0.0) {
    c.c_fit = lhs / rhs;
  } else {
    c.c_fit = std::numeric_limits<double>::quiet_NaN();
    c.passed = !(lhs > 1e-300);
  }
  return c;
}

}  // namespace

EstimateReport verify_main_estimates(const SolutionPair& solution, const ProblemData& problem, int m1, double p) {
  if (m1 < 0 || m1 > 3) throw DataError("m1 must lie in [0, 3]");
  if (!(p >= 2.0)) throw DataError("estimate exponent p must be >= 2");
  const PathTree& tree = *solution.tree;
  const Grid& grid = solution.grid;
  const int last = tree.n_steps();

  NodeMap<double> u2(tree), up(tree);
  for (std::int64_t flat = 0; flat < tree.total_nodes(); ++flat) {
    const NodeId node = tree.node_at(flat);
    u2[node] = sobolev_norm_pow(grid, solution.u[node], m1, 2.0);
    up[node] = sobolev_norm_pow(grid, solution.u[node], m1, p);
  }
  double r_int = 0.0, f2_int = 0.0, fp_int = 0.0;
  for (int n = 0; n < last; ++n) {
    std::vector<double> r_level, f2_level, fp_level;
    for (std::int64_t j = 0; j < tree.level_size(n); ++j) {
      const NodeId node{n, j};
      r_level.push_back(sobolev_norm_pow(grid, solution.r[node], m1, 2.0));
      if (problem.forcing) {
        const Field f = problem.forcing(grid, NodeContext::at(tree, node));
        f2_level.push_back(sobolev_norm_pow(grid, f, m1, 2.0));
        fp_level.push_back(sobolev_norm_pow(grid, f, m1, p));
      }
    }
    r_int += tree.dt() * tree_expectation<double>(tree, n, r_level);
    if (problem.forcing) {
      f2_int += tree.dt() * tree_expectation<double>(tree, n, f2_level);
      fp_int += tree.dt() * tree_expectation<double>(tree, n, fp_level);
    }
  }
  const double phi2 = tree_expectation<double>(tree, last, u2.level(last));
  const double phip = tree_expectation<double>(tree, last, up.level(last));

  EstimateReport report;
  report.m1 = m1;
  report.p = p;
  report.meta = solution.meta;
  report.l2 = make_check("l2", expected_path_supremum(tree, u2) + r_int, phi2 + f2_int);
  report.lp = make_check("lp", expected_path_supremum(tree, up), phip + fp_int);
  return report;
}

namespace {

void summarize(SweepTable& table) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& row : table.rows) {
    if (!std::isfinite(row.c_fit)) continue;
    lo = std::min(lo, row.c_fit);
    hi = std::max(hi, row.c_fit);
  }
  table.max_min_ratio = (hi > 0.0 && lo > 0.0) ? hi / lo : 1.0;
}

}  // namespace

SweepTable viscosity_sweep(const ProblemData& problem, const SolverConfig& config, std::span<const double> schedule,
                           int m1) {
  SweepTable table;
  table.kind = "epsilon";
  table.continuation = viscosity_continuation(problem, schedule, config, 0);
  for (std::size_t i = 0; i < table.continuation.solutions.size(); ++i) {
    const EstimateReport rep = verify_main_estimates(table.continuation.solutions[i], problem, m1, 2.0);
    table.rows.push_back({table.continuation.schedule[i], rep.l2.lhs, rep.l2.rhs, rep.l2.c_fit});
  }
  summarize(table);
  return table;
}

SweepTable exponent_sweep(const SolutionPair& solution, const ProblemData& problem, int m1,
                          std::span<const double> exponents) {
  SweepTable table;
  table.kind = "p";
  for (double p : exponents) {
    const EstimateReport rep = verify_main_estimates(solution, problem, m1, p);
    table.rows.push_back({p, rep.lp.lhs, rep.lp.rhs, rep.lp.c_fit});
    if (std::isfinite(rep.lp.c_fit)) table.max_root = std::max(table.max_root, std::pow(rep.lp.c_fit, 1.0 / p));
  }
  summarize(table);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (const auto& row : table.rows) {
    if (!(row.c_fit > 0.0) || !std::isfinite(row.c_fit)) continue;
    const double y = std::log(row.c_fit);
    sx += row.value;
    sy += y;
    sxx += row.value * row.value;
    sxy += row.value * y;
    ++n;
  }
  if (n >= 2 && n * sxx - sx * sx > 0.0) table.fitted_slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return table;
}

void write_sweep_csv(std::ostream& out, const SweepTable& table) {
  out << "sweep_value,lhs,rhs,c_fit\r\n";
  out.precision(17);
  for (const auto& row : table.rows) out << row.value << ',' << row.lhs << ',' << row.rhs << ',' << row.c_fit << "\r\n";
}

}  // namespace bspde
