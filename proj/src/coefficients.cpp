#include "bspde/coefficients.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bspde {

CoefficientFields CoefficientFields::zeros(const Grid& grid, int wiener_dim) {
  CoefficientFields f;
  f.dim = grid.dim();
  f.wiener_dim = wiener_dim;
  const Field z = Field::Zero(grid.size());
  f.a.assign(f.dim * f.dim, z);
  f.b.assign(f.dim, z);
  f.c = z;
  f.sigma.assign(f.dim * wiener_dim, z);
  f.nu.assign(wiener_dim, z);
  return f;
}

Eigen::MatrixXd CoefficientFields::a_matrix(Eigen::Index point) const {
  Eigen::MatrixXd m(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) m(i, j) = a_at(i, j)(point);
  return m;
}

Eigen::MatrixXd CoefficientFields::sigma_matrix(Eigen::Index point) const {
  Eigen::MatrixXd m(dim, wiener_dim);
  for (int i = 0; i < dim; ++i)
    for (int k = 0; k < wiener_dim; ++k) m(i, k) = sigma_at(i, k)(point);
  return m;
}

CoefficientSet CoefficientSet::from_pointwise(std::string name, int dim, int wiener_dim, Dependence dep,
                                              PointFn fn) {
  CoefficientSet set;
  set.name = std::move(name);
  set.dim = dim;
  set.wiener_dim = wiener_dim;
  set.dependence = dep;
  set.sample = [fn = std::move(fn), dim, wiener_dim](const Grid& grid, const NodeContext& ctx) {
    if (grid.dim() != dim) throw DataError("coefficient dimension does not match grid");
    CoefficientFields f = CoefficientFields::zeros(grid, wiener_dim);
    PointCoefficients p;
    std::vector<double> x(dim);
    std::vector<double> w(ctx.wiener.data(), ctx.wiener.data() + ctx.wiener.size());
    for (Eigen::Index i = 0; i < grid.size(); ++i) {
      for (int a = 0; a < dim; ++a) x[a] = grid.coordinate(i, a);
      p.a = Eigen::MatrixXd::Zero(dim, dim);
      p.b = Eigen::VectorXd::Zero(dim);
      p.c = 0.0;
      p.sigma = Eigen::MatrixXd::Zero(dim, wiener_dim);
      p.nu = Eigen::VectorXd::Zero(wiener_dim);
      fn(ctx.time, x, w, p);
      for (int r = 0; r < dim; ++r) {
        for (int s = 0; s < dim; ++s) f.a_at(r, s)(i) = p.a(r, s);
        f.b[r](i) = p.b(r);
        for (int k = 0; k < wiener_dim; ++k) f.sigma_at(r, k)(i) = p.sigma(r, k);
      }
      f.c(i) = p.c;
      for (int k = 0; k < wiener_dim; ++k) f.nu[k](i) = p.nu(k);
    }
    return f;
  };
  return set;
}

CoefficientSet CoefficientSet::constant(std::string name, const PointCoefficients& values) {
  const int dim = static_cast<int>(values.a.rows());
  const int wiener_dim = static_cast<int>(values.sigma.cols());
  return from_pointwise(std::move(name), dim, wiener_dim, Dependence::spatial,
                        [values](double, std::span<const double>, std::span<const double>, PointCoefficients& out) {
                          out.a = values.a;
                          out.b = values.b.size() ? values.b : Eigen::VectorXd::Zero(values.a.rows());
                          out.c = values.c;
                          out.sigma = values.sigma;
                          out.nu = values.nu.size() ? values.nu : Eigen::VectorXd::Zero(values.sigma.cols());
                        });
}

DerivedCoefficients derive(const CoefficientFields& coeffs, const Grid& grid) {
  const int d = coeffs.dim;
  const int dp = coeffs.wiener_dim;
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      const Field gap = (coeffs.a_at(i, j) - coeffs.a_at(j, i)).abs();
      Eigen::Index where;
      const double worst = gap.maxCoeff(&where);
      if (worst > 1e-12 * std::max(1.0, coeffs.a_at(i, j).abs().maxCoeff())) {
        throw DataError("diffusion matrix a is not symmetric at grid point " + std::to_string(where) +
                        " (|a" + std::to_string(i + 1) + std::to_string(j + 1) + " - a" + std::to_string(j + 1) +
                        std::to_string(i + 1) + "| = " + std::to_string(worst) + ")");
      }
    }
  }
  DerivedCoefficients out;
  const Field zero = Field::Zero(grid.size());
  out.alpha.assign(d * d, zero);
  out.A.assign(d * d, zero);
  out.btilde = coeffs.b;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      Field s = zero;
      for (int k = 0; k < dp; ++k) s += coeffs.sigma_at(i, k) * coeffs.sigma_at(j, k);
      out.alpha[i * d + j] = 0.5 * s;
      out.A[i * d + j] = coeffs.a_at(i, j) - out.alpha[i * d + j];
    }
  }
  for (int i = 0; i < d; ++i) {
    for (int k = 0; k < dp; ++k) {
      for (int j = 0; j < d; ++j) out.btilde[i] -= d1(grid, coeffs.sigma_at(i, k), j) * coeffs.sigma_at(j, k);
      out.btilde[i] -= coeffs.nu[k] * coeffs.sigma_at(i, k);
    }
  }
  return out;
}

std::vector<NodeId> sample_nodes(const PathTree& tree, Dependence dep, std::size_t max_nodes) {
  std::vector<NodeId> nodes;
  if (dep == Dependence::spatial) return {tree.root()};
  if (dep == Dependence::time) {
    for (int n = 0; n <= tree.n_steps(); ++n) nodes.push_back({n, 0});
    return nodes;
  }
  if (static_cast<std::size_t>(tree.total_nodes()) <= max_nodes) {
    for (std::int64_t f = 0; f < tree.total_nodes(); ++f) nodes.push_back(tree.node_at(f));
    return nodes;
  }
  const std::size_t per_level = std::max<std::size_t>(3, max_nodes / tree.n_levels());
  for (int n = 0; n <= tree.n_steps(); ++n) {
    const std::int64_t size = tree.level_size(n);
    const std::int64_t take = std::min<std::int64_t>(size, static_cast<std::int64_t>(per_level));
    for (std::int64_t s = 0; s < take; ++s) {
      const std::int64_t j = take == 1 ? 0 : s * (size - 1) / (take - 1);
      nodes.push_back({n, j});
    }
  }
  return nodes;
}

std::string to_string(ParabolicityVerdict v) {
  switch (v) {
    case ParabolicityVerdict::degenerate_ok:
      return "degenerate-ok";
    case ParabolicityVerdict::super_parabolic:
      return "super-parabolic";
    case ParabolicityVerdict::violated:
      return "violated";
  }
  return "unknown";
}

namespace {

double min_eigenvalue(const Eigen::MatrixXd& m) {
  if (m.rows() == 1) return m(0, 0);
  if (m.rows() == 2) {
    const double tr = m(0, 0) + m(1, 1);
    const double diff = m(0, 0) - m(1, 1);
    const double off = 0.5 * (m(0, 1) + m(1, 0));
    return 0.5 * (tr - std::sqrt(diff * diff + 4.0 * off * off));
  }
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues()(0);
}

}  // namespace

ParabolicityReport check_parabolicity(const CoefficientSet& coeffs, const Grid& grid, const PathTree& tree,
                                      std::span<const NodeId> nodes, ParabolicityMode mode, double delta_floor,
                                      double viscosity) {
  ParabolicityReport report;
  report.min_eigenvalue = std::numeric_limits<double>::infinity();
  ParabolicityReport::Witness worst;
  for (const NodeId& node : nodes) {
    const CoefficientFields f = coeffs.sample(grid, NodeContext::at(tree, node));
    for (Eigen::Index i = 0; i < grid.size(); ++i) {
      const Eigen::MatrixXd s = f.sigma_matrix(i);
      Eigen::MatrixXd m = 2.0 * f.a_matrix(i) - s * s.transpose();
      m.diagonal().array() += 2.0 * viscosity;
      const double ev = min_eigenvalue(m);
      if (ev < report.min_eigenvalue) {
        report.min_eigenvalue = ev;
        worst.node = node;
        worst.point = i;
      }
    }
  }
  report.delta = report.min_eigenvalue;
  const bool dp_ok = report.min_eigenvalue >= -kTolPsd;
  const bool sp_ok = report.min_eigenvalue >= delta_floor;
  if (!dp_ok) {
    report.verdict = ParabolicityVerdict::violated;
  } else if (sp_ok) {
    report.verdict = ParabolicityVerdict::super_parabolic;
  } else {
    report.verdict = ParabolicityVerdict::degenerate_ok;
  }
  report.passed = mode == ParabolicityMode::degenerate ? dp_ok : sp_ok;
  if (report.verdict == ParabolicityVerdict::violated || !report.passed) {
    for (int a = 0; a < grid.dim(); ++a) worst.x.push_back(grid.coordinate(worst.point, a));
    report.witness = worst;
  }
  return report;
}

SymmetryReport check_symmetry(const CoefficientFields& coeffs, const Grid& grid, int seam_band) {
  const int d = coeffs.dim;
  const int dp = coeffs.wiener_dim;
  SymmetryReport report;
  const double h = grid.spacing();
  report.tolerance = 10.0 * h * h;
  report.violation = Field::Zero(grid.size());
  if (d == 1) return report;  // i == j only: the expression vanishes identically

  // dsigma[l][i*dp+k] = d_l sigma^{ik}
  std::vector<std::vector<Field>> dsigma(d);
  for (int l = 0; l < d; ++l) {
    for (const Field& s : coeffs.sigma) dsigma[l].push_back(d1(grid, s, l));
  }
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      for (int l = 0; l < d; ++l) {
        Field v = Field::Zero(grid.size());
        for (int k = 0; k < dp; ++k) {
          v += coeffs.sigma_at(i, k) * dsigma[l][j * dp + k] - coeffs.sigma_at(j, k) * dsigma[l][i * dp + k];
        }
        report.violation = report.violation.max(v.abs());
      }
    }
  }
  for (Eigen::Index p = 0; p < grid.size(); ++p) {
    if (grid.seam_distance(p) < seam_band) report.violation(p) = 0.0;
  }
  report.max_violation = report.violation.maxCoeff();
  report.satisfied = report.max_violation <= report.tolerance;
  return report;
}

OleinikEstimate oleinik_constant(const Grid& grid, std::span<const Field> A, std::span<const Field> probes,
                                 int seam_band) {
  const int d = grid.dim();
  if (A.size() != static_cast<std::size_t>(d * d)) throw DataError("A must have d*d entries");
  for (Eigen::Index p = 0; p < grid.size(); ++p) {
    if (grid.seam_distance(p) < seam_band) continue;
    Eigen::MatrixXd m(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) m(i, j) = A[i * d + j](p);
    if (min_eigenvalue(m) < -kTolPsd) {
      throw PreconditionError("A is not positive semidefinite at grid point " + std::to_string(p));
    }
  }
  // dA[rho][i*d+j]
  std::vector<std::vector<Field>> dA(d);
  for (int rho = 0; rho < d; ++rho)
    for (const Field& entry : A) dA[rho].push_back(d1(grid, entry, rho));

  OleinikEstimate est;
  for (std::size_t probe = 0; probe < probes.size(); ++probe) {
    std::vector<Field> v2(d * d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) v2[i * d + j] = d2(grid, probes[probe], i, j);
    Field den = Field::Zero(grid.size());
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k) den += A[i * d + j] * v2[i * d + k] * v2[j * d + k];
    for (int rho = 0; rho < d; ++rho) {
      Field num = Field::Zero(grid.size());
      for (int ij = 0; ij < d * d; ++ij) num += dA[rho][ij] * v2[ij];
      num = num.square();
      for (Eigen::Index p = 0; p < grid.size(); ++p) {
        if (grid.seam_distance(p) < seam_band || den(p) < kTolDen) continue;
        ++est.evaluated;
        const double ratio = num(p) / den(p);
        if (ratio > est.constant || est.point < 0) {
          est.constant = ratio;
          est.point = p;
          est.probe = static_cast<int>(probe);
          est.axis = rho;
        }
      }
    }
  }
  return est;
}

std::vector<CoefficientSet> builtin_counterexamples() {
  auto finish = [](PointCoefficients& out) { out.a = 0.5 * out.sigma * out.sigma.transpose(); };
  std::vector<CoefficientSet> out;
  out.push_back(CoefficientSet::from_pointwise(
      "counterexample-1", 2, 2, Dependence::spatial,
      [finish](double, std::span<const double> x, std::span<const double>, PointCoefficients& p) {
        const double s = std::sin(x[0] + x[1]);
        const double c = std::cos(x[0] + x[1]);
        p.sigma << s, c, c, -s;
        finish(p);
      }));
  out.push_back(CoefficientSet::from_pointwise(
      "counterexample-2", 2, 2, Dependence::spatial,
      [finish](double, std::span<const double> x, std::span<const double>, PointCoefficients& p) {
        const double g = 1.0 / std::sqrt(1.0 + x[0] * x[0] + x[1] * x[1]);
        p.sigma << g, 1.0, 0.0, -g;
        finish(p);
      }));
  out.push_back(CoefficientSet::from_pointwise(
      "counterexample-3", 2, 2, Dependence::spatial,
      [finish](double, std::span<const double> x, std::span<const double>, PointCoefficients& p) {
        const double r = std::sqrt(x[0] * x[0] + x[1] * x[1]);
        const double s = std::sin(r);
        const double c = std::cos(r);
        p.sigma << s, c, c, -s;
        finish(p);
      }));
  for (auto& set : out) set.smoothness = 2;
  return out;
}

double estimate_bound(const CoefficientSet& coeffs, const Grid& grid, const PathTree& tree,
                      std::span<const NodeId> nodes, int order) {
  double bound = 0.0;
  const auto indices = multi_indices(grid.dim(), std::min(order, 3));
  for (const NodeId& node : nodes) {
    const CoefficientFields f = coeffs.sample(grid, NodeContext::at(tree, node));
    std::vector<const Field*> entries;
    for (const auto& e : f.a) entries.push_back(&e);
    for (const auto& e : f.b) entries.push_back(&e);
    entries.push_back(&f.c);
    for (const auto& e : f.sigma) entries.push_back(&e);
    for (const auto& e : f.nu) entries.push_back(&e);
    for (const Field* e : entries)
      for (const auto& alpha : indices) bound = std::max(bound, diff(grid, *e, alpha).abs().maxCoeff());
  }
  return bound;
}

}  // namespace bspde
