#pragma once

// Energy functionals of the transformed equation (u, r = q + sigma^T grad u)
// and discrete checks of the a-priori estimates.

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bspde/coefficients.hpp"
#include "bspde/grid.hpp"
#include "bspde/solver.hpp"

namespace bspde {

/// G(s) = s^power with power == 1 or power >= 2, so that G, G' > 0 and
/// G'' >= 0 on (0, inf).
struct EnergyConfig {
  int m = 1;
  double power = 2.0;

  void validate() const;
  double G(double s) const;
  double dG(double s) const;
  double d2G(double s) const;
};

struct EnergyFields {
  Field psi;      // sum_{|a|<=m} |D^a u|^2
  Field upsilon;  // sum_{|a|<=m} ||D^a r||^2
};

EnergyFields energy_fields(const Grid& grid, const Field& u, const VectorField& r, int m);

/// Pointwise Ito drift of G(Psi) for the transformed equation:
///   2G'(Psi) sum_b D^b u D^b[(a - 2 alpha) u_xx + btilde u_x + c u + sigma r_x + nu r + f]
///   - G'(Psi) sum_b ||D^b (r - sigma^T grad u)||^2
///   - 2G''(Psi) ||sum_b D^b u D^b (r - sigma^T grad u)||^2
Field theta(const Grid& grid, const Field& u, const VectorField& r, const Field& f, const CoefficientFields& coeffs,
            const EnergyConfig& config);

struct BasicEstimate {
  double lhs = 0.0;         // int Theta dx
  double absorption = 0.0;  // int G'(Psi) Upsilon dx
  double growth = 0.0;      // int [G(Psi) + G'(Psi) Psi] dx
  double forcing = 0.0;     // sum_b int G'(Psi) |D^b f|^2 dx
  double rhs = 0.0;         // -(1 - eps) absorption + (C / eps) growth + forcing
  bool holds = true;
  /// Smallest C >= 0 for which lhs <= rhs (0 when it holds with C = 0).
  double minimal_constant = 0.0;
  /// eps (lhs - base) / growth without the clamp at 0: negative when the
  /// inequality holds with room to spare.
  double tight_constant = 0.0;
  double slack = 0.0;  // rhs - lhs at the supplied constant
};

/// Throws PreconditionError when the coefficients violate degenerate
/// parabolicity.
BasicEstimate check_basic_estimate(const Grid& grid, const Field& u, const VectorField& r, const Field& f,
                                   const CoefficientFields& coeffs, const EnergyConfig& config, double eps_split,
                                   double constant);

/// Minimal constants over a grid of eps_split values together with the
/// running minimum over eps' <= eps, which is what is reported.
struct EpsilonScanRow {
  double eps = 0.0;
  double minimal_constant = 0.0;
  double reported_constant = 0.0;
};
std::vector<EpsilonScanRow> scan_basic_estimate(const Grid& grid, const Field& u, const VectorField& r,
                                                const Field& f, const CoefficientFields& coeffs,
                                                const EnergyConfig& config, std::span<const double> eps_grid);

struct InequalityCheck {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;  // data norms, without the constant
  double c_fit = 0.0;  // lhs / rhs, NaN when both vanish
  bool passed = true;  // false only for lhs > 0 with rhs == 0
};

struct EstimateReport {
  int m1 = 0;
  double p = 2.0;
  InequalityCheck l2;  // E sup|u|^2 + E int |r|^2 vs E|phi|^2 + E int |f|^2
  InequalityCheck lp;  // E sup|u|^p_{m1,p} vs E|phi|^p + E int |f|^p
  SchemeMetadata meta;
};

EstimateReport verify_main_estimates(const SolutionPair& solution, const ProblemData& problem, int m1, double p);

struct SweepRow {
  double value = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  double c_fit = 0.0;
};

struct SweepTable {
  std::string kind;  // "epsilon" or "p"
  std::vector<SweepRow> rows;
  double max_min_ratio = 1.0;     // max c_fit / min c_fit
  double fitted_slope = 0.0;      // p sweep: least-squares slope of log c_fit against p
  double max_root = 0.0;          // p sweep: max c_fit^{1/p}
  ContinuationReport continuation;  // epsilon sweep only
};

/// C_fit of the L2 estimate along a decreasing viscosity schedule.
SweepTable viscosity_sweep(const ProblemData& problem, const SolverConfig& config, std::span<const double> schedule,
                           int m1);
/// C_fit of the L^p estimate for each exponent on one solution.
SweepTable exponent_sweep(const SolutionPair& solution, const ProblemData& problem, int m1,
                          std::span<const double> exponents);

/// Columns sweep_value, lhs, rhs, c_fit.
void write_sweep_csv(std::ostream& out, const SweepTable& table);

}  // namespace bspde
