#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bspde/grid.hpp"
#include "bspde/lattice.hpp"

namespace bspde {

/// Where a sampler is evaluated: tree node, its time and Wiener state.
struct NodeContext {
  NodeId node;
  double time = 0.0;
  Eigen::VectorXd wiener;

  static NodeContext at(const PathTree& tree, NodeId node) { return {node, tree.time(node), tree.wiener(node)}; }
};

/// Coefficients a, b, c, sigma, nu sampled on every grid point of one node.
struct CoefficientFields {
  int dim = 1;
  int wiener_dim = 1;
  std::vector<Field> a;      // dim*dim, row-major
  std::vector<Field> b;      // dim
  Field c;                   //
  std::vector<Field> sigma;  // dim*wiener_dim, entry (i, k) at i*wiener_dim + k
  std::vector<Field> nu;     // wiener_dim

  static CoefficientFields zeros(const Grid& grid, int wiener_dim);

  Field& a_at(int i, int j) { return a[i * dim + j]; }
  const Field& a_at(int i, int j) const { return a[i * dim + j]; }
  Field& sigma_at(int i, int k) { return sigma[i * wiener_dim + k]; }
  const Field& sigma_at(int i, int k) const { return sigma[i * wiener_dim + k]; }

  /// d x d matrix a(x) at one grid point, likewise sigma(x) (d x d').
  Eigen::MatrixXd a_matrix(Eigen::Index point) const;
  Eigen::MatrixXd sigma_matrix(Eigen::Index point) const;
};

/// Pointwise coefficient values, used to build samplers from formulas.
struct PointCoefficients {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  double c = 0.0;
  Eigen::MatrixXd sigma;
  Eigen::VectorXd nu;
};

/// How a sampler depends on the node; drives factorization caching and the
/// choice of nodes for the condition checks.
enum class Dependence { spatial, time, path };

struct CoefficientSet {
  std::string name;
  int dim = 1;
  int wiener_dim = 1;
  Dependence dependence = Dependence::spatial;
  int smoothness = 1;  // declared m in (A_m)
  std::function<CoefficientFields(const Grid&, const NodeContext&)> sample;

  using PointFn = std::function<void(double t, std::span<const double> x, std::span<const double> w,
                                     PointCoefficients& out)>;
  static CoefficientSet from_pointwise(std::string name, int dim, int wiener_dim, Dependence dep, PointFn fn);
  /// Constant-in-everything coefficients.
  static CoefficientSet constant(std::string name, const PointCoefficients& values);
};

/// alpha = 1/2 sigma sigma^T, A = a - alpha, btilde = b - sigma_x sigma - nu sigma.
struct DerivedCoefficients {
  std::vector<Field> alpha;   // dim*dim
  std::vector<Field> A;       // dim*dim
  std::vector<Field> btilde;  // dim
};

/// Throws DataError when a is not symmetric at some point.
DerivedCoefficients derive(const CoefficientFields& coeffs, const Grid& grid);

/// Sample nodes for the condition checkers: the root for spatial
/// coefficients, one node per level for time dependence, and up to
/// `max_nodes` spread over the tree for path dependence.
std::vector<NodeId> sample_nodes(const PathTree& tree, Dependence dep, std::size_t max_nodes = 4096);

inline constexpr double kTolPsd = 1e-10;
inline constexpr double kTolDen = 1e-12;

enum class ParabolicityMode { degenerate, super };
enum class ParabolicityVerdict { degenerate_ok, super_parabolic, violated };
std::string to_string(ParabolicityVerdict v);

struct ParabolicityReport {
  double min_eigenvalue = 0.0;
  double delta = 0.0;  // min eigenvalue, the SP constant when positive
  ParabolicityVerdict verdict = ParabolicityVerdict::degenerate_ok;
  bool passed = true;
  struct Witness {
    NodeId node;
    Eigen::Index point = 0;
    std::vector<double> x;
  };
  std::optional<Witness> witness;  // set whenever verdict == violated
};

/// Eigenvalues of 2a - sigma sigma^T over the sampled (node, x). DP passes
/// iff min >= -kTolPsd; SP passes iff min >= delta_floor.
ParabolicityReport check_parabolicity(const CoefficientSet& coeffs, const Grid& grid, const PathTree& tree,
                                      std::span<const NodeId> nodes, ParabolicityMode mode,
                                      double delta_floor = 1e-6, double viscosity = 0.0);

struct SymmetryReport {
  double max_violation = 0.0;
  double tolerance = 0.0;  // 10 h^2
  bool satisfied = true;
  Field violation;  // pointwise max over (i, j, l)
};

/// max |sum_k sigma^{ik} d_l sigma^{jk} - sigma^{jk} d_l sigma^{ik}|. Points
/// within `seam_band` cells of the wrap seam are masked.
SymmetryReport check_symmetry(const CoefficientFields& coeffs, const Grid& grid, int seam_band = 2);

struct OleinikEstimate {
  double constant = 0.0;
  Eigen::Index point = -1;
  int probe = -1;
  int axis = -1;
  long long evaluated = 0;
};

/// max over probes, x, rho of (A^{ij}_{x^rho} v_{ij})^2 / (A^{ij} v_{ik} v_{jk}),
/// skipping denominators below kTolDen and masked points. A is d*d row-major.
/// Throws PreconditionError when A is not PSD on the unmasked points.
OleinikEstimate oleinik_constant(const Grid& grid, std::span<const Field> A, std::span<const Field> probes,
                                 int seam_band = 0);

/// The three d = d' = 2 diffusion matrices violating the symmetry
/// condition, each with a = 1/2 sigma sigma^T, b = c = nu = 0.
std::vector<CoefficientSet> builtin_counterexamples();

/// Max |D^alpha g| over sampled nodes for |alpha| <= order, across all
/// coefficient entries. An estimate of K_m, never a proof.
double estimate_bound(const CoefficientSet& coeffs, const Grid& grid, const PathTree& tree,
                      std::span<const NodeId> nodes, int order);

}  // namespace bspde
