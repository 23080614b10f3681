#pragma once

// Experiment configuration: sectioned "key = value" text with expression
// values, parsed and validated before anything is computed.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bspde/coefficients.hpp"
#include "bspde/control.hpp"
#include "bspde/expr.hpp"
#include "bspde/grid.hpp"
#include "bspde/lattice.hpp"
#include "bspde/solver.hpp"

namespace bspde {

struct RawEntry {
  std::string value;
  int line = 0;
};
struct RawSection {
  int line = 0;
  std::map<std::string, RawEntry> entries;
};
using RawConfig = std::map<std::string, RawSection>;

/// Comments start with '#' or ';'. Duplicate sections or keys are errors.
RawConfig parse_raw_config(std::string_view text);

/// 64-bit FNV-1a of the config text, as 16 hex digits.
std::string config_hash(std::string_view text);

/// Coefficient formulas keyed a11..a22, b1, b2, c, sigma11..sigma22, nu1, nu2.
/// Missing entries are zero.
struct CoefficientExprs {
  std::map<std::string, expr::Expr> entries;
  int line = 0;

  bool uses(expr::Var v) const;
};

struct ExperimentConfig {
  std::string hash;

  struct {
    int d = 1;
    double R = 3.141592653589793;
    int M = 64;
  } grid;

  struct {
    double T = 1.0;
    int n_steps = 16;
    int wiener_dim = 1;
    TreeMode mode = TreeMode::full;
  } tree;

  struct {
    bool present = false;
    std::string builtin;  // counterexample-1/2/3, empty for formulas
    CoefficientExprs coefficients;
    std::optional<expr::Expr> f;
    std::optional<expr::Expr> phi;
    int phi_random_modes = 0;  // > 0: seeded random smooth phi instead of a formula
    int smoothness = 1;
    SolverConfig solver;
    std::vector<std::string> asserts;  // subset of {dp, sp, symmetry}
    double sp_delta = 1e-6;
  } problem;

  struct {
    int m = 1;
    std::vector<int> m1{0};
    std::vector<double> p{2.0};
  } energy;

  struct {
    bool present = false;
    std::string kind = "epsilon";  // epsilon | p
    std::vector<double> values;
    int m1 = 0;
  } sweep;

  struct {
    bool present = false;
    std::vector<double> gamma;
    CoefficientExprs coefficients;
    std::optional<expr::Expr> F;
    std::vector<expr::Expr> G;  // one per Wiener component, empty means zero
    std::optional<expr::Expr> f;
    std::optional<expr::Expr> phi;
    std::optional<expr::Expr> xi0;
    int max_iters = 10;
    bool brute_force = false;
    double tol_scale = 5.0;
  } control;

  struct {
    bool present = false;
    std::string kind;  // heat | wiener
    std::optional<expr::Expr> g;
    std::vector<double> a;      // d*d for heat, one value for wiener
    std::vector<double> sigma;  // d*d' for heat, one value for wiener
  } oracle;

  struct {
    std::string directory = "out";
    std::vector<std::string> formats{"csv"};  // csv, binary
  } output;

  std::uint64_t seed = 0;
};

/// Parses and validates; throws ConfigError with the offending line.
ExperimentConfig load_experiment(std::string_view text);

Grid make_grid(const ExperimentConfig& cfg);
std::shared_ptr<const PathTree> make_tree(const ExperimentConfig& cfg);

/// Coefficient sampler for the [problem] section (builtin or formulas).
CoefficientSet make_coefficients(const ExperimentConfig& cfg);
ProblemData make_problem(const ExperimentConfig& cfg, std::shared_ptr<const PathTree> tree, const Grid& grid);
ControlProblem make_control_problem(const ExperimentConfig& cfg, std::shared_ptr<const PathTree> tree,
                                    const Grid& grid);

/// Samples a formula over the grid at one node (v bound when given).
Field sample_expr(const expr::Expr& e, const Grid& grid, const NodeContext& ctx, std::optional<double> v = {});

}  // namespace bspde
