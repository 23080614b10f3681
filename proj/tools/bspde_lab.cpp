// bspde_lab: experiment runner.
//   bspde_lab <check|solve|sweep|control|oracle-test> --config PATH [--out DIR] [--threads N] [--seed U64]
// Exit codes: 0 ok, 1 usage or config error, 2 violated condition or failed run.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bspde/coefficients.hpp"
#include "bspde/config.hpp"
#include "bspde/control.hpp"
#include "bspde/energy.hpp"
#include "bspde/field_io.hpp"
#include "bspde/oracles.hpp"
#include "bspde/random_fields.hpp"
#include "bspde/solver.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace bspde;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitViolation = 2;

struct Options {
  std::string config_path;
  std::string out_dir;
  int threads = 1;
  std::optional<std::uint64_t> seed;
};

/// Thrown for bad invocations that are not config errors.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Run {
  ExperimentConfig cfg;
  fs::path out;
  int threads = 1;
};

Run load(const Options& opt) {
  std::ifstream in(opt.config_path, std::ios::binary);
  if (!in) throw UsageError("cannot read config file '" + opt.config_path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  Run run;
  run.cfg = load_experiment(ss.str());
  if (opt.seed) run.cfg.seed = *opt.seed;
  run.out = opt.out_dir.empty() ? fs::path(run.cfg.output.directory) : fs::path(opt.out_dir);
  run.threads = std::max(1, opt.threads);
  run.cfg.problem.solver.threads = run.threads;
  fs::create_directories(run.out);
  return run;
}

json base_report(const Run& run, const std::string& command) {
  json j;
  j["command"] = command;
  j["config_hash"] = run.cfg.hash;
  j["seed"] = run.cfg.seed;
  return j;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << "\n";
}

/// RFC-4180 table with a header row, CRLF line endings.
class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : out_(path, std::ios::binary) {
    out_.precision(17);
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << quote(cells[i]);
    out_ << "\r\n";
  }
  void numbers(const std::vector<double>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\r\n";
  }

 private:
  static std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  }
  std::ofstream out_;
};

json meta_json(const SchemeMetadata& m) {
  return {{"dt", m.dt},
          {"h", m.h},
          {"viscosity", m.viscosity},
          {"time_stepping", to_string(m.time_stepping)},
          {"tree_mode", to_string(m.mode)},
          {"n_steps", m.n_steps},
          {"points_per_dim", m.points_per_dim},
          {"dim", m.dim},
          {"wiener_dim", m.wiener_dim}};
}

json check_json(const InequalityCheck& c) {
  return {{"name", c.name}, {"lhs", c.lhs}, {"rhs", c.rhs}, {"c_fit", c.c_fit}, {"passed", c.passed}};
}

/// Field dumps of u and r at the root, in every requested format.
std::vector<std::string> dump_root_fields(const Run& run, const SolutionPair& sol, const std::string& stem) {
  std::vector<std::string> files;
  const NodeId root = sol.tree->root();
  VectorField u(sol.grid.size(), 1);
  u.col(0) = sol.u[root];
  const VectorField& r = sol.r[root];
  for (const auto& format : run.cfg.output.formats) {
    for (const auto& [name, field] : {std::pair<std::string, const VectorField*>{"u", &u}, {"r", &r}}) {
      if (field->size() == 0) continue;
      const std::string file = stem + "_" + name + "_root." + (format == "csv" ? "csv" : "bin");
      std::ofstream out(run.out / file, std::ios::binary);
      if (format == "csv") {
        write_field_csv(out, sol.grid, *field);
      } else {
        write_field_binary(out, sol.grid, *field);
      }
      files.push_back(file);
    }
  }
  return files;
}

struct OracleSetup {
  ProblemData problem;
  OracleSolution oracle;
};

OracleSetup oracle_setup(const ExperimentConfig& cfg, std::shared_ptr<const PathTree> tree, const Grid& grid) {
  const auto& oc = cfg.oracle;
  const Field g = sample_expr(*oc.g, grid, NodeContext::at(*tree, tree->root()));
  if (oc.kind == "wiener") {
    return {wiener_problem(tree, grid, g, oc.a[0], oc.sigma[0]),
            wiener_linear_oracle(grid, g, oc.a[0], oc.sigma[0], cfg.tree.T)};
  }
  const int d = cfg.grid.d, dp = cfg.tree.wiener_dim;
  const Eigen::MatrixXd a = Eigen::Map<const Eigen::MatrixXd>(oc.a.data(), d, d).transpose();
  const Eigen::MatrixXd sigma = Eigen::Map<const Eigen::MatrixXd>(oc.sigma.data(), dp, d).transpose();
  return {heat_problem(tree, grid, g, a, sigma), heat_smoothing_oracle(grid, g, a, cfg.tree.T)};
}

int cmd_check(const Options& opt) {
  Run run = load(opt);
  const auto& cfg = run.cfg;
  if (!cfg.problem.present && !cfg.control.present) throw UsageError("config has neither [problem] nor [control]");
  const Grid grid = make_grid(cfg);
  const auto tree = make_tree(cfg);
  json report = base_report(run, "check");
  bool violated = false;
  auto asserted = [&](const std::string& name) {
    return std::find(cfg.problem.asserts.begin(), cfg.problem.asserts.end(), name) != cfg.problem.asserts.end();
  };

  if (cfg.problem.present) {
    const CoefficientSet coeffs = make_coefficients(cfg);
    const auto nodes = sample_nodes(*tree, coeffs.dependence);
    const auto dp = check_parabolicity(coeffs, grid, *tree, nodes, ParabolicityMode::degenerate);
    const auto sp = check_parabolicity(coeffs, grid, *tree, nodes, ParabolicityMode::super, cfg.problem.sp_delta);
    json cond;
    cond["dp"] = {{"passed", dp.passed}, {"min_eigenvalue", dp.min_eigenvalue}, {"verdict", to_string(dp.verdict)}};
    if (dp.witness) {
      cond["dp"]["witness"] = {{"level", dp.witness->node.level}, {"index", dp.witness->node.index}, {"x", dp.witness->x}};
    }
    cond["sp"] = {{"passed", sp.passed}, {"delta", sp.delta}, {"required_delta", cfg.problem.sp_delta},
                  {"asserted", asserted("sp")}};
    if (!dp.passed) violated = true;
    if (asserted("sp") && !sp.passed) violated = true;

    SymmetryReport sym;
    for (const NodeId& node : nodes) {
      const auto s = check_symmetry(coeffs.sample(grid, NodeContext::at(*tree, node)), grid);
      if (s.max_violation >= sym.max_violation) sym = s;
    }
    cond["symmetry"] = {{"status", sym.satisfied ? "satisfied" : "violated"},
                        {"max_violation", sym.max_violation},
                        {"tolerance", sym.tolerance},
                        {"asserted", asserted("symmetry")}};
    if (asserted("symmetry") && !sym.satisfied) violated = true;

    const CoefficientFields root = coeffs.sample(grid, NodeContext::at(*tree, tree->root()));
    const DerivedCoefficients der = derive(root, grid);
    std::vector<Field> probes;
    for (int s = 0; s < 3; ++s) probes.push_back(random_smooth_field(grid, 3, cfg.seed, 100 + s));
    try {
      const auto ol = oleinik_constant(grid, der.A, probes, 2);
      cond["oleinik"] = {{"constant", ol.constant}, {"evaluated", ol.evaluated}, {"applicable", true}};
    } catch (const PreconditionError& e) {
      cond["oleinik"] = {{"applicable", false}, {"reason", e.what()}};
    }
    cond["bound_estimate"] = {{"order", coeffs.smoothness},
                              {"K", estimate_bound(coeffs, grid, *tree, nodes, coeffs.smoothness)}};
    report["problem"] = cond;
  }

  if (cfg.control.present) {
    const ControlProblem cp = make_control_problem(cfg, tree, grid);
    json per_v = json::array();
    for (double v : cp.gamma) {
      CoefficientSet set;
      set.dim = grid.dim();
      set.wiener_dim = tree->wiener_dim();
      set.dependence = Dependence::path;
      set.sample = [&cp, v](const Grid& g, const NodeContext& ctx) { return cp.coefficients(g, ctx, v); };
      const auto dp = check_parabolicity(set, grid, *tree, sample_nodes(*tree, Dependence::path, 256),
                                         ParabolicityMode::degenerate);
      per_v.push_back({{"v", v}, {"dp_passed", dp.passed}, {"min_eigenvalue", dp.min_eigenvalue}});
      if (!dp.passed) violated = true;
    }
    report["control"] = {{"parabolicity", per_v}, {"forward_cfl_limit", forward_cfl_limit(cp)}, {"dt", tree->dt()}};
  }

  report["violated"] = violated;
  write_json(run.out / "check_report.json", report);
  std::cout << report.dump(2) << "\n";
  return violated ? kExitViolation : kExitOk;
}

int cmd_solve(const Options& opt) {
  Run run = load(opt);
  const auto& cfg = run.cfg;
  const Grid grid = make_grid(cfg);
  const auto tree = make_tree(cfg);
  std::optional<OracleSetup> oracle;
  ProblemData problem;
  if (cfg.oracle.present) {
    oracle = oracle_setup(cfg, tree, grid);
    problem = oracle->problem;
  } else {
    if (!cfg.problem.present) throw UsageError("config has no [problem] section");
    problem = make_problem(cfg, tree, grid);
  }
  const SolutionPair sol = solve(problem, cfg.problem.solver);

  json report = base_report(run, "solve");
  report["scheme"] = meta_json(sol.meta);
  json estimates = json::array();
  for (int m1 : cfg.energy.m1) {
    for (double p : cfg.energy.p) {
      const EstimateReport est = verify_main_estimates(sol, problem, m1, p);
      estimates.push_back({{"m1", m1}, {"p", p}, {"l2", check_json(est.l2)}, {"lp", check_json(est.lp)}});
    }
  }
  report["estimates"] = estimates;
  const auto tests = default_test_functions(grid);
  const WeakFormReport weak = weak_form_residual(sol, problem, tests, cfg.problem.solver);
  report["weak_form"] = {{"max_residual", weak.max_residual},
                         {"worst_level", weak.worst_node.level},
                         {"worst_index", weak.worst_node.index}};

  // Norm time series: expectations per level.
  std::vector<std::string> header{"level", "t"};
  for (int m1 : cfg.energy.m1) {
    header.push_back("E_u_norm2_m" + std::to_string(m1));
    header.push_back("E_r_norm2_m" + std::to_string(m1));
  }
  if (oracle) header.push_back("oracle_u_l2_error");
  {
    CsvWriter csv(run.out / "norms.csv", header);
    for (int n = 0; n <= tree->n_steps(); ++n) {
      std::vector<double> row{static_cast<double>(n), tree->time_grid().time(n)};
      for (int m1 : cfg.energy.m1) {
        std::vector<double> un, rn;
        for (std::int64_t j = 0; j < tree->level_size(n); ++j) {
          un.push_back(sobolev_norm_pow(grid, sol.u[{n, j}], m1, 2.0));
          rn.push_back(n < tree->n_steps() ? sobolev_norm_pow(grid, sol.r[{n, j}], m1, 2.0) : 0.0);
        }
        row.push_back(tree_expectation<double>(*tree, n, un));
        row.push_back(n < tree->n_steps() ? tree_expectation<double>(*tree, n, rn)
                                          : std::numeric_limits<double>::quiet_NaN());
      }
      if (oracle) {
        std::vector<double> err;
        for (std::int64_t j = 0; j < tree->level_size(n); ++j) {
          const NodeContext ctx = NodeContext::at(*tree, {n, j});
          err.push_back(sobolev_norm_pow(grid, Field(sol.u[{n, j}] - oracle->oracle.u(grid, ctx)), 0, 2.0));
        }
        row.push_back(std::sqrt(tree_expectation<double>(*tree, n, err)));
      }
      csv.numbers(row);
    }
  }
  if (oracle) {
    const OracleError e = compare_to_oracle(sol, oracle->oracle);
    report["oracle"] = {{"kind", cfg.oracle.kind},
                        {"derivation", oracle->oracle.derivation},
                        {"u_l2_error", e.u_error},
                        {"q_l2_error", e.q_error},
                        {"u_node_max", e.u_node_max},
                        {"q_node_max", e.q_node_max}};
  }
  json files = json::array({"norms.csv", "solve_report.json"});
  for (const auto& f : dump_root_fields(run, sol, "solution")) files.push_back(f);
  report["files"] = files;
  write_json(run.out / "solve_report.json", report);
  write_json(run.out / "manifest.json", {{"config_hash", cfg.hash}, {"files", files}, {"command", "solve"}});
  std::cout << report.dump(2) << "\n";
  return kExitOk;
}

int cmd_sweep(const Options& opt) {
  Run run = load(opt);
  const auto& cfg = run.cfg;
  if (!cfg.sweep.present) throw UsageError("config has no [sweep] section");
  if (!cfg.problem.present) throw UsageError("config has no [problem] section");
  const Grid grid = make_grid(cfg);
  const auto tree = make_tree(cfg);
  const ProblemData problem = make_problem(cfg, tree, grid);
  SweepTable table;
  if (cfg.sweep.kind == "epsilon") {
    table = viscosity_sweep(problem, cfg.problem.solver, cfg.sweep.values, cfg.sweep.m1);
  } else {
    const SolutionPair sol = solve(problem, cfg.problem.solver);
    table = exponent_sweep(sol, problem, cfg.sweep.m1, cfg.sweep.values);
  }
  {
    std::ofstream out(run.out / "sweep.csv", std::ios::binary);
    write_sweep_csv(out, table);
  }
  json report = base_report(run, "sweep");
  report["kind"] = table.kind;
  report["m1"] = cfg.sweep.m1;
  report["max_min_ratio"] = table.max_min_ratio;
  json rows = json::array();
  for (const auto& r : table.rows) rows.push_back({{"value", r.value}, {"lhs", r.lhs}, {"rhs", r.rhs}, {"c_fit", r.c_fit}});
  report["rows"] = rows;
  if (table.kind == "p") {
    report["fitted_slope"] = table.fitted_slope;
    report["max_root"] = table.max_root;
  } else {
    report["continuation"] = {{"sup_u_difference", table.continuation.sup_u_difference},
                              {"r_difference", table.continuation.r_difference},
                              {"monotone", table.continuation.monotone},
                              {"failure", table.continuation.failure}};
  }
  report["files"] = {"sweep.csv", "sweep_report.json"};
  write_json(run.out / "sweep_report.json", report);
  std::cout << report.dump(2) << "\n";
  return table.continuation.failure.empty() ? kExitOk : kExitViolation;
}

int cmd_control(const Options& opt) {
  Run run = load(opt);
  const auto& cfg = run.cfg;
  if (!cfg.control.present) throw UsageError("config has no [control] section");
  const Grid grid = make_grid(cfg);
  const auto tree = make_tree(cfg);
  ControlProblem cp = make_control_problem(cfg, tree, grid);
  cp.threads = run.threads;
  cp.cfl_safety = cfg.problem.solver.cfl_safety;

  const PolicyIteration it = iterate_policy(cp, ControlPolicy::constant(*tree, 0), cfg.control.max_iters,
                                            cfg.control.tol_scale);
  const NodeMap<Field> xi = solve_forward(cp, it.policy);
  const SolutionPair adj = solve_adjoint(cp, it.policy);
  const MaxPrincipleReport mp = check_max_principle(cp, it.policy, xi, adj, 0.0, cfg.control.tol_scale);
  const DualityReport dual = duality_check(cp, it.policy, xi, adj);

  json report = base_report(run, "control");
  json iters = json::array();
  for (std::size_t i = 0; i < it.costs.size(); ++i) {
    iters.push_back({{"iteration", i}, {"J", it.costs[i]}, {"defect", it.defects[i]}, {"pass_fraction", it.pass_fractions[i]}});
  }
  report["iterations"] = iters;
  report["converged"] = it.converged;
  report["oscillation"] = it.oscillation;
  if (!it.warning.empty()) report["warning"] = it.warning;
  report["final"] = {{"J", dual.cost},
                     {"dual", dual.dual},
                     {"defect", dual.defect},
                     {"pass_fraction", mp.pass_fraction},
                     {"tolerance", mp.tolerance},
                     {"hamiltonian_scale", mp.scale},
                     {"flat_nodes", mp.flat_nodes}};
  json policy = json::array();
  json failures = json::array();
  for (const auto& c : mp.nodes) {
    policy.push_back({{"level", c.node.level}, {"index", c.node.index}, {"v", it.policy.value(cp, c.node)},
                      {"flat", c.flat}});
    if (!c.passed) failures.push_back({{"level", c.node.level}, {"index", c.node.index}, {"gap", c.best - c.chosen}});
  }
  report["policy"] = policy;
  report["failed_nodes"] = failures;
  bool ok = mp.pass_fraction == 1.0;
  if (cfg.control.brute_force) {
    const BruteForceResult bf = brute_force_optimum(cp);
    const double gap = std::abs(bf.cost - dual.cost);
    report["brute_force"] = {{"J", bf.cost}, {"evaluated", bf.evaluated}, {"gap", gap},
                             {"matches", gap <= 1e-10 * std::max(1.0, std::abs(bf.cost))}};
    ok = ok && gap <= 1e-10 * std::max(1.0, std::abs(bf.cost));
  }
  report["files"] = {"control_report.json"};
  write_json(run.out / "control_report.json", report);
  std::cout << report.dump(2) << "\n";
  return ok ? kExitOk : kExitViolation;
}

int cmd_oracle_test(const Options& opt) {
  Run run = load(opt);
  const auto& cfg = run.cfg;
  if (!cfg.oracle.present) throw UsageError("config has no [oracle] section");
  const Grid grid = make_grid(cfg);
  const auto tree = make_tree(cfg);
  const OracleSetup setup = oracle_setup(cfg, tree, grid);
  const OracleResidual res = oracle_step_residual(setup.oracle, setup.problem, cfg.problem.solver);
  const SolutionPair sol = solve(setup.problem, cfg.problem.solver);
  const OracleError err = compare_to_oracle(sol, setup.oracle);
  json report = base_report(run, "oracle-test");
  report["oracle"] = {{"kind", cfg.oracle.kind}, {"derivation", setup.oracle.derivation}};
  report["substitution"] = {{"max_residual", res.max_residual}, {"scale", res.scale}, {"constant", res.constant}};
  report["solver_error"] = {{"u_l2_error", err.u_error},
                            {"q_l2_error", err.q_error},
                            {"u_node_max", err.u_node_max},
                            {"q_node_max", err.q_node_max}};
  report["scheme"] = meta_json(sol.meta);
  report["files"] = {"oracle_report.json"};
  write_json(run.out / "oracle_report.json", report);
  std::cout << report.dump(2) << "\n";
  return std::isfinite(res.constant) && std::isfinite(err.u_error) ? kExitOk : kExitViolation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Degenerate linear BSPDE laboratory"};
  app.require_subcommand(1, 1);
  Options opt;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "experiment config file")->required();
    sub->add_option("--out", opt.out_dir, "output directory (overrides [output] directory)");
    sub->add_option("--threads", opt.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "seed for randomized fields (overrides [problem] seed)");
  };
  struct Command {
    const char* name;
    const char* help;
    int (*fn)(const Options&);
  };
  const Command commands[] = {
      {"check", "run the coefficient condition checkers", cmd_check},
      {"solve", "solve the BSPDE and verify the energy estimates", cmd_solve},
      {"sweep", "viscosity or exponent sweep of the fitted constants", cmd_sweep},
      {"control", "policy iteration, maximum principle and duality for the control problem", cmd_control},
      {"oracle-test", "substitute and solve against a closed-form oracle", cmd_oracle_test},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    subs.emplace_back(sub, &c);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  for (const auto& [sub, c] : subs) {
    if (!sub->parsed()) continue;
    if (sub->count("--seed")) opt.seed = seed;
    try {
      return c->fn(opt);
    } catch (const UsageError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const StabilityError& e) {
      std::cerr << "stability error: " << e.what() << "\nsuggested dt: " << e.suggested_dt() << "\n";
      return kExitViolation;
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitViolation;
    }
  }
  return kExitUsage;
}
