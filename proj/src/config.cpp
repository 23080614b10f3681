#include "bspde/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>

#include "bspde/random_fields.hpp"

namespace bspde {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

/// Splits on commas outside parentheses.
std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  int depth = 0;
  std::string cur;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  return out;
}

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"grid", {"d", "R", "M"}},
      {"tree", {"T", "n_steps", "wiener_dim", "mode"}},
      {"problem",
       {"builtin", "f", "phi", "phi_random_modes", "smoothness", "viscosity", "time_stepping", "corrector_iterations",
        "cfl_safety", "allow_cfl_violation", "assert", "sp_delta", "seed"}},
      {"energy", {"m", "m1", "p"}},
      {"sweep", {"kind", "values", "m1"}},
      {"control", {"gamma", "F", "G1", "G2", "f", "phi", "xi0", "max_iters", "brute_force", "tol_scale"}},
      {"oracle", {"kind", "g", "a", "sigma"}},
      {"output", {"directory", "formats"}},
  };
  return keys;
}

bool is_coefficient_key(const std::string& key) {
  static const std::set<std::string> keys = {"a11",     "a12",     "a21",     "a22",     "b1",  "b2",  "c",
                                             "sigma11", "sigma12", "sigma21", "sigma22", "nu1", "nu2"};
  return keys.count(key) > 0;
}

/// Typed access to one section with line-numbered errors.
class SectionReader {
 public:
  SectionReader(const RawConfig& raw, const std::string& name) : name_(name) {
    auto it = raw.find(name);
    if (it != raw.end()) section_ = &it->second;
  }

  bool present() const { return section_ != nullptr; }
  int line() const { return section_ ? section_->line : 0; }
  bool has(const std::string& key) const { return section_ && section_->entries.count(key); }
  int line_of(const std::string& key) const { return has(key) ? section_->entries.at(key).line : line(); }
  const std::string& text(const std::string& key) const { return section_->entries.at(key).value; }

  double number(const std::string& key, double fallback) const {
    return has(key) ? evaluate(text(key), line_of(key), key) : fallback;
  }
  int integer(const std::string& key, int fallback) const {
    if (!has(key)) return fallback;
    const double v = evaluate(text(key), line_of(key), key);
    if (v != std::round(v) || std::abs(v) > 1e9) throw ConfigError(key + " must be an integer", line_of(key));
    return static_cast<int>(v);
  }
  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& v = text(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + " must be true or false", line_of(key));
  }
  std::string word(const std::string& key, const std::string& fallback) const { return has(key) ? text(key) : fallback; }
  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    for (const auto& item : split_list(text(key))) out.push_back(evaluate(item, line_of(key), key));
    if (out.empty()) throw ConfigError(key + " must list at least one value", line_of(key));
    return out;
  }
  expr::Expr formula(const std::string& key, const expr::Scope& scope) const {
    try {
      return expr::parse(text(key), scope);
    } catch (const ParseError& e) {
      throw ConfigError("[" + name_ + "] " + key + ": " + e.what(), line_of(key));
    }
  }
  std::optional<expr::Expr> optional_formula(const std::string& key, const expr::Scope& scope) const {
    if (!has(key)) return std::nullopt;
    return formula(key, scope);
  }

  CoefficientExprs coefficients(const expr::Scope& scope) const {
    CoefficientExprs out;
    out.line = line();
    if (!section_) return out;
    for (const auto& [key, entry] : section_->entries) {
      if (!is_coefficient_key(key)) continue;
      const int i = key[0] == 'a' ? key[1] - '0' : key[0] == 's' ? key[5] - '0' : key[0] == 'b' ? key[1] - '0' : 1;
      int k = 1;
      if (key[0] == 'a') k = key[2] - '0';
      if (key[0] == 's') k = key[6] - '0';
      if (key[0] == 'n') k = key[2] - '0';
      const bool spatial_second = key[0] == 'a';
      const int second_limit = spatial_second ? scope.dim : scope.wiener_dim;
      const bool first_ok = key[0] == 'n' || key[0] == 'c' || i <= scope.dim;
      const bool second_ok = key[0] == 'b' || key[0] == 'c' || k <= second_limit;
      if (!first_ok || !second_ok) throw ConfigError(key + " does not exist for the declared dimensions", entry.line);
      out.entries.emplace(key, formula(key, scope));
    }
    return out;
  }

  void reject_unknown() const {
    if (!section_) return;
    const auto& allowed = known_keys().at(name_);
    const bool takes_coefficients = name_ == "problem" || name_ == "control";
    for (const auto& [key, entry] : section_->entries) {
      if (allowed.count(key) || (takes_coefficients && is_coefficient_key(key))) continue;
      throw ConfigError("unknown key '" + key + "' in [" + name_ + "]", entry.line);
    }
  }

 private:
  double evaluate(const std::string& source, int line, const std::string& key) const {
    try {
      return expr::parse(source, expr::Scope{0, 0, false}).eval(expr::Bindings{});
    } catch (const Error& e) {
      throw ConfigError(key + ": " + e.what(), line);
    }
  }

  std::string name_;
  const RawSection* section_ = nullptr;
};

expr::Bindings point_bindings(double t, const double* x, int dim, const double* w, int wiener_dim) {
  expr::Bindings b;
  b.set(expr::Var::t, t);
  if (dim >= 1) b.set(expr::Var::x1, x[0]);
  if (dim >= 2) b.set(expr::Var::x2, x[1]);
  if (wiener_dim >= 1) b.set(expr::Var::w1, w[0]);
  if (wiener_dim >= 2) b.set(expr::Var::w2, w[1]);
  return b;
}

double entry_or_zero(const CoefficientExprs& ce, const std::string& key, const expr::Bindings& b) {
  auto it = ce.entries.find(key);
  return it == ce.entries.end() ? 0.0 : it->second.eval(b);
}

/// a21 mirrors a12 (and vice versa) when only one of them is given.
const expr::Expr* a_entry(const CoefficientExprs& ce, int i, int j) {
  auto it = ce.entries.find("a" + std::to_string(i + 1) + std::to_string(j + 1));
  if (it != ce.entries.end()) return &it->second;
  it = ce.entries.find("a" + std::to_string(j + 1) + std::to_string(i + 1));
  return it != ce.entries.end() ? &it->second : nullptr;
}

void fill_point(const CoefficientExprs& ce, const expr::Bindings& b, int d, int dp, PointCoefficients& out) {
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      const expr::Expr* e = a_entry(ce, i, j);
      out.a(i, j) = e ? e->eval(b) : 0.0;
    }
    out.b(i) = entry_or_zero(ce, "b" + std::to_string(i + 1), b);
    for (int k = 0; k < dp; ++k) out.sigma(i, k) = entry_or_zero(ce, "sigma" + std::to_string(i + 1) + std::to_string(k + 1), b);
  }
  for (int k = 0; k < dp; ++k) out.nu(k) = entry_or_zero(ce, "nu" + std::to_string(k + 1), b);
  out.c = entry_or_zero(ce, "c", b);
}

Dependence dependence_of(bool uses_t, bool uses_w) {
  if (uses_w) return Dependence::path;
  if (uses_t) return Dependence::time;
  return Dependence::spatial;
}

}  // namespace

bool CoefficientExprs::uses(expr::Var v) const {
  return std::any_of(entries.begin(), entries.end(), [v](const auto& kv) { return kv.second.uses(v); });
}

RawConfig parse_raw_config(std::string_view text) {
  RawConfig raw;
  RawSection* current = nullptr;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("malformed section header", line_no);
      const std::string name = trim(t.substr(1, t.size() - 2));
      if (!known_keys().count(name)) throw ConfigError("unknown section [" + name + "]", line_no);
      if (raw.count(name)) throw ConfigError("duplicate section [" + name + "]", line_no);
      current = &raw[name];
      current->line = line_no;
    } else {
      const std::size_t eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line_no);
      if (!current) throw ConfigError("entry outside of any section", line_no);
      const std::string key = trim(t.substr(0, eq));
      const std::string value = trim(t.substr(eq + 1));
      if (key.empty()) throw ConfigError("missing key", line_no);
      if (value.empty()) throw ConfigError("missing value for '" + key + "'", line_no);
      if (current->entries.count(key)) throw ConfigError("duplicate key '" + key + "'", line_no);
      current->entries[key] = {value, line_no};
    }
    if (end == text.size()) break;
  }
  return raw;
}

std::string config_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig load_experiment(std::string_view text) {
  const RawConfig raw = parse_raw_config(text);
  if (raw.empty()) throw ConfigError("configuration is empty", 0);
  ExperimentConfig cfg;
  cfg.hash = config_hash(text);
  for (const auto& [name, section] : raw) SectionReader(raw, name).reject_unknown();

  const SectionReader grid(raw, "grid");
  cfg.grid.d = grid.integer("d", cfg.grid.d);
  cfg.grid.R = grid.number("R", cfg.grid.R);
  cfg.grid.M = grid.integer("M", cfg.grid.M);
  if (cfg.grid.d < 1 || cfg.grid.d > 2) throw ConfigError("d must be 1 or 2", grid.line_of("d"));
  if (!(cfg.grid.R > 0.0)) throw ConfigError("R must be positive", grid.line_of("R"));
  if (cfg.grid.M < 8 || cfg.grid.M % 2) throw ConfigError("M must be even and >= 8", grid.line_of("M"));

  const SectionReader tree(raw, "tree");
  cfg.tree.T = tree.number("T", cfg.tree.T);
  cfg.tree.n_steps = tree.integer("n_steps", cfg.tree.n_steps);
  cfg.tree.wiener_dim = tree.integer("wiener_dim", cfg.tree.wiener_dim);
  if (!(cfg.tree.T > 0.0)) throw ConfigError("T must be positive", tree.line_of("T"));
  if (cfg.tree.n_steps < 1) throw ConfigError("n_steps must be >= 1", tree.line_of("n_steps"));
  if (cfg.tree.wiener_dim < 1 || cfg.tree.wiener_dim > 2) {
    throw ConfigError("wiener_dim must be 1 or 2", tree.line_of("wiener_dim"));
  }
  try {
    cfg.tree.mode = tree_mode_from_string(tree.word("mode", "full"));
  } catch (const Error& e) {
    throw ConfigError(e.what(), tree.line_of("mode"));
  }
  if (cfg.tree.mode == TreeMode::recombining && cfg.tree.wiener_dim != 1) {
    throw ConfigError("recombining mode needs wiener_dim = 1", tree.line_of("mode"));
  }
  const expr::Scope data_scope{cfg.grid.d, cfg.tree.wiener_dim, false};
  const expr::Scope control_scope{cfg.grid.d, cfg.tree.wiener_dim, true};

  const SectionReader problem(raw, "problem");
  auto& pb = cfg.problem;
  pb.present = problem.present();
  pb.builtin = problem.word("builtin", "");
  pb.coefficients = problem.coefficients(data_scope);
  if (!pb.builtin.empty()) {
    if (pb.builtin != "counterexample-1" && pb.builtin != "counterexample-2" && pb.builtin != "counterexample-3") {
      throw ConfigError("unknown builtin '" + pb.builtin + "'", problem.line_of("builtin"));
    }
    if (cfg.grid.d != 2 || cfg.tree.wiener_dim != 2) {
      throw ConfigError("builtin counterexamples need d = wiener_dim = 2", problem.line_of("builtin"));
    }
    if (!pb.coefficients.entries.empty()) {
      throw ConfigError("builtin coefficients cannot be combined with formulas", problem.line_of("builtin"));
    }
  }
  pb.f = problem.optional_formula("f", data_scope);
  pb.phi = problem.optional_formula("phi", data_scope);
  pb.phi_random_modes = problem.integer("phi_random_modes", 0);
  if (pb.phi && pb.phi_random_modes > 0) {
    throw ConfigError("phi and phi_random_modes are mutually exclusive", problem.line_of("phi_random_modes"));
  }
  if (pb.phi_random_modes < 0 || 2 * pb.phi_random_modes >= cfg.grid.M) {
    throw ConfigError("phi_random_modes must lie in [0, M/2)", problem.line_of("phi_random_modes"));
  }
  pb.smoothness = problem.integer("smoothness", pb.smoothness);
  pb.solver.viscosity = problem.number("viscosity", 0.0);
  if (pb.solver.viscosity < 0.0) throw ConfigError("viscosity must be >= 0", problem.line_of("viscosity"));
  try {
    pb.solver.time_stepping = time_stepping_from_string(problem.word("time_stepping", "semi_implicit"));
  } catch (const Error& e) {
    throw ConfigError(e.what(), problem.line_of("time_stepping"));
  }
  pb.solver.corrector_iterations = problem.integer("corrector_iterations", pb.solver.corrector_iterations);
  pb.solver.cfl_safety = problem.number("cfl_safety", pb.solver.cfl_safety);
  if (!(pb.solver.cfl_safety > 0.0 && pb.solver.cfl_safety <= 1.0)) {
    throw ConfigError("cfl_safety must lie in (0, 1]", problem.line_of("cfl_safety"));
  }
  pb.solver.allow_cfl_violation = problem.boolean("allow_cfl_violation", false);
  if (problem.has("assert")) {
    for (const auto& a : split_list(problem.text("assert"))) {
      if (a != "dp" && a != "sp" && a != "symmetry") {
        throw ConfigError("unknown assertion '" + a + "' (expected dp, sp, symmetry)", problem.line_of("assert"));
      }
      pb.asserts.push_back(a);
    }
  }
  pb.sp_delta = problem.number("sp_delta", pb.sp_delta);
  const double seed = problem.number("seed", 0.0);
  if (seed < 0.0 || seed != std::floor(seed) || seed > 9.007199254740992e15) {
    throw ConfigError("seed must be a nonnegative integer", problem.line_of("seed"));
  }
  cfg.seed = static_cast<std::uint64_t>(seed);

  const SectionReader energy(raw, "energy");
  cfg.energy.m = energy.integer("m", cfg.energy.m);
  if (cfg.energy.m < 0 || cfg.energy.m > 3) throw ConfigError("m must lie in [0, 3]", energy.line_of("m"));
  if (energy.has("m1")) {
    cfg.energy.m1.clear();
    for (double v : energy.numbers("m1", {})) {
      if (v != std::floor(v) || v < 0 || v > 3) throw ConfigError("m1 values must be integers in [0, 3]", energy.line_of("m1"));
      cfg.energy.m1.push_back(static_cast<int>(v));
    }
  }
  cfg.energy.p = energy.numbers("p", cfg.energy.p);
  for (double p : cfg.energy.p) {
    if (!(p >= 2.0)) throw ConfigError("p values must be >= 2", energy.line_of("p"));
  }

  const SectionReader sweep(raw, "sweep");
  cfg.sweep.present = sweep.present();
  if (sweep.present()) {
    cfg.sweep.kind = sweep.word("kind", "epsilon");
    if (cfg.sweep.kind != "epsilon" && cfg.sweep.kind != "p") {
      throw ConfigError("sweep kind must be epsilon or p", sweep.line_of("kind"));
    }
    if (!sweep.has("values")) throw ConfigError("[sweep] needs values", sweep.line());
    cfg.sweep.values = sweep.numbers("values", {});
    cfg.sweep.m1 = sweep.integer("m1", 0);
    for (std::size_t i = 0; i < cfg.sweep.values.size(); ++i) {
      const double v = cfg.sweep.values[i];
      if (cfg.sweep.kind == "epsilon" && (!(v > 0.0) || (i > 0 && !(v < cfg.sweep.values[i - 1])))) {
        throw ConfigError("epsilon sweep values must be positive and strictly decreasing", sweep.line_of("values"));
      }
      if (cfg.sweep.kind == "p" && !(v >= 2.0)) throw ConfigError("p sweep values must be >= 2", sweep.line_of("values"));
    }
  }

  const SectionReader control(raw, "control");
  auto& ct = cfg.control;
  ct.present = control.present();
  if (ct.present) {
    if (!control.has("gamma")) throw ConfigError("[control] needs gamma", control.line());
    ct.gamma = control.numbers("gamma", {});
    ct.coefficients = control.coefficients(control_scope);
    ct.F = control.optional_formula("F", control_scope);
    for (int k = 0; k < cfg.tree.wiener_dim; ++k) {
      const std::string key = "G" + std::to_string(k + 1);
      if (control.has(key)) {
        ct.G.resize(cfg.tree.wiener_dim, expr::parse("0"));
        ct.G[k] = control.formula(key, control_scope);
      }
    }
    if (control.has("G2") && cfg.tree.wiener_dim < 2) throw ConfigError("G2 needs wiener_dim = 2", control.line_of("G2"));
    ct.f = control.optional_formula("f", control_scope);
    const expr::Scope space_only{cfg.grid.d, 0, false};
    ct.phi = control.optional_formula("phi", space_only);
    ct.xi0 = control.optional_formula("xi0", space_only);
    ct.max_iters = control.integer("max_iters", ct.max_iters);
    ct.brute_force = control.boolean("brute_force", false);
    ct.tol_scale = control.number("tol_scale", ct.tol_scale);
    if (ct.max_iters < 1) throw ConfigError("max_iters must be >= 1", control.line_of("max_iters"));
  }

  const SectionReader oracle(raw, "oracle");
  auto& oc = cfg.oracle;
  oc.present = oracle.present();
  if (oc.present) {
    oc.kind = oracle.word("kind", "");
    const expr::Scope space_only{cfg.grid.d, 0, false};
    if (!oracle.has("g")) throw ConfigError("[oracle] needs g", oracle.line());
    oc.g = oracle.formula("g", space_only);
    const int d = cfg.grid.d, dp = cfg.tree.wiener_dim;
    if (oc.kind == "heat") {
      oc.a = oracle.numbers("a", {});
      oc.sigma = oracle.numbers("sigma", std::vector<double>(d * dp, 0.0));
      if (oc.a.size() != static_cast<std::size_t>(d * d)) throw ConfigError("heat oracle needs d*d values of a", oracle.line_of("a"));
      if (oc.sigma.size() != static_cast<std::size_t>(d * dp)) {
        throw ConfigError("heat oracle needs d*wiener_dim values of sigma", oracle.line_of("sigma"));
      }
    } else if (oc.kind == "wiener") {
      if (d != 1 || dp != 1) throw ConfigError("wiener oracle needs d = wiener_dim = 1", oracle.line_of("kind"));
      oc.a = oracle.numbers("a", {});
      oc.sigma = oracle.numbers("sigma", {});
      if (oc.a.size() != 1 || oc.sigma.size() != 1) throw ConfigError("wiener oracle needs scalar a and sigma", oracle.line());
      if (2.0 * oc.a[0] < oc.sigma[0] * oc.sigma[0]) throw ConfigError("wiener oracle needs a >= sigma^2 / 2", oracle.line_of("a"));
    } else {
      throw ConfigError("oracle kind must be heat or wiener", oracle.line_of("kind"));
    }
  }

  const SectionReader output(raw, "output");
  cfg.output.directory = output.word("directory", cfg.output.directory);
  if (output.has("formats")) {
    cfg.output.formats = split_list(output.text("formats"));
    for (const auto& f : cfg.output.formats) {
      if (f != "csv" && f != "binary") throw ConfigError("unknown output format '" + f + "'", output.line_of("formats"));
    }
  }
  return cfg;
}

Grid make_grid(const ExperimentConfig& cfg) { return Grid::make(cfg.grid.d, cfg.grid.R, cfg.grid.M); }

std::shared_ptr<const PathTree> make_tree(const ExperimentConfig& cfg) {
  return std::make_shared<const PathTree>(
      PathTree::build(TimeGrid::make(cfg.tree.T, cfg.tree.n_steps), cfg.tree.wiener_dim, cfg.tree.mode));
}

CoefficientSet make_coefficients(const ExperimentConfig& cfg) {
  const auto& pb = cfg.problem;
  if (!pb.builtin.empty()) {
    for (auto& set : builtin_counterexamples()) {
      if (set.name == pb.builtin) return set;
    }
  }
  const int d = cfg.grid.d, dp = cfg.tree.wiener_dim;
  const CoefficientExprs ce = pb.coefficients;
  const Dependence dep =
      dependence_of(ce.uses(expr::Var::t), ce.uses(expr::Var::w1) || ce.uses(expr::Var::w2));
  CoefficientSet set = CoefficientSet::from_pointwise(
      "formulas", d, dp, dep,
      [ce, d, dp](double t, std::span<const double> x, std::span<const double> w, PointCoefficients& out) {
        fill_point(ce, point_bindings(t, x.data(), d, w.data(), dp), d, dp, out);
      });
  set.smoothness = pb.smoothness;
  return set;
}

Field sample_expr(const expr::Expr& e, const Grid& grid, const NodeContext& ctx, std::optional<double> v) {
  const int dp = static_cast<int>(ctx.wiener.size());
  Field out(grid.size());
  double x[kMaxDimension] = {0.0, 0.0};
  expr::Bindings b = point_bindings(ctx.time, x, 0, ctx.wiener.data(), dp);
  if (v) b.set(expr::Var::v, *v);
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    b.set(expr::Var::x1, grid.coordinate(i, 0));
    if (grid.dim() == 2) b.set(expr::Var::x2, grid.coordinate(i, 1));
    out(i) = e.eval(b);
  }
  return out;
}

ProblemData make_problem(const ExperimentConfig& cfg, std::shared_ptr<const PathTree> tree, const Grid& grid) {
  const auto& pb = cfg.problem;
  ProblemData p;
  p.tree = std::move(tree);
  p.grid = grid;
  p.coeffs = make_coefficients(cfg);
  p.level_markov = true;  // formulas see the path only through (t, W_t)
  if (pb.f) {
    const expr::Expr f = *pb.f;
    p.forcing = [f](const Grid& g, const NodeContext& ctx) { return sample_expr(f, g, ctx); };
  }
  if (pb.phi) {
    const expr::Expr phi = *pb.phi;
    p.terminal = [phi](const Grid& g, const NodeContext& ctx) { return sample_expr(phi, g, ctx); };
  } else if (pb.phi_random_modes > 0) {
    auto terminal = std::make_shared<RandomTerminal>(
        random_terminal(grid, cfg.tree.wiener_dim, cfg.tree.T, pb.phi_random_modes, 1, cfg.seed));
    p.terminal = [terminal](const Grid&, const NodeContext& ctx) { return terminal->at(ctx.wiener); };
  } else {
    throw ConfigError("[problem] needs phi or phi_random_modes", 0);
  }
  return p;
}

ControlProblem make_control_problem(const ExperimentConfig& cfg, std::shared_ptr<const PathTree> tree,
                                    const Grid& grid) {
  const auto& ct = cfg.control;
  if (!ct.present) throw ConfigError("configuration has no [control] section", 0);
  ControlProblem p;
  p.tree = std::move(tree);
  p.grid = grid;
  p.gamma = ct.gamma;
  const int d = cfg.grid.d, dp = cfg.tree.wiener_dim;
  const CoefficientExprs ce = ct.coefficients;
  p.coefficients = [ce, d, dp](const Grid& g, const NodeContext& ctx, double v) {
    CoefficientFields f = CoefficientFields::zeros(g, dp);
    PointCoefficients pc{Eigen::MatrixXd::Zero(d, d), Eigen::VectorXd::Zero(d), 0.0, Eigen::MatrixXd::Zero(d, dp),
                         Eigen::VectorXd::Zero(dp)};
    double x[kMaxDimension] = {0.0, 0.0};
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      for (int a = 0; a < d; ++a) x[a] = g.coordinate(i, a);
      expr::Bindings b = point_bindings(ctx.time, x, d, ctx.wiener.data(), dp);
      b.set(expr::Var::v, v);
      fill_point(ce, b, d, dp, pc);
      for (int r = 0; r < d; ++r) {
        for (int s = 0; s < d; ++s) f.a_at(r, s)(i) = pc.a(r, s);
        f.b[r](i) = pc.b(r);
        for (int k = 0; k < dp; ++k) f.sigma_at(r, k)(i) = pc.sigma(r, k);
      }
      f.c(i) = pc.c;
      for (int k = 0; k < dp; ++k) f.nu[k](i) = pc.nu(k);
    }
    return f;
  };
  if (ct.F) {
    const expr::Expr F = *ct.F;
    p.F = [F](const Grid& g, const NodeContext& ctx, double v) { return sample_expr(F, g, ctx, v); };
  }
  if (!ct.G.empty()) {
    const std::vector<expr::Expr> G = ct.G;
    p.G = [G](const Grid& g, const NodeContext& ctx, double v) {
      VectorField out(g.size(), static_cast<Eigen::Index>(G.size()));
      for (std::size_t k = 0; k < G.size(); ++k) out.col(k) = sample_expr(G[k], g, ctx, v);
      return out;
    };
  }
  if (ct.f) {
    const expr::Expr f = *ct.f;
    p.f = [f](const Grid& g, const NodeContext& ctx, double v) { return sample_expr(f, g, ctx, v); };
  }
  const NodeContext root = NodeContext::at(*p.tree, p.tree->root());
  p.phi = ct.phi ? sample_expr(*ct.phi, grid, root) : Field::Zero(grid.size());
  p.xi0 = ct.xi0 ? sample_expr(*ct.xi0, grid, root) : Field::Zero(grid.size());
  return p;
}

}  // namespace bspde
