#include "bspde/expr.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace bspde::expr {

bool Scope::allows(Var v) const {
  switch (v) {
    case Var::t:
      return true;
    case Var::x1:
      return dim >= 1;
    case Var::x2:
      return dim >= 2;
    case Var::w1:
      return wiener_dim >= 1;
    case Var::w2:
      return wiener_dim >= 2;
    case Var::v:
      return control;
  }
  return false;
}

std::string to_string(Var v) {
  static const char* names[] = {"t", "x1", "x2", "w1", "w2", "v"};
  return names[static_cast<int>(v)];
}

std::string to_string(Func f) {
  static const char* names[] = {"sin", "cos", "exp", "sqrt", "abs", "min", "max", "tanh"};
  return names[static_cast<int>(f)];
}

namespace {

struct FuncInfo {
  const char* name;
  Func func;
  int arity;
};
constexpr FuncInfo kFuncs[] = {{"sin", Func::sin, 1},   {"cos", Func::cos, 1}, {"exp", Func::exp, 1},
                               {"sqrt", Func::sqrt, 1}, {"abs", Func::abs, 1}, {"min", Func::min, 2},
                               {"max", Func::max, 2},   {"tanh", Func::tanh, 1}};

struct VarInfo {
  const char* name;
  Var var;
};
constexpr VarInfo kVars[] = {{"t", Var::t},   {"x1", Var::x1}, {"x2", Var::x2},
                             {"w1", Var::w1}, {"w2", Var::w2}, {"v", Var::v}};

NodePtr make(Node::Kind kind, std::size_t offset, std::vector<NodePtr> args = {}) {
  auto n = std::make_shared<Node>();
  n->kind = kind;
  n->offset = offset;
  n->args = std::move(args);
  return n;
}

class Parser {
 public:
  Parser(std::string_view src, const Scope& scope) : src_(src), scope_(scope) {}

  NodePtr run() {
    skip();
    if (pos_ >= src_.size()) throw ParseError("empty expression", pos_);
    NodePtr e = expression(0);
    skip();
    if (pos_ < src_.size()) {
      if (src_[pos_] == ')') throw ParseError("unbalanced ')'", pos_);
      throw ParseError(std::string("unexpected '") + src_[pos_] + "'", pos_);
    }
    return e;
  }

 private:
  // Binding powers: + - 10, * / 20, unary - 30, ^ 40.
  static int infix_power(char c) {
    switch (c) {
      case '+':
      case '-':
        return 10;
      case '*':
      case '/':
        return 20;
      case '^':
        return 40;
      default:
        return -1;
    }
  }

  void skip() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  NodePtr expression(int min_power) {
    NodePtr lhs = prefix();
    while (true) {
      skip();
      if (pos_ >= src_.size()) break;
      const char c = src_[pos_];
      const int power = infix_power(c);
      if (power < 0 || power <= min_power) break;
      const std::size_t at = pos_++;
      // ^ is right-associative: its right operand may contain another ^.
      NodePtr rhs = c == '^' ? expression(power - 1) : expression(power);
      Node::Kind kind = c == '+' ? Node::Kind::add
                        : c == '-' ? Node::Kind::sub
                        : c == '*' ? Node::Kind::mul
                        : c == '/' ? Node::Kind::div
                                   : Node::Kind::pow;
      lhs = make(kind, at, {lhs, rhs});
    }
    return lhs;
  }

  NodePtr prefix() {
    skip();
    if (pos_ >= src_.size()) throw ParseError("unexpected end of expression", pos_);
    const std::size_t at = pos_;
    const char c = src_[pos_];
    if (c == '-') {
      ++pos_;
      // Unary minus binds looser than ^ (so -2^2 == -4) and tighter than * /.
      return make(Node::Kind::negate, at, {expression(30)});
    }
    if (c == '(') {
      ++pos_;
      NodePtr inner = expression(0);
      skip();
      if (pos_ >= src_.size() || src_[pos_] != ')') throw ParseError("unbalanced '(' opened", at);
      ++pos_;
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return identifier();
    if (c == ')') throw ParseError("unbalanced ')'", at);
    throw ParseError(std::string("unexpected '") + c + "'", at);
  }

  NodePtr number() {
    const std::size_t at = pos_;
    std::size_t end = pos_;
    while (end < src_.size() && (std::isdigit(static_cast<unsigned char>(src_[end])) || src_[end] == '.')) ++end;
    if (end < src_.size() && (src_[end] == 'e' || src_[end] == 'E')) {
      std::size_t e = end + 1;
      if (e < src_.size() && (src_[e] == '+' || src_[e] == '-')) ++e;
      if (e < src_.size() && std::isdigit(static_cast<unsigned char>(src_[e]))) {
        while (e < src_.size() && std::isdigit(static_cast<unsigned char>(src_[e]))) ++e;
        end = e;
      }
    }
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(src_.data() + at, src_.data() + end, value);
    if (ec != std::errc() || ptr != src_.data() + end) throw ParseError("malformed number", at);
    if (!std::isfinite(value)) throw ParseError("number out of range", at);
    pos_ = end;
    auto n = make(Node::Kind::number, at);
    std::const_pointer_cast<Node>(n)->value = value;
    return n;
  }

  NodePtr identifier() {
    const std::size_t at = pos_;
    while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) ++pos_;
    const std::string_view name = src_.substr(at, pos_ - at);
    if (name == "pi") return make(Node::Kind::constant_pi, at);
    for (const auto& v : kVars) {
      if (name == v.name) {
        if (!scope_.allows(v.var)) throw ParseError("variable '" + std::string(name) + "' is not declared here", at);
        auto n = make(Node::Kind::variable, at);
        std::const_pointer_cast<Node>(n)->var = v.var;
        return n;
      }
    }
    for (const auto& f : kFuncs) {
      if (name != f.name) continue;
      skip();
      if (pos_ >= src_.size() || src_[pos_] != '(') throw ParseError("function '" + std::string(name) + "' needs '('", pos_);
      const std::size_t open = pos_++;
      std::vector<NodePtr> args;
      skip();
      if (pos_ < src_.size() && src_[pos_] == ')') {
        ++pos_;
      } else {
        while (true) {
          args.push_back(expression(0));
          skip();
          if (pos_ >= src_.size()) throw ParseError("unbalanced '(' opened", open);
          if (src_[pos_] == ',') {
            ++pos_;
            continue;
          }
          if (src_[pos_] == ')') {
            ++pos_;
            break;
          }
          throw ParseError(std::string("unexpected '") + src_[pos_] + "' in argument list", pos_);
        }
      }
      if (static_cast<int>(args.size()) != f.arity) {
        throw ParseError("function '" + std::string(name) + "' takes " + std::to_string(f.arity) + " argument(s), got " +
                             std::to_string(args.size()),
                         at);
      }
      auto n = make(Node::Kind::call, at, std::move(args));
      std::const_pointer_cast<Node>(n)->func = f.func;
      return n;
    }
    throw ParseError("unknown identifier '" + std::string(name) + "'", at);
  }

  std::string_view src_;
  Scope scope_;
  std::size_t pos_ = 0;
};

[[noreturn]] void fail(const Node& n, const std::string& what) {
  throw EvalError(what + " in '" + print(n) + "'");
}

double eval_node(const Node& n, const Bindings& b) {
  using K = Node::Kind;
  switch (n.kind) {
    case K::number:
      return n.value;
    case K::constant_pi:
      return std::numbers::pi;
    case K::variable:
      if (!b.bound(n.var)) fail(n, "unbound variable " + to_string(n.var));
      return b.get(n.var);
    case K::negate:
      return -eval_node(*n.args[0], b);
    case K::add:
      return eval_node(*n.args[0], b) + eval_node(*n.args[1], b);
    case K::sub:
      return eval_node(*n.args[0], b) - eval_node(*n.args[1], b);
    case K::mul:
      return eval_node(*n.args[0], b) * eval_node(*n.args[1], b);
    case K::div: {
      const double num = eval_node(*n.args[0], b);
      const double den = eval_node(*n.args[1], b);
      if (den == 0.0) fail(n, "division by zero");
      return num / den;
    }
    case K::pow: {
      const double base = eval_node(*n.args[0], b);
      const double ex = eval_node(*n.args[1], b);
      if (base < 0.0 && ex != std::trunc(ex)) fail(n, "negative base with non-integer exponent");
      if (base == 0.0 && ex < 0.0) fail(n, "zero raised to a negative power");
      const double r = std::pow(base, ex);
      if (!std::isfinite(r)) fail(n, "overflow");
      return r;
    }
    case K::call: {
      const double x = eval_node(*n.args[0], b);
      switch (n.func) {
        case Func::sin:
          return std::sin(x);
        case Func::cos:
          return std::cos(x);
        case Func::exp: {
          const double r = std::exp(x);
          if (!std::isfinite(r)) fail(n, "overflow");
          return r;
        }
        case Func::sqrt:
          if (x < 0.0) fail(n, "square root of a negative number");
          return std::sqrt(x);
        case Func::abs:
          return std::abs(x);
        case Func::min:
          return std::min(x, eval_node(*n.args[1], b));
        case Func::max:
          return std::max(x, eval_node(*n.args[1], b));
        case Func::tanh:
          return std::tanh(x);
      }
    }
  }
  fail(n, "malformed expression");
}

bool same(const Node& a, const Node& b) {
  if (a.kind != b.kind || a.args.size() != b.args.size()) return false;
  switch (a.kind) {
    case Node::Kind::number:
      if (a.value != b.value) return false;
      break;
    case Node::Kind::variable:
      if (a.var != b.var) return false;
      break;
    case Node::Kind::call:
      if (a.func != b.func) return false;
      break;
    default:
      break;
  }
  for (std::size_t i = 0; i < a.args.size(); ++i) {
    if (!same(*a.args[i], *b.args[i])) return false;
  }
  return true;
}

bool uses_var(const Node& n, Var v) {
  if (n.kind == Node::Kind::variable && n.var == v) return true;
  for (const auto& a : n.args) {
    if (uses_var(*a, v)) return true;
  }
  return false;
}

}  // namespace

Expr parse(std::string_view source, const Scope& scope) {
  return Expr(Parser(source, scope).run(), std::string(source));
}

bool Expr::uses(Var v) const { return root_ && uses_var(*root_, v); }

double Expr::eval(const Bindings& b) const {
  if (!root_) throw EvalError("empty expression");
  return eval_node(*root_, b);
}

bool operator==(const Expr& a, const Expr& b) {
  if (!a.root_ || !b.root_) return !a.root_ && !b.root_;
  return same(*a.root_, *b.root_);
}

std::string print(const Node& n) {
  using K = Node::Kind;
  switch (n.kind) {
    case K::number: {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", n.value);
      return buf;
    }
    case K::constant_pi:
      return "pi";
    case K::variable:
      return to_string(n.var);
    case K::negate:
      return "(-" + print(*n.args[0]) + ")";
    case K::call: {
      std::string s = to_string(n.func) + "(";
      for (std::size_t i = 0; i < n.args.size(); ++i) s += (i ? ", " : "") + print(*n.args[i]);
      return s + ")";
    }
    default: {
      const char op = n.kind == K::add ? '+' : n.kind == K::sub ? '-' : n.kind == K::mul ? '*' : n.kind == K::div ? '/' : '^';
      return "(" + print(*n.args[0]) + " " + op + " " + print(*n.args[1]) + ")";
    }
  }
}

std::string print(const Expr& e) { return e.root() ? print(*e.root()) : std::string(); }

}  // namespace bspde::expr
