#pragma once

// Expression language for coefficients and data:
//   literals, variables t x1 x2 w1 w2 v, the constant pi,
//   + - * / ^ and unary -, functions sin cos exp sqrt abs min max tanh.
// Precedence: ^ > unary - > * / > + -; ^ is right-associative.

#include <array>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "bspde/errors.hpp"

namespace bspde::expr {

enum class Var { t, x1, x2, w1, w2, v };
inline constexpr int kVarCount = 6;

enum class Func { sin, cos, exp, sqrt, abs, min, max, tanh };

/// Which variables a context declares.
struct Scope {
  int dim = 2;
  int wiener_dim = 2;
  bool control = true;

  bool allows(Var v) const;
};

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  enum class Kind { number, constant_pi, variable, negate, add, sub, mul, div, pow, call };
  Kind kind = Kind::number;
  double value = 0.0;  // number
  Var var = Var::t;    // variable
  Func func = Func::sin;
  std::vector<NodePtr> args;  // operands or call arguments
  std::size_t offset = 0;     // byte position in the source
};

class Bindings {
 public:
  Bindings& set(Var v, double value) {
    values_[static_cast<int>(v)] = value;
    bound_[static_cast<int>(v)] = true;
    return *this;
  }
  bool bound(Var v) const { return bound_[static_cast<int>(v)]; }
  double get(Var v) const { return values_[static_cast<int>(v)]; }

 private:
  std::array<double, kVarCount> values_{};
  std::array<bool, kVarCount> bound_{};
};

class Expr {
 public:
  Expr() = default;
  explicit Expr(NodePtr root, std::string source = {}) : root_(std::move(root)), source_(std::move(source)) {}

  const NodePtr& root() const { return root_; }
  const std::string& source() const { return source_; }
  bool uses(Var v) const;

  /// Throws EvalError on unbound variables, division by zero or a domain
  /// error; the message names the failing subexpression.
  double eval(const Bindings& b) const;

  friend bool operator==(const Expr& a, const Expr& b);

 private:
  NodePtr root_;
  std::string source_;
};

/// Throws ParseError (with byte offset) on unknown identifiers, arity
/// mismatches, unbalanced parentheses and stray tokens.
Expr parse(std::string_view source, const Scope& scope = {});

/// Canonical, fully parenthesized form; parse(print(e)) == e.
std::string print(const Expr& e);
std::string print(const Node& n);

std::string to_string(Var v);
std::string to_string(Func f);

}  // namespace bspde::expr
