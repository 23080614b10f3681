#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bspde {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A full path tree would exceed the node budget.
class BudgetError : public Error {
 public:
  BudgetError(const std::string& what, long long required, long long budget)
      : Error(what), required_(required), budget_(budget) {}
  long long required() const { return required_; }
  long long budget() const { return budget_; }

 private:
  long long required_;
  long long budget_;
};

class UnsupportedMode : public Error {
 public:
  using Error::Error;
};

/// A tree operation received fewer child values than the node has children.
class IncompleteField : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (non-symmetric diffusion, shape mismatch, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Explicit time step above the stability bound.
class StabilityError : public Error {
 public:
  StabilityError(const std::string& what, double suggested_dt)
      : Error(what), suggested_dt_(suggested_dt) {}
  double suggested_dt() const { return suggested_dt_; }

 private:
  double suggested_dt_;
};

class SingularOperator : public Error {
 public:
  using Error::Error;
};

/// Expression syntax error; offset is a byte position in the source.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class EvalError : public Error {
 public:
  using Error::Error;
};

/// Config file problem; line is 1-based, 0 when not tied to a line.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, int line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace bspde
