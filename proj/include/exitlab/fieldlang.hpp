#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "exitlab/types.hpp"

namespace exitlab::fieldlang {

// A small expression language for user-specified scalar fields.
//
// Grammar (precedence climbing, loosest to tightest):
//   expr   := term (("+"|"-") term)*
//   term   := factor (("*"|"/") factor)*
//   factor := "-" factor | power
//   power  := atom ("^" factor)?          (right-associative)
//   atom   := number | ident | ident "(" expr ("," expr)* ")" | "(" expr ")"
//
// Unary minus binds tighter than "*" but looser than "^", so
// "-a*b" parses as "(-a)*b" while "-a^b" parses as "-(a^b)".

enum class NodeKind : std::uint8_t {
  Number,
  Var,
  Neg,
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Call,
};

enum class Func : std::uint8_t {
  Sin,
  Cos,
  Exp,
  Log,
  Tanh,
  Sqrt,
  Abs,
  Min,
  Max,
};

int func_arity(Func f);
std::string_view func_name(Func f);

struct Expr {
  NodeKind kind = NodeKind::Number;
  double number = 0.0;  // Number
  int var = -1;         // Var: index into the allowed-variable list
  Func fn = Func::Sin;  // Call
  std::vector<Expr> args;

  bool references_variables() const;
};

struct ParseError : ConfigError {
  ParseError(std::size_t offset_, const std::string& message)
      : ConfigError(message + " (at byte " + std::to_string(offset_) + ")"),
        offset(offset_) {}
  std::size_t offset;
};

/// Parses `source` against the declared variable names. Unknown
/// identifiers that are not function names are rejected.
Expr parse(std::string_view source, const std::vector<std::string>& allowed_vars);

/// Prints an expression so that re-parsing yields a structurally equal
/// tree. The default names variables x1, x2, ...; pass the parse-time
/// name list when it differs.
std::string to_string(const Expr& e);
std::string to_string(const Expr& e, const std::vector<std::string>& var_names);

bool structurally_equal(const Expr& a, const Expr& b);

/// Evaluation never throws: errors come back as values. `error` is a
/// static string describing the failure, or nullptr on success.
struct EvalResult {
  double value = 0.0;
  const char* error = nullptr;
  bool ok() const { return error == nullptr; }
};

/// `values[i]` binds the variable with index i (the order of
/// `allowed_vars` at parse time).
EvalResult eval(const Expr& e, std::span<const double> values);

/// Central-difference gradient with step h, O(h^2) for smooth fields.
struct GradResult {
  Vector grad;
  const char* error = nullptr;
  bool ok() const { return error == nullptr; }
};
GradResult grad(const Expr& e, std::span<const double> point, double h);

/// Flat postfix program compiled from an Expr, for hot evaluation
/// loops. Semantically identical to eval() on the source tree.
class Program {
 public:
  Program() = default;
  static Program compile(const Expr& e);

  EvalResult run(std::span<const double> values) const;

  /// True when the expression references no variables; `constant_value_`
  /// then holds the precomputed result.
  bool is_constant() const { return constant_; }
  double constant_value() const { return constant_value_; }

 private:
  enum class Op : std::uint8_t {
    PushConst,
    LoadVar,
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Call1,
    Call2,
  };
  struct Instr {
    Op op;
    Func fn = Func::Sin;
    int var = 0;
    double value = 0.0;
  };
  std::vector<Instr> code_;
  int max_stack_ = 0;
  bool constant_ = false;
  double constant_value_ = 0.0;
};

}  // namespace exitlab::fieldlang
