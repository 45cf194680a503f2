#include "exitlab/fieldlang.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <charconv>
#include <sstream>

namespace exitlab::fieldlang {

namespace {

struct FuncInfo {
  std::string_view name;
  Func fn;
  int arity;
};

constexpr std::array<FuncInfo, 9> kFuncs = {{
    {"sin", Func::Sin, 1},
    {"cos", Func::Cos, 1},
    {"exp", Func::Exp, 1},
    {"log", Func::Log, 1},
    {"tanh", Func::Tanh, 1},
    {"sqrt", Func::Sqrt, 1},
    {"abs", Func::Abs, 1},
    {"min", Func::Min, 2},
    {"max", Func::Max, 2},
}};

const FuncInfo* lookup_func(std::string_view name) {
  for (const auto& f : kFuncs) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

class Parser {
 public:
  Parser(std::string_view src, const std::vector<std::string>& vars)
      : src_(src), vars_(vars) {}

  Expr run() {
    Expr e = parse_expr();
    skip_ws();
    if (pos_ != src_.size()) fail("unexpected trailing input");
    return e;
  }

 private:
  std::string_view src_;
  const std::vector<std::string>& vars_;
  std::size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(pos_, msg);
  }

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  bool at_end() {
    skip_ws();
    return pos_ >= src_.size();
  }

  char peek() {
    skip_ws();
    return pos_ < src_.size() ? src_[pos_] : '\0';
  }

  bool consume(char c) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  Expr parse_expr() {
    Expr lhs = parse_term();
    while (true) {
      char c = peek();
      if (c != '+' && c != '-') break;
      ++pos_;
      Expr rhs = parse_term();
      Expr node;
      node.kind = c == '+' ? NodeKind::Add : NodeKind::Sub;
      node.args.push_back(std::move(lhs));
      node.args.push_back(std::move(rhs));
      lhs = std::move(node);
    }
    return lhs;
  }

  Expr parse_term() {
    Expr lhs = parse_factor();
    while (true) {
      char c = peek();
      if (c != '*' && c != '/') break;
      ++pos_;
      Expr rhs = parse_factor();
      Expr node;
      node.kind = c == '*' ? NodeKind::Mul : NodeKind::Div;
      node.args.push_back(std::move(lhs));
      node.args.push_back(std::move(rhs));
      lhs = std::move(node);
    }
    return lhs;
  }

  Expr parse_factor() {
    if (consume('-')) {
      Expr node;
      node.kind = NodeKind::Neg;
      node.args.push_back(parse_factor());
      return node;
    }
    return parse_power();
  }

  Expr parse_power() {
    Expr base = parse_atom();
    if (consume('^')) {
      Expr node;
      node.kind = NodeKind::Pow;
      node.args.push_back(std::move(base));
      node.args.push_back(parse_factor());  // right-associative, allows "a^-b"
      return node;
    }
    return base;
  }

  Expr parse_atom() {
    skip_ws();
    if (pos_ >= src_.size()) fail("unexpected end of input");
    char c = src_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_ident();
    if (c == '(') {
      ++pos_;
      Expr e = parse_expr();
      if (!consume(')')) fail("expected ')'");
      return e;
    }
    fail(std::string("unexpected character '") + c + "'");
  }

  Expr parse_number() {
    std::size_t start = pos_;
    double value = 0.0;
    const char* begin = src_.data() + pos_;
    const char* end = src_.data() + src_.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr == begin) {
      pos_ = start;
      fail("malformed number literal");
    }
    pos_ = static_cast<std::size_t>(ptr - src_.data());
    Expr node;
    node.kind = NodeKind::Number;
    node.number = value;
    return node;
  }

  Expr parse_ident() {
    std::size_t start = pos_;
    while (pos_ < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
      ++pos_;
    std::string_view name = src_.substr(start, pos_ - start);

    if (consume('(')) {
      const FuncInfo* info = lookup_func(name);
      if (info == nullptr) {
        pos_ = start;
        fail("unknown function '" + std::string(name) + "'");
      }
      Expr node;
      node.kind = NodeKind::Call;
      node.fn = info->fn;
      node.args.push_back(parse_expr());
      while (consume(',')) node.args.push_back(parse_expr());
      if (!consume(')')) fail("expected ')' in call");
      if (static_cast<int>(node.args.size()) != info->arity) {
        pos_ = start;
        fail("function '" + std::string(name) + "' expects " +
             std::to_string(info->arity) + " argument(s), got " +
             std::to_string(node.args.size()));
      }
      return node;
    }

    for (std::size_t i = 0; i < vars_.size(); ++i) {
      if (vars_[i] == name) {
        Expr node;
        node.kind = NodeKind::Var;
        node.var = static_cast<int>(i);
        return node;
      }
    }
    pos_ = start;
    fail("unknown identifier '" + std::string(name) + "'");
  }
};

int precedence(NodeKind k) {
  switch (k) {
    case NodeKind::Add:
    case NodeKind::Sub:
      return 1;
    case NodeKind::Mul:
    case NodeKind::Div:
      return 2;
    case NodeKind::Neg:
      return 3;
    case NodeKind::Pow:
      return 4;
    default:
      return 5;
  }
}

void print_rec(const Expr& e, std::ostringstream& out, int parent_prec, bool right_of_parent) {
  int prec = precedence(e.kind);
  bool parens = prec < parent_prec ||
                (prec == parent_prec && right_of_parent && e.kind != NodeKind::Pow);
  // Pow is right-associative; a right Pow child of Pow needs no parens.
  if (e.kind == NodeKind::Pow && parent_prec == precedence(NodeKind::Pow) && !right_of_parent)
    parens = true;
  if (parens) out << '(';
  switch (e.kind) {
    case NodeKind::Number: {
      char buf[32];
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, e.number);
      out << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
      break;
    }
    case NodeKind::Var:
      out << "@" << e.var;  // replaced by the caller-supplied name in to_string
      break;
    case NodeKind::Neg:
      out << '-';
      print_rec(e.args[0], out, prec, true);
      break;
    case NodeKind::Add:
    case NodeKind::Sub:
    case NodeKind::Mul:
    case NodeKind::Div:
    case NodeKind::Pow: {
      const char* op = e.kind == NodeKind::Add   ? "+"
                       : e.kind == NodeKind::Sub ? "-"
                       : e.kind == NodeKind::Mul ? "*"
                       : e.kind == NodeKind::Div ? "/"
                                                 : "^";
      print_rec(e.args[0], out, prec, false);
      out << op;
      print_rec(e.args[1], out, prec, true);
      break;
    }
    case NodeKind::Call:
      out << func_name(e.fn) << '(';
      for (std::size_t i = 0; i < e.args.size(); ++i) {
        if (i) out << ',';
        print_rec(e.args[i], out, 0, false);
      }
      out << ')';
      break;
  }
  if (parens) out << ')';
}

}  // namespace

int func_arity(Func f) { return kFuncs[static_cast<std::size_t>(f)].arity; }
std::string_view func_name(Func f) { return kFuncs[static_cast<std::size_t>(f)].name; }

bool Expr::references_variables() const {
  if (kind == NodeKind::Var) return true;
  for (const auto& a : args)
    if (a.references_variables()) return true;
  return false;
}

Expr parse(std::string_view source, const std::vector<std::string>& allowed_vars) {
  return Parser(source, allowed_vars).run();
}

namespace {

std::string substitute_var_names(const std::string& s,
                                 const std::vector<std::string>* names) {
  std::string result;
  result.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '@') {
      std::size_t j = i + 1;
      int idx = 0;
      while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) {
        idx = idx * 10 + (s[j] - '0');
        ++j;
      }
      if (names != nullptr && static_cast<std::size_t>(idx) < names->size())
        result += (*names)[static_cast<std::size_t>(idx)];
      else
        result += "x" + std::to_string(idx + 1);
      i = j - 1;
    } else {
      result += s[i];
    }
  }
  return result;
}

}  // namespace

std::string to_string(const Expr& e) {
  std::ostringstream out;
  print_rec(e, out, 0, false);
  return substitute_var_names(out.str(), nullptr);
}

std::string to_string(const Expr& e, const std::vector<std::string>& var_names) {
  std::ostringstream out;
  print_rec(e, out, 0, false);
  return substitute_var_names(out.str(), &var_names);
}

bool structurally_equal(const Expr& a, const Expr& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case NodeKind::Number:
      return a.number == b.number;
    case NodeKind::Var:
      return a.var == b.var;
    case NodeKind::Call:
      if (a.fn != b.fn) return false;
      break;
    default:
      break;
  }
  if (a.args.size() != b.args.size()) return false;
  for (std::size_t i = 0; i < a.args.size(); ++i)
    if (!structurally_equal(a.args[i], b.args[i])) return false;
  return true;
}

namespace {

const char* kErrUnbound = "variable index out of range of supplied bindings";
const char* kErrLog = "log of a nonpositive value";
const char* kErrSqrt = "sqrt of a negative value";
const char* kErrDiv = "division by zero";
const char* kErrPow = "pow with a negative base and non-integer exponent";
const char* kErrNan = "non-finite arithmetic result (inf - inf or similar)";

EvalResult eval_rec(const Expr& e, std::span<const double> v) {
  switch (e.kind) {
    case NodeKind::Number:
      return {e.number, nullptr};
    case NodeKind::Var:
      if (e.var < 0 || static_cast<std::size_t>(e.var) >= v.size()) return {0.0, kErrUnbound};
      return {v[static_cast<std::size_t>(e.var)], nullptr};
    case NodeKind::Neg: {
      EvalResult r = eval_rec(e.args[0], v);
      r.value = -r.value;
      return r;
    }
    case NodeKind::Add:
    case NodeKind::Sub:
    case NodeKind::Mul:
    case NodeKind::Div:
    case NodeKind::Pow: {
      EvalResult a = eval_rec(e.args[0], v);
      if (!a.ok()) return a;
      EvalResult b = eval_rec(e.args[1], v);
      if (!b.ok()) return b;
      double r = 0.0;
      switch (e.kind) {
        case NodeKind::Add:
          r = a.value + b.value;
          break;
        case NodeKind::Sub:
          r = a.value - b.value;
          break;
        case NodeKind::Mul:
          r = a.value * b.value;
          break;
        case NodeKind::Div:
          if (b.value == 0.0) return {0.0, kErrDiv};
          r = a.value / b.value;
          break;
        default:
          r = std::pow(a.value, b.value);
          if (std::isnan(r)) return {0.0, kErrPow};
          break;
      }
      if (std::isnan(r)) return {0.0, kErrNan};
      return {r, nullptr};
    }
    case NodeKind::Call: {
      EvalResult a = eval_rec(e.args[0], v);
      if (!a.ok()) return a;
      double r = 0.0;
      switch (e.fn) {
        case Func::Sin:
          r = std::sin(a.value);
          break;
        case Func::Cos:
          r = std::cos(a.value);
          break;
        case Func::Exp:
          r = std::exp(a.value);
          break;
        case Func::Log:
          if (a.value <= 0.0) return {0.0, kErrLog};
          r = std::log(a.value);
          break;
        case Func::Tanh:
          r = std::tanh(a.value);
          break;
        case Func::Sqrt:
          if (a.value < 0.0) return {0.0, kErrSqrt};
          r = std::sqrt(a.value);
          break;
        case Func::Abs:
          r = std::abs(a.value);
          break;
        case Func::Min:
        case Func::Max: {
          EvalResult b = eval_rec(e.args[1], v);
          if (!b.ok()) return b;
          r = e.fn == Func::Min ? std::min(a.value, b.value) : std::max(a.value, b.value);
          break;
        }
      }
      if (std::isnan(r)) return {0.0, kErrNan};
      return {r, nullptr};
    }
  }
  return {0.0, "unreachable"};
}

}  // namespace

EvalResult eval(const Expr& e, std::span<const double> values) {
  return eval_rec(e, values);
}

GradResult grad(const Expr& e, std::span<const double> point, double h) {
  GradResult out;
  out.grad.resize(static_cast<Index>(point.size()));
  std::vector<double> work(point.begin(), point.end());
  for (std::size_t i = 0; i < point.size(); ++i) {
    work[i] = point[i] + h;
    EvalResult plus = eval(e, work);
    if (!plus.ok()) return {Vector{}, plus.error};
    work[i] = point[i] - h;
    EvalResult minus = eval(e, work);
    if (!minus.ok()) return {Vector{}, minus.error};
    work[i] = point[i];
    out.grad[static_cast<Index>(i)] = (plus.value - minus.value) / (2.0 * h);
  }
  return out;
}

Program Program::compile(const Expr& e) {
  Program p;
  int depth = 0;
  // Post-order emission.
  struct Emitter {
    Program& p;
    int& depth;
    void visit(const Expr& n) {
      switch (n.kind) {
        case NodeKind::Number:
          p.code_.push_back({Op::PushConst, Func::Sin, 0, n.number});
          bump(1);
          break;
        case NodeKind::Var:
          p.code_.push_back({Op::LoadVar, Func::Sin, n.var, 0.0});
          bump(1);
          break;
        case NodeKind::Neg:
          visit(n.args[0]);
          p.code_.push_back({Op::Neg});
          break;
        case NodeKind::Add:
        case NodeKind::Sub:
        case NodeKind::Mul:
        case NodeKind::Div:
        case NodeKind::Pow: {
          visit(n.args[0]);
          visit(n.args[1]);
          Op op = n.kind == NodeKind::Add   ? Op::Add
                  : n.kind == NodeKind::Sub ? Op::Sub
                  : n.kind == NodeKind::Mul ? Op::Mul
                  : n.kind == NodeKind::Div ? Op::Div
                                            : Op::Pow;
          p.code_.push_back({op});
          bump(-1);
          break;
        }
        case NodeKind::Call:
          visit(n.args[0]);
          if (n.args.size() == 2) {
            visit(n.args[1]);
            p.code_.push_back({Op::Call2, n.fn});
            bump(-1);
          } else {
            p.code_.push_back({Op::Call1, n.fn});
          }
          break;
      }
    }
    void bump(int delta) {
      depth += delta;
      p.max_stack_ = std::max(p.max_stack_, depth);
    }
  };
  Emitter{p, depth}.visit(e);
  if (!e.references_variables()) {
    EvalResult r = eval(e, {});
    if (r.ok()) {
      p.constant_ = true;
      p.constant_value_ = r.value;
    }
  }
  return p;
}

EvalResult Program::run(std::span<const double> values) const {
  if (constant_) return {constant_value_, nullptr};
  double stack[64];
  int sp = 0;
  for (const Instr& in : code_) {
    switch (in.op) {
      case Op::PushConst:
        stack[sp++] = in.value;
        break;
      case Op::LoadVar:
        if (in.var < 0 || static_cast<std::size_t>(in.var) >= values.size())
          return {0.0, kErrUnbound};
        stack[sp++] = values[static_cast<std::size_t>(in.var)];
        break;
      case Op::Neg:
        stack[sp - 1] = -stack[sp - 1];
        break;
      case Op::Add:
        stack[sp - 2] += stack[sp - 1];
        --sp;
        if (std::isnan(stack[sp - 1])) return {0.0, kErrNan};
        break;
      case Op::Sub:
        stack[sp - 2] -= stack[sp - 1];
        --sp;
        if (std::isnan(stack[sp - 1])) return {0.0, kErrNan};
        break;
      case Op::Mul:
        stack[sp - 2] *= stack[sp - 1];
        --sp;
        if (std::isnan(stack[sp - 1])) return {0.0, kErrNan};
        break;
      case Op::Div:
        if (stack[sp - 1] == 0.0) return {0.0, kErrDiv};
        stack[sp - 2] /= stack[sp - 1];
        --sp;
        if (std::isnan(stack[sp - 1])) return {0.0, kErrNan};
        break;
      case Op::Pow: {
        double r = std::pow(stack[sp - 2], stack[sp - 1]);
        if (std::isnan(r)) return {0.0, kErrPow};
        stack[sp - 2] = r;
        --sp;
        break;
      }
      case Op::Call1: {
        double& a = stack[sp - 1];
        switch (in.fn) {
          case Func::Sin:
            a = std::sin(a);
            break;
          case Func::Cos:
            a = std::cos(a);
            break;
          case Func::Exp:
            a = std::exp(a);
            break;
          case Func::Log:
            if (a <= 0.0) return {0.0, kErrLog};
            a = std::log(a);
            break;
          case Func::Tanh:
            a = std::tanh(a);
            break;
          case Func::Sqrt:
            if (a < 0.0) return {0.0, kErrSqrt};
            a = std::sqrt(a);
            break;
          case Func::Abs:
            a = std::abs(a);
            break;
          default:
            return {0.0, "bad unary opcode"};
        }
        if (std::isnan(a)) return {0.0, kErrNan};
        break;
      }
      case Op::Call2: {
        double b = stack[--sp];
        double& a = stack[sp - 1];
        a = in.fn == Func::Min ? std::min(a, b) : std::max(a, b);
        break;
      }
    }
  }
  return {stack[0], nullptr};
}

}  // namespace exitlab::fieldlang
