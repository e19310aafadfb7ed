#pragma once

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "designc/dimension.hpp"
#include "designc/errors.hpp"
#include "designc/value.hpp"

// Shared expression language used by class equations, rule predicates and
// assignments, decision predicates, and chain extract filters.
//
//   expr    := or
//   or      := and (("or" | "||") and)*
//   and     := cmp (("and" | "&&") cmp)*
//   cmp     := add ((== != < <= > >=) add)?        -- non-associative
//   add     := mul ((+ | -) mul)*
//   mul     := unary ((* | /) unary)*
//   unary   := ("-" | "not" | "!") unary | pow
//   pow     := primary ("^" unary)?                -- right-associative
//   primary := number unit-tag? | 'string' | true | false
//            | ident | ident "." ident | ident "(" args ")" | "(" expr ")"
//
// A unit tag follows a numeric literal without whitespace: 0.5[kg/s],
// 9.81[m/s^2], 1[m^1/2]. Factors are the SI base unit symbols (kg m s A K mol
// cd) or "1", combined with * and /, each with an optional rational exponent.
//
// Graph query primitives, valid only where a graph is in scope (decision
// predicates): count(Class), exists(Class), exists(Class where pred),
// attr(Class, attribute).

namespace designc {

enum class BinOp { add, sub, mul, div, pow, eq, ne, lt, le, gt, ge, logic_and, logic_or };
enum class UnOp { neg, logic_not };

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
  enum class Kind { number, string_lit, bool_lit, ident, unary, binary, call };

  Kind kind = Kind::number;
  std::size_t pos = 0;
  double number = 0;
  Dimension dim;     // unit tag; meaningful for number literals
  std::string text;  // identifier ("a" or "pid.attr"), call name, or string literal
  bool flag = false; // bool literal value
  UnOp un = UnOp::neg;
  BinOp bin = BinOp::add;
  std::vector<ExprPtr> args;

  static ExprPtr make_number(double v, Dimension d = {}, std::size_t pos = 0) {
    auto e = std::make_shared<Expr>();
    e->kind = Kind::number;
    e->number = v;
    e->dim = std::move(d);
    e->pos = pos;
    return e;
  }
  static ExprPtr make_ident(std::string name, std::size_t pos = 0) {
    auto e = std::make_shared<Expr>();
    e->kind = Kind::ident;
    e->text = std::move(name);
    e->pos = pos;
    return e;
  }
  static ExprPtr make_unary(UnOp op, ExprPtr a, std::size_t pos = 0) {
    auto e = std::make_shared<Expr>();
    e->kind = Kind::unary;
    e->un = op;
    e->args = {std::move(a)};
    e->pos = pos;
    return e;
  }
  static ExprPtr make_binary(BinOp op, ExprPtr l, ExprPtr r, std::size_t pos = 0) {
    auto e = std::make_shared<Expr>();
    e->kind = Kind::binary;
    e->bin = op;
    e->args = {std::move(l), std::move(r)};
    e->pos = pos;
    return e;
  }
  static ExprPtr make_call(std::string name, std::vector<ExprPtr> args, std::size_t pos = 0) {
    auto e = std::make_shared<Expr>();
    e->kind = Kind::call;
    e->text = std::move(name);
    e->args = std::move(args);
    e->pos = pos;
    return e;
  }
};

namespace detail {

struct Token {
  enum class Type {
    number, ident, string, lparen, rparen, comma, dot,
    plus, minus, star, slash, caret,
    eq, ne, lt, le, gt, ge, kw_and, kw_or, kw_not, kw_where, kw_true, kw_false,
    end
  };
  Type type = Type::end;
  std::size_t pos = 0;
  double number = 0;
  Dimension dim;
  std::string text;
};

class Lexer {
public:
  explicit Lexer(const std::string& src) : src_(src) { advance(); }

  const Token& peek() const { return tok_; }
  Token take() {
    Token t = tok_;
    advance();
    return t;
  }

private:
  void advance() {
    while (i_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[i_]))) ++i_;
    tok_ = Token{};
    tok_.pos = i_;
    if (i_ >= src_.size()) {
      tok_.type = Token::Type::end;
      return;
    }
    char c = src_[i_];
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && i_ + 1 < src_.size() && std::isdigit(static_cast<unsigned char>(src_[i_ + 1])))) {
      lex_number();
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t start = i_;
      while (i_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[i_])) || src_[i_] == '_'))
        ++i_;
      std::string word = src_.substr(start, i_ - start);
      if (word == "and") tok_.type = Token::Type::kw_and;
      else if (word == "or") tok_.type = Token::Type::kw_or;
      else if (word == "not") tok_.type = Token::Type::kw_not;
      else if (word == "where") tok_.type = Token::Type::kw_where;
      else if (word == "true") tok_.type = Token::Type::kw_true;
      else if (word == "false") tok_.type = Token::Type::kw_false;
      else {
        tok_.type = Token::Type::ident;
        tok_.text = std::move(word);
      }
      return;
    }
    if (c == '\'') {
      lex_string();
      return;
    }
    auto two = [&](char a, char b) {
      return c == a && i_ + 1 < src_.size() && src_[i_ + 1] == b;
    };
    if (two('=', '=')) { tok_.type = Token::Type::eq; i_ += 2; return; }
    if (two('!', '=')) { tok_.type = Token::Type::ne; i_ += 2; return; }
    if (two('<', '=')) { tok_.type = Token::Type::le; i_ += 2; return; }
    if (two('>', '=')) { tok_.type = Token::Type::ge; i_ += 2; return; }
    if (two('&', '&')) { tok_.type = Token::Type::kw_and; i_ += 2; return; }
    if (two('|', '|')) { tok_.type = Token::Type::kw_or; i_ += 2; return; }
    switch (c) {
      case '(': tok_.type = Token::Type::lparen; break;
      case ')': tok_.type = Token::Type::rparen; break;
      case ',': tok_.type = Token::Type::comma; break;
      case '.': tok_.type = Token::Type::dot; break;
      case '+': tok_.type = Token::Type::plus; break;
      case '-': tok_.type = Token::Type::minus; break;
      case '*': tok_.type = Token::Type::star; break;
      case '/': tok_.type = Token::Type::slash; break;
      case '^': tok_.type = Token::Type::caret; break;
      case '<': tok_.type = Token::Type::lt; break;
      case '>': tok_.type = Token::Type::gt; break;
      case '!': tok_.type = Token::Type::kw_not; break;
      default:
        throw ParseError(std::string("unexpected character '") + c + "'", i_);
    }
    ++i_;
  }

  void lex_string() {
    std::size_t open = i_;
    ++i_;  // opening quote
    std::string out;
    while (i_ < src_.size() && src_[i_] != '\'') {
      if (src_[i_] == '\\' && i_ + 1 < src_.size() &&
          (src_[i_ + 1] == '\'' || src_[i_ + 1] == '\\')) {
        out += src_[i_ + 1];
        i_ += 2;
        continue;
      }
      out += src_[i_++];
    }
    if (i_ >= src_.size()) throw ParseError("unterminated string literal", open);
    ++i_;  // closing quote
    tok_.type = Token::Type::string;
    tok_.text = std::move(out);
  }

  void lex_number() {
    std::size_t start = i_;
    while (i_ < src_.size() && (std::isdigit(static_cast<unsigned char>(src_[i_])) || src_[i_] == '.'))
      ++i_;
    if (i_ < src_.size() && (src_[i_] == 'e' || src_[i_] == 'E')) {
      std::size_t save = i_;
      ++i_;
      if (i_ < src_.size() && (src_[i_] == '+' || src_[i_] == '-')) ++i_;
      if (i_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[i_]))) {
        while (i_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[i_]))) ++i_;
      } else {
        i_ = save;  // not an exponent, e.g. identifier follows
      }
    }
    std::string text = src_.substr(start, i_ - start);
    char* endp = nullptr;
    double v = std::strtod(text.c_str(), &endp);
    if (endp != text.c_str() + text.size())
      throw ParseError("malformed number '" + text + "'", start);
    tok_.type = Token::Type::number;
    tok_.number = v;
    if (i_ < src_.size() && src_[i_] == '[') tok_.dim = lex_unit_tag();
  }

  Dimension lex_unit_tag() {
    std::size_t open = i_;
    ++i_;  // '['
    std::size_t close = src_.find(']', i_);
    if (close == std::string::npos) throw ParseError("unterminated unit tag", open);
    std::string body = src_.substr(i_, close - i_);
    i_ = close + 1;
    return parse_unit(body, open + 1);
  }

  // kg*m^2/s^3, 1, m^1/2, kg/m/s
  Dimension parse_unit(const std::string& body, std::size_t base_pos) {
    Dimension dim;
    std::size_t p = 0;
    bool divide = false;
    while (p <= body.size()) {
      std::size_t q = p;
      while (q < body.size() && body[q] != '*' && body[q] != '/') ++q;
      std::string factor = body.substr(p, q - p);
      dim = divide ? dim / parse_unit_factor(factor, base_pos + p)
                   : dim * parse_unit_factor(factor, base_pos + p);
      if (q >= body.size()) break;
      divide = body[q] == '/';
      p = q + 1;
      if (p >= body.size() + 1) break;
    }
    return dim;
  }

  Dimension parse_unit_factor(const std::string& f, std::size_t pos) {
    if (f.empty()) throw ParseError("empty unit factor", pos);
    std::size_t caret = f.find('^');
    std::string name = f.substr(0, caret == std::string::npos ? f.size() : caret);
    Rat exponent(1);
    if (caret != std::string::npos) {
      auto r = parse_rational(f.substr(caret + 1));
      if (!r) throw ParseError("bad unit exponent in '" + f + "'", pos);
      exponent = *r;
    }
    if (name == "1") {
      if (caret != std::string::npos) throw ParseError("'1' takes no exponent in unit tag", pos);
      return Dimension{};
    }
    auto axis = base_unit_axis(name);
    if (!axis)
      throw ParseError("unknown unit '" + name + "' (use SI base units kg m s A K mol cd)", pos);
    return Dimension::base(*axis, exponent);
  }

  const std::string& src_;
  std::size_t i_ = 0;
  Token tok_;
};

class Parser {
public:
  explicit Parser(const std::string& src) : lex_(src) {}

  ExprPtr parse() {
    ExprPtr e = parse_or();
    expect(Token::Type::end, "end of expression");
    return e;
  }

private:
  using TT = Token::Type;

  ExprPtr parse_or() {
    ExprPtr l = parse_and();
    while (lex_.peek().type == TT::kw_or) {
      std::size_t pos = lex_.take().pos;
      l = Expr::make_binary(BinOp::logic_or, l, parse_and(), pos);
    }
    return l;
  }

  ExprPtr parse_and() {
    ExprPtr l = parse_cmp();
    while (lex_.peek().type == TT::kw_and) {
      std::size_t pos = lex_.take().pos;
      l = Expr::make_binary(BinOp::logic_and, l, parse_cmp(), pos);
    }
    return l;
  }

  ExprPtr parse_cmp() {
    ExprPtr l = parse_add();
    BinOp op;
    switch (lex_.peek().type) {
      case TT::eq: op = BinOp::eq; break;
      case TT::ne: op = BinOp::ne; break;
      case TT::lt: op = BinOp::lt; break;
      case TT::le: op = BinOp::le; break;
      case TT::gt: op = BinOp::gt; break;
      case TT::ge: op = BinOp::ge; break;
      default: return l;
    }
    std::size_t pos = lex_.take().pos;
    ExprPtr r = parse_add();
    switch (lex_.peek().type) {
      case TT::eq: case TT::ne: case TT::lt: case TT::le: case TT::gt: case TT::ge:
        throw ParseError("comparisons cannot be chained", lex_.peek().pos);
      default: break;
    }
    return Expr::make_binary(op, l, r, pos);
  }

  ExprPtr parse_add() {
    ExprPtr l = parse_mul();
    while (lex_.peek().type == TT::plus || lex_.peek().type == TT::minus) {
      Token t = lex_.take();
      l = Expr::make_binary(t.type == TT::plus ? BinOp::add : BinOp::sub, l, parse_mul(), t.pos);
    }
    return l;
  }

  ExprPtr parse_mul() {
    ExprPtr l = parse_unary();
    while (lex_.peek().type == TT::star || lex_.peek().type == TT::slash) {
      Token t = lex_.take();
      l = Expr::make_binary(t.type == TT::star ? BinOp::mul : BinOp::div, l, parse_unary(), t.pos);
    }
    return l;
  }

  ExprPtr parse_unary() {
    if (lex_.peek().type == TT::minus) {
      std::size_t pos = lex_.take().pos;
      return Expr::make_unary(UnOp::neg, parse_unary(), pos);
    }
    if (lex_.peek().type == TT::kw_not) {
      std::size_t pos = lex_.take().pos;
      return Expr::make_unary(UnOp::logic_not, parse_unary(), pos);
    }
    return parse_pow();
  }

  ExprPtr parse_pow() {
    ExprPtr base = parse_primary();
    if (lex_.peek().type == TT::caret) {
      std::size_t pos = lex_.take().pos;
      return Expr::make_binary(BinOp::pow, base, parse_unary(), pos);
    }
    return base;
  }

  ExprPtr parse_primary() {
    Token t = lex_.take();
    switch (t.type) {
      case TT::number:
        return Expr::make_number(t.number, t.dim, t.pos);
      case TT::string: {
        auto e = std::make_shared<Expr>();
        e->kind = Expr::Kind::string_lit;
        e->text = t.text;
        e->pos = t.pos;
        return e;
      }
      case TT::kw_true:
      case TT::kw_false: {
        auto e = std::make_shared<Expr>();
        e->kind = Expr::Kind::bool_lit;
        e->flag = t.type == TT::kw_true;
        e->pos = t.pos;
        return e;
      }
      case TT::lparen: {
        ExprPtr e = parse_or();
        expect(TT::rparen, "')'");
        return e;
      }
      case TT::ident: {
        if (lex_.peek().type == TT::lparen) return parse_call(t);
        if (lex_.peek().type == TT::dot) {
          lex_.take();
          Token attr = lex_.take();
          if (attr.type != TT::ident)
            throw ParseError("expected attribute name after '.'", attr.pos);
          return Expr::make_ident(t.text + "." + attr.text, t.pos);
        }
        return Expr::make_ident(t.text, t.pos);
      }
      default:
        throw ParseError("expected a value, identifier, or '('", t.pos);
    }
  }

  ExprPtr parse_call(const Token& name) {
    lex_.take();  // '('
    std::vector<ExprPtr> args;
    if (lex_.peek().type != TT::rparen) {
      args.push_back(parse_or());
      // exists(Class where pred)
      if (lex_.peek().type == TT::kw_where) {
        if (name.text != "exists")
          throw ParseError("'where' is only valid inside exists(...)", lex_.peek().pos);
        lex_.take();
        args.push_back(parse_or());
        expect(TT::rparen, "')'");
        return Expr::make_call(name.text, std::move(args), name.pos);
      }
      while (lex_.peek().type == TT::comma) {
        lex_.take();
        args.push_back(parse_or());
      }
    }
    expect(TT::rparen, "')'");
    return Expr::make_call(name.text, std::move(args), name.pos);
  }

  void expect(TT type, const std::string& what) {
    Token t = lex_.take();
    if (t.type != type) throw ParseError("expected " + what, t.pos);
  }

  Lexer lex_;
};

}  // namespace detail

inline ExprPtr parse_expression(const std::string& src) {
  detail::Parser p(src);
  return p.parse();
}

// "lhs == rhs" at top level; returns the two sides.
inline std::pair<ExprPtr, ExprPtr> parse_equation(const std::string& src) {
  ExprPtr e = parse_expression(src);
  if (e->kind != Expr::Kind::binary || e->bin != BinOp::eq)
    throw ParseError("equation must have the form 'expr == expr'", e->pos);
  return {e->args[0], e->args[1]};
}

// ---------------------------------------------------------------------------
// Static typing and dimension inference

struct StaticType {
  ValKind kind = ValKind::number;
  Dimension dim;  // meaningful when kind == number
};

// Identifier and query resolution for the static checker. Contexts without a
// graph in scope leave the class hooks unset, which rejects query primitives.
struct CheckScope {
  std::function<std::optional<StaticType>(const std::string&)> ident;
  std::function<bool(const std::string&)> has_class;
  std::function<std::optional<StaticType>(const std::string&, const std::string&)> class_attr;

  bool queries_allowed() const { return static_cast<bool>(has_class); }
};

// Folds an expression made of integer-valued literals, + - * /, integer ^ and
// unary minus to an exact rational. Used for exponents of dimensional bases.
inline std::optional<Rat> fold_rational(const Expr& e) {
  switch (e.kind) {
    case Expr::Kind::number: {
      if (!e.dim.dimensionless()) return std::nullopt;
      auto n = exact_integer(e.number);
      if (!n) return std::nullopt;
      return Rat(*n);
    }
    case Expr::Kind::unary: {
      if (e.un != UnOp::neg) return std::nullopt;
      auto a = fold_rational(*e.args[0]);
      if (!a) return std::nullopt;
      return -*a;
    }
    case Expr::Kind::binary: {
      auto l = fold_rational(*e.args[0]);
      auto r = fold_rational(*e.args[1]);
      if (!l || !r) return std::nullopt;
      switch (e.bin) {
        case BinOp::add: return *l + *r;
        case BinOp::sub: return *l - *r;
        case BinOp::mul: return *l * *r;
        case BinOp::div:
          if (*r == Rat(0)) return std::nullopt;
          return *l / *r;
        case BinOp::pow:
          if (r->denominator() != 1) return std::nullopt;
          if (*l == Rat(0) && r->numerator() < 0) return std::nullopt;
          return rat_pow(*l, r->numerator());
        default: return std::nullopt;
      }
    }
    default:
      return std::nullopt;
  }
}

namespace detail {

[[noreturn]] inline void type_fail(const Expr& e, const std::string& msg) {
  throw Error(msg + " (at offset " + std::to_string(e.pos) + ")");
}

inline StaticType check_expr_impl(const Expr& e, const CheckScope& scope);

inline StaticType require_number(const Expr& e, const CheckScope& scope, const char* where) {
  StaticType t = check_expr_impl(e, scope);
  if (t.kind != ValKind::number)
    type_fail(e, std::string(where) + ": expected a number, got " + val_kind_name(t.kind));
  return t;
}

inline StaticType check_call(const Expr& e, const CheckScope& scope) {
  const std::string& fn = e.text;
  auto arity = [&](std::size_t n) {
    if (e.args.size() != n)
      type_fail(e, fn + " expects " + std::to_string(n) + " argument(s), got " +
                       std::to_string(e.args.size()));
  };

  if (fn == "sin" || fn == "cos" || fn == "tan" || fn == "exp" || fn == "ln") {
    arity(1);
    StaticType a = require_number(*e.args[0], scope, fn.c_str());
    if (!a.dim.dimensionless())
      type_fail(e, fn + " requires a dimensionless argument, got " + a.dim.str());
    return {ValKind::number, {}};
  }
  if (fn == "sqrt") {
    arity(1);
    StaticType a = require_number(*e.args[0], scope, "sqrt");
    return {ValKind::number, a.dim.pow(Rat(1, 2))};
  }
  if (fn == "abs") {
    arity(1);
    return require_number(*e.args[0], scope, "abs");
  }
  if (fn == "min" || fn == "max") {
    arity(2);
    StaticType a = require_number(*e.args[0], scope, fn.c_str());
    StaticType b = require_number(*e.args[1], scope, fn.c_str());
    if (a.dim != b.dim)
      type_fail(e, fn + ": operands have different dimensions " + a.dim.str() + " vs " + b.dim.str());
    return a;
  }

  if (fn == "count" || fn == "exists" || fn == "attr") {
    if (!scope.queries_allowed())
      type_fail(e, fn + "() graph queries are not available in this context");
    if (e.args.empty() || e.args[0]->kind != Expr::Kind::ident)
      type_fail(e, fn + ": first argument must be a class name");
    const std::string& cls = e.args[0]->text;
    if (!scope.has_class(cls)) type_fail(e, fn + ": unknown class '" + cls + "'");
    if (fn == "count") {
      arity(1);
      return {ValKind::number, {}};
    }
    if (fn == "exists") {
      if (e.args.size() > 2) type_fail(e, "exists takes a class and an optional where clause");
      if (e.args.size() == 2) {
        CheckScope inner = scope;
        inner.ident = [&scope, cls](const std::string& name) -> std::optional<StaticType> {
          if (auto a = scope.class_attr(cls, name)) return a;
          if (scope.ident) return scope.ident(name);
          return std::nullopt;
        };
        StaticType w = check_expr_impl(*e.args[1], inner);
        if (w.kind != ValKind::boolean)
          type_fail(*e.args[1], "exists where-clause must be boolean");
      }
      return {ValKind::boolean, {}};
    }
    // attr(Class, name)
    arity(2);
    if (e.args[1]->kind != Expr::Kind::ident)
      type_fail(e, "attr: second argument must be an attribute name");
    auto a = scope.class_attr(cls, e.args[1]->text);
    if (!a) type_fail(e, "attr: class '" + cls + "' has no attribute '" + e.args[1]->text + "'");
    return *a;
  }

  type_fail(e, "unknown function '" + fn + "'");
}

inline StaticType check_expr_impl(const Expr& e, const CheckScope& scope) {
  switch (e.kind) {
    case Expr::Kind::number:
      return {ValKind::number, e.dim};
    case Expr::Kind::string_lit:
      return {ValKind::string, {}};
    case Expr::Kind::bool_lit:
      return {ValKind::boolean, {}};
    case Expr::Kind::ident: {
      if (!scope.ident) type_fail(e, "identifiers are not available in this context");
      if (auto t = scope.ident(e.text)) return *t;
      type_fail(e, "unknown identifier '" + e.text + "'");
    }
    case Expr::Kind::unary: {
      if (e.un == UnOp::neg) return require_number(*e.args[0], scope, "unary -");
      StaticType a = check_expr_impl(*e.args[0], scope);
      if (a.kind != ValKind::boolean) type_fail(e, "'not' requires a boolean operand");
      return a;
    }
    case Expr::Kind::call:
      return check_call(e, scope);
    case Expr::Kind::binary: {
      switch (e.bin) {
        case BinOp::add:
        case BinOp::sub: {
          StaticType l = require_number(*e.args[0], scope, "+/-");
          StaticType r = require_number(*e.args[1], scope, "+/-");
          if (l.dim != r.dim)
            type_fail(e, std::string(e.bin == BinOp::add ? "+" : "-") +
                             ": operands have different dimensions " + l.dim.str() + " vs " +
                             r.dim.str());
          return l;
        }
        case BinOp::mul: {
          StaticType l = require_number(*e.args[0], scope, "*");
          StaticType r = require_number(*e.args[1], scope, "*");
          return {ValKind::number, l.dim * r.dim};
        }
        case BinOp::div: {
          StaticType l = require_number(*e.args[0], scope, "/");
          StaticType r = require_number(*e.args[1], scope, "/");
          return {ValKind::number, l.dim / r.dim};
        }
        case BinOp::pow: {
          StaticType base = require_number(*e.args[0], scope, "^");
          StaticType ex = require_number(*e.args[1], scope, "^");
          if (!ex.dim.dimensionless()) type_fail(e, "^: exponent must be dimensionless");
          if (base.dim.dimensionless()) return {ValKind::number, {}};
          auto r = fold_rational(*e.args[1]);
          if (!r)
            type_fail(e, "^: a dimensional base requires a rational-constant exponent");
          return {ValKind::number, base.dim.pow(*r)};
        }
        case BinOp::eq:
        case BinOp::ne: {
          StaticType l = check_expr_impl(*e.args[0], scope);
          StaticType r = check_expr_impl(*e.args[1], scope);
          if (l.kind != r.kind)
            type_fail(e, std::string("==/!=: cannot compare ") + val_kind_name(l.kind) + " with " +
                             val_kind_name(r.kind));
          if (l.kind == ValKind::number && l.dim != r.dim)
            type_fail(e, "==/!=: operands have different dimensions " + l.dim.str() + " vs " +
                             r.dim.str());
          return {ValKind::boolean, {}};
        }
        case BinOp::lt:
        case BinOp::le:
        case BinOp::gt:
        case BinOp::ge: {
          StaticType l = require_number(*e.args[0], scope, "comparison");
          StaticType r = require_number(*e.args[1], scope, "comparison");
          if (l.dim != r.dim)
            type_fail(e, "comparison: operands have different dimensions " + l.dim.str() + " vs " +
                             r.dim.str());
          return {ValKind::boolean, {}};
        }
        case BinOp::logic_and:
        case BinOp::logic_or: {
          StaticType l = check_expr_impl(*e.args[0], scope);
          StaticType r = check_expr_impl(*e.args[1], scope);
          if (l.kind != ValKind::boolean || r.kind != ValKind::boolean)
            type_fail(e, "and/or require boolean operands");
          return {ValKind::boolean, {}};
        }
      }
      type_fail(e, "unhandled operator");
    }
  }
  type_fail(e, "unhandled expression kind");
}

}  // namespace detail

// Typechecks and infers the dimension of an expression. Throws on kind
// mismatches, dimensional inhomogeneity, and misuse of query primitives.
inline StaticType check_expr(const Expr& e, const CheckScope& scope) {
  return detail::check_expr_impl(e, scope);
}

// Dimension of a numeric expression given attribute dimensions.
inline Dimension dim_of(const Expr& e, const CheckScope& scope) {
  StaticType t = check_expr(e, scope);
  if (t.kind != ValKind::number) throw Error("expression is not numeric");
  return t.dim;
}

inline Dimension dim_of(const std::string& src,
                        const std::map<std::string, Dimension>& attr_dims) {
  CheckScope scope;
  scope.ident = [&attr_dims](const std::string& name) -> std::optional<StaticType> {
    auto it = attr_dims.find(name);
    if (it == attr_dims.end()) return std::nullopt;
    return StaticType{ValKind::number, it->second};
  };
  ExprPtr e = parse_expression(src);
  return dim_of(*e, scope);
}

// ---------------------------------------------------------------------------
// Evaluation

class QueryHost;

// Identifier and query resolution for evaluation. ident returning nullopt
// means the name is unknown; an unset Value means declared but not yet set.
struct EvalScope {
  std::function<std::optional<Value>(const std::string&)> ident;
  const QueryHost* queries = nullptr;
};

// Graph query primitives, implemented over the design graph by the production
// system. Classes match subtype-inclusively.
class QueryHost {
public:
  virtual ~QueryHost() = default;
  virtual double count_instances(const std::string& cls) const = 0;
  virtual bool exists_instance(const std::string& cls, const ExprPtr& where,
                               const EvalScope& outer) const = 0;
  // Value on the unique instance; throws EvalError if zero or several.
  virtual Value unique_attr(const std::string& cls, const std::string& attr) const = 0;
};

Value eval_expr(const Expr& e, const EvalScope& scope);

namespace detail {

[[noreturn]] inline void eval_fail(const Expr& e, const std::string& msg) {
  throw EvalError(msg + " (at offset " + std::to_string(e.pos) + ")");
}

inline double eval_number(const Expr& e, const EvalScope& scope) {
  Value v = eval_expr(e, scope);
  if (!v.is_number()) eval_fail(e, "expected a number, got " + v.repr());
  return v.number();
}

inline bool eval_bool(const Expr& e, const EvalScope& scope) {
  Value v = eval_expr(e, scope);
  if (!v.is_bool()) eval_fail(e, "expected a boolean, got " + v.repr());
  return v.boolean();
}

inline Value eval_call(const Expr& e, const EvalScope& scope) {
  const std::string& fn = e.text;
  if (fn == "count" || fn == "exists" || fn == "attr") {
    if (!scope.queries) eval_fail(e, fn + "() graph queries are not available in this context");
    if (e.args.empty() || e.args[0]->kind != Expr::Kind::ident)
      eval_fail(e, fn + ": first argument must be a class name");
    const std::string& cls = e.args[0]->text;
    if (fn == "count") return scope.queries->count_instances(cls);
    if (fn == "exists")
      return scope.queries->exists_instance(cls, e.args.size() == 2 ? e.args[1] : nullptr, scope);
    return scope.queries->unique_attr(cls, e.args[1]->text);
  }

  if (fn == "min" || fn == "max") {
    double a = eval_number(*e.args[0], scope);
    double b = eval_number(*e.args[1], scope);
    return fn == "min" ? std::fmin(a, b) : std::fmax(a, b);
  }
  double a = eval_number(*e.args[0], scope);
  if (fn == "sin") return std::sin(a);
  if (fn == "cos") return std::cos(a);
  if (fn == "tan") return std::tan(a);
  if (fn == "exp") return std::exp(a);
  if (fn == "ln") return std::log(a);
  if (fn == "sqrt") return std::sqrt(a);
  if (fn == "abs") return std::fabs(a);
  eval_fail(e, "unknown function '" + fn + "'");
}

}  // namespace detail

inline Value eval_expr(const Expr& e, const EvalScope& scope) {
  using detail::eval_fail;
  switch (e.kind) {
    case Expr::Kind::number:
      return e.number;
    case Expr::Kind::string_lit:
      return e.text;
    case Expr::Kind::bool_lit:
      return e.flag;
    case Expr::Kind::ident: {
      if (!scope.ident) eval_fail(e, "identifiers are not available in this context");
      auto v = scope.ident(e.text);
      if (!v) eval_fail(e, "unknown identifier '" + e.text + "'");
      if (!v->is_set()) eval_fail(e, "'" + e.text + "' has no value");
      return *v;
    }
    case Expr::Kind::unary: {
      if (e.un == UnOp::neg) return -detail::eval_number(*e.args[0], scope);
      return !detail::eval_bool(*e.args[0], scope);
    }
    case Expr::Kind::call:
      return detail::eval_call(e, scope);
    case Expr::Kind::binary: {
      switch (e.bin) {
        case BinOp::add:
          return detail::eval_number(*e.args[0], scope) + detail::eval_number(*e.args[1], scope);
        case BinOp::sub:
          return detail::eval_number(*e.args[0], scope) - detail::eval_number(*e.args[1], scope);
        case BinOp::mul:
          return detail::eval_number(*e.args[0], scope) * detail::eval_number(*e.args[1], scope);
        case BinOp::div: {
          double num = detail::eval_number(*e.args[0], scope);
          double den = detail::eval_number(*e.args[1], scope);
          if (den == 0) eval_fail(e, "division by zero");
          return num / den;
        }
        case BinOp::pow:
          return std::pow(detail::eval_number(*e.args[0], scope),
                          detail::eval_number(*e.args[1], scope));
        case BinOp::eq:
        case BinOp::ne: {
          Value l = eval_expr(*e.args[0], scope);
          Value r = eval_expr(*e.args[1], scope);
          if (l.kind() != r.kind())
            eval_fail(e, "cannot compare " + l.repr() + " with " + r.repr());
          bool eq = l == r;
          return e.bin == BinOp::eq ? eq : !eq;
        }
        case BinOp::lt:
          return detail::eval_number(*e.args[0], scope) < detail::eval_number(*e.args[1], scope);
        case BinOp::le:
          return detail::eval_number(*e.args[0], scope) <= detail::eval_number(*e.args[1], scope);
        case BinOp::gt:
          return detail::eval_number(*e.args[0], scope) > detail::eval_number(*e.args[1], scope);
        case BinOp::ge:
          return detail::eval_number(*e.args[0], scope) >= detail::eval_number(*e.args[1], scope);
        case BinOp::logic_and:
          return detail::eval_bool(*e.args[0], scope) && detail::eval_bool(*e.args[1], scope);
        case BinOp::logic_or:
          return detail::eval_bool(*e.args[0], scope) || detail::eval_bool(*e.args[1], scope);
      }
      eval_fail(e, "unhandled operator");
    }
  }
  detail::eval_fail(e, "unhandled expression kind");
}

// Identifiers referenced by an expression, in first-appearance order.
// Class-name and attribute-name arguments of query primitives are skipped;
// identifiers inside an exists-where clause are reported by on_scoped.
inline void visit_identifiers(const Expr& e, const std::function<void(const std::string&)>& on_ident,
                              const std::function<void(const std::string&, const Expr&)>& on_scoped = {}) {
  switch (e.kind) {
    case Expr::Kind::ident:
      on_ident(e.text);
      return;
    case Expr::Kind::call:
      if (e.text == "count" || e.text == "attr") return;
      if (e.text == "exists") {
        if (e.args.size() == 2 && on_scoped) on_scoped(e.args[0]->text, *e.args[1]);
        return;
      }
      for (const auto& a : e.args) visit_identifiers(*a, on_ident, on_scoped);
      return;
    case Expr::Kind::unary:
    case Expr::Kind::binary:
      for (const auto& a : e.args) visit_identifiers(*a, on_ident, on_scoped);
      return;
    default:
      return;
  }
}

// Renders an expression back to source form (fully parenthesized).
inline std::string expr_str(const Expr& e) {
  switch (e.kind) {
    case Expr::Kind::number: {
      std::string s = format_number(e.number);
      if (!e.dim.dimensionless()) s += "[" + e.dim.str() + "]";
      return s;
    }
    case Expr::Kind::string_lit:
      return "'" + e.text + "'";
    case Expr::Kind::bool_lit:
      return e.flag ? "true" : "false";
    case Expr::Kind::ident:
      return e.text;
    case Expr::Kind::unary:
      return (e.un == UnOp::neg ? "(-" : "(not ") + expr_str(*e.args[0]) + ")";
    case Expr::Kind::call: {
      std::string s = e.text + "(";
      for (std::size_t i = 0; i < e.args.size(); ++i) {
        if (i) s += e.text == "exists" ? " where " : ", ";
        s += expr_str(*e.args[i]);
      }
      return s + ")";
    }
    case Expr::Kind::binary: {
      const char* op = "?";
      switch (e.bin) {
        case BinOp::add: op = " + "; break;
        case BinOp::sub: op = " - "; break;
        case BinOp::mul: op = " * "; break;
        case BinOp::div: op = " / "; break;
        case BinOp::pow: op = "^"; break;
        case BinOp::eq: op = " == "; break;
        case BinOp::ne: op = " != "; break;
        case BinOp::lt: op = " < "; break;
        case BinOp::le: op = " <= "; break;
        case BinOp::gt: op = " > "; break;
        case BinOp::ge: op = " >= "; break;
        case BinOp::logic_and: op = " and "; break;
        case BinOp::logic_or: op = " or "; break;
      }
      return "(" + expr_str(*e.args[0]) + op + expr_str(*e.args[1]) + ")";
    }
  }
  return "?";
}

}  // namespace designc
