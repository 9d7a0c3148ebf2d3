#include "hypdiag/expr.hpp"

#include <cctype>
#include <cmath>
#include <numbers>

#include "hypdiag/errors.hpp"

namespace hypdiag {

struct Expression::Node {
  enum Kind { Number, VarZ, VarZeta, VarT, Neg, Add, Sub, Mul, Div, Pow, Call } kind;
  double value = 0.0;
  double (*fn)(double) = nullptr;
  std::shared_ptr<const Node> a, b;

  double eval(double z, double zeta, double t) const {
    switch (kind) {
      case Number: return value;
      case VarZ: return z;
      case VarZeta: return zeta;
      case VarT: return t;
      case Neg: return -a->eval(z, zeta, t);
      case Add: return a->eval(z, zeta, t) + b->eval(z, zeta, t);
      case Sub: return a->eval(z, zeta, t) - b->eval(z, zeta, t);
      case Mul: return a->eval(z, zeta, t) * b->eval(z, zeta, t);
      case Div: return a->eval(z, zeta, t) / b->eval(z, zeta, t);
      case Pow: return std::pow(a->eval(z, zeta, t), b->eval(z, zeta, t));
      case Call: return fn(a->eval(z, zeta, t));
    }
    return 0.0;
  }
};

namespace {

using NodePtr = std::shared_ptr<const Expression::Node>;

double step_fn(double x) { return x >= 0.0 ? 1.0 : 0.0; }
double sign_fn(double x) { return (x > 0.0) - (x < 0.0); }
double sin_fn(double x) { return std::sin(x); }
double cos_fn(double x) { return std::cos(x); }
double tan_fn(double x) { return std::tan(x); }
double exp_fn(double x) { return std::exp(x); }
double log_fn(double x) { return std::log(x); }
double sqrt_fn(double x) { return std::sqrt(x); }
double abs_fn(double x) { return std::fabs(x); }

NodePtr make(Expression::Node::Kind k, NodePtr a = nullptr, NodePtr b = nullptr) {
  auto n = std::make_shared<Expression::Node>();
  n->kind = k;
  n->a = std::move(a);
  n->b = std::move(b);
  return n;
}

class Parser {
 public:
  explicit Parser(const std::string& s) : s_(s) {}

  NodePtr run() {
    NodePtr n = sum();
    skip();
    if (pos_ != s_.size()) fail("unexpected character");
    return n;
  }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw InputError("expression '" + s_ + "': " + why + " at offset " + std::to_string(pos_));
  }
  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool eat(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  NodePtr sum() {
    NodePtr n = product();
    for (;;) {
      if (eat('+')) n = make(Expression::Node::Add, n, product());
      else if (eat('-')) n = make(Expression::Node::Sub, n, product());
      else return n;
    }
  }
  NodePtr product() {
    NodePtr n = unary();
    for (;;) {
      if (eat('*')) n = make(Expression::Node::Mul, n, unary());
      else if (eat('/')) n = make(Expression::Node::Div, n, unary());
      else return n;
    }
  }
  NodePtr unary() {
    if (eat('-')) return make(Expression::Node::Neg, unary());
    if (eat('+')) return unary();
    return power();
  }
  NodePtr power() {
    NodePtr base = atom();
    if (eat('^')) return make(Expression::Node::Pow, base, unary());
    return base;
  }
  NodePtr atom() {
    skip();
    if (pos_ >= s_.size()) fail("unexpected end");
    if (eat('(')) {
      NodePtr n = sum();
      if (!eat(')')) fail("missing ')'");
      return n;
    }
    const char c = s_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t used = 0;
      const double v = std::stod(s_.substr(pos_), &used);
      pos_ += used;
      auto n = std::make_shared<Expression::Node>();
      n->kind = Expression::Node::Number;
      n->value = v;
      return n;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      const std::size_t start = pos_;
      while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_'))
        ++pos_;
      const std::string name = s_.substr(start, pos_ - start);
      if (name == "z") return make(Expression::Node::VarZ);
      if (name == "zeta") return make(Expression::Node::VarZeta);
      if (name == "t") return make(Expression::Node::VarT);
      if (name == "pi" || name == "e") {
        auto n = std::make_shared<Expression::Node>();
        n->kind = Expression::Node::Number;
        n->value = name == "pi" ? std::numbers::pi : std::numbers::e;
        return n;
      }
      double (*fn)(double) = nullptr;
      if (name == "sin") fn = sin_fn;
      else if (name == "cos") fn = cos_fn;
      else if (name == "tan") fn = tan_fn;
      else if (name == "exp") fn = exp_fn;
      else if (name == "log") fn = log_fn;
      else if (name == "sqrt") fn = sqrt_fn;
      else if (name == "abs") fn = abs_fn;
      else if (name == "sign") fn = sign_fn;
      else if (name == "step") fn = step_fn;
      else fail("unknown identifier '" + name + "'");
      if (!eat('(')) fail("expected '(' after " + name);
      auto n = std::make_shared<Expression::Node>();
      n->kind = Expression::Node::Call;
      n->fn = fn;
      n->a = sum();
      if (!eat(')')) fail("missing ')'");
      return n;
    }
    fail("unexpected character");
  }

  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace

Expression Expression::parse(const std::string& text) {
  Expression e;
  e.text_ = text;
  e.root_ = Parser(e.text_).run();
  return e;
}

double Expression::operator()(double z, double zeta, double t) const {
  if (!root_) return 0.0;
  return root_->eval(z, zeta, t);
}

}  // namespace hypdiag
