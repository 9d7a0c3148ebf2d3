#pragma once

#include <memory>
#include <string>
#include <vector>

namespace hypdiag {

/// Scalar arithmetic expression in the variables z, zeta and t.
///
/// Grammar: + - * / ^ (right assoc), unary minus, parentheses, numbers,
/// constants pi and e, and the functions sin cos tan exp log sqrt abs sign
/// step (step(x) = 1 for x >= 0, else 0).
class Expression {
 public:
  Expression() = default;
  static Expression parse(const std::string& text);

  double operator()(double z, double zeta = 0.0, double t = 0.0) const;
  const std::string& text() const { return text_; }

  struct Node;

 private:
  std::string text_;
  std::shared_ptr<const Node> root_;
};

}  // namespace hypdiag
