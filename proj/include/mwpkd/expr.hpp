#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mwpkd {

enum class Op : char { Add = '+', Sub = '-', Mul = '*', Div = '/', Pow = '^' };

inline constexpr Op kOperators[] = {Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Pow};
inline constexpr int kMaxNumberSlots = 10;  // N0..N9

// One node of a binary expression tree. Trees are stored flattened in prefix
// order; an operator's left child immediately follows it.
struct ExprNode {
  enum class Kind : std::uint8_t { Operator, NumberSlot, Constant };

  Kind kind = Kind::Constant;
  Op op = Op::Add;
  int slot = 0;
  double value = 0.0;
  std::string text;  // constant token as written, e.g. "C:3.14"

  static ExprNode make_op(Op op);
  static ExprNode make_slot(int slot);
  static ExprNode make_constant(std::string_view token);

  std::string token() const;
  friend bool operator==(const ExprNode&, const ExprNode&) = default;
};

class ExprTree {
 public:
  ExprTree() = default;
  explicit ExprTree(std::vector<ExprNode> prefix_nodes);

  // Parses prefix tokens (+,-,*,/,^, N0..N9, C:<decimal>). Throws Validation
  // on unknown tokens, arity mismatch, or trailing tokens.
  static ExprTree parse_prefix(std::span<const std::string> tokens);

  const std::vector<ExprNode>& nodes() const { return nodes_; }
  bool empty() const { return nodes_.empty(); }
  std::vector<std::string> prefix_tokens() const;
  int depth() const;  // a single leaf has depth 0
  int max_slot() const;  // -1 when no slots

  // Index of the node following the subtree rooted at `i`.
  std::size_t subtree_end(std::size_t i) const;

  // Checks binary arity everywhere and slot bounds.
  void validate(int quantity_count) const;

  friend bool operator==(const ExprTree&, const ExprTree&) = default;

 private:
  std::vector<ExprNode> nodes_;
};

bool is_operator_token(std::string_view token);
bool parse_op(std::string_view token, Op& out);

// Evaluates with real arithmetic. Throws DivZero (|denominator| < 1e-12),
// Domain (e.g. 0^negative, negative^fractional), NonFinite.
double eval_expr(const ExprTree& tree, std::span<const double> quantity_values);

// Reorders the operands of + and * so that equal expressions written with
// swapped commutative operands compare equal.
ExprTree canonicalize_commutative(const ExprTree& tree);

}  // namespace mwpkd
