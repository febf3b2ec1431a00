#include "mwpkd/expr.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>

#include "mwpkd/error.hpp"

namespace mwpkd {

ExprNode ExprNode::make_op(Op op) {
  ExprNode n;
  n.kind = Kind::Operator;
  n.op = op;
  return n;
}

ExprNode ExprNode::make_slot(int slot) {
  ExprNode n;
  n.kind = Kind::NumberSlot;
  n.slot = slot;
  return n;
}

ExprNode ExprNode::make_constant(std::string_view token) {
  if (token.size() < 3 || token.substr(0, 2) != "C:") {
    fail(ErrorKind::Validation, "constant token must look like C:<decimal>, got '" +
                                    std::string(token) + "'");
  }
  const auto body = token.substr(2);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), v);
  if (ec != std::errc() || ptr != body.data() + body.size() || !std::isfinite(v)) {
    fail(ErrorKind::Validation, "bad constant '" + std::string(token) + "'");
  }
  ExprNode n;
  n.kind = Kind::Constant;
  n.value = v;
  n.text = std::string(token);
  return n;
}

std::string ExprNode::token() const {
  switch (kind) {
    case Kind::Operator: return std::string(1, static_cast<char>(op));
    case Kind::NumberSlot: return "N" + std::to_string(slot);
    case Kind::Constant: return text;
  }
  return {};
}

bool parse_op(std::string_view token, Op& out) {
  if (token.size() != 1) return false;
  for (Op op : kOperators) {
    if (static_cast<char>(op) == token[0]) {
      out = op;
      return true;
    }
  }
  return false;
}

bool is_operator_token(std::string_view token) {
  Op op;
  return parse_op(token, op);
}

ExprTree::ExprTree(std::vector<ExprNode> prefix_nodes) : nodes_(std::move(prefix_nodes)) {}

ExprTree ExprTree::parse_prefix(std::span<const std::string> tokens) {
  if (tokens.empty()) fail(ErrorKind::Validation, "empty equation");
  std::vector<ExprNode> nodes;
  nodes.reserve(tokens.size());
  // `open` counts operand positions still to be filled.
  long open = 1;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (open == 0) {
      fail(ErrorKind::Validation, "trailing tokens after complete expression at position " +
                                      std::to_string(i));
    }
    const auto& t = tokens[i];
    Op op;
    if (parse_op(t, op)) {
      nodes.push_back(ExprNode::make_op(op));
      open += 1;
    } else if (t.size() == 2 && t[0] == 'N' && t[1] >= '0' && t[1] <= '9') {
      nodes.push_back(ExprNode::make_slot(t[1] - '0'));
      open -= 1;
    } else if (t.rfind("C:", 0) == 0) {
      nodes.push_back(ExprNode::make_constant(t));
      open -= 1;
    } else {
      fail(ErrorKind::Validation, "unknown equation token '" + t + "'");
    }
  }
  if (open != 0) fail(ErrorKind::Validation, "incomplete prefix expression (missing operands)");
  return ExprTree(std::move(nodes));
}

std::vector<std::string> ExprTree::prefix_tokens() const {
  std::vector<std::string> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) out.push_back(n.token());
  return out;
}

std::size_t ExprTree::subtree_end(std::size_t i) const {
  long open = 1;
  while (open > 0) {
    if (i >= nodes_.size()) fail(ErrorKind::Validation, "malformed expression tree");
    open += nodes_[i].kind == ExprNode::Kind::Operator ? 1 : -1;
    ++i;
  }
  return i;
}

int ExprTree::depth() const {
  std::function<int(std::size_t, std::size_t&)> walk = [&](std::size_t i, std::size_t& next) {
    if (nodes_[i].kind != ExprNode::Kind::Operator) {
      next = i + 1;
      return 0;
    }
    std::size_t mid;
    const int l = walk(i + 1, mid);
    const int r = walk(mid, next);
    return 1 + std::max(l, r);
  };
  if (nodes_.empty()) return 0;
  std::size_t next;
  return walk(0, next);
}

int ExprTree::max_slot() const {
  int m = -1;
  for (const auto& n : nodes_)
    if (n.kind == ExprNode::Kind::NumberSlot) m = std::max(m, n.slot);
  return m;
}

void ExprTree::validate(int quantity_count) const {
  if (nodes_.empty()) fail(ErrorKind::Validation, "empty expression tree");
  if (subtree_end(0) != nodes_.size()) fail(ErrorKind::Validation, "trailing nodes in tree");
  for (const auto& n : nodes_) {
    if (n.kind == ExprNode::Kind::NumberSlot && (n.slot < 0 || n.slot >= quantity_count)) {
      fail(ErrorKind::Validation, "number slot N" + std::to_string(n.slot) +
                                      " out of range for " + std::to_string(quantity_count) +
                                      " quantities");
    }
  }
}

namespace {

double apply(Op op, double a, double b) {
  switch (op) {
    case Op::Add: return a + b;
    case Op::Sub: return a - b;
    case Op::Mul: return a * b;
    case Op::Div:
      if (std::abs(b) < 1e-12) fail(ErrorKind::DivZero, "division by zero");
      return a / b;
    case Op::Pow:
      if (a == 0.0 && b < 0.0) fail(ErrorKind::Domain, "0 raised to a negative power");
      if (a < 0.0 && std::floor(b) != b) {
        fail(ErrorKind::Domain, "negative base raised to a non-integer power");
      }
      return std::pow(a, b);
  }
  return 0.0;
}

double eval_at(const std::vector<ExprNode>& nodes, std::size_t& i, std::span<const double> vals) {
  const auto& n = nodes.at(i++);
  switch (n.kind) {
    case ExprNode::Kind::NumberSlot:
      if (n.slot < 0 || static_cast<std::size_t>(n.slot) >= vals.size()) {
        fail(ErrorKind::Index, "unresolvable slot N" + std::to_string(n.slot));
      }
      return vals[n.slot];
    case ExprNode::Kind::Constant:
      return n.value;
    case ExprNode::Kind::Operator: {
      const double a = eval_at(nodes, i, vals);
      const double b = eval_at(nodes, i, vals);
      const double r = apply(n.op, a, b);
      if (!std::isfinite(r)) fail(ErrorKind::NonFinite, "non-finite intermediate result");
      return r;
    }
  }
  return 0.0;
}

}  // namespace

double eval_expr(const ExprTree& tree, std::span<const double> quantity_values) {
  if (tree.empty()) fail(ErrorKind::Validation, "empty expression tree");
  std::size_t i = 0;
  const double r = eval_at(tree.nodes(), i, quantity_values);
  if (i != tree.nodes().size()) fail(ErrorKind::Validation, "trailing nodes in tree");
  return r;
}

ExprTree canonicalize_commutative(const ExprTree& tree) {
  const auto& nodes = tree.nodes();
  std::function<std::vector<ExprNode>(std::size_t)> canon = [&](std::size_t i) {
    if (nodes[i].kind != ExprNode::Kind::Operator) return std::vector<ExprNode>{nodes[i]};
    const std::size_t mid = tree.subtree_end(i + 1);
    auto left = canon(i + 1);
    auto right = canon(mid);
    if (nodes[i].op == Op::Add || nodes[i].op == Op::Mul) {
      auto key = [](const std::vector<ExprNode>& v) {
        std::string s;
        for (const auto& n : v) s += n.token() + " ";
        return s;
      };
      if (key(right) < key(left)) std::swap(left, right);
    }
    std::vector<ExprNode> out{nodes[i]};
    out.insert(out.end(), left.begin(), left.end());
    out.insert(out.end(), right.begin(), right.end());
    return out;
  };
  if (nodes.empty()) return tree;
  return ExprTree(canon(0));
}

}  // namespace mwpkd
