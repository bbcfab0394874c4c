// Copyright 2026 The Shapcolic Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Immutable symbolic expressions over real-valued input variables.
//
// Expressions are DAGs of shared, immutable nodes. Every builder normalizes
// locally: constants are folded, additive/multiplicative identities are
// dropped, constants sit on the right of '+' and on the left of '*', and
// chains like ((e + c1) + c2) collapse to (e + (c1 + c2)). All traversals are
// iterative so that long accumulation chains from wide dense layers cannot
// overflow the stack.

#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "shapcolic/errors.hpp"

namespace shapcolic {

enum class OpKind : std::uint8_t { kConst, kVar, kAdd, kSub, kMul, kDiv, kNeg };

inline bool is_binary(OpKind op) {
  return op == OpKind::kAdd || op == OpKind::kSub || op == OpKind::kMul || op == OpKind::kDiv;
}

// Shortest decimal that round-trips to the same double. May use exponent
// notation; use format_fixed_decimal where a plain decimal is required.
inline std::string format_decimal(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

// Shortest round-trip decimal in positional notation, never with an exponent.
inline std::string format_fixed_decimal(double v) {
  std::string out(32, '\0');
  for (;;) {
    auto [end, ec] = std::to_chars(out.data(), out.data() + out.size(), v, std::chars_format::fixed);
    if (ec == std::errc{}) {
      out.resize(static_cast<std::size_t>(end - out.data()));
      return out;
    }
    out.resize(out.size() * 4);
  }
}

class SymExpr;

namespace detail {

struct ExprNode {
  OpKind op;
  double value = 0.0;  // kConst
  std::string name;    // kVar
  std::shared_ptr<const ExprNode> lhs;
  std::shared_ptr<const ExprNode> rhs;  // binary only
  std::size_t hash = 0;

  ExprNode() = default;
  ExprNode(const ExprNode&) = delete;
  ExprNode& operator=(const ExprNode&) = delete;

  // Releases long chains iteratively instead of through nested destructors.
  ~ExprNode() {
    std::vector<std::shared_ptr<const ExprNode>> pending;
    auto release = [&pending](std::shared_ptr<const ExprNode>& p) {
      if (p && p.use_count() == 1) pending.push_back(std::move(p));
      p.reset();
    };
    release(lhs);
    release(rhs);
    while (!pending.empty()) {
      std::shared_ptr<const ExprNode> n = std::move(pending.back());
      pending.pop_back();
      auto& m = const_cast<ExprNode&>(*n);
      release(m.lhs);
      release(m.rhs);
    }
  }
};

inline std::size_t mix(std::size_t seed, std::size_t v) {
  return seed ^ (v + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
}

}  // namespace detail

// Handle to an immutable expression node. Always non-null.
class SymExpr {
 public:
  using Node = detail::ExprNode;

  // The constant 0.
  SymExpr() {
    static const SymExpr kZero = constant(0.0);
    node_ = kZero.node_;
  }

  static SymExpr constant(double v) {
    auto n = std::make_shared<Node>();
    n->op = OpKind::kConst;
    n->value = v == 0.0 ? 0.0 : v;  // drop negative zero
    n->hash = detail::mix(1, std::hash<std::uint64_t>{}(std::bit_cast<std::uint64_t>(n->value)));
    return SymExpr(std::move(n));
  }

  static SymExpr variable(std::string name) {
    auto n = std::make_shared<Node>();
    n->op = OpKind::kVar;
    n->hash = detail::mix(2, std::hash<std::string>{}(name));
    n->name = std::move(name);
    return SymExpr(std::move(n));
  }

  OpKind kind() const { return node_->op; }
  bool is_constant() const { return node_->op == OpKind::kConst; }
  bool is_constant(double v) const { return is_constant() && node_->value == v; }
  bool is_variable() const { return node_->op == OpKind::kVar; }
  double value() const { return node_->value; }
  const std::string& name() const { return node_->name; }
  SymExpr lhs() const { return SymExpr(node_->lhs); }
  SymExpr rhs() const { return SymExpr(node_->rhs); }
  std::size_t hash() const { return node_->hash; }
  const Node* get() const { return node_.get(); }

  friend SymExpr operator+(const SymExpr& a, const SymExpr& b);
  friend SymExpr operator-(const SymExpr& a, const SymExpr& b);
  friend SymExpr operator*(const SymExpr& a, const SymExpr& b);
  friend SymExpr operator/(const SymExpr& a, const SymExpr& b);
  friend SymExpr operator-(const SymExpr& a);

  // Builds a node without normalization. Only meant for tests that need to
  // exercise consumers on unnormalized input.
  static SymExpr make_raw(OpKind op, const SymExpr& a, const SymExpr* b = nullptr) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->lhs = a.node_;
    n->hash = detail::mix(static_cast<std::size_t>(op) + 16, a.hash());
    if (b) {
      n->rhs = b->node_;
      n->hash = detail::mix(n->hash, b->hash());
    }
    return SymExpr(std::move(n));
  }

 private:
  explicit SymExpr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

  std::shared_ptr<const Node> node_;
};

inline SymExpr operator-(const SymExpr& a) {
  if (a.is_constant()) return SymExpr::constant(-a.value());
  if (a.kind() == OpKind::kNeg) return a.lhs();
  return SymExpr::make_raw(OpKind::kNeg, a);
}

inline SymExpr operator+(const SymExpr& a, const SymExpr& b) {
  if (a.is_constant() && b.is_constant()) return SymExpr::constant(a.value() + b.value());
  if (a.is_constant(0.0)) return b;
  if (b.is_constant(0.0)) return a;
  if (a.is_constant()) return b + a;
  if (b.is_constant() && a.kind() == OpKind::kAdd && a.rhs().is_constant()) {
    return a.lhs() + SymExpr::constant(a.rhs().value() + b.value());
  }
  return SymExpr::make_raw(OpKind::kAdd, a, &b);
}

inline SymExpr operator-(const SymExpr& a, const SymExpr& b) {
  if (a.is_constant() && b.is_constant()) return SymExpr::constant(a.value() - b.value());
  if (b.is_constant(0.0)) return a;
  if (a.is_constant(0.0)) return -b;
  if (b.is_constant()) return a + SymExpr::constant(-b.value());
  return SymExpr::make_raw(OpKind::kSub, a, &b);
}

inline SymExpr operator*(const SymExpr& a, const SymExpr& b) {
  if (a.is_constant() && b.is_constant()) return SymExpr::constant(a.value() * b.value());
  if (a.is_constant(0.0) || b.is_constant(0.0)) return SymExpr::constant(0.0);
  if (a.is_constant(1.0)) return b;
  if (b.is_constant(1.0)) return a;
  if (b.is_constant()) return b * a;
  if (a.is_constant(-1.0)) return -b;
  if (a.is_constant()) {
    if (b.kind() == OpKind::kMul && b.lhs().is_constant()) {
      return SymExpr::constant(a.value() * b.lhs().value()) * b.rhs();
    }
    if (b.kind() == OpKind::kNeg) return SymExpr::constant(-a.value()) * b.lhs();
  }
  return SymExpr::make_raw(OpKind::kMul, a, &b);
}

inline std::string to_string(const SymExpr& e, std::size_t max_length);

inline SymExpr operator/(const SymExpr& a, const SymExpr& b) {
  if (b.is_constant(0.0)) {
    throw ArithmeticError("division by constant zero", to_string(a, 256) + " / 0");
  }
  if (a.is_constant() && b.is_constant()) return SymExpr::constant(a.value() / b.value());
  if (a.is_constant(0.0)) return SymExpr::constant(0.0);
  if (b.is_constant(1.0)) return a;
  return SymExpr::make_raw(OpKind::kDiv, a, &b);
}

// Post-order listing of the unique nodes reachable from `roots`. Children
// always precede their parents. Gives up with nullopt as soon as
// `keep_going()` returns false; it is polled once per visited node.
template <class KeepGoing>
std::optional<std::vector<const detail::ExprNode*>> topological_nodes(std::span<const SymExpr> roots,
                                                                     KeepGoing keep_going) {
  std::vector<const detail::ExprNode*> order;
  std::unordered_set<const detail::ExprNode*> done;
  std::vector<std::pair<const detail::ExprNode*, bool>> stack;
  for (auto it = roots.rbegin(); it != roots.rend(); ++it) stack.emplace_back(it->get(), false);
  while (!stack.empty()) {
    auto [n, expanded] = stack.back();
    stack.pop_back();
    if (!keep_going()) return std::nullopt;
    if (done.contains(n)) continue;
    if (expanded) {
      done.insert(n);
      order.push_back(n);
      continue;
    }
    stack.emplace_back(n, true);
    if (n->rhs && !done.contains(n->rhs.get())) stack.emplace_back(n->rhs.get(), false);
    if (n->lhs && !done.contains(n->lhs.get())) stack.emplace_back(n->lhs.get(), false);
  }
  return order;
}

inline std::vector<const detail::ExprNode*> topological_nodes(std::span<const SymExpr> roots) {
  return *topological_nodes(roots, [] { return true; });
}

inline std::vector<const detail::ExprNode*> topological_nodes(const SymExpr& root) {
  return topological_nodes(std::span<const SymExpr>(&root, 1));
}

// Number of distinct nodes (shared subexpressions counted once).
inline std::size_t node_count(std::span<const SymExpr> roots) { return topological_nodes(roots).size(); }
inline std::size_t node_count(const SymExpr& root) { return topological_nodes(root).size(); }

using Assignment = std::unordered_map<std::string, double>;

inline double apply_op(OpKind op, double a, double b) {
  switch (op) {
    case OpKind::kAdd: return a + b;
    case OpKind::kSub: return a - b;
    case OpKind::kMul: return a * b;
    case OpKind::kDiv: return a / b;
    case OpKind::kNeg: return -a;
    default: return 0.0;
  }
}

// Evaluates every root under `env`; shared nodes are computed once.
inline std::vector<double> evaluate(std::span<const SymExpr> roots, const Assignment& env) {
  std::unordered_map<const detail::ExprNode*, double> values;
  for (const auto* n : topological_nodes(roots)) {
    double v = 0.0;
    switch (n->op) {
      case OpKind::kConst: v = n->value; break;
      case OpKind::kVar: {
        auto it = env.find(n->name);
        if (it == env.end()) throw ConfigError("unbound variable '" + n->name + "'");
        v = it->second;
        break;
      }
      case OpKind::kNeg: v = -values.at(n->lhs.get()); break;
      default: v = apply_op(n->op, values.at(n->lhs.get()), values.at(n->rhs.get()));
    }
    values.emplace(n, v);
  }
  std::vector<double> out;
  out.reserve(roots.size());
  for (const auto& r : roots) out.push_back(values.at(r.get()));
  return out;
}

inline double evaluate(const SymExpr& e, const Assignment& env) {
  return evaluate(std::span<const SymExpr>(&e, 1), env)[0];
}

// Names of all variables occurring in the expressions, in first-seen order.
inline std::vector<std::string> free_variables(std::span<const SymExpr> roots) {
  std::vector<std::string> names;
  std::unordered_set<std::string> seen;
  for (const auto* n : topological_nodes(roots)) {
    if (n->op == OpKind::kVar && seen.insert(n->name).second) names.push_back(n->name);
  }
  return names;
}

inline bool structurally_equal(const SymExpr& a, const SymExpr& b) {
  using P = std::pair<const detail::ExprNode*, const detail::ExprNode*>;
  struct PairHash {
    std::size_t operator()(const P& p) const {
      return detail::mix(std::hash<const void*>{}(p.first), std::hash<const void*>{}(p.second));
    }
  };
  std::unordered_set<P, PairHash> proven;
  std::vector<P> stack{{a.get(), b.get()}};
  while (!stack.empty()) {
    auto [x, y] = stack.back();
    stack.pop_back();
    if (x == y || proven.contains({x, y})) continue;
    if (x->hash != y->hash || x->op != y->op) return false;
    switch (x->op) {
      case OpKind::kConst:
        if (x->value != y->value) return false;
        break;
      case OpKind::kVar:
        if (x->name != y->name) return false;
        break;
      default:
        stack.emplace_back(x->lhs.get(), y->lhs.get());
        if (x->rhs) stack.emplace_back(x->rhs.get(), y->rhs.get());
    }
    proven.insert({x, y});
  }
  return true;
}

namespace detail {

inline void render_infix(const ExprNode* root, std::string& out, std::size_t max_length) {
  static constexpr std::string_view kSymbols[] = {"", "", " + ", " - ", " * ", " / ", ""};
  struct Task {
    const ExprNode* node;
    std::string_view text;
  };
  std::vector<Task> stack{{root, {}}};
  while (!stack.empty() && out.size() <= max_length) {
    const Task t = stack.back();
    stack.pop_back();
    if (!t.node) {
      out += t.text;
      continue;
    }
    const ExprNode* n = t.node;
    switch (n->op) {
      case OpKind::kConst: out += format_decimal(n->value); continue;
      case OpKind::kVar: out += n->name; continue;
      case OpKind::kNeg:
        out += "(-";
        stack.push_back({nullptr, ")"});
        stack.push_back({n->lhs.get(), {}});
        continue;
      default: break;
    }
    out += '(';
    stack.push_back({nullptr, ")"});
    stack.push_back({n->rhs.get(), {}});
    stack.push_back({nullptr, kSymbols[static_cast<int>(n->op)]});
    stack.push_back({n->lhs.get(), {}});
  }
}

}  // namespace detail

// Parenthesized infix rendering for logs and golden tests. Output longer than
// `max_length` is cut and suffixed with "...".
inline std::string to_string(const SymExpr& e, std::size_t max_length) {
  std::string out;
  detail::render_infix(e.get(), out, max_length);
  if (out.size() > max_length) {
    out.resize(max_length);
    out += "...";
  }
  return out;
}

inline std::string to_string(const SymExpr& e) { return to_string(e, std::string::npos - 4); }

// Flat instruction list for evaluating a fixed set of expressions at many
// points (grid search, solution checks).
class ExprProgram {
 public:
  ExprProgram(std::span<const SymExpr> roots, const std::vector<std::string>& variables) {
    std::unordered_map<const detail::ExprNode*, std::uint32_t> slot;
    for (const auto* n : topological_nodes(roots)) {
      Instr in{n->op, n->value, 0, 0};
      if (n->op == OpKind::kVar) {
        auto it = std::find(variables.begin(), variables.end(), n->name);
        if (it == variables.end()) throw ConfigError("unbound variable '" + n->name + "'");
        in.a = static_cast<std::uint32_t>(it - variables.begin());
      } else if (n->op != OpKind::kConst) {
        in.a = slot.at(n->lhs.get());
        if (n->rhs) in.b = slot.at(n->rhs.get());
      }
      slot.emplace(n, static_cast<std::uint32_t>(code_.size()));
      code_.push_back(in);
    }
    for (const auto& r : roots) outputs_.push_back(slot.at(r.get()));
    scratch_.resize(code_.size());
  }

  // Writes one value per root into `out`.
  void run(std::span<const double> vars, std::span<double> out) {
    for (std::size_t i = 0; i < code_.size(); ++i) {
      const Instr& in = code_[i];
      switch (in.op) {
        case OpKind::kConst: scratch_[i] = in.value; break;
        case OpKind::kVar: scratch_[i] = vars[in.a]; break;
        case OpKind::kNeg: scratch_[i] = -scratch_[in.a]; break;
        default: scratch_[i] = apply_op(in.op, scratch_[in.a], scratch_[in.b]);
      }
    }
    for (std::size_t i = 0; i < outputs_.size(); ++i) out[i] = scratch_[outputs_[i]];
  }

  std::size_t num_outputs() const { return outputs_.size(); }

 private:
  struct Instr {
    OpKind op;
    double value;
    std::uint32_t a;
    std::uint32_t b;
  };
  std::vector<Instr> code_;
  std::vector<std::uint32_t> outputs_;
  std::vector<double> scratch_;
};

}  // namespace shapcolic
