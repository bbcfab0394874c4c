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

// Concolic scalars, comparisons and the per-execution event log.

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <compare>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "shapcolic/errors.hpp"
#include "shapcolic/symexpr.hpp"
#include "shapcolic/tensor.hpp"

namespace shapcolic {

// A neuron is addressed by the index of the activation tensor it lives in and
// its position inside that tensor. Activation 0 is the model input and
// activation i + 1 is the output of layer i.
struct NeuronId {
  std::size_t layer = 0;
  Index index;

  friend auto operator<=>(const NeuronId&, const NeuronId&) = default;
  friend bool operator==(const NeuronId&, const NeuronId&) = default;
};

// "layer.i0.i1..." as used in map exports.
inline std::string to_string(const NeuronId& n) {
  std::string out = std::to_string(n.layer);
  for (auto i : n.index) {
    out += '.';
    out += std::to_string(i);
  }
  return out;
}

enum class Relation : std::uint8_t { kLt, kLe, kGt, kGe, kEq, kNe };

inline Relation negate(Relation r) {
  switch (r) {
    case Relation::kLt: return Relation::kGe;
    case Relation::kGe: return Relation::kLt;
    case Relation::kLe: return Relation::kGt;
    case Relation::kGt: return Relation::kLe;
    case Relation::kEq: return Relation::kNe;
    case Relation::kNe: return Relation::kEq;
  }
  return r;
}

inline bool holds(Relation r, double lhs, double rhs) {
  switch (r) {
    case Relation::kLt: return lhs < rhs;
    case Relation::kLe: return lhs <= rhs;
    case Relation::kGt: return lhs > rhs;
    case Relation::kGe: return lhs >= rhs;
    case Relation::kEq: return lhs == rhs;
    case Relation::kNe: return lhs != rhs;
  }
  return false;
}

inline std::string_view symbol(Relation r) {
  static constexpr std::string_view kSymbols[] = {"<", "<=", ">", ">=", "=", "!="};
  return kSymbols[static_cast<int>(r)];
}

struct Comparison {
  Relation rel = Relation::kGt;
  SymExpr lhs;
  SymExpr rhs;
};

inline Comparison negate(const Comparison& c) { return {negate(c.rel), c.lhs, c.rhs}; }

inline bool evaluate(const Comparison& c, const Assignment& env) {
  SymExpr sides[] = {c.lhs, c.rhs};
  auto v = evaluate(std::span<const SymExpr>(sides), env);
  return holds(c.rel, v[0], v[1]);
}

inline std::string to_string(const Comparison& c) {
  return to_string(c.lhs) + " " + std::string(symbol(c.rel)) + " " + to_string(c.rhs);
}

inline bool structurally_equal(const Comparison& a, const Comparison& b) {
  return a.rel == b.rel && structurally_equal(a.lhs, b.lhs) && structurally_equal(a.rhs, b.rhs);
}

struct ComparisonHash {
  std::size_t operator()(const Comparison& c) const {
    return detail::mix(detail::mix(static_cast<std::size_t>(c.rel), c.lhs.hash()), c.rhs.hash());
  }
};

struct ComparisonEqual {
  bool operator()(const Comparison& a, const Comparison& b) const { return structurally_equal(a, b); }
};

// A real value paired with an optional symbolic expression over the declared
// input variables. Without a symbolic part it behaves exactly like a double.
class ConcolicScalar {
 public:
  ConcolicScalar() = default;
  ConcolicScalar(double concrete) : concrete_(concrete) {}  // NOLINT(google-explicit-constructor)
  ConcolicScalar(double concrete, SymExpr symbolic) : concrete_(concrete), symbolic_(std::move(symbolic)) {
    if (symbolic_->is_constant()) symbolic_.reset();
  }

  double concrete() const { return concrete_; }
  const std::optional<SymExpr>& symbolic() const { return symbolic_; }
  bool is_symbolic() const { return symbolic_.has_value(); }

  // The symbolic part, or a constant node carrying the concrete value.
  SymExpr as_expr() const { return symbolic_ ? *symbolic_ : SymExpr::constant(concrete_); }

 private:
  double concrete_ = 0.0;
  std::optional<SymExpr> symbolic_;
};

namespace detail {

template <class Op>
ConcolicScalar combine(const ConcolicScalar& a, const ConcolicScalar& b, double concrete, Op op) {
  if (!a.is_symbolic() && !b.is_symbolic()) return ConcolicScalar(concrete);
  return ConcolicScalar(concrete, op(a.as_expr(), b.as_expr()));
}

}  // namespace detail

inline ConcolicScalar operator+(const ConcolicScalar& a, const ConcolicScalar& b) {
  return detail::combine(a, b, a.concrete() + b.concrete(), [](const SymExpr& x, const SymExpr& y) { return x + y; });
}

inline ConcolicScalar operator-(const ConcolicScalar& a, const ConcolicScalar& b) {
  return detail::combine(a, b, a.concrete() - b.concrete(), [](const SymExpr& x, const SymExpr& y) { return x - y; });
}

inline ConcolicScalar operator*(const ConcolicScalar& a, const ConcolicScalar& b) {
  return detail::combine(a, b, a.concrete() * b.concrete(), [](const SymExpr& x, const SymExpr& y) { return x * y; });
}

inline ConcolicScalar operator/(const ConcolicScalar& a, const ConcolicScalar& b) {
  if (b.concrete() == 0.0) {
    throw ArithmeticError("division by concrete zero", to_string(b.as_expr(), 256));
  }
  return detail::combine(a, b, a.concrete() / b.concrete(), [](const SymExpr& x, const SymExpr& y) { return x / y; });
}

inline ConcolicScalar operator-(const ConcolicScalar& a) {
  if (!a.is_symbolic()) return ConcolicScalar(-a.concrete());
  return ConcolicScalar(-a.concrete(), -*a.symbolic());
}

inline ConcolicScalar& operator+=(ConcolicScalar& a, const ConcolicScalar& b) { return a = a + b; }

enum class ArithOp : std::uint8_t { kAdd, kSub, kMul, kDiv, kNeg };

inline ConcolicScalar arith(ArithOp op, const ConcolicScalar& a, const ConcolicScalar& b = {}) {
  switch (op) {
    case ArithOp::kAdd: return a + b;
    case ArithOp::kSub: return a - b;
    case ArithOp::kMul: return a * b;
    case ArithOp::kDiv: return a / b;
    case ArithOp::kNeg: return -a;
  }
  return a;
}

inline ConcolicScalar concretize(const ConcolicScalar& a) { return ConcolicScalar(a.concrete()); }
inline double concretize(double a) { return a; }

inline double concrete_value(const ConcolicScalar& a) { return a.concrete(); }
inline double concrete_value(double a) { return a; }

// Neurons whose computation the next guarded comparisons affect.
struct AssociationScope {
  std::vector<NeuronId> neurons;
  std::size_t layer = 0;
};

struct BranchEvent {
  Comparison guard;
  bool taken = false;
  Comparison bypassed_predicate;
  std::vector<NeuronId> assoc_neurons;
  std::size_t layer_index = 0;
  // Position of the event in the execution's log; the path prefix of the
  // event is every earlier event of the same execution.
  std::size_t path_prefix_id = 0;

  // The guard in the polarity that held on the concrete path.
  Comparison held() const { return taken ? guard : negate(guard); }
};

// Owns the declared input variables and the branch log of one concolic
// execution. Single-writer.
class ExecutionContext {
 public:
  static constexpr bool kRecords = true;

  ConcolicScalar symvar(const std::string& name, double seed) {
    if (!valid_name(name)) throw DeclarationError("invalid variable name '" + name + "'");
    if (!assignment_.emplace(name, seed).second) {
      throw DeclarationError("variable '" + name + "' declared twice");
    }
    names_.push_back(name);
    return ConcolicScalar(seed, SymExpr::variable(name));
  }

  const Assignment& assignment() const { return assignment_; }
  const std::vector<std::string>& variables() const { return names_; }

  void set_scope(AssociationScope scope) { scope_ = std::move(scope); }
  const AssociationScope& scope() const { return scope_; }

  // Evaluates the relation on concrete values and logs a BranchEvent when at
  // least one side is symbolic.
  bool compare(Relation rel, const ConcolicScalar& a, const ConcolicScalar& b) {
    const bool taken = holds(rel, a.concrete(), b.concrete());
    if (!a.is_symbolic() && !b.is_symbolic()) return taken;
    if (scope_.neurons.empty()) {
      throw IntegrityError("symbolic comparison outside an association scope");
    }
    if (audit_) {
      audit(a);
      audit(b);
    }
    Comparison guard{rel, a.as_expr(), b.as_expr()};
    BranchEvent ev;
    ev.bypassed_predicate = taken ? negate(guard) : guard;
    ev.guard = std::move(guard);
    ev.taken = taken;
    ev.assoc_neurons = scope_.neurons;
    ev.layer_index = scope_.layer;
    ev.path_prefix_id = events_.size();
    events_.push_back(std::move(ev));
    return taken;
  }

  const std::vector<BranchEvent>& events() const { return events_; }
  std::vector<BranchEvent> take_events() { return std::exchange(events_, {}); }

  // When enabled, every symbolic operand reaching a comparison is checked to
  // evaluate to its concrete value at the declared seeds.
  void set_audit(bool on) { audit_ = on; }

  void audit(const ConcolicScalar& a) const {
    if (!a.is_symbolic()) return;
    const double sym = evaluate(*a.symbolic(), assignment_);
    const double scale = std::max({1.0, std::abs(sym), std::abs(a.concrete())});
    if (!(std::abs(sym - a.concrete()) <= 1e-9 * scale)) {
      throw IntegrityError("concolic incoherence: concrete " + format_decimal(a.concrete()) +
                           " vs symbolic " + format_decimal(sym));
    }
  }

  static bool valid_name(std::string_view name) {
    if (name.empty() || std::isdigit(static_cast<unsigned char>(name[0]))) return false;
    for (char c : name) {
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
    }
    return true;
  }

 private:
  Assignment assignment_;
  std::vector<std::string> names_;
  AssociationScope scope_;
  std::vector<BranchEvent> events_;
  bool audit_ = false;
};

inline ConcolicScalar symvar(ExecutionContext& ctx, const std::string& name, double seed) {
  return ctx.symvar(name, seed);
}

inline bool compare(Relation rel, const ConcolicScalar& a, const ConcolicScalar& b, ExecutionContext& ctx) {
  return ctx.compare(rel, a, b);
}

// Trace policy for plain real execution: comparisons are evaluated, nothing
// is recorded.
struct ConcreteTrace {
  static constexpr bool kRecords = false;
  void set_scope(const AssociationScope&) {}
  bool compare(Relation rel, double a, double b) { return holds(rel, a, b); }
};

}  // namespace shapcolic
