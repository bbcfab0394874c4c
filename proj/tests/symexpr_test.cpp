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

#include "shapcolic/symexpr.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "shapcolic/concolic.hpp"

namespace shapcolic {
namespace {

SymExpr V(const char* name) { return SymExpr::variable(name); }
SymExpr C(double v) { return SymExpr::constant(v); }

TEST(SymExprTest, FoldsConstants) {
  EXPECT_TRUE((C(2) + C(3)).is_constant(5));
  EXPECT_TRUE((C(2) * C(3)).is_constant(6));
  EXPECT_TRUE((C(6) / C(3)).is_constant(2));
  EXPECT_TRUE((-C(4)).is_constant(-4));
  EXPECT_TRUE((C(1) - C(1)).is_constant(0));
}

TEST(SymExprTest, DropsNeutralElements) {
  const SymExpr v = V("v");
  EXPECT_TRUE(structurally_equal(v + C(0), v));
  EXPECT_TRUE(structurally_equal(C(0) + v, v));
  EXPECT_TRUE(structurally_equal(v * C(1), v));
  EXPECT_TRUE(structurally_equal(C(1) * v, v));
  EXPECT_TRUE(structurally_equal(v / C(1), v));
  EXPECT_TRUE(structurally_equal(v - C(0), v));
  EXPECT_TRUE((v * C(0)).is_constant(0));
  EXPECT_TRUE(structurally_equal(-(-v), v));
}

TEST(SymExprTest, MergesChainedConstants) {
  const SymExpr v = V("v");
  const SymExpr e = (v + C(1)) + C(2);
  ASSERT_EQ(e.kind(), OpKind::kAdd);
  EXPECT_TRUE(e.rhs().is_constant(3));
  const SymExpr m = C(2) * (C(3) * v);
  ASSERT_EQ(m.kind(), OpKind::kMul);
  EXPECT_TRUE(m.lhs().is_constant(6));
}

TEST(SymExprTest, DivisionByConstantZeroThrows) {
  EXPECT_THROW(V("v") / C(0), ArithmeticError);
  try {
    (V("v") + C(1)) / C(0);
  } catch (const ArithmeticError& e) {
    EXPECT_NE(e.expression().find("v"), std::string::npos);
  }
}

TEST(SymExprTest, ConcolicDivisionByConcreteZeroThrows) {
  ExecutionContext ctx;
  ConcolicScalar v = ctx.symvar("v", 0.0);
  EXPECT_THROW(ConcolicScalar(1.0) / v, ArithmeticError);
}

TEST(SymExprTest, StructuralEqualityAndHash) {
  const SymExpr a = V("v") * V("v") + C(1);
  const SymExpr b = V("v") * V("v") + C(1);
  EXPECT_TRUE(structurally_equal(a, b));
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_FALSE(structurally_equal(a, V("v") * V("w") + C(1)));
}

TEST(SymExprTest, RendersInfix) {
  EXPECT_EQ(to_string(V("v") * V("v") + C(1)), "((v * v) + 1)");
  EXPECT_EQ(to_string(-V("v")), "(-v)");
}

TEST(SymExprTest, NodeCountSharesSubterms) {
  const SymExpr s = V("v") + C(1);
  const SymExpr e = s * s;
  EXPECT_EQ(node_count(e), 4u);  // v, 1, (v + 1), product
}

TEST(SymExprTest, FreeVariables) {
  const SymExpr roots[] = {V("a") + V("b"), V("b") * C(2)};
  const auto vars = free_variables(roots);
  EXPECT_EQ(vars.size(), 2u);
}

TEST(SymExprTest, DeepChainsDoNotOverflowTheStack) {
  SymExpr e = V("v");
  for (int i = 0; i < 200000; ++i) e = e * V("v") + C(1);
  Assignment env{{"v", 0.5}};
  const double value = evaluate(e, env);
  EXPECT_TRUE(std::isfinite(value));
  EXPECT_TRUE(structurally_equal(e, e));
  EXPECT_GT(to_string(e).size(), 400000u);
  EXPECT_EQ(to_string(e, 16).size(), 19u);
}

// Folding must never change the value: compare folded construction with the
// same tree built from raw nodes.
TEST(SymExprProperty, FoldingPreservesValue) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> val(-3, 3);
  std::uniform_int_distribution<int> pick(0, 5);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::pair<SymExpr, SymExpr>> pool = {
        {V("x"), V("x")}, {V("y"), V("y")}, {C(0), C(0)}, {C(1), C(1)}, {C(-1), C(-1)}};
    for (int step = 0; step < 12; ++step) {
      std::uniform_int_distribution<std::size_t> idx(0, pool.size() - 1);
      const auto& [fa, ra] = pool[idx(rng)];
      const auto& [fb, rb] = pool[idx(rng)];
      const int op = pick(rng);
      if (op == 5) {
        const SymExpr c = C(std::round(val(rng) * 4) / 4);
        pool.emplace_back(fa * c, SymExpr::make_raw(OpKind::kMul, ra, &c));
        continue;
      }
      switch (op) {
        case 0: pool.emplace_back(fa + fb, SymExpr::make_raw(OpKind::kAdd, ra, &rb)); break;
        case 1: pool.emplace_back(fa - fb, SymExpr::make_raw(OpKind::kSub, ra, &rb)); break;
        case 2: pool.emplace_back(fa * fb, SymExpr::make_raw(OpKind::kMul, ra, &rb)); break;
        case 3: pool.emplace_back(-fa, SymExpr::make_raw(OpKind::kNeg, ra)); break;
        default: {
          const SymExpr two = C(2);
          pool.emplace_back(fa / two, SymExpr::make_raw(OpKind::kDiv, ra, &two));
        }
      }
    }
    Assignment env{{"x", val(rng)}, {"y", val(rng)}};
    for (const auto& [folded, raw] : pool) {
      const double a = evaluate(folded, env);
      const double b = evaluate(raw, env);
      EXPECT_NEAR(a, b, 1e-9 * std::max(1.0, std::abs(b)));
    }
  }
}

TEST(ConcolicTest, ConstantSymbolicPartIsDropped) {
  ExecutionContext ctx;
  ConcolicScalar v = ctx.symvar("v", 2.0);
  ConcolicScalar z = v * ConcolicScalar(0.0);
  EXPECT_FALSE(z.is_symbolic());
  EXPECT_DOUBLE_EQ(z.concrete(), 0.0);
  EXPECT_TRUE(z.as_expr().is_constant(0));
}

TEST(ConcolicTest, ConcreteAndSymbolicStayCoherent) {
  ExecutionContext ctx;
  ConcolicScalar v = ctx.symvar("v", 2.0);
  ConcolicScalar w = ctx.symvar("w", -0.5);
  ConcolicScalar e = (v * v + ConcolicScalar(3.0) * w - v / ConcolicScalar(4.0)) * (w - ConcolicScalar(1.0));
  ASSERT_TRUE(e.is_symbolic());
  EXPECT_NEAR(evaluate(*e.symbolic(), ctx.assignment()), e.concrete(), 1e-12);
}

TEST(ConcolicTest, DeclaringTwiceThrows) {
  ExecutionContext ctx;
  ctx.symvar("v", 1.0);
  EXPECT_THROW(ctx.symvar("v", 2.0), DeclarationError);
  EXPECT_THROW(ctx.symvar("1bad", 2.0), DeclarationError);
}

TEST(ConcolicTest, CompareLogsOnlySymbolicBranches) {
  ExecutionContext ctx;
  ctx.set_scope({{NeuronId{1, {0, 0}}}, 1});
  ConcolicScalar v = ctx.symvar("v", 2.0);
  EXPECT_TRUE(ctx.compare(Relation::kGt, ConcolicScalar(3.0), ConcolicScalar(1.0)));
  EXPECT_TRUE(ctx.events().empty());
  EXPECT_TRUE(ctx.compare(Relation::kGt, v, ConcolicScalar(1.0)));
  ASSERT_EQ(ctx.events().size(), 1u);
  const BranchEvent& ev = ctx.events()[0];
  EXPECT_TRUE(ev.taken);
  EXPECT_EQ(ev.bypassed_predicate.rel, Relation::kLe);
  EXPECT_EQ(ev.assoc_neurons.size(), 1u);
  EXPECT_EQ(ev.layer_index, 1u);
}

TEST(ConcolicTest, CompareOutsideScopeThrows) {
  ExecutionContext ctx;
  ConcolicScalar v = ctx.symvar("v", 2.0);
  EXPECT_THROW(ctx.compare(Relation::kGt, v, ConcolicScalar(1.0)), IntegrityError);
}

// The bypassed predicate is the exact negation of the guard that held: it is
// false at the current assignment and true wherever the taken guard is false.
TEST(ConcolicProperty, BypassedPredicateNegatesTakenGuard) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> val(-2, 2);
  const Relation rels[] = {Relation::kLt, Relation::kLe, Relation::kGt, Relation::kGe, Relation::kEq, Relation::kNe};
  for (int trial = 0; trial < 300; ++trial) {
    ExecutionContext ctx;
    ctx.set_scope({{NeuronId{0, {0}}}, 0});
    ConcolicScalar v = ctx.symvar("v", val(rng));
    const ConcolicScalar lhs = v * v - ConcolicScalar(val(rng)) * v;
    const ConcolicScalar rhs(val(rng));
    const Relation rel = rels[trial % 6];
    ctx.compare(rel, lhs, rhs);
    const BranchEvent& ev = ctx.events().back();
    EXPECT_FALSE(evaluate(ev.bypassed_predicate, ctx.assignment()));
    EXPECT_TRUE(evaluate(ev.held(), ctx.assignment()));
    for (int k = 0; k < 10; ++k) {
      Assignment other{{"v", val(rng)}};
      EXPECT_NE(evaluate(ev.held(), other), evaluate(ev.bypassed_predicate, other));
    }
  }
}

TEST(ConcolicTest, AuditDetectsNothingOnCoherentValues) {
  ExecutionContext ctx;
  ctx.set_audit(true);
  ctx.set_scope({{NeuronId{0, {0}}}, 0});
  ConcolicScalar v = ctx.symvar("v", 0.3);
  EXPECT_NO_THROW(ctx.compare(Relation::kLt, v * v, ConcolicScalar(1.0)));
}

}  // namespace
}  // namespace shapcolic
