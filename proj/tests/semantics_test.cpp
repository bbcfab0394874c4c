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

#include "shapcolic/semantics.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "test_models.hpp"

namespace shapcolic {
namespace {

// Coefficients (a, b, c) of a polynomial a v^2 + b v + c in the only variable,
// recovered by evaluating at three points.
std::array<double, 3> quadratic(const SymExpr& e) {
  const double f0 = evaluate(e, {{"v", 0.0}});
  const double f1 = evaluate(e, {{"v", 1.0}});
  const double fm = evaluate(e, {{"v", -1.0}});
  return {(f1 + fm) / 2 - f0, (f1 - fm) / 2, f0};
}

struct Golden : ::testing::Test {
  ModelSpec model = testing::golden_mha_model();
  MhaLayer layer = std::get<MhaLayer>(model.layers()[0]);
  ExecutionContext ctx;
  Tensor<ConcolicScalar> x{{2, 1}};

  void SetUp() override {
    x[0] = ctx.symvar("v", 2.0);
    x[1] = ConcolicScalar(1.0);
  }
};

TEST_F(Golden, ProjectionsAreExact) {
  const auto q = tas(x, layer.w_q, layer.b_q);
  const auto k = tas(x, layer.w_k, layer.b_k);
  const auto v = tas(x, layer.w_v, layer.b_v);
  // Row 0 is affine in v, row 1 concrete.
  const std::array<double, 2> q0{1, 1}, k0{2, 1}, v0{1, 2};
  const std::array<double, 2> qb{1, 1}, kb{2, 1}, vb{1, 2};
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_EQ(quadratic(q(0, 0, j).as_expr()), (std::array<double, 3>{0, q0[j], qb[j]}));
    EXPECT_EQ(quadratic(k(0, 0, j).as_expr()), (std::array<double, 3>{0, k0[j], kb[j]}));
    EXPECT_EQ(quadratic(v(0, 0, j).as_expr()), (std::array<double, 3>{0, v0[j], vb[j]}));
  }
  EXPECT_FALSE(q(0, 1, 0).is_symbolic());
  EXPECT_EQ(q(0, 1, 0).concrete(), 2);
  EXPECT_EQ(q(0, 1, 1).concrete(), 2);
  EXPECT_EQ(k(0, 1, 0).concrete(), 4);
  EXPECT_EQ(k(0, 1, 1).concrete(), 2);
  EXPECT_EQ(v(0, 1, 0).concrete(), 2);
  EXPECT_EQ(v(0, 1, 1).concrete(), 4);
}

TEST_F(Golden, ScoresAreExactPolynomials) {
  const auto s = attention_scores(tas(x, layer.w_q, layer.b_q), tas(x, layer.w_k, layer.b_k));
  EXPECT_EQ(quadratic(s(0, 0, 0).as_expr()), (std::array<double, 3>{3, 6, 3}));
  EXPECT_EQ(quadratic(s(0, 0, 1).as_expr()), (std::array<double, 3>{0, 6, 6}));
  EXPECT_EQ(quadratic(s(0, 1, 0).as_expr()), (std::array<double, 3>{0, 6, 6}));
  EXPECT_FALSE(s(0, 1, 1).is_symbolic());
  EXPECT_EQ(s(0, 1, 1).concrete(), 12);
  EXPECT_EQ(s(0, 0, 0).concrete(), 27);
}

TEST_F(Golden, SoftmaxAttentionAndConcat) {
  const auto q = tas(x, layer.w_q, layer.b_q);
  const auto k = tas(x, layer.w_k, layer.b_k);
  const auto v = tas(x, layer.w_v, layer.b_v);
  const auto scores = attention_scores(q, k);
  Tensor<ConcolicScalar> scaled({2, 2});
  for (std::size_t i = 0; i < 4; ++i) scaled[i] = scores[i] * ConcolicScalar(1 / std::sqrt(2.0));
  const auto p = stable_softmax(scaled, ctx, RowScope{1, 1});
  const double want_p[] = {0.998, 0.002, 0.986, 0.014};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_FALSE(p[i].is_symbolic());
    EXPECT_NEAR(p[i].concrete(), want_p[i], 1e-3);
  }
  ctx.take_events();

  const auto att = dpa(q, k, v, ctx, RowScope{1, 1});
  const double want_att[][2] = {{0.998, 1.002}, {1.996, 2.004}, {0.986, 1.014}, {1.972, 2.028}};
  for (std::size_t t = 0; t < 2; ++t) {
    for (std::size_t j = 0; j < 2; ++j) {
      const auto c = quadratic(att(0, t, j).as_expr());
      EXPECT_NEAR(c[0], 0, 1e-12);
      EXPECT_NEAR(c[1], want_att[t * 2 + j][0], 1e-3);
      EXPECT_NEAR(c[2], want_att[t * 2 + j][1], 1e-3);
    }
  }
  const auto y = concat(att, layer.w_o, layer.b_o);
  ASSERT_EQ(y.shape(), (Shape{2, 1}));
  const auto y0 = quadratic(y[0].as_expr());
  const auto y1 = quadratic(y[1].as_expr());
  EXPECT_NEAR(y0[1], 2.994, 1e-3);
  EXPECT_NEAR(y0[2], 4.006, 1e-3);
  EXPECT_NEAR(y1[1], 2.958, 1e-3);
  EXPECT_NEAR(y1[2], 4.042, 1e-3);
}

TEST_F(Golden, RowMaxEventsAreRowAssociated) {
  const auto y = mha_forward(layer, x, ctx, 1);
  const auto& events = ctx.events();
  ASSERT_EQ(events.size(), 2u);
  for (std::size_t t = 0; t < 2; ++t) {
    EXPECT_FALSE(events[t].taken);
    EXPECT_EQ(events[t].layer_index, 1u);
    ASSERT_EQ(events[t].assoc_neurons.size(), 1u);
    EXPECT_EQ(events[t].assoc_neurons[0], (NeuronId{1, {t, 0}}));
  }
  // Row 0: bypassed predicate S01 > S00, i.e. v^2 < 1 after scaling cancels.
  const Comparison n = {events[0].bypassed_predicate.rel,
                        events[0].bypassed_predicate.lhs - events[0].bypassed_predicate.rhs, SymExpr()};
  EXPECT_EQ(n.rel, Relation::kGt);
  for (int i = 0; i <= 100; ++i) {
    const double v = -3.0 + 6.0 * i / 100;
    if (std::abs(std::abs(v) - 1.0) < 1e-9) continue;
    EXPECT_EQ(evaluate(n, {{"v", v}}), v * v < 1) << "v = " << v;
  }
}

TEST_F(Golden, FullForwardUnderOneSecond) {
  const auto start = std::chrono::steady_clock::now();
  const auto r = forward(model, x, ctx);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 1.0);
  EXPECT_EQ(r.label, 0u);  // 2.994 * 2 + 4.006 > 2.958 * 2 + 4.042
  EXPECT_EQ(ctx.events().size(), 3u);  // two row maxima, one argmax rung
}

TEST(SemanticsTest, SoftmaxRowsAreStochastic) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> val(-50, 50);
  ConcreteTrace trace;
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t cols = 1 + trial % 9;
    Tensor<double> row({1, cols});
    for (auto& c : row.data()) c = val(rng);
    const auto p = stable_softmax(row, trace, RowScope{});
    double sum = 0;
    for (double v : p.data()) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(SemanticsTest, ReluBranchesAreNeuronAssociated) {
  const ModelSpec model = testing::relu_model();
  ExecutionContext ctx;
  Tensor<ConcolicScalar> x({2});
  x[0] = ctx.symvar("a", 0.5);
  x[1] = ctx.symvar("b", -0.25);
  forward(model, x, ctx);
  std::size_t relu_events = 0;
  for (const auto& ev : ctx.events()) {
    if (ev.layer_index == 1) {
      ++relu_events;
      ASSERT_EQ(ev.assoc_neurons.size(), 1u);
      EXPECT_EQ(ev.assoc_neurons[0].layer, 1u);
    }
  }
  EXPECT_EQ(relu_events, 3u);
}

TEST(SemanticsTest, ArgmaxTiesKeepLowerIndex) {
  ConcreteTrace trace;
  const double logits[] = {1.0, 3.0, 3.0, 2.0};
  EXPECT_EQ(argmax_ladder(std::span<const double>(logits), Shape{4}, 1, trace), 1u);
}

TEST(SemanticsTest, ModelJsonRoundTrip) {
  const ModelSpec model = testing::toy_model();
  const ModelSpec again = model_from_json(model_to_json(model));
  EXPECT_EQ(model_to_json(again).dump(), model_to_json(model).dump());
  EXPECT_EQ(model.num_activations(), 4u);
  EXPECT_EQ(model.num_classes(), 2u);
}

TEST(SemanticsTest, MalformedModelNamesField) {
  json j = model_to_json(testing::toy_model());
  j["layers"][2]["W"] = json::array({json::array({1.0, 2.0})});
  try {
    model_from_json(j);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("layers[2]"), std::string::npos) << e.what();
  }
}

// Concrete-mode equivalence: the concolic interpreter's concrete part equals
// an independent straightforward implementation on random small models.
TEST(SemanticsProperty, ConcolicConcretePartMatchesReference) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const ModelSpec model = testing::random_model(rng, 1 + trial % 4, 1 + trial % 2, 2 + trial % 3);
    const Tensor<double> input = testing::random_input(rng, model.input_shape());
    const auto reference = testing::reference_forward(model, input);
    ExecutionContext ctx;
    ctx.set_audit(true);
    Tensor<ConcolicScalar> x = map_tensor<ConcolicScalar>(input, [](double v) { return ConcolicScalar(v); });
    x[0] = ctx.symvar("p0", input[0]);
    const auto r = forward(model, x, ctx);
    ASSERT_EQ(r.logits.size(), reference.size());
    for (std::size_t i = 0; i < reference.size(); ++i) {
      EXPECT_NEAR(r.logits[i].concrete(), reference[i], 1e-9 * std::max(1.0, std::abs(reference[i])));
    }
    EXPECT_EQ(r.label, predict(model, input));
  }
}

}  // namespace
}  // namespace shapcolic
