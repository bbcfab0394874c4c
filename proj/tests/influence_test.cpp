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

#include "shapcolic/influence.hpp"

#include <gtest/gtest.h>

#include <random>

#include "test_models.hpp"

namespace shapcolic {
namespace {

// f(z) = (z0 z1 + z2, 2 z0 - z3 + z0 z2 z3); z4 is a dummy.
std::vector<double> toy_value(std::span<const double> z) {
  return {z[0] * z[1] + z[2], 2 * z[0] - z[3] + z[0] * z[2] * z[3]};
}

TEST(ShapleyTest, ExactSatisfiesEfficiency) {
  const std::vector<double> x{0.9, 0.4, -0.3, 0.7, 0.2};
  const std::vector<double> base{0.1, 0.2, 0.3, 0.4, 0.5};
  const ShapleyMatrix phi = shapley_exact(toy_value, x, base, 2);
  const auto fx = toy_value(x), fb = toy_value(base);
  for (std::size_t o = 0; o < 2; ++o) {
    double sum = 0;
    for (std::size_t i = 0; i < x.size(); ++i) sum += phi(i, o);
    EXPECT_NEAR(sum, fx[o] - fb[o], 1e-12);
  }
}

TEST(ShapleyTest, ExactSatisfiesSymmetryAndDummy) {
  auto f = [](std::span<const double> z) { return std::vector<double>{z[0] * z[1] + z[2] * z[2]}; };
  const std::vector<double> x{0.5, 0.5, 0.8, 0.9};
  const std::vector<double> base{0.1, 0.1, 0.2, 0.3};
  const ShapleyMatrix phi = shapley_exact(f, x, base, 1);
  EXPECT_NEAR(phi(0, 0), phi(1, 0), 1e-12);
  EXPECT_NEAR(phi(3, 0), 0.0, 1e-12);
}

// Two-feature closed form: phi_0 = (f(x0,b1) - f(b) + f(x) - f(b0,x1)) / 2.
TEST(ShapleyTest, ExactMatchesTwoFeatureFormula) {
  auto f = [](std::span<const double> z) { return std::vector<double>{z[0] * z[0] * z[1] + 3 * z[1]}; };
  const std::vector<double> x{0.7, -0.4}, b{0.2, 0.5};
  const ShapleyMatrix phi = shapley_exact(f, x, b, 1);
  auto v = [&](double a, double c) { return f(std::vector<double>{a, c})[0]; };
  const double want0 = ((v(x[0], b[1]) - v(b[0], b[1])) + (v(x[0], x[1]) - v(b[0], x[1]))) / 2;
  EXPECT_NEAR(phi(0, 0), want0, 1e-12);
  EXPECT_NEAR(phi(0, 0) + phi(1, 0), v(x[0], x[1]) - v(b[0], b[1]), 1e-12);
}

TEST(ShapleyTest, LinearModelMatchesClosedForm) {
  std::mt19937_64 rng(21);
  const std::size_t d = 6, c = 3;
  const Tensor<double> w = testing::random_tensor(rng, {d, c});
  const Tensor<double> b = testing::random_tensor(rng, {c});
  const ModelSpec model({d}, {DenseLayer{w, b, Activation::kNone}});
  BackgroundSet bg;
  for (int i = 0; i < 5; ++i) bg.samples.push_back(testing::random_input(rng, {d}));
  const Tensor<double> x = testing::random_input(rng, {d});
  const auto mean = mean_of(bg.samples);
  const ShapleyMatrix phi = model_shapley(model, bg, x);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t o = 0; o < c; ++o) EXPECT_NEAR(phi(i, o), w(i, o) * (x[i] - mean[i]), 1e-9);
  }
  EXPECT_NEAR(shapley(model, bg, x, 2, 1), w(2, 1) * (x[2] - mean[2]), 1e-9);
}

TEST(ShapleyTest, SampledIsExactOnAdditiveFunctions) {
  auto f = [](std::span<const double> z) { return std::vector<double>{2 * z[0] - z[1] + 0.5 * z[2]}; };
  const std::vector<double> x{1, 1, 1}, b{0, 0, 0};
  const ShapleyMatrix phi = shapley_sampled(f, x, b, 1, 7, 99);
  EXPECT_NEAR(phi(0, 0), 2, 1e-12);
  EXPECT_NEAR(phi(1, 0), -1, 1e-12);
  EXPECT_NEAR(phi(2, 0), 0.5, 1e-12);
}

TEST(ShapleyTest, SampledIsDeterministicForASeed) {
  const std::vector<double> x{0.9, 0.4, -0.3, 0.7, 0.2};
  const std::vector<double> base{0.1, 0.2, 0.3, 0.4, 0.5};
  const ShapleyMatrix a = shapley_sampled(toy_value, x, base, 2, 16, 5);
  const ShapleyMatrix b = shapley_sampled(toy_value, x, base, 2, 16, 5);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a(i, 1), b(i, 1));
}

TEST(ShapleyTest, SampledConvergesToExact) {
  std::mt19937_64 rng(4);
  double total = 0;
  const int trials = 20;
  for (int t = 0; t < trials; ++t) {
    const ModelSpec model = testing::random_model(rng, 4, 2, 3);
    const auto x = testing::random_input(rng, model.input_shape());
    const auto b = testing::random_input(rng, model.input_shape());
    const auto f = submodel_value(model, 0);
    const ShapleyMatrix exact = shapley_exact(f, x.data(), b.data(), 3);
    const ShapleyMatrix est = shapley_sampled(f, x.data(), b.data(), 3, 1024, 1000 + t);
    double err = 0, norm = 0;
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t o = 0; o < 3; ++o) {
        err += std::abs(est(i, o) - exact(i, o));
        norm += std::abs(exact(i, o));
      }
    }
    total += norm > 0 ? err / norm : 0;
  }
  EXPECT_LT(total / trials, 0.05);
}

TEST(ShapleyTest, SkipsFeaturesEqualToBaseline) {
  int calls = 0;
  auto f = [&](std::span<const double> z) {
    ++calls;
    return std::vector<double>{z[0] + z[19]};
  };
  std::vector<double> x(20, 0.0), b(20, 0.0);
  x[0] = 1;
  x[19] = 2;
  const ShapleyMatrix phi = shapley_values(f, x, b, 1, {}, 0);
  EXPECT_EQ(calls, 4);
  EXPECT_NEAR(phi(19, 0), 2, 1e-12);
}

struct ToyInfluence : ::testing::Test {
  ModelSpec model = testing::toy_model();
  BackgroundSet bg;
  Tensor<double> seed{{2, 1}, {0.2, 1.0}};

  void SetUp() override {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 8; ++i) bg.samples.push_back(testing::random_input(rng, {2, 1}));
  }
};

TEST_F(ToyInfluence, CoversEveryNeuron) {
  const InfluenceMap map = build_influence_map(model, bg, seed);
  std::size_t neurons = 0;
  for (std::size_t a = 0; a < model.num_activations(); ++a) neurons += shape_size(model.activation_shape(a));
  EXPECT_EQ(map.size(), neurons);
  for (std::size_t l : map.populated_layers()) {
    for (double v : map.layer(l)) EXPECT_GE(v, 0.0);
  }
}

TEST_F(ToyInfluence, InputInfluenceIsMeanAbsoluteShapley) {
  const InfluenceMap map = build_influence_map(model, bg, seed);
  const ShapleyMatrix phi = model_shapley(model, bg, seed);
  for (std::size_t n = 0; n < 2; ++n) {
    const double want = (std::abs(phi(n, 0)) + std::abs(phi(n, 1))) / 2;
    EXPECT_NEAR(map.at({0, {n, 0}}), want, 1e-12);
  }
}

TEST_F(ToyInfluence, OutputNeuronsUseDistanceToBackgroundMean) {
  const InfluenceMap map = build_influence_map(model, bg, seed);
  std::vector<Tensor<double>> outs;
  for (const auto& s : bg.samples) outs.push_back(forward_concrete(model, s).output);
  const auto mean = mean_of(outs);
  const auto y = forward_concrete(model, seed).output;
  for (std::size_t o = 0; o < 2; ++o) EXPECT_NEAR(map.at({3, {o}}), std::abs(y[o] - mean[o]) / 2, 1e-12);
}

TEST_F(ToyInfluence, JsonRoundTripIsExact) {
  const InfluenceMap map = build_influence_map(model, bg, seed);
  const json j = map.to_json();
  EXPECT_TRUE(j.contains("0.1.0"));
  EXPECT_TRUE(j.contains("3.1"));
  const InfluenceMap back = NeuronMap::from_json(json::parse(j.dump()), model);
  EXPECT_EQ(back.to_json().dump(), j.dump());
}

TEST_F(ToyInfluence, RejectsMalformedInputs) {
  EXPECT_THROW(build_influence_map(testing::golden_mha_model(), bg, seed), ConfigError);
  EXPECT_THROW(build_influence_map(model, BackgroundSet{}, seed), ConfigError);
  EXPECT_THROW(NeuronMap::from_json(json{{"9.0", 1.0}}, model), ConfigError);
  EXPECT_THROW(NeuronMap::from_json(json{{"0.x", 1.0}}, model), ConfigError);
}

TEST_F(ToyInfluence, BranchInfluenceAveragesAssociatedNeurons) {
  const InfluenceMap map = build_influence_map(model, bg, seed);
  BranchEvent ev;
  ev.assoc_neurons = {{1, {0, 0}}, {1, {1, 0}}};
  EXPECT_NEAR(branch_influence(ev, map), (map.at({1, {0, 0}}) + map.at({1, {1, 0}})) / 2, 1e-15);
  ev.assoc_neurons = {{1, {5, 0}}};
  EXPECT_THROW(branch_influence(ev, map), IntegrityError);
}

}  // namespace
}  // namespace shapcolic
