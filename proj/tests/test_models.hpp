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

// Model fixtures and an independent reference forward pass for tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "shapcolic/model.hpp"
#include "shapcolic/semantics.hpp"

namespace shapcolic::testing {

inline json golden_mha_json() {
  return {{"type", "mha"},
          {"num_heads", 1},
          {"key_dim", 2},
          {"W_Q", {{{1, 1}}}},
          {"W_K", {{{2, 1}}}},
          {"W_V", {{{1, 2}}}},
          {"B_Q", {{1, 1}}},
          {"B_K", {{2, 1}}},
          {"B_V", {{1, 2}}},
          {"W_O", {{{1}, {1}}}},
          {"B_O", {1}}};
}

// One attention layer over a length-2 sequence of scalars.
inline ModelSpec golden_mha_model() {
  return model_from_json({{"input_shape", {2, 1}}, {"layers", {golden_mha_json()}}});
}

// The attention layer followed by flatten and a 2-class dense head.
inline ModelSpec toy_model(double bias = -0.05) {
  return model_from_json({{"input_shape", {2, 1}},
                          {"layers",
                           {golden_mha_json(),
                            {{"type", "flatten"}},
                            {{"type", "dense"}, {"W", {{1, -1}, {-1, 1}}}, {"b", {0, bias}}}}}});
}

inline ModelSpec relu_model() {
  return model_from_json(
      {{"input_shape", {2}},
       {"layers",
        {{{"type", "dense"}, {"W", {{1, -1, 0.5}, {2, 1, -1}}}, {"b", {0.1, 0.2, -0.3}}, {"activation", "relu"}},
         {{"type", "dense"}, {"W", {{1, 0}, {0, 1}, {1, 1}}}, {"b", {0, 0}}}}}});
}

inline Tensor<double> random_tensor(std::mt19937_64& rng, Shape shape, double scale = 1.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

inline Tensor<double> random_input(std::mt19937_64& rng, const Shape& shape) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// input [len][dim] -> attention -> flatten -> dense(relu) -> dense(classes)
inline ModelSpec random_model(std::mt19937_64& rng, std::size_t len, std::size_t dim, std::size_t classes,
                              bool hidden_relu = true) {
  std::uniform_int_distribution<std::size_t> small(1, 2);
  const std::size_t heads = small(rng), dk = small(rng);
  MhaLayer mha;
  mha.num_heads = heads;
  mha.key_dim = dk;
  mha.w_q = random_tensor(rng, {dim, heads, dk});
  mha.w_k = random_tensor(rng, {dim, heads, dk});
  mha.w_v = random_tensor(rng, {dim, heads, dk});
  mha.b_q = random_tensor(rng, {heads, dk});
  mha.b_k = random_tensor(rng, {heads, dk});
  mha.b_v = random_tensor(rng, {heads, dk});
  mha.w_o = random_tensor(rng, {heads, dk, dim});
  mha.b_o = random_tensor(rng, {dim});
  std::vector<LayerSpec> layers{mha, FlattenLayer{}};
  std::size_t width = len * dim;
  if (hidden_relu) {
    layers.push_back(DenseLayer{random_tensor(rng, {width, 3}), random_tensor(rng, {3}), Activation::kRelu});
    width = 3;
  }
  layers.push_back(DenseLayer{random_tensor(rng, {width, classes}), random_tensor(rng, {classes}), Activation::kNone});
  return ModelSpec({len, dim}, std::move(layers));
}

struct FlipInstance {
  ModelSpec model;
  Tensor<double> seed;
  std::vector<bool> flipped;  // per grid point k/resolution of pixel 0
};

// Labels along pixel 0 over a uniform grid on [0, 1], compared to the seed.
inline std::vector<bool> flip_grid(const ModelSpec& model, const Tensor<double>& seed, int resolution) {
  const std::size_t base = predict(model, seed);
  std::vector<bool> out;
  Tensor<double> x = seed;
  for (int k = 0; k <= resolution; ++k) {
    x[0] = static_cast<double>(k) / resolution;
    out.push_back(predict(model, x) != base);
  }
  return out;
}

// Longest run of consecutive flipped grid points, as a width in [0, 1].
inline double widest_flip(const std::vector<bool>& flipped) {
  std::size_t best = 0, run = 0;
  for (bool f : flipped) {
    run = f ? run + 1 : 0;
    best = std::max(best, run);
  }
  return best == 0 ? 0.0 : static_cast<double>(best - 1) / static_cast<double>(flipped.size() - 1);
}

// A random two-class model whose final bias is shifted so that the logits tie
// at a random value of pixel 0; kept only if a flip region of at least
// `min_width` exists on the grid.
inline std::optional<FlipInstance> flip_instance(std::mt19937_64& rng, std::size_t len, std::size_t dim,
                                                 double min_width = 1.0 / 64, int resolution = 1024) {
  const ModelSpec base = random_model(rng, len, dim, 2);
  Tensor<double> seed = random_input(rng, base.input_shape());
  Tensor<double> at = seed;
  at[0] = std::uniform_real_distribution<double>(0.1, 0.9)(rng);
  const auto logits = forward_concrete(base, at).output;
  std::vector<LayerSpec> layers = base.layers();
  auto& head = std::get<DenseLayer>(layers.back());
  head.b[1] += logits[0] - logits[1];
  FlipInstance inst{ModelSpec(base.input_shape(), std::move(layers)), std::move(seed), {}};
  inst.flipped = flip_grid(inst.model, inst.seed, resolution);
  if (widest_flip(inst.flipped) < min_width) return std::nullopt;
  return inst;
}

// Straightforward forward pass written independently of the templated
// interpreter; returns the flattened output.
inline std::vector<double> reference_forward(const ModelSpec& model, const Tensor<double>& input) {
  std::vector<double> x = input.data();
  Shape shape = model.input_shape();
  for (std::size_t li = 0; li < model.num_layers(); ++li) {
    const LayerSpec& layer = model.layers()[li];
    if (const auto* m = std::get_if<MhaLayer>(&layer)) {
      const std::size_t len = shape[0], d = shape[1], h = m->num_heads, dk = m->key_dim;
      auto proj = [&](const Tensor<double>& w, const Tensor<double>& b) {
        std::vector<double> out(h * len * dk);
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t t = 0; t < len; ++t)
            for (std::size_t j = 0; j < dk; ++j) {
              double s = 0;
              for (std::size_t k = 0; k < d; ++k) s += x[t * d + k] * w.data()[(k * h + i) * dk + j];
              out[(i * len + t) * dk + j] = s + b.data()[i * dk + j];
            }
        return out;
      };
      const auto q = proj(m->w_q, m->b_q), k = proj(m->w_k, m->b_k), v = proj(m->w_v, m->b_v);
      std::vector<double> att(h * len * dk, 0.0);
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t t = 0; t < len; ++t) {
          std::vector<double> s(len);
          for (std::size_t u = 0; u < len; ++u) {
            double acc = 0;
            for (std::size_t j = 0; j < dk; ++j) acc += q[(i * len + t) * dk + j] * k[(i * len + u) * dk + j];
            s[u] = acc / std::sqrt(static_cast<double>(dk));
          }
          const double mx = *std::max_element(s.begin(), s.end());
          double z = 0;
          for (auto& e : s) z += (e = std::exp(e - mx));
          for (std::size_t j = 0; j < dk; ++j)
            for (std::size_t u = 0; u < len; ++u) att[(i * len + t) * dk + j] += s[u] / z * v[(i * len + u) * dk + j];
        }
      std::vector<double> y(len * d);
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t l = 0; l < d; ++l) {
          double acc = m->b_o.data()[l];
          for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < dk; ++j) acc += att[(i * len + t) * dk + j] * m->w_o.data()[(i * dk + j) * d + l];
          y[t * d + l] = acc;
        }
      x = std::move(y);
    } else if (const auto* dl = std::get_if<DenseLayer>(&layer)) {
      const std::size_t in = dl->w.dim(0), out = dl->w.dim(1), outer = x.size() / in;
      std::vector<double> y(outer * out);
      for (std::size_t r = 0; r < outer; ++r)
        for (std::size_t o = 0; o < out; ++o) {
          double acc = dl->b.data()[o];
          for (std::size_t i = 0; i < in; ++i) acc += x[r * in + i] * dl->w.data()[i * out + o];
          y[r * out + o] = dl->activation == Activation::kRelu ? std::max(acc, 0.0) : acc;
        }
      x = std::move(y);
    }
    shape = model.activation_shape(li + 1);
  }
  return x;
}

}  // namespace shapcolic::testing
