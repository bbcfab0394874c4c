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

// Forward semantics of the supported layers, generic over the scalar type.
//
// Instantiated with `double` + ConcreteTrace this is the plain reference
// model; with ConcolicScalar + ExecutionContext every data-dependent branch
// (softmax row max, ReLU, final argmax) is recorded together with the output
// neurons it affects. The exponential inside softmax always runs on concrete
// values, so softmax probabilities never carry symbolic parts.

#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "shapcolic/concolic.hpp"
#include "shapcolic/model.hpp"
#include "shapcolic/tensor.hpp"

namespace shapcolic {

template <class S>
struct ForwardResult {
  Tensor<S> output;
  std::vector<S> logits;
  std::size_t label = 0;
};

namespace detail {

inline void check(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace detail

// Linear projection and head split: out[i][t][j] = sum_k x[t][k] w[k][i][j] + b[i][j].
template <class S>
Tensor<S> tas(const Tensor<S>& x, const Tensor<double>& w, const Tensor<double>& b) {
  detail::check(x.rank() == 2 && w.rank() == 3 && b.rank() == 2, "tas: expected x[L][d], w[d][h][dk], b[h][dk]");
  const std::size_t len = x.dim(0), d = x.dim(1), h = w.dim(1), dk = w.dim(2);
  detail::check(w.dim(0) == d && b.dim(0) == h && b.dim(1) == dk, "tas: shape mismatch");
  Tensor<S> out({h, len, dk});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t j = 0; j < dk; ++j) {
        S acc = x(t, 0) * S(w(0, i, j));
        for (std::size_t k = 1; k < d; ++k) acc = acc + x(t, k) * S(w(k, i, j));
        out(i, t, j) = acc + S(b(i, j));
      }
    }
  }
  return out;
}

// Unscaled per-head scores Q K^T, shape h x L x L.
template <class S>
Tensor<S> attention_scores(const Tensor<S>& q, const Tensor<S>& k) {
  detail::check(q.rank() == 3 && q.shape() == k.shape(), "attention_scores: Q and K must both be h x L x dk");
  const std::size_t h = q.dim(0), len = q.dim(1), dk = q.dim(2);
  Tensor<S> out({h, len, len});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t u = 0; u < len; ++u) {
        S acc = q(i, t, 0) * k(i, u, 0);
        for (std::size_t j = 1; j < dk; ++j) acc = acc + q(i, t, j) * k(i, u, j);
        out(i, t, u) = acc;
      }
    }
  }
  return out;
}

// Which neurons the row-max ladder of softmax row t is associated with: row t
// of the attention layer's output activation.
struct RowScope {
  std::size_t activation = 0;
  std::size_t model_dim = 1;

  AssociationScope for_row(std::size_t t) const {
    AssociationScope s;
    s.layer = activation;
    s.neurons.reserve(model_dim);
    for (std::size_t k = 0; k < model_dim; ++k) s.neurons.push_back({activation, {t, k}});
    return s;
  }
};

// Running maximum of a row by a left-to-right strict '>' scan. The caller
// sets the association scope.
template <class S, class Trace>
S rowmax(std::span<const S> row, Trace& trace) {
  S best = row[0];
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (trace.compare(Relation::kGt, row[j], best)) best = row[j];
  }
  return best;
}

// Row-wise numerically stable softmax of a rows x cols matrix.
template <class S, class Trace>
Tensor<S> stable_softmax(const Tensor<S>& x, Trace& trace, const RowScope& scope) {
  detail::check(x.rank() == 2 && x.dim(1) > 0, "stable_softmax: expected a non-empty matrix");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor<S> out({rows, cols});
  std::vector<double> e(cols);
  for (std::size_t t = 0; t < rows; ++t) {
    if constexpr (Trace::kRecords) trace.set_scope(scope.for_row(t));
    std::span<const S> row(x.data().data() + t * cols, cols);
    const double m = concrete_value(rowmax(row, trace));
    double sum = 0.0;
    for (std::size_t u = 0; u < cols; ++u) {
      e[u] = std::exp(concrete_value(row[u]) - m);
      sum += e[u];
    }
    for (std::size_t u = 0; u < cols; ++u) out(t, u) = S(e[u] / sum);
  }
  return out;
}

// Scaled dot-product attention per head; returns h x L x dk.
template <class S, class Trace>
Tensor<S> dpa(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, Trace& trace, const RowScope& scope) {
  detail::check(q.rank() == 3 && q.shape() == k.shape() && q.shape() == v.shape(), "dpa: Q, K, V must be h x L x dk");
  const std::size_t h = q.dim(0), len = q.dim(1), dk = q.dim(2);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  const Tensor<S> scores = attention_scores(q, k);
  Tensor<S> out({h, len, dk});
  for (std::size_t i = 0; i < h; ++i) {
    Tensor<S> scaled({len, len});
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t u = 0; u < len; ++u) scaled(t, u) = scores(i, t, u) * S(inv_sqrt);
    }
    const Tensor<S> p = stable_softmax(scaled, trace, scope);
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t j = 0; j < dk; ++j) {
        S acc = p(t, 0) * v(i, 0, j);
        for (std::size_t u = 1; u < len; ++u) acc = acc + p(t, u) * v(i, u, j);
        out(i, t, j) = acc;
      }
    }
  }
  return out;
}

// Head concatenation and output projection:
// Y[t][l] = sum_i sum_j A[i][t][j] W_O[i][j][l] + B_O[l].
template <class S>
Tensor<S> concat(const Tensor<S>& a, const Tensor<double>& w_o, const Tensor<double>& b_o) {
  detail::check(a.rank() == 3 && w_o.rank() == 3 && b_o.rank() == 1, "concat: expected A[h][L][dk], W_O[h][dk][d], B_O[d]");
  const std::size_t h = a.dim(0), len = a.dim(1), dk = a.dim(2), d = w_o.dim(2);
  detail::check(w_o.dim(0) == h && w_o.dim(1) == dk && b_o.dim(0) == d, "concat: shape mismatch");
  Tensor<S> out({len, d});
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t l = 0; l < d; ++l) {
      S acc = a(0, t, 0) * S(w_o(0, 0, l));
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = (i == 0 ? 1 : 0); j < dk; ++j) acc = acc + a(i, t, j) * S(w_o(i, j, l));
      }
      out(t, l) = acc + S(b_o[l]);
    }
  }
  return out;
}

template <class S, class Trace>
Tensor<S> mha_forward(const MhaLayer& layer, const Tensor<S>& x, Trace& trace, std::size_t out_activation) {
  const Tensor<S> q = tas(x, layer.w_q, layer.b_q);
  const Tensor<S> k = tas(x, layer.w_k, layer.b_k);
  const Tensor<S> v = tas(x, layer.w_v, layer.b_v);
  const Tensor<S> att = dpa(q, k, v, trace, RowScope{out_activation, layer.model_dim()});
  return concat(att, layer.w_o, layer.b_o);
}

// Affine map over the last axis, optionally followed by ReLU. Each ReLU is a
// guarded comparison associated with exactly its own output neuron; ties
// (pre-activation 0) go to the zero branch.
template <class S, class Trace>
Tensor<S> dense_forward(const Tensor<S>& x, const Tensor<double>& w, const Tensor<double>& b, Activation act,
                        Trace& trace, std::size_t out_activation) {
  detail::check(x.rank() >= 1 && w.rank() == 2 && x.shape().back() == w.dim(0) && b.size() == w.dim(1),
                "dense: input width must equal the rows of W");
  const std::size_t in = w.dim(0), out_w = w.dim(1), outer = x.size() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_w;
  Tensor<S> out(out_shape);
  for (std::size_t r = 0; r < outer; ++r) {
    for (std::size_t o = 0; o < out_w; ++o) {
      S acc = x[r * in] * S(w(0, o));
      for (std::size_t i = 1; i < in; ++i) acc = acc + x[r * in + i] * S(w(i, o));
      acc = acc + S(b[o]);
      if (act == Activation::kRelu) {
        if constexpr (Trace::kRecords) {
          trace.set_scope(AssociationScope{{NeuronId{out_activation, unflatten(out_shape, r * out_w + o)}}, out_activation});
        }
        if (!trace.compare(Relation::kGt, acc, S(0.0))) acc = S(0.0);
      }
      out[r * out_w + o] = acc;
    }
  }
  return out;
}

// Applies layer `i` of `model` to activation `i`.
template <class S, class Trace>
Tensor<S> apply_layer(const ModelSpec& model, std::size_t i, const Tensor<S>& x, Trace& trace) {
  const std::size_t out_activation = i + 1;
  return std::visit(
      [&](const auto& l) -> Tensor<S> {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, MhaLayer>) {
          return mha_forward(l, x, trace, out_activation);
        } else if constexpr (std::is_same_v<L, DenseLayer>) {
          return dense_forward(x, l.w, l.b, l.activation, trace, out_activation);
        } else {
          return x.reshaped(model.activation_shape(out_activation));
        }
      },
      model.layers()[i]);
}

// Argmax by a comparison ladder over the logits; ties keep the lower index.
template <class S, class Trace>
std::size_t argmax_ladder(std::span<const S> logits, const Shape& out_shape, std::size_t out_activation, Trace& trace) {
  if constexpr (Trace::kRecords) {
    AssociationScope all;
    all.layer = out_activation;
    for (std::size_t o = 0; o < logits.size(); ++o) all.neurons.push_back({out_activation, unflatten(out_shape, o)});
    trace.set_scope(std::move(all));
  }
  std::size_t best = 0;
  for (std::size_t j = 1; j < logits.size(); ++j) {
    if (trace.compare(Relation::kGt, logits[j], logits[best])) best = j;
  }
  return best;
}

// Runs layers [first_layer, end) starting from activation `first_layer`.
template <class S, class Trace>
ForwardResult<S> forward_from(const ModelSpec& model, std::size_t first_layer, Tensor<S> x, Trace& trace) {
  detail::check(shape_size(x.shape()) == shape_size(model.activation_shape(first_layer)),
                "forward: input shape " + shape_string(x.shape()) + " does not match " +
                    shape_string(model.activation_shape(first_layer)));
  x = x.reshaped(model.activation_shape(first_layer));
  for (std::size_t i = first_layer; i < model.num_layers(); ++i) x = apply_layer(model, i, x, trace);
  ForwardResult<S> r;
  r.logits = x.data();
  r.label = argmax_ladder(std::span<const S>(r.logits), x.shape(), model.output_activation(), trace);
  r.output = std::move(x);
  return r;
}

template <class S, class Trace>
ForwardResult<S> forward(const ModelSpec& model, Tensor<S> x, Trace& trace) {
  return forward_from(model, 0, std::move(x), trace);
}

// Plain real execution.
inline ForwardResult<double> forward_concrete(const ModelSpec& model, const Tensor<double>& x) {
  ConcreteTrace trace;
  return forward(model, x, trace);
}

inline std::size_t predict(const ModelSpec& model, const Tensor<double>& x) { return forward_concrete(model, x).label; }

// Every activation of a concrete run: result[0] = x, result[i + 1] = layer i output.
inline std::vector<Tensor<double>> activations(const ModelSpec& model, const Tensor<double>& x) {
  ConcreteTrace trace;
  std::vector<Tensor<double>> acts{x.reshaped(model.input_shape())};
  for (std::size_t i = 0; i < model.num_layers(); ++i) acts.push_back(apply_layer(model, i, acts.back(), trace));
  return acts;
}

}  // namespace shapcolic
