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

// Signed neuron relevance, critical decision paths and their aggregation over
// a suite of inputs.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "shapcolic/errors.hpp"
#include "shapcolic/influence.hpp"
#include "shapcolic/model.hpp"
#include "shapcolic/semantics.hpp"

namespace shapcolic {

// R(n, x): Shapley value of neuron n for the logit of the class predicted at x.
using RelevanceMatrix = NeuronMap;

inline RelevanceMatrix relevance(const ModelSpec& model, const BackgroundSet& background, const Tensor<double>& x,
                                 const ShapleyOptions& options = {}) {
  if (model.num_layers() < 2) throw ConfigError("relevance needs a model with at least two layers");
  RelevanceMatrix r(detail::activation_shapes(model));
  const std::size_t cls = predict(model, x);
  const std::size_t classes = model.num_classes();
  detail::for_each_inner_activation(
      model, background, x,
      [&](std::size_t l, const Tensor<double>& x_l, const std::vector<double>& baseline, const Tensor<double>&,
          const std::vector<std::vector<Tensor<double>>>&) {
        const ShapleyMatrix phi =
            shapley_values(submodel_value(model, l), x_l.data(), baseline, classes, options, background.seed + l);
        std::vector<double> col(phi.features());
        for (std::size_t n = 0; n < col.size(); ++n) col[n] = phi(n, cls);
        r.set_layer(l, std::move(col));
      });
  return r;
}

inline std::size_t alpha_cap(double alpha, std::size_t layer_size) {
  return static_cast<std::size_t>(std::floor(alpha * static_cast<double>(layer_size) + 1e-9));
}

// The at most floor(alpha * |layer|) neurons of `layer` with the highest
// strictly positive relevance; ties go to the lower flat index.
inline std::set<NeuronId> critical_neurons(const RelevanceMatrix& r, std::size_t layer, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  const auto values = r.layer(layer);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] > 0.0) candidates.push_back(i);
  }
  std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
    return values[a] != values[b] ? values[a] > values[b] : a < b;
  });
  candidates.resize(std::min(candidates.size(), alpha_cap(alpha, values.size())));
  std::set<NeuronId> out;
  for (std::size_t i : candidates) out.insert(NeuronId{layer, unflatten(r.shape(layer), i)});
  return out;
}

// Union of critical_neurons over every layer that carries relevance values.
inline std::set<NeuronId> critical_path(const RelevanceMatrix& r, double alpha) {
  std::set<NeuronId> out;
  for (std::size_t l : r.populated_layers()) out.merge(critical_neurons(r, l, alpha));
  return out;
}

using PairHistogram = std::map<std::pair<std::size_t, std::size_t>, std::size_t>;

// Shannon entropy in bits of the normalized histogram.
inline double pair_entropy(const PairHistogram& histogram) {
  double total = 0.0;
  for (const auto& [pair, count] : histogram) total += static_cast<double>(count);
  if (total <= 0.0) throw ConfigError("pair histogram is empty");
  double h = 0.0;
  for (const auto& [pair, count] : histogram) {
    if (count == 0) continue;
    const double p = static_cast<double>(count) / total;
    h -= p * std::log2(p);
  }
  return h;
}

struct AcdpReport {
  double alpha = 0.0;
  double beta = 0.0;
  std::size_t suite_size = 0;
  NeuronMap weights;
  std::vector<NeuronId> members;
  std::map<std::size_t, std::size_t> layer_counts;  // members per layer
  PairHistogram pair_histogram;
  std::optional<double> entropy_bits;
};

// w(n) = fraction of the suite whose critical path contains n; members are
// the neurons with w(n) > beta. `pairs` holds (original, attacked) labels.
inline AcdpReport abstract_path(const std::vector<RelevanceMatrix>& suite, double alpha, double beta,
                                const std::vector<std::pair<std::size_t, std::size_t>>& pairs = {}) {
  if (suite.empty()) throw ConfigError("abstract path over an empty suite");
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("beta must lie in [0, 1)");
  AcdpReport rep;
  rep.alpha = alpha;
  rep.beta = beta;
  rep.suite_size = suite.size();
  std::vector<Shape> shapes;
  for (std::size_t l = 0; l < suite[0].num_activations(); ++l) shapes.push_back(suite[0].shape(l));
  const auto layers = suite[0].populated_layers();
  for (const auto& r : suite) {
    bool same = r.num_activations() == shapes.size() && r.populated_layers() == layers;
    for (std::size_t l = 0; same && l < shapes.size(); ++l) same = r.shape(l) == shapes[l];
    if (!same) throw ConfigError("relevance matrices of the suite differ in shape");
  }
  std::map<NeuronId, std::size_t> counts;
  for (const auto& r : suite) {
    for (const auto& n : critical_path(r, alpha)) ++counts[n];
  }
  rep.weights = NeuronMap(shapes);
  const double size = static_cast<double>(suite.size());
  for (std::size_t l : layers) {
    std::vector<double> w(shape_size(shapes[l]), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      auto it = counts.find(NeuronId{l, unflatten(shapes[l], i)});
      if (it != counts.end()) w[i] = static_cast<double>(it->second) / size;
      if (w[i] > beta) {
        rep.members.push_back(NeuronId{l, unflatten(shapes[l], i)});
        ++rep.layer_counts[l];
      }
    }
    rep.weights.set_layer(l, std::move(w));
  }
  for (const auto& p : pairs) ++rep.pair_histogram[p];
  if (!rep.pair_histogram.empty()) rep.entropy_bits = pair_entropy(rep.pair_histogram);
  return rep;
}

// "neuron,layer,weight" rows for every weighted neuron.
inline std::string weights_csv(const AcdpReport& rep) {
  std::ostringstream out;
  out << "neuron,layer,weight\n";
  for (std::size_t l : rep.weights.populated_layers()) {
    const auto w = rep.weights.layer(l);
    for (std::size_t i = 0; i < w.size(); ++i) {
      out << to_string(NeuronId{l, unflatten(rep.weights.shape(l), i)}) << ',' << l << ',' << format_decimal(w[i])
          << '\n';
    }
  }
  return out.str();
}

inline json acdp_report_to_json(const AcdpReport& rep, const std::string& weights_path) {
  json j;
  j["alpha"] = rep.alpha;
  j["beta"] = rep.beta;
  j["suite_size"] = rep.suite_size;
  json members = json::array();
  for (const auto& n : rep.members) members.push_back(to_string(n));
  j["members"] = std::move(members);
  json layers = json::object();
  for (const auto& [l, c] : rep.layer_counts) layers[std::to_string(l)] = c;
  j["layer_counts"] = std::move(layers);
  j["weights"] = weights_path;
  json hist = json::array();
  for (const auto& [pair, count] : rep.pair_histogram) {
    hist.push_back({{"original", pair.first}, {"attacked", pair.second}, {"count", count}});
  }
  j["pair_histogram"] = std::move(hist);
  j["entropy_bits"] = rep.entropy_bits ? json(*rep.entropy_bits) : json(nullptr);
  j["relevance_class"] = "predicted";
  return j;
}

}  // namespace shapcolic
