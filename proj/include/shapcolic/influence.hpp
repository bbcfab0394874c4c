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

// Shapley attribution of neurons to model outputs and the per-neuron
// influence map that ranks branch predicates.
//
// The value function of a coalition S is the submodel's logit vector at the
// point that takes the explained input's values on S and the background mean
// everywhere else. Features whose value already equals the baseline are dummy
// players and are skipped; the remaining ("active") features are attributed
// exactly by enumerating all coalitions when there are at most
// `exact_max_features` of them, and by permutation sampling otherwise.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "shapcolic/concolic.hpp"
#include "shapcolic/errors.hpp"
#include "shapcolic/model.hpp"
#include "shapcolic/semantics.hpp"

namespace shapcolic {

struct BackgroundSet {
  std::vector<Tensor<double>> samples;
  std::uint64_t seed = 0;  // drives permutation sampling
};

struct ShapleyOptions {
  std::size_t exact_max_features = 12;
  std::size_t permutations = 128;
  // Use permutation sampling even when exact enumeration is affordable.
  bool force_sampling = false;
};

// Attribution matrix: value(feature, output).
class ShapleyMatrix {
 public:
  ShapleyMatrix(std::size_t features, std::size_t outputs)
      : features_(features), outputs_(outputs), data_(features * outputs, 0.0) {}

  std::size_t features() const { return features_; }
  std::size_t outputs() const { return outputs_; }
  double& operator()(std::size_t f, std::size_t o) { return data_[f * outputs_ + o]; }
  double operator()(std::size_t f, std::size_t o) const { return data_[f * outputs_ + o]; }

 private:
  std::size_t features_;
  std::size_t outputs_;
  std::vector<double> data_;
};

// Maps a full feature vector to the output vector.
using ValueFunction = std::function<std::vector<double>(std::span<const double>)>;

namespace detail {

inline std::vector<std::size_t> active_features(std::span<const double> x, std::span<const double> baseline) {
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] != baseline[i]) active.push_back(i);
  }
  return active;
}

}  // namespace detail

inline ShapleyMatrix shapley_exact(const ValueFunction& value, std::span<const double> x, std::span<const double> baseline,
                                   std::size_t num_outputs, std::size_t max_features = 20) {
  const auto active = detail::active_features(x, baseline);
  const std::size_t d = active.size();
  if (d > max_features) {
    throw ConfigError("exact Shapley enumeration over " + std::to_string(d) + " features is not supported");
  }
  ShapleyMatrix phi(x.size(), num_outputs);
  if (d == 0) return phi;

  const std::size_t masks = std::size_t{1} << d;
  std::vector<double> values(masks * num_outputs);
  std::vector<double> z(baseline.begin(), baseline.end());
  for (std::size_t mask = 0; mask < masks; ++mask) {
    for (std::size_t a = 0; a < d; ++a) z[active[a]] = (mask >> a) & 1 ? x[active[a]] : baseline[active[a]];
    const auto out = value(z);
    std::copy(out.begin(), out.end(), values.begin() + static_cast<std::ptrdiff_t>(mask * num_outputs));
  }

  // weight[s] = s! (d - s - 1)! / d!
  std::vector<double> weight(d);
  for (std::size_t s = 0; s < d; ++s) {
    weight[s] = std::exp(std::lgamma(static_cast<double>(s) + 1) + std::lgamma(static_cast<double>(d - s)) -
                         std::lgamma(static_cast<double>(d) + 1));
  }
  for (std::size_t a = 0; a < d; ++a) {
    const std::size_t bit = std::size_t{1} << a;
    for (std::size_t mask = 0; mask < masks; ++mask) {
      if (mask & bit) continue;
      const double w = weight[static_cast<std::size_t>(std::popcount(mask))];
      const double* without = &values[mask * num_outputs];
      const double* with = &values[(mask | bit) * num_outputs];
      for (std::size_t o = 0; o < num_outputs; ++o) phi(active[a], o) += w * (with[o] - without[o]);
    }
  }
  return phi;
}

inline ShapleyMatrix shapley_sampled(const ValueFunction& value, std::span<const double> x, std::span<const double> baseline,
                                     std::size_t num_outputs, std::size_t permutations, std::uint64_t seed) {
  if (permutations == 0) throw ConfigError("permutation count must be positive");
  auto order = detail::active_features(x, baseline);
  ShapleyMatrix phi(x.size(), num_outputs);
  if (order.empty()) return phi;

  std::mt19937_64 rng(seed);
  std::vector<double> z(baseline.size());
  for (std::size_t p = 0; p < permutations; ++p) {
    std::shuffle(order.begin(), order.end(), rng);
    std::copy(baseline.begin(), baseline.end(), z.begin());
    auto prev = value(z);
    for (std::size_t f : order) {
      z[f] = x[f];
      auto cur = value(z);
      for (std::size_t o = 0; o < num_outputs; ++o) phi(f, o) += cur[o] - prev[o];
      prev = std::move(cur);
    }
  }
  const double scale = 1.0 / static_cast<double>(permutations);
  for (std::size_t f = 0; f < x.size(); ++f) {
    for (std::size_t o = 0; o < num_outputs; ++o) phi(f, o) *= scale;
  }
  return phi;
}

inline ShapleyMatrix shapley_values(const ValueFunction& value, std::span<const double> x, std::span<const double> baseline,
                                    std::size_t num_outputs, const ShapleyOptions& options, std::uint64_t seed) {
  const std::size_t active = detail::active_features(x, baseline).size();
  if (!options.force_sampling && active <= options.exact_max_features) {
    return shapley_exact(value, x, baseline, num_outputs, options.exact_max_features);
  }
  return shapley_sampled(value, x, baseline, num_outputs, options.permutations, seed);
}

// Element-wise mean of equally shaped tensors.
inline std::vector<double> mean_of(std::span<const Tensor<double>> samples) {
  if (samples.empty()) throw ConfigError("background set is empty");
  std::vector<double> mean(samples[0].size(), 0.0);
  for (const auto& s : samples) {
    if (s.size() != mean.size()) throw ConfigError("background samples differ in size");
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += s[i];
  }
  for (auto& m : mean) m /= static_cast<double>(samples.size());
  return mean;
}

// Logits of `model` from activation `first` onwards as a value function.
inline ValueFunction submodel_value(const ModelSpec& model, std::size_t first) {
  return [&model, first](std::span<const double> z) {
    ConcreteTrace trace;
    Tensor<double> in(model.activation_shape(first), std::vector<double>(z.begin(), z.end()));
    return forward_from(model, first, std::move(in), trace).logits;
  };
}

// Shapley attributions of every input neuron of `subnet` to every output,
// with the background (given in `subnet`'s input space) as reference.
inline ShapleyMatrix model_shapley(const ModelSpec& subnet, const BackgroundSet& background, const Tensor<double>& input,
                                   const ShapleyOptions& options = {}) {
  if (background.samples.empty()) throw ConfigError("background set is empty");
  for (const auto& s : background.samples) {
    if (s.size() != shape_size(subnet.input_shape())) throw ConfigError("background sample does not match model input");
  }
  if (input.size() != shape_size(subnet.input_shape())) throw ConfigError("input does not match model input");
  const auto baseline = mean_of(background.samples);
  return shapley_values(submodel_value(subnet, 0), input.data(), baseline, subnet.num_classes(), options, background.seed);
}

// Shapley value of one input feature of `subnet` for one output logit.
inline double shapley(const ModelSpec& subnet, const BackgroundSet& background, const Tensor<double>& input,
                      std::size_t feature, std::size_t output, const ShapleyOptions& options = {}) {
  if (feature >= shape_size(subnet.input_shape())) throw ConfigError("feature index out of range");
  if (output >= subnet.num_classes()) throw ConfigError("output index out of range");
  return model_shapley(subnet, background, input, options)(feature, output);
}

// Dense per-activation storage of one real value per neuron. Used both for
// influences (non-negative) and relevances (signed).
class NeuronMap {
 public:
  NeuronMap() = default;
  explicit NeuronMap(std::vector<Shape> shapes) : shapes_(std::move(shapes)) {
    for (const auto& s : shapes_) values_.emplace_back(shape_size(s), std::numeric_limits<double>::quiet_NaN());
  }

  std::size_t num_activations() const { return shapes_.size(); }
  const Shape& shape(std::size_t layer) const { return shapes_.at(layer); }
  std::span<const double> layer(std::size_t l) const { return values_.at(l); }

  void set_layer(std::size_t l, std::vector<double> values) {
    if (values.size() != values_.at(l).size()) throw IntegrityError("layer value count mismatch");
    values_[l] = std::move(values);
  }

  bool contains(const NeuronId& n) const {
    if (n.layer >= shapes_.size() || n.index.size() != shapes_[n.layer].size()) return false;
    for (std::size_t d = 0; d < n.index.size(); ++d) {
      if (n.index[d] >= shapes_[n.layer][d]) return false;
    }
    return !std::isnan(values_[n.layer][flat_offset(shapes_[n.layer], n.index)]);
  }

  double at(const NeuronId& n) const {
    if (!contains(n)) throw IntegrityError("no value recorded for neuron " + to_string(n));
    return values_[n.layer][flat_offset(shapes_[n.layer], n.index)];
  }

  void set(const NeuronId& n, double v) { values_.at(n.layer).at(flat_offset(shapes_.at(n.layer), n.index)) = v; }

  // Layers that carry values for every neuron.
  std::vector<std::size_t> populated_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < values_.size(); ++l) {
      if (!values_[l].empty() && std::none_of(values_[l].begin(), values_[l].end(), [](double v) { return std::isnan(v); })) {
        out.push_back(l);
      }
    }
    return out;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](double x) { return !std::isnan(x); }));
    return n;
  }

  // {"layer.i0.i1": value, ...}
  json to_json() const {
    json j = json::object();
    for (std::size_t l = 0; l < values_.size(); ++l) {
      for (std::size_t f = 0; f < values_[l].size(); ++f) {
        if (!std::isnan(values_[l][f])) j[to_string(NeuronId{l, unflatten(shapes_[l], f)})] = values_[l][f];
      }
    }
    return j;
  }

  static NeuronMap from_json(const json& j, const ModelSpec& model) {
    if (!j.is_object()) throw ConfigError("neuron map: expected a JSON object");
    std::vector<Shape> shapes;
    for (std::size_t a = 0; a < model.num_activations(); ++a) shapes.push_back(model.activation_shape(a));
    NeuronMap map(std::move(shapes));
    for (const auto& [key, value] : j.items()) {
      NeuronId n = parse_neuron_id(key);
      if (!value.is_number()) throw ConfigError("neuron map: value of '" + key + "' is not a number");
      if (n.layer >= map.shapes_.size() || n.index.size() != map.shapes_[n.layer].size()) {
        throw ConfigError("neuron map: key '" + key + "' does not address a neuron of the model");
      }
      try {
        map.set(n, value.get<double>());
      } catch (const std::exception&) {
        throw ConfigError("neuron map: key '" + key + "' is out of range");
      }
    }
    return map;
  }

  static NeuronId parse_neuron_id(const std::string& key) {
    NeuronId n;
    std::size_t pos = 0;
    bool first = true;
    while (pos <= key.size()) {
      const std::size_t dot = std::min(key.find('.', pos), key.size());
      const std::string part = key.substr(pos, dot - pos);
      if (part.empty() || !std::all_of(part.begin(), part.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
        throw ConfigError("malformed neuron id '" + key + "'");
      }
      const std::size_t v = std::stoul(part);
      if (first) {
        n.layer = v;
        first = false;
      } else {
        n.index.push_back(v);
      }
      pos = dot + 1;
    }
    return n;
  }

 private:
  std::vector<Shape> shapes_;
  std::vector<std::vector<double>> values_;
};

using InfluenceMap = NeuronMap;

namespace detail {

inline std::vector<Shape> activation_shapes(const ModelSpec& model) {
  std::vector<Shape> shapes;
  for (std::size_t a = 0; a < model.num_activations(); ++a) shapes.push_back(model.activation_shape(a));
  return shapes;
}

inline void check_background(const ModelSpec& model, const BackgroundSet& background) {
  if (background.samples.empty()) throw ConfigError("background set is empty");
  for (const auto& s : background.samples) {
    if (s.size() != shape_size(model.input_shape())) {
      throw ConfigError("background sample of shape " + shape_string(s.shape()) + " does not match model input " +
                        shape_string(model.input_shape()));
    }
  }
}

// Calls fn(activation, x_l, baseline_l) for every non-output activation,
// where x_l is the explained input pushed through the first l layers and
// baseline_l the mean of the background pushed through the same layers.
template <class Fn>
void for_each_inner_activation(const ModelSpec& model, const BackgroundSet& background, const Tensor<double>& x, Fn&& fn) {
  check_background(model, background);
  auto xs = activations(model, x);
  std::vector<std::vector<Tensor<double>>> bg;
  bg.reserve(background.samples.size());
  for (const auto& s : background.samples) bg.push_back(activations(model, s));
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    std::vector<Tensor<double>> level;
    level.reserve(bg.size());
    for (const auto& acts : bg) level.push_back(acts[l]);
    fn(l, xs[l], mean_of(level), xs.back(), bg);
  }
}

}  // namespace detail

// Per-neuron influence: for every neuron n of activation l (input included,
// output excluded) the mean over outputs o of |shap(n, o)| on the submodel
// after l. Output neurons get |x_o - mean_o| / C, the same quantity for the
// identity submodel, so that argmax branches can be ranked too.
inline InfluenceMap build_influence_map(const ModelSpec& model, const BackgroundSet& background, const Tensor<double>& seed_input,
                                        const ShapleyOptions& options = {}) {
  if (model.num_layers() < 2) throw ConfigError("influence map needs a model with at least two layers");
  InfluenceMap map(detail::activation_shapes(model));
  const std::size_t classes = model.num_classes();
  std::vector<double> output_mean;
  detail::for_each_inner_activation(
      model, background, seed_input,
      [&](std::size_t l, const Tensor<double>& x_l, const std::vector<double>& baseline, const Tensor<double>& x_out,
          const std::vector<std::vector<Tensor<double>>>& bg) {
        const ShapleyMatrix phi = shapley_values(submodel_value(model, l), x_l.data(), baseline, classes, options,
                                                 background.seed + l);
        std::vector<double> infl(phi.features());
        for (std::size_t n = 0; n < phi.features(); ++n) {
          double acc = 0.0;
          for (std::size_t o = 0; o < classes; ++o) acc += std::abs(phi(n, o));
          infl[n] = acc / static_cast<double>(classes);
        }
        map.set_layer(l, std::move(infl));
        if (l + 1 == model.num_layers()) {
          std::vector<Tensor<double>> outs;
          for (const auto& acts : bg) outs.push_back(acts.back());
          output_mean = mean_of(outs);
          std::vector<double> out_infl(classes);
          for (std::size_t o = 0; o < classes; ++o) {
            out_infl[o] = std::abs(x_out[o] - output_mean[o]) / static_cast<double>(classes);
          }
          map.set_layer(model.output_activation(), std::move(out_infl));
        }
      });
  return map;
}

// Mean influence of the neurons a branch is associated with.
inline double branch_influence(const BranchEvent& event, const InfluenceMap& map) {
  if (event.assoc_neurons.empty()) throw IntegrityError("branch event without associated neurons");
  double sum = 0.0;
  for (const auto& n : event.assoc_neurons) sum += map.at(n);
  return sum / static_cast<double>(event.assoc_neurons.size());
}

inline BackgroundSet background_from_json(const json& j, const Shape& input_shape, std::uint64_t seed, const std::string& field) {
  if (!j.is_array()) throw ConfigError(field + ": expected an array of inputs");
  if (j.empty()) throw ConfigError(field + ": background set is empty");
  BackgroundSet bg;
  bg.seed = seed;
  for (std::size_t i = 0; i < j.size(); ++i) {
    bg.samples.push_back(input_from_json(j[i], input_shape, field + "[" + std::to_string(i) + "]"));
  }
  return bg;
}

}  // namespace shapcolic
