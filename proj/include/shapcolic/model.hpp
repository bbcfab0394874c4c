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

// Declarative model description and its JSON file format.
//
//   {"input_shape": [L, d_model],
//    "num_classes": C,                      (optional, checked when present)
//    "layers": [
//      {"type": "mha", "num_heads": h, "key_dim": d_k,
//       "W_Q": d_model x h x d_k, "B_Q": h x d_k, (same for K and V),
//       "W_O": h x d_k x d_model, "B_O": d_model},
//      {"type": "flatten"},
//      {"type": "reshape", "target_shape": [...]},
//      {"type": "dense", "W": in x out, "b": out, "activation": "relu" | "none"}]}

#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "shapcolic/errors.hpp"
#include "shapcolic/tensor.hpp"

namespace shapcolic {

using json = nlohmann::json;

struct MhaLayer {
  std::size_t num_heads = 1;
  std::size_t key_dim = 1;
  Tensor<double> w_q, w_k, w_v;  // d_model x h x d_k
  Tensor<double> b_q, b_k, b_v;  // h x d_k
  Tensor<double> w_o;            // h x d_k x d_model
  Tensor<double> b_o;            // d_model

  std::size_t model_dim() const { return w_q.dim(0); }
};

enum class Activation { kNone, kRelu };

struct DenseLayer {
  Tensor<double> w;  // in x out
  Tensor<double> b;  // out
  Activation activation = Activation::kNone;

  std::size_t in_dim() const { return w.dim(0); }
  std::size_t out_dim() const { return w.dim(1); }
};

struct FlattenLayer {};

struct ReshapeLayer {
  Shape target;
};

using LayerSpec = std::variant<MhaLayer, DenseLayer, FlattenLayer, ReshapeLayer>;

inline std::string layer_kind(const LayerSpec& layer) {
  static constexpr const char* kNames[] = {"mha", "dense", "flatten", "reshape"};
  return kNames[layer.index()];
}

// Output shape of `layer` for input shape `in`, or a ConfigError.
inline Shape infer_output_shape(const LayerSpec& layer, const Shape& in, const std::string& where) {
  auto fail = [&](const std::string& msg) { throw ConfigError(where + ": " + msg); };
  auto expect = [&](const Tensor<double>& t, const Shape& s, const char* field) {
    if (t.shape() != s) {
      fail(std::string(field) + " has shape " + shape_string(t.shape()) + ", expected " + shape_string(s));
    }
  };
  return std::visit(
      [&](const auto& l) -> Shape {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, MhaLayer>) {
          if (in.size() != 2) fail("mha expects a rank-2 (seq_len x model_dim) input, got " + shape_string(in));
          if (l.num_heads == 0 || l.key_dim == 0) fail("num_heads and key_dim must be positive");
          const std::size_t d = in[1], h = l.num_heads, k = l.key_dim;
          expect(l.w_q, {d, h, k}, "W_Q");
          expect(l.w_k, {d, h, k}, "W_K");
          expect(l.w_v, {d, h, k}, "W_V");
          expect(l.b_q, {h, k}, "B_Q");
          expect(l.b_k, {h, k}, "B_K");
          expect(l.b_v, {h, k}, "B_V");
          expect(l.w_o, {h, k, d}, "W_O");
          expect(l.b_o, {d}, "B_O");
          return in;
        } else if constexpr (std::is_same_v<L, DenseLayer>) {
          if (l.w.rank() != 2) fail("W must be rank 2");
          if (in.empty() || in.back() != l.w.dim(0)) {
            fail("W has " + std::to_string(l.w.dim(0)) + " rows but input shape is " + shape_string(in));
          }
          expect(l.b, {l.w.dim(1)}, "b");
          Shape out = in;
          out.back() = l.w.dim(1);
          return out;
        } else if constexpr (std::is_same_v<L, FlattenLayer>) {
          return {shape_size(in)};
        } else {
          if (shape_size(l.target) != shape_size(in)) {
            fail("cannot reshape " + shape_string(in) + " to " + shape_string(l.target));
          }
          return l.target;
        }
      },
      layer);
}

class ModelSpec {
 public:
  ModelSpec() = default;
  ModelSpec(Shape input_shape, std::vector<LayerSpec> layers)
      : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
    validate();
  }

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t num_layers() const { return layers_.size(); }

  // Shape of activation `i`: 0 is the input, i + 1 the output of layer i.
  const Shape& activation_shape(std::size_t i) const { return shapes_.at(i); }
  std::size_t num_activations() const { return shapes_.size(); }
  std::size_t output_activation() const { return layers_.size(); }
  std::size_t num_classes() const { return shape_size(shapes_.back()); }

  // Layers [first, end) as a model of their own.
  ModelSpec suffix(std::size_t first) const {
    ModelSpec m;
    m.input_shape_ = shapes_.at(first);
    m.layers_.assign(layers_.begin() + static_cast<std::ptrdiff_t>(first), layers_.end());
    m.shapes_.assign(shapes_.begin() + static_cast<std::ptrdiff_t>(first), shapes_.end());
    return m;
  }

 private:
  void validate() {
    if (input_shape_.empty() || shape_size(input_shape_) == 0) throw ConfigError("input_shape must be non-empty");
    shapes_ = {input_shape_};
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      shapes_.push_back(infer_output_shape(layers_[i], shapes_.back(), "layers[" + std::to_string(i) + "]"));
    }
  }

  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

// Shape read along first elements, then every branch is checked against it.
inline Shape infer_nested_shape(const json& j, const std::string& field) {
  Shape shape;
  const json* cur = &j;
  while (cur->is_array()) {
    if (cur->empty()) throw ConfigError(field + ": empty array");
    shape.push_back(cur->size());
    cur = &(*cur)[0];
  }
  if (!cur->is_number()) throw ConfigError(field + ": expected a number or nested array of numbers");
  return shape;
}

inline void check_nested_shape(const json& j, const Shape& shape, std::size_t depth, const std::string& field) {
  if (depth == shape.size()) {
    if (!j.is_number()) throw ConfigError(field + ": expected a number at depth " + std::to_string(depth));
    return;
  }
  if (!j.is_array() || j.size() != shape[depth]) throw ConfigError(field + ": ragged nested array");
  for (const auto& e : j) check_nested_shape(e, shape, depth + 1, field);
}

inline void flatten_nested(const json& j, std::vector<double>& out, const std::string& field) {
  if (j.is_number()) {
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw ConfigError(field + ": non-finite value");
    out.push_back(v);
    return;
  }
  for (const auto& e : j) flatten_nested(e, out, field);
}

}  // namespace detail

inline Tensor<double> tensor_from_json(const json& j, const std::string& field) {
  Shape shape = detail::infer_nested_shape(j, field);
  detail::check_nested_shape(j, shape, 0, field);
  std::vector<double> data;
  data.reserve(shape_size(shape));
  detail::flatten_nested(j, data, field);
  if (data.size() != shape_size(shape)) throw ConfigError(field + ": ragged nested array");
  return Tensor<double>(std::move(shape), std::move(data));
}

inline json tensor_to_json(const Tensor<double>& t) {
  if (t.rank() == 0) return t[0];
  std::function<json(std::size_t, std::size_t)> rec = [&](std::size_t depth, std::size_t offset) -> json {
    json arr = json::array();
    std::size_t stride = 1;
    for (std::size_t d = depth + 1; d < t.rank(); ++d) stride *= t.dim(d);
    for (std::size_t i = 0; i < t.dim(depth); ++i) {
      if (depth + 1 == t.rank()) {
        arr.push_back(t[offset + i]);
      } else {
        arr.push_back(rec(depth + 1, offset + i * stride));
      }
    }
    return arr;
  };
  return rec(0, 0);
}

inline Shape shape_from_json(const json& j, const std::string& field) {
  if (!j.is_array() || j.empty()) throw ConfigError(field + ": expected a non-empty array of positive integers");
  Shape s;
  for (const auto& e : j) {
    if (!e.is_number_integer() || e.get<long long>() <= 0) {
      throw ConfigError(field + ": expected positive integers");
    }
    s.push_back(e.get<std::size_t>());
  }
  return s;
}

namespace detail {

inline const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(where + "." + key + ": missing field");
  return *it;
}

inline std::size_t require_positive(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number_integer() || v.get<long long>() <= 0) {
    throw ConfigError(where + "." + key + ": expected a positive integer");
  }
  return v.get<std::size_t>();
}

}  // namespace detail

inline LayerSpec layer_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const json& type = detail::require(j, "type", where);
  if (!type.is_string()) throw ConfigError(where + ".type: expected a string");
  const std::string kind = type.get<std::string>();
  auto tensor = [&](const char* key) { return tensor_from_json(detail::require(j, key, where), where + "." + key); };
  if (kind == "mha") {
    MhaLayer l;
    l.num_heads = detail::require_positive(j, "num_heads", where);
    l.key_dim = detail::require_positive(j, "key_dim", where);
    l.w_q = tensor("W_Q");
    l.w_k = tensor("W_K");
    l.w_v = tensor("W_V");
    l.b_q = tensor("B_Q");
    l.b_k = tensor("B_K");
    l.b_v = tensor("B_V");
    l.w_o = tensor("W_O");
    l.b_o = tensor("B_O");
    return l;
  }
  if (kind == "dense") {
    DenseLayer l;
    l.w = tensor("W");
    l.b = tensor("b");
    if (auto it = j.find("activation"); it != j.end()) {
      const std::string act = it->is_string() ? it->get<std::string>() : "";
      if (act == "relu") {
        l.activation = Activation::kRelu;
      } else if (act == "none" || act == "linear") {
        l.activation = Activation::kNone;
      } else {
        throw ConfigError(where + ".activation: expected \"relu\" or \"none\"");
      }
    }
    return l;
  }
  if (kind == "flatten") return FlattenLayer{};
  if (kind == "reshape") return ReshapeLayer{shape_from_json(detail::require(j, "target_shape", where), where + ".target_shape")};
  throw ConfigError(where + ".type: unknown layer type '" + kind + "'");
}

inline json layer_to_json(const LayerSpec& layer) {
  return std::visit(
      [](const auto& l) -> json {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, MhaLayer>) {
          return {{"type", "mha"},
                  {"num_heads", l.num_heads},
                  {"key_dim", l.key_dim},
                  {"W_Q", tensor_to_json(l.w_q)},
                  {"W_K", tensor_to_json(l.w_k)},
                  {"W_V", tensor_to_json(l.w_v)},
                  {"B_Q", tensor_to_json(l.b_q)},
                  {"B_K", tensor_to_json(l.b_k)},
                  {"B_V", tensor_to_json(l.b_v)},
                  {"W_O", tensor_to_json(l.w_o)},
                  {"B_O", tensor_to_json(l.b_o)}};
        } else if constexpr (std::is_same_v<L, DenseLayer>) {
          return {{"type", "dense"},
                  {"W", tensor_to_json(l.w)},
                  {"b", tensor_to_json(l.b)},
                  {"activation", l.activation == Activation::kRelu ? "relu" : "none"}};
        } else if constexpr (std::is_same_v<L, FlattenLayer>) {
          return {{"type", "flatten"}};
        } else {
          return {{"type", "reshape"}, {"target_shape", l.target}};
        }
      },
      layer);
}

inline ModelSpec model_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model: expected a JSON object");
  Shape input = shape_from_json(detail::require(j, "input_shape", "model"), "model.input_shape");
  const json& layers = detail::require(j, "layers", "model");
  if (!layers.is_array() || layers.empty()) throw ConfigError("model.layers: expected a non-empty array");
  std::vector<LayerSpec> specs;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    specs.push_back(layer_from_json(layers[i], "layers[" + std::to_string(i) + "]"));
  }
  ModelSpec model(std::move(input), std::move(specs));
  if (auto it = j.find("num_classes"); it != j.end()) {
    if (!it->is_number_integer() || it->get<std::size_t>() != model.num_classes()) {
      throw ConfigError("model.num_classes: does not match the output layer width " +
                        std::to_string(model.num_classes()));
    }
  }
  return model;
}

inline json model_to_json(const ModelSpec& m) {
  json layers = json::array();
  for (const auto& l : m.layers()) layers.push_back(layer_to_json(l));
  return {{"input_shape", m.input_shape()}, {"num_classes", m.num_classes()}, {"layers", layers}};
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

inline ModelSpec load_model(const std::string& path) {
  try {
    return model_from_json(read_json_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// A single input: nested array matching the model's input shape.
inline Tensor<double> input_from_json(const json& j, const Shape& expected, const std::string& field) {
  Tensor<double> t = tensor_from_json(j, field);
  if (shape_size(t.shape()) != shape_size(expected)) {
    throw ConfigError(field + ": shape " + shape_string(t.shape()) + " does not match model input " +
                      shape_string(expected));
  }
  return t.reshaped(expected);
}

inline Tensor<double> load_input(const std::string& path, const Shape& expected) {
  return input_from_json(read_json_file(path), expected, path);
}

}  // namespace shapcolic
