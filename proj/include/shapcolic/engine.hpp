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

// Influence-guided concolic search for label-flipping pixel perturbations.

#pragma once

#include <sys/resource.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <functional>
#include <optional>
#include <queue>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "shapcolic/concolic.hpp"
#include "shapcolic/errors.hpp"
#include "shapcolic/influence.hpp"
#include "shapcolic/model.hpp"
#include "shapcolic/semantics.hpp"
#include "shapcolic/solver.hpp"

namespace shapcolic {

enum class Policy : std::uint8_t { kFifo, kPq, kPqLayers, kPqCapped };

inline std::string_view policy_name(Policy p) {
  switch (p) {
    case Policy::kFifo: return "fifo";
    case Policy::kPq: return "pq";
    case Policy::kPqLayers: return "pq-layers";
    case Policy::kPqCapped: return "pq-capped";
  }
  return "?";
}

inline Policy parse_policy(std::string_view s) {
  for (Policy p : {Policy::kFifo, Policy::kPq, Policy::kPqLayers, Policy::kPqCapped}) {
    if (policy_name(p) == s) return p;
  }
  throw ConfigError("unknown strategy '" + std::string(s) + "'");
}

struct SchedulerConfig {
  Policy policy = Policy::kFifo;
  double build_cap_seconds = 30.0;  // used by kPqCapped only

  std::optional<double> cap() const {
    return policy == Policy::kPqCapped ? std::optional<double>(build_cap_seconds) : std::nullopt;
  }
};

// Tree of guard outcomes shared by all executions of one attack. Node 0 is
// the root; every other node holds the guard in the polarity that held.
class PathTree {
 public:
  static constexpr std::size_t kRoot = 0;

  PathTree() : nodes_(1) {}

  std::size_t size() const { return nodes_.size(); }

  std::optional<std::size_t> find_child(std::size_t node, const Comparison& held) const {
    const auto& kids = nodes_.at(node).children;
    if (auto it = kids.find(held); it != kids.end()) return it->second;
    return std::nullopt;
  }

  std::size_t child(std::size_t node, const Comparison& held) {
    if (auto c = find_child(node, held)) return *c;
    Node n;
    n.parent = node;
    n.depth = nodes_[node].depth + 1;
    n.held = held;
    n.cumulative_size = nodes_[node].cumulative_size + node_count(std::span<const SymExpr>(std::array{held.lhs, held.rhs}));
    nodes_.push_back(std::move(n));
    const std::size_t id = nodes_.size() - 1;
    nodes_[node].children.emplace(held, id);
    return id;
  }

  // Records `predicate` as enqueued below `node`; false if it already was.
  bool mark_enqueued(std::size_t node, const Comparison& predicate) {
    return nodes_.at(node).enqueued.insert(predicate).second;
  }

  // Guards from the root down to `node`.
  std::vector<Comparison> path(std::size_t node) const {
    std::vector<Comparison> out(nodes_.at(node).depth);
    for (std::size_t n = node; n != kRoot; n = nodes_[n].parent) out[nodes_[n].depth - 1] = nodes_[n].held;
    return out;
  }

  std::size_t depth(std::size_t node) const { return nodes_.at(node).depth; }

  // Sum of per-guard expression sizes along the path to `node`.
  std::size_t path_size(std::size_t node) const { return nodes_.at(node).cumulative_size; }

 private:
  using ComparisonSet = std::unordered_set<Comparison, ComparisonHash, ComparisonEqual>;

  struct Node {
    std::size_t parent = kRoot;
    std::size_t depth = 0;
    std::size_t cumulative_size = 0;
    Comparison held;
    std::unordered_map<Comparison, std::size_t, ComparisonHash, ComparisonEqual> children;
    ComparisonSet enqueued;
  };

  std::vector<Node> nodes_;
};

struct WorkItem {
  std::size_t prefix_node = PathTree::kRoot;
  Comparison predicate;
  double influence = 0.0;
  std::size_t layer_index = 0;
  std::size_t node_count = 0;
  std::size_t ordinal = 0;
};

// Path-prefix guards conjoined with the bypassed predicate.
inline std::vector<Comparison> constraint_of(const PathTree& tree, const WorkItem& item) {
  auto c = tree.path(item.prefix_node);
  c.push_back(item.predicate);
  return c;
}

namespace detail {

struct PopsAfter {
  Policy policy;
  // True when `a` should be popped after `b`.
  bool operator()(const WorkItem& a, const WorkItem& b) const {
    switch (policy) {
      case Policy::kFifo: return a.ordinal > b.ordinal;
      case Policy::kPqLayers:
        if (a.layer_index != b.layer_index) return a.layer_index > b.layer_index;
        [[fallthrough]];
      case Policy::kPq:
      case Policy::kPqCapped:
        if (a.influence != b.influence) return a.influence < b.influence;
        return a.ordinal > b.ordinal;
    }
    return false;
  }
};

}  // namespace detail

class WorkQueue {
 public:
  explicit WorkQueue(Policy policy) : heap_(detail::PopsAfter{policy}) {}

  void push(WorkItem item) { heap_.push(std::move(item)); }
  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }

  WorkItem pop() {
    if (heap_.empty()) throw IntegrityError("pop from an empty work queue");
    WorkItem top = heap_.top();
    heap_.pop();
    return top;
  }

 private:
  std::priority_queue<WorkItem, std::vector<WorkItem>, detail::PopsAfter> heap_;
};

inline WorkItem schedule_pop(WorkQueue& queue) { return queue.pop(); }

// Turns the events of one execution into new work items, extending the tree
// with the executed path. `next_ordinal` is advanced per emitted item.
inline std::vector<WorkItem> harvest(const std::vector<BranchEvent>& events, const InfluenceMap& map, PathTree& tree,
                                     std::size_t& next_ordinal) {
  std::vector<WorkItem> items;
  std::size_t node = PathTree::kRoot;
  for (const auto& ev : events) {
    const Comparison& pred = ev.bypassed_predicate;
    if (!tree.find_child(node, pred) && tree.mark_enqueued(node, pred)) {
      WorkItem item;
      item.prefix_node = node;
      item.predicate = pred;
      item.influence = branch_influence(ev, map);
      item.layer_index = ev.layer_index;
      item.node_count = tree.path_size(node) + node_count(std::span<const SymExpr>(std::array{pred.lhs, pred.rhs}));
      item.ordinal = next_ordinal++;
      items.push_back(std::move(item));
    }
    node = tree.child(node, ev.held());
  }
  return items;
}

enum class BuildStatus : std::uint8_t { kReady, kSkipped, kUnsat };

struct BuiltConstraint {
  BuildStatus status = BuildStatus::kReady;
  SolverRequest request;  // normalized conjuncts; constant-true ones dropped
  std::string script;     // SMT-LIB2 text of `request`
  double build_seconds = 0.0;
};

// Materializes and lowers a work item. With a cap, building stops and the
// item is skipped once `cap_seconds` elapse.
inline BuiltConstraint build_constraint(const PathTree& tree, const WorkItem& item,
                                        const std::vector<VariableBounds>& variables, std::optional<double> cap_seconds) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  std::optional<Clock::time_point> deadline;
  if (cap_seconds) {
    deadline = start + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(*cap_seconds));
  }
  BuiltConstraint out;
  out.request.variables = variables;
  auto finish = [&](BuildStatus s) {
    out.status = s;
    out.build_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return std::move(out);
  };
  for (const auto& c : constraint_of(tree, item)) {
    Comparison n = normalize(c);
    if (n.lhs.is_constant()) {
      if (holds(n.rel, n.lhs.value(), 0.0)) continue;
      out.request.assertion.clear();
      return finish(BuildStatus::kUnsat);
    }
    out.request.assertion.push_back(std::move(n));
  }
  if (deadline && Clock::now() >= *deadline) return finish(BuildStatus::kSkipped);
  auto text = emit_smtlib(out.request, deadline);
  if (!text || (deadline && Clock::now() >= *deadline)) return finish(BuildStatus::kSkipped);
  out.script = std::move(*text);
  return finish(BuildStatus::kReady);
}

enum class Outcome : std::uint8_t { kSuccess, kExhausted, kTimeout };

inline std::string_view outcome_name(Outcome o) {
  switch (o) {
    case Outcome::kSuccess: return "success";
    case Outcome::kExhausted: return "exhausted";
    case Outcome::kTimeout: return "timeout";
  }
  return "?";
}

inline Outcome parse_outcome(std::string_view s) {
  for (Outcome o : {Outcome::kSuccess, Outcome::kExhausted, Outcome::kTimeout}) {
    if (outcome_name(o) == s) return o;
  }
  throw ConfigError("unknown outcome '" + std::string(s) + "'");
}

struct RunStats {
  std::size_t iterations = 0;
  std::size_t sat = 0;
  std::size_t unsat = 0;
  std::size_t unknown = 0;  // unknown, timeout and solver errors
  std::size_t skipped = 0;
  std::size_t generated_constraints = 0;
  std::size_t solved_constraints = 0;
  double wall_seconds = 0.0;
  double cpu_seconds = 0.0;
  Outcome outcome = Outcome::kExhausted;
};

struct AttackResult {
  std::string seed_path;
  std::vector<std::size_t> pixels;
  double lo = 0.0;
  double hi = 1.0;
  std::optional<std::vector<double>> adversarial_values;
  std::size_t original_label = 0;
  std::optional<std::size_t> flipped_label;
  RunStats stats;
};

struct AttackConfig {
  std::vector<std::size_t> pixels;
  double lo = 0.0;
  double hi = 1.0;
  SchedulerConfig scheduler;
  std::optional<double> wall_budget_seconds;
  double solver_timeout_seconds = 60.0;
  std::optional<std::size_t> max_iterations;
  bool audit = false;
  std::function<void(const WorkItem&)> on_pop;
  std::function<void(const Tensor<double>&, const std::vector<BranchEvent>&)> on_execute;
};

inline std::string pixel_variable(std::size_t pixel) { return "x_" + std::to_string(pixel); }

namespace detail {

inline double process_cpu_seconds() {
  auto seconds = [](const rusage& u) {
    return static_cast<double>(u.ru_utime.tv_sec + u.ru_stime.tv_sec) +
           static_cast<double>(u.ru_utime.tv_usec + u.ru_stime.tv_usec) * 1e-6;
  };
  rusage self{};
  rusage children{};
  getrusage(RUSAGE_SELF, &self);
  getrusage(RUSAGE_CHILDREN, &children);
  return seconds(self) + seconds(children);
}

inline void check_attack_config(const ModelSpec& model, const Tensor<double>& seed, const AttackConfig& cfg) {
  if (cfg.pixels.empty()) throw ConfigError("at least one pixel must be perturbed");
  if (!std::isfinite(cfg.lo) || !std::isfinite(cfg.hi) || cfg.lo > cfg.hi) throw ConfigError("invalid pixel domain");
  const std::size_t n = shape_size(model.input_shape());
  if (seed.size() != n) throw ConfigError("seed does not match the model input");
  std::vector<std::size_t> sorted = cfg.pixels;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ConfigError("duplicate pixel index");
  if (sorted.back() >= n) throw ConfigError("pixel index out of range");
  if (cfg.wall_budget_seconds && !(*cfg.wall_budget_seconds >= 0)) throw ConfigError("invalid wall budget");
  if (!(cfg.solver_timeout_seconds > 0)) throw ConfigError("solver timeout must be positive");
}

}  // namespace detail

// Concolic execution at `x` with the chosen pixels symbolic.
inline std::pair<std::size_t, std::vector<BranchEvent>> concolic_run(const ModelSpec& model, const Tensor<double>& x,
                                                                      const std::vector<std::size_t>& pixels,
                                                                      bool audit = false) {
  ExecutionContext ctx;
  ctx.set_audit(audit);
  Tensor<ConcolicScalar> in = map_tensor<ConcolicScalar>(x, [](double v) { return ConcolicScalar(v); });
  for (std::size_t p : pixels) in[p] = ctx.symvar(pixel_variable(p), x[p]);
  const auto r = forward(model, std::move(in), ctx);
  return {r.label, ctx.take_events()};
}

// Searches for values of the chosen pixels that change the predicted label.
inline AttackResult run_attack(const ModelSpec& model, const InfluenceMap& map, const Tensor<double>& seed,
                               const AttackConfig& cfg, const SolverBackend& backend) {
  using Clock = std::chrono::steady_clock;
  detail::check_attack_config(model, seed, cfg);
  const auto start = Clock::now();
  const double cpu_start = detail::process_cpu_seconds();
  auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };
  auto over_budget = [&] { return cfg.wall_budget_seconds && elapsed() >= *cfg.wall_budget_seconds; };

  AttackResult result;
  result.pixels = cfg.pixels;
  result.lo = cfg.lo;
  result.hi = cfg.hi;
  result.original_label = predict(model, seed);
  RunStats& st = result.stats;

  std::vector<VariableBounds> vars;
  for (std::size_t p : cfg.pixels) vars.push_back({pixel_variable(p), cfg.lo, cfg.hi});

  PathTree tree;
  WorkQueue queue(cfg.scheduler.policy);
  std::size_t next_ordinal = 0;
  Tensor<double> x = seed;

  auto finish = [&](Outcome o) {
    st.outcome = o;
    st.wall_seconds = elapsed();
    st.cpu_seconds = detail::process_cpu_seconds() - cpu_start;
    return result;
  };

  for (;;) {
    if (cfg.max_iterations && st.iterations >= *cfg.max_iterations) return finish(Outcome::kTimeout);
    ++st.iterations;
    auto [label, events] = concolic_run(model, x, cfg.pixels, cfg.audit);
    if (cfg.on_execute) cfg.on_execute(x, events);
    const bool moved = std::any_of(cfg.pixels.begin(), cfg.pixels.end(), [&](std::size_t p) { return x[p] != seed[p]; });
    if (moved && label != result.original_label) {
      const std::size_t check = predict(model, x);
      if (check != result.original_label) {
        std::vector<double> values;
        for (std::size_t p : cfg.pixels) values.push_back(x[p]);
        result.adversarial_values = std::move(values);
        result.flipped_label = check;
        return finish(Outcome::kSuccess);
      }
    }
    for (auto& item : harvest(events, map, tree, next_ordinal)) {
      ++st.generated_constraints;
      queue.push(std::move(item));
    }

    bool adopted = false;
    while (!adopted) {
      if (queue.empty()) return finish(Outcome::kExhausted);
      if (over_budget()) return finish(Outcome::kTimeout);
      WorkItem item = schedule_pop(queue);
      if (cfg.on_pop) cfg.on_pop(item);
      BuiltConstraint built = build_constraint(tree, item, vars, cfg.scheduler.cap());
      if (built.status == BuildStatus::kSkipped) {
        ++st.skipped;
        continue;
      }
      if (built.status == BuildStatus::kUnsat) {
        ++st.solved_constraints;
        ++st.unsat;
        continue;
      }
      built.request.timeout_seconds = cfg.solver_timeout_seconds;
      if (cfg.wall_budget_seconds) {
        const double remaining = *cfg.wall_budget_seconds - elapsed();
        if (remaining <= 0) return finish(Outcome::kTimeout);
        built.request.timeout_seconds = std::min(built.request.timeout_seconds, remaining);
      }
      ++st.solved_constraints;
      const SolverVerdict v = check(backend, built.request, &built.script);
      switch (v.status) {
        case SolverStatus::kSat:
          ++st.sat;
          for (std::size_t p : cfg.pixels) x[p] = v.assignment.at(pixel_variable(p));
          adopted = true;
          break;
        case SolverStatus::kUnsat: ++st.unsat; break;
        default: ++st.unknown; break;
      }
    }
  }
}

inline json attack_result_to_json(const AttackResult& r) {
  json j;
  j["seed_path"] = r.seed_path;
  j["pixels"] = r.pixels;
  j["bounds"] = {r.lo, r.hi};
  j["adversarial_values"] = r.adversarial_values ? json(*r.adversarial_values) : json(nullptr);
  j["original_label"] = r.original_label;
  j["flipped_label"] = r.flipped_label ? json(*r.flipped_label) : json(nullptr);
  j["iterations"] = r.stats.iterations;
  j["sat"] = r.stats.sat;
  j["unsat"] = r.stats.unsat;
  j["unknown"] = r.stats.unknown;
  j["skipped"] = r.stats.skipped;
  j["gen_constraints"] = r.stats.generated_constraints;
  j["sol_constraints"] = r.stats.solved_constraints;
  j["wall_s"] = r.stats.wall_seconds;
  j["cpu_s"] = r.stats.cpu_seconds;
  j["outcome"] = outcome_name(r.stats.outcome);
  return j;
}

inline AttackResult attack_result_from_json(const json& j) {
  try {
    AttackResult r;
    r.seed_path = j.at("seed_path").get<std::string>();
    r.pixels = j.at("pixels").get<std::vector<std::size_t>>();
    const auto bounds = j.at("bounds").get<std::vector<double>>();
    if (bounds.size() != 2) throw ConfigError("bounds must hold two numbers");
    r.lo = bounds[0];
    r.hi = bounds[1];
    if (!j.at("adversarial_values").is_null()) r.adversarial_values = j["adversarial_values"].get<std::vector<double>>();
    r.original_label = j.at("original_label").get<std::size_t>();
    if (!j.at("flipped_label").is_null()) r.flipped_label = j["flipped_label"].get<std::size_t>();
    r.stats.iterations = j.at("iterations").get<std::size_t>();
    r.stats.sat = j.at("sat").get<std::size_t>();
    r.stats.unsat = j.at("unsat").get<std::size_t>();
    r.stats.unknown = j.value("unknown", std::size_t{0});
    r.stats.skipped = j.value("skipped", std::size_t{0});
    r.stats.generated_constraints = j.at("gen_constraints").get<std::size_t>();
    r.stats.solved_constraints = j.at("sol_constraints").get<std::size_t>();
    r.stats.wall_seconds = j.at("wall_s").get<double>();
    r.stats.cpu_seconds = j.at("cpu_s").get<double>();
    r.stats.outcome = parse_outcome(j.at("outcome").get<std::string>());
    if (r.adversarial_values && r.adversarial_values->size() != r.pixels.size()) {
      throw ConfigError("adversarial_values and pixels differ in length");
    }
    return r;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed attack result: ") + e.what());
  }
}

// The seed with the adversarial pixel values written in.
inline Tensor<double> adversarial_input(const Tensor<double>& seed, const AttackResult& r) {
  if (!r.adversarial_values) throw ConfigError("attack result has no adversarial input");
  Tensor<double> x = seed;
  for (std::size_t i = 0; i < r.pixels.size(); ++i) {
    if (r.pixels[i] >= x.size()) throw ConfigError("pixel index out of range");
    x[r.pixels[i]] = (*r.adversarial_values)[i];
  }
  return x;
}

}  // namespace shapcolic
