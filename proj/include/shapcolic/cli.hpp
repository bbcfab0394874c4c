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

// The `shapcolic` command line: influence, attack, acdp and verify.
//
// Exit codes: 0 success, 1 verification failure, 2 input error, 3 solver
// configuration error, 4 nothing to analyse.

#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "shapcolic/acdp.hpp"
#include "shapcolic/engine.hpp"
#include "shapcolic/errors.hpp"
#include "shapcolic/influence.hpp"
#include "shapcolic/model.hpp"
#include "shapcolic/solver.hpp"

#ifndef SHAPCOLIC_DEFAULT_SOLVER_CMD
#define SHAPCOLIC_DEFAULT_SOLVER_CMD "z3 -in -smt2"
#endif

namespace shapcolic::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kVerifyFailed = 1,
  kInputError = 2,
  kSolverConfigError = 3,
  kEmptyInput = 4,
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

struct RunConfig {
  std::string model;
  std::vector<std::string> seeds;
  std::string seed_dir;
  std::string background;
  std::string influence;
  std::size_t pixels = 1;
  std::vector<std::size_t> pixel_indices;
  double lo = 0.0;
  double hi = 1.0;
  std::string strategy = "fifo";
  double build_cap_s = 30.0;
  double wall_budget_s = 3600.0;  // 0 disables the budget
  std::string solver_cmd = SHAPCOLIC_DEFAULT_SOLVER_CMD;
  double solver_timeout_s = 60.0;
  std::size_t max_iterations = 0;  // 0 means unlimited
  std::uint64_t random_seed = 0;
  std::size_t permutations = 128;
  std::string out = "out";
  double alpha = 0.2;
  std::vector<double> betas;
  std::vector<std::string> reports;
  std::string reports_dir;
  std::size_t jobs = 1;
  bool log_pops = false;
};

inline std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  char buf[65536];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

// Writes manifest.json listing `files` (relative to `dir`) with hashes.
inline void write_manifest(const fs::path& dir, const std::string& command, std::vector<std::string> files,
                           const std::vector<std::string>& seeds, const json& config) {
  std::sort(files.begin(), files.end());
  json entries = json::array();
  for (const auto& f : files) entries.push_back({{"path", f}, {"sha256", sha256_file(dir / f)}});
  json m;
  m["command"] = command;
  m["config"] = config;
  m["seeds"] = seeds;
  m["files"] = std::move(entries);
  write_json_file((dir / "manifest.json").string(), m);
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

inline fs::path prepare_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw ConfigError("cannot create output directory '" + out + "'");
  return fs::path(out);
}

// Seed files from --seed and --seed-dir (*.json, sorted by name).
inline std::vector<std::string> collect_seeds(const RunConfig& cfg) {
  std::vector<std::string> seeds = cfg.seeds;
  if (!cfg.seed_dir.empty()) {
    if (!fs::is_directory(cfg.seed_dir)) throw ConfigError("seed directory '" + cfg.seed_dir + "' does not exist");
    std::vector<std::string> found;
    for (const auto& e : fs::directory_iterator(cfg.seed_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".json") found.push_back(e.path().string());
    }
    std::sort(found.begin(), found.end());
    seeds.insert(seeds.end(), found.begin(), found.end());
  }
  if (seeds.empty()) throw ConfigError("no seed inputs given (use --seed or --seed-dir)");
  return seeds;
}

// Unique file stems for the seeds, in order.
inline std::vector<std::string> seed_stems(const std::vector<std::string>& seeds) {
  std::vector<std::string> stems;
  std::map<std::string, int> used;
  for (const auto& s : seeds) {
    std::string stem = fs::path(s).stem().string();
    if (int n = used[stem]++; n > 0) stem += "_" + std::to_string(n);
    stems.push_back(stem);
  }
  return stems;
}

inline BackgroundSet load_background(const RunConfig& cfg, const ModelSpec& model) {
  if (cfg.background.empty()) throw ConfigError("--background is required");
  return background_from_json(read_json_file(cfg.background), model.input_shape(), cfg.random_seed, cfg.background);
}

inline ShapleyOptions shapley_options(const RunConfig& cfg) {
  if (cfg.permutations == 0) throw ConfigError("--permutations must be positive");
  ShapleyOptions o;
  o.permutations = cfg.permutations;
  return o;
}

inline json config_json(const RunConfig& cfg) {
  return {{"model", cfg.model},         {"background", cfg.background},   {"influence", cfg.influence},
          {"pixels", cfg.pixels},       {"pixel_indices", cfg.pixel_indices},
          {"lo", cfg.lo},               {"hi", cfg.hi},                   {"strategy", cfg.strategy},
          {"build_cap_s", cfg.build_cap_s}, {"wall_budget_s", cfg.wall_budget_s},
          {"solver_cmd", cfg.solver_cmd},   {"solver_timeout_s", cfg.solver_timeout_s},
          {"max_iterations", cfg.max_iterations}, {"random_seed", cfg.random_seed},
          {"permutations", cfg.permutations},     {"alpha", cfg.alpha}, {"betas", cfg.betas}};
}

// ---------------------------------------------------------------------------
// influence

inline int cmd_influence(const RunConfig& cfg, std::ostream& out) {
  const ModelSpec model = load_model(cfg.model);
  const BackgroundSet bg = load_background(cfg, model);
  const auto seeds = collect_seeds(cfg);
  const auto stems = seed_stems(seeds);
  const auto dir = prepare_out_dir(cfg.out);
  std::vector<std::string> files;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    const Tensor<double> x = load_input(seeds[s], model.input_shape());
    const InfluenceMap map = build_influence_map(model, bg, x, shapley_options(cfg));
    const std::string name = stems[s] + ".influence.json";
    write_json_file((dir / name).string(), map.to_json());
    files.push_back(name);
    out << seeds[s] << " -> " << (dir / name).string() << '\n';
    for (std::size_t l : map.populated_layers()) {
      const auto v = map.layer(l);
      const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
      double mean = 0.0;
      for (double d : v) mean += d;
      mean /= static_cast<double>(v.size());
      out << "  activation " << l << " " << shape_string(map.shape(l)) << ": min " << format_decimal(*mn) << " max "
          << format_decimal(*mx) << " mean " << format_decimal(mean) << '\n';
    }
  }
  write_manifest(dir, "influence", files, seeds, config_json(cfg));
  return kOk;
}

// ---------------------------------------------------------------------------
// attack

// Verifies that the external solver answers a trivial query.
inline void probe_solver(const SolverBackend& backend) {
  if (!std::holds_alternative<ExternalSolver>(backend)) return;
  SolverRequest req;
  req.variables.push_back({"p", 0.0, 1.0});
  req.assertion.push_back({Relation::kGt, SymExpr::variable("p"), SymExpr::constant(0.5)});
  req.timeout_seconds = 30.0;
  const SolverVerdict v = check(backend, req);
  if (v.status != SolverStatus::kSat) {
    throw SolverError("solver did not answer a trivial query (status " + std::string(status_name(v.status)) +
                      "): " + v.transcript.substr(0, 400));
  }
}

// The `count` input neurons with the highest influence; ties by index.
inline std::vector<std::size_t> top_pixels(const InfluenceMap& map, std::size_t count) {
  const auto v = map.layer(0);
  if (count == 0 || count > v.size()) throw ConfigError("--pixels must lie in [1, " + std::to_string(v.size()) + "]");
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct SeedOutcome {
  std::optional<AttackResult> result;
  std::string error;
  std::string pop_log;
};

inline SeedOutcome attack_one(const RunConfig& cfg, const ModelSpec& model, const std::optional<BackgroundSet>& bg,
                              const std::optional<InfluenceMap>& given_map, const SolverBackend& backend,
                              const std::string& seed_path) {
  SeedOutcome o;
  try {
    const Tensor<double> x = load_input(seed_path, model.input_shape());
    const InfluenceMap map = given_map ? *given_map : build_influence_map(model, *bg, x, shapley_options(cfg));
    AttackConfig ac;
    ac.pixels = cfg.pixel_indices.empty() ? top_pixels(map, cfg.pixels) : cfg.pixel_indices;
    ac.lo = cfg.lo;
    ac.hi = cfg.hi;
    ac.scheduler.policy = parse_policy(cfg.strategy);
    ac.scheduler.build_cap_seconds = cfg.build_cap_s;
    if (cfg.wall_budget_s > 0) ac.wall_budget_seconds = cfg.wall_budget_s;
    ac.solver_timeout_seconds = cfg.solver_timeout_s;
    if (cfg.max_iterations > 0) ac.max_iterations = cfg.max_iterations;
    if (cfg.log_pops) {
      o.pop_log = "ordinal,influence,layer,node_count\n";
      ac.on_pop = [&o](const WorkItem& w) {
        o.pop_log += std::to_string(w.ordinal) + "," + format_decimal(w.influence) + "," +
                     std::to_string(w.layer_index) + "," + std::to_string(w.node_count) + "\n";
      };
    }
    AttackResult r = run_attack(model, map, x, ac, backend);
    r.seed_path = seed_path;
    o.result = std::move(r);
  } catch (const SolverError&) {
    throw;
  } catch (const Error& e) {
    o.error = e.what();
  }
  return o;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

inline int cmd_attack(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const ModelSpec model = load_model(cfg.model);
  const auto seeds = collect_seeds(cfg);
  const auto stems = seed_stems(seeds);
  parse_policy(cfg.strategy);
  if (!(cfg.lo <= cfg.hi)) throw ConfigError("--lo must not exceed --hi");
  if (cfg.wall_budget_s < 0 || cfg.build_cap_s < 0) throw ConfigError("budgets must not be negative");
  if (!(cfg.solver_timeout_s > 0)) throw ConfigError("--solver-timeout-s must be positive");
  if (cfg.jobs == 0) throw ConfigError("--jobs must be positive");
  std::optional<InfluenceMap> given_map;
  std::optional<BackgroundSet> bg;
  if (!cfg.influence.empty()) {
    given_map = NeuronMap::from_json(read_json_file(cfg.influence), model);
    if (given_map->populated_layers().empty() || given_map->populated_layers().front() != 0) {
      throw ConfigError(cfg.influence + ": influence map lacks input neurons");
    }
  } else {
    bg = load_background(cfg, model);
  }
  SolverBackend backend;
  try {
    backend = parse_backend(cfg.solver_cmd);
  } catch (const ConfigError& e) {
    throw SolverError(e.what());
  }
  probe_solver(backend);
  const auto dir = prepare_out_dir(cfg.out);

  std::vector<SeedOutcome> outcomes(seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mu;
  std::exception_ptr fatal;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < seeds.size();) {
      try {
        outcomes[i] = attack_one(cfg, model, bg, given_map, backend, seeds[i]);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!fatal) fatal = std::current_exception();
        next = seeds.size();
      }
    }
  };
  const std::size_t workers = std::min(cfg.jobs, seeds.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  std::vector<std::string> files;
  std::string csv =
      "seed,outcome,original_label,flipped_label,iterations,sat,unsat,unknown,skipped,gen_constraints,"
      "sol_constraints,wall_s,cpu_s\n";
  std::size_t successes = 0;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    const auto& o = outcomes[i];
    if (!o.result) {
      err << seeds[i] << ": " << o.error << '\n';
      csv += csv_field(seeds[i]) + ",error,,,,,,,,,,,\n";
      continue;
    }
    const AttackResult& r = *o.result;
    const std::string name = stems[i] + ".attack.json";
    write_json_file((dir / name).string(), attack_result_to_json(r));
    files.push_back(name);
    if (cfg.log_pops) {
      write_text(dir / (stems[i] + ".pops.csv"), o.pop_log);
      files.push_back(stems[i] + ".pops.csv");
    }
    const RunStats& s = r.stats;
    csv += csv_field(seeds[i]) + "," + std::string(outcome_name(s.outcome)) + "," + std::to_string(r.original_label) +
           "," + (r.flipped_label ? std::to_string(*r.flipped_label) : std::string()) + "," +
           std::to_string(s.iterations) + "," + std::to_string(s.sat) + "," + std::to_string(s.unsat) + "," +
           std::to_string(s.unknown) + "," + std::to_string(s.skipped) + "," +
           std::to_string(s.generated_constraints) + "," + std::to_string(s.solved_constraints) + "," +
           format_decimal(s.wall_seconds) + "," + format_decimal(s.cpu_seconds) + "\n";
    if (s.outcome == Outcome::kSuccess) ++successes;
    out << seeds[i] << ": " << outcome_name(s.outcome) << " (label " << r.original_label;
    if (r.flipped_label) out << " -> " << *r.flipped_label;
    out << ", iterations " << s.iterations << ", sat " << s.sat << ", unsat " << s.unsat << ")\n";
  }
  write_text(dir / "attacks.csv", csv);
  files.push_back("attacks.csv");
  write_manifest(dir, "attack", files, seeds, config_json(cfg));
  out << successes << "/" << seeds.size() << " seeds flipped\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// acdp and verify

inline std::vector<std::string> collect_reports(const RunConfig& cfg) {
  std::vector<std::string> reports = cfg.reports;
  if (!cfg.reports_dir.empty()) {
    if (!fs::is_directory(cfg.reports_dir)) throw ConfigError("report directory '" + cfg.reports_dir + "' does not exist");
    std::vector<std::string> found;
    for (const auto& e : fs::directory_iterator(cfg.reports_dir)) {
      const std::string name = e.path().filename().string();
      if (e.is_regular_file() && name.size() > 12 && name.ends_with(".attack.json")) found.push_back(e.path().string());
    }
    std::sort(found.begin(), found.end());
    reports.insert(reports.end(), found.begin(), found.end());
  }
  if (reports.empty()) throw ConfigError("no attack reports given (use --report or --reports)");
  return reports;
}

inline AttackResult load_report(const std::string& path) {
  try {
    return attack_result_from_json(read_json_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline std::string beta_tag(double beta) {
  std::string s = format_fixed_decimal(beta);
  std::replace(s.begin(), s.end(), '.', '_');
  return s;
}

inline int cmd_acdp(const RunConfig& cfg, std::ostream& out) {
  const ModelSpec model = load_model(cfg.model);
  const BackgroundSet bg = load_background(cfg, model);
  if (!(cfg.alpha > 0 && cfg.alpha <= 1)) throw ConfigError("--alpha must lie in (0, 1]");
  std::vector<double> betas = cfg.betas.empty() ? std::vector<double>{0.5} : cfg.betas;
  for (double b : betas) {
    if (!(b >= 0 && b < 1)) throw ConfigError("--beta must lie in [0, 1)");
  }
  const auto reports = collect_reports(cfg);
  std::vector<RelevanceMatrix> suite;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::string> used;
  for (const auto& path : reports) {
    const AttackResult r = load_report(path);
    if (r.stats.outcome != Outcome::kSuccess || !r.adversarial_values || !r.flipped_label) continue;
    const Tensor<double> seed = load_input(r.seed_path, model.input_shape());
    const Tensor<double> adv = adversarial_input(seed, r);
    suite.push_back(relevance(model, bg, adv, shapley_options(cfg)));
    pairs.emplace_back(r.original_label, *r.flipped_label);
    used.push_back(r.seed_path);
  }
  if (suite.empty()) throw EmptyInputError("no successful attack among " + std::to_string(reports.size()) + " reports");
  const auto dir = prepare_out_dir(cfg.out);
  std::vector<std::string> files;
  const std::string weights_name = "acdp_weights.csv";
  for (double beta : betas) {
    const AcdpReport rep = abstract_path(suite, cfg.alpha, beta, pairs);
    if (files.empty()) {
      write_text(dir / weights_name, weights_csv(rep));
      files.push_back(weights_name);
    }
    const std::string name = "acdp_beta_" + beta_tag(beta) + ".json";
    write_json_file((dir / name).string(), acdp_report_to_json(rep, weights_name));
    files.push_back(name);
    out << "beta " << format_decimal(beta) << ": " << rep.members.size() << " members over " << rep.suite_size
        << " inputs";
    if (rep.entropy_bits) out << ", pair entropy " << format_decimal(*rep.entropy_bits) << " bits";
    out << '\n';
  }
  write_manifest(dir, "acdp", files, used, config_json(cfg));
  return kOk;
}

inline int cmd_verify(const RunConfig& cfg, std::ostream& out) {
  const ModelSpec model = load_model(cfg.model);
  const auto reports = collect_reports(cfg);
  std::size_t claims = 0;
  std::size_t failures = 0;
  for (const auto& path : reports) {
    const AttackResult r = load_report(path);
    if (!r.adversarial_values) {
      out << "SKIP " << path << ": no adversarial input claimed\n";
      continue;
    }
    ++claims;
    const Tensor<double> seed = load_input(r.seed_path, model.input_shape());
    std::string why;
    for (std::size_t i = 0; i < r.pixels.size() && why.empty(); ++i) {
      const double v = (*r.adversarial_values)[i];
      if (!(v >= r.lo && v <= r.hi)) why = "pixel " + std::to_string(r.pixels[i]) + " value out of bounds";
    }
    if (why.empty()) {
      const std::size_t original = predict(model, seed);
      const std::size_t label = predict(model, adversarial_input(seed, r));
      if (original != r.original_label) {
        why = "seed predicts " + std::to_string(original) + ", report says " + std::to_string(r.original_label);
      } else if (label == original) {
        why = "label unchanged (" + std::to_string(label) + ")";
      } else if (r.flipped_label && *r.flipped_label != label) {
        why = "flipped label " + std::to_string(label) + " differs from reported " + std::to_string(*r.flipped_label);
      }
    }
    if (why.empty()) {
      out << "PASS " << path << '\n';
    } else {
      ++failures;
      out << "FAIL " << path << ": " << why << '\n';
    }
  }
  out << (claims - failures) << "/" << claims << " adversarial inputs verified\n";
  return failures == 0 ? kOk : kVerifyFailed;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  RunConfig cfg;
  CLI::App app("Influence-guided concolic testing of attention classifiers", "shapcolic");
  app.require_subcommand(1);

  auto add_model = [&](CLI::App* sub) { sub->add_option("--model", cfg.model, "Model JSON file")->required(); };
  auto add_background = [&](CLI::App* sub) {
    sub->add_option("--background", cfg.background, "Background inputs JSON file");
    sub->add_option("--random-seed", cfg.random_seed, "Seed for permutation sampling");
    sub->add_option("--permutations", cfg.permutations, "Permutations per sampled Shapley estimate");
  };
  auto add_seeds = [&](CLI::App* sub) {
    sub->add_option("--seed", cfg.seeds, "Seed input JSON file (repeatable)");
    sub->add_option("--seed-dir", cfg.seed_dir, "Directory of seed input JSON files");
  };
  auto add_out = [&](CLI::App* sub) { sub->add_option("--out", cfg.out, "Output directory")->capture_default_str(); };
  auto add_reports = [&](CLI::App* sub) {
    sub->add_option("--report", cfg.reports, "Attack result JSON file (repeatable)");
    sub->add_option("--reports", cfg.reports_dir, "Directory of *.attack.json files");
  };

  auto* influence = app.add_subcommand("influence", "Precompute influence maps");
  add_model(influence);
  add_background(influence);
  add_seeds(influence);
  add_out(influence);

  auto* attack = app.add_subcommand("attack", "Search label-flipping pixel perturbations");
  add_model(attack);
  add_background(attack);
  add_seeds(attack);
  add_out(attack);
  attack->add_option("--influence", cfg.influence, "Precomputed influence map JSON");
  attack->add_option("--pixels", cfg.pixels, "Number of most influential pixels to perturb")->capture_default_str();
  attack->add_option("--pixel-indices", cfg.pixel_indices, "Explicit flat pixel indices")->delimiter(',');
  attack->add_option("--lo", cfg.lo, "Lower pixel bound")->capture_default_str();
  attack->add_option("--hi", cfg.hi, "Upper pixel bound")->capture_default_str();
  attack->add_option("--strategy", cfg.strategy, "fifo | pq | pq-layers | pq-capped")->capture_default_str();
  attack->add_option("--build-cap-s", cfg.build_cap_s, "Constraint build cap for pq-capped")->capture_default_str();
  attack->add_option("--wall-budget-s", cfg.wall_budget_s, "Per-seed wall budget, 0 for none")->capture_default_str();
  attack->add_option("--solver-cmd", cfg.solver_cmd, "Solver command line, or grid[:N]")->capture_default_str();
  attack->add_option("--solver-timeout-s", cfg.solver_timeout_s, "Per-call solver timeout")->capture_default_str();
  attack->add_option("--max-iterations", cfg.max_iterations, "Forward-run cap per seed, 0 for none");
  attack->add_option("--jobs", cfg.jobs, "Seeds attacked in parallel")->capture_default_str();
  attack->add_flag("--log-pops", cfg.log_pops, "Write the work-item pop order per seed");

  auto* acdp = app.add_subcommand("acdp", "Aggregate critical decision paths of successful attacks");
  add_model(acdp);
  add_background(acdp);
  add_reports(acdp);
  add_out(acdp);
  acdp->add_option("--alpha", cfg.alpha, "Per-layer fraction of critical neurons")->capture_default_str();
  acdp->add_option("--beta", cfg.betas, "Weight threshold (repeatable, default 0.5)");

  auto* verify = app.add_subcommand("verify", "Re-execute claimed adversarial inputs");
  add_model(verify);
  add_reports(verify);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }

  try {
    if (*influence) return cmd_influence(cfg, out);
    if (*attack) return cmd_attack(cfg, out, err);
    if (*acdp) return cmd_acdp(cfg, out);
    if (*verify) return cmd_verify(cfg, out);
  } catch (const SolverError& e) {
    err << "solver error: " << e.what() << '\n';
    return kSolverConfigError;
  } catch (const EmptyInputError& e) {
    err << "nothing to analyse: " << e.what() << '\n';
    return kEmptyInput;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }
  return kInputError;
}

}  // namespace shapcolic::cli
