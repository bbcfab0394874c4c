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

// Lowering of path constraints to SMT-LIB2, a supervised external solver
// process, model parsing and a brute-force grid oracle.

#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <boost/multiprecision/cpp_int.hpp>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "shapcolic/concolic.hpp"
#include "shapcolic/errors.hpp"
#include "shapcolic/symexpr.hpp"

extern char** environ;

namespace shapcolic {

enum class SolverStatus : std::uint8_t { kSat, kUnsat, kUnknown, kTimeout, kSolverError };

inline std::string_view status_name(SolverStatus s) {
  switch (s) {
    case SolverStatus::kSat: return "sat";
    case SolverStatus::kUnsat: return "unsat";
    case SolverStatus::kUnknown: return "unknown";
    case SolverStatus::kTimeout: return "timeout";
    case SolverStatus::kSolverError: return "solver_error";
  }
  return "?";
}

struct VariableBounds {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
};

struct SolverRequest {
  std::vector<VariableBounds> variables;
  std::vector<Comparison> assertion;  // conjunction
  double timeout_seconds = 60.0;
};

struct SolverVerdict {
  SolverStatus status = SolverStatus::kUnknown;
  Assignment assignment;  // present iff sat
  std::string transcript;
};

// lhs rel rhs  ->  (lhs - rhs) rel 0
inline Comparison normalize(const Comparison& c) {
  return {c.rel, c.lhs - c.rhs, SymExpr::constant(0.0)};
}

// Throws IntegrityError when the assertion mentions an undeclared variable or
// a bound is malformed.
inline void validate(const SolverRequest& request) {
  std::vector<std::string> declared;
  for (const auto& v : request.variables) {
    if (!ExecutionContext::valid_name(v.name)) throw IntegrityError("invalid solver variable '" + v.name + "'");
    if (!std::isfinite(v.lo) || !std::isfinite(v.hi) || v.lo > v.hi) {
      throw IntegrityError("invalid bounds for solver variable '" + v.name + "'");
    }
    if (std::find(declared.begin(), declared.end(), v.name) != declared.end()) {
      throw IntegrityError("solver variable '" + v.name + "' declared twice");
    }
    declared.push_back(v.name);
  }
  std::vector<SymExpr> roots;
  for (const auto& c : request.assertion) {
    roots.push_back(c.lhs);
    roots.push_back(c.rhs);
  }
  for (const auto& name : free_variables(roots)) {
    if (std::find(declared.begin(), declared.end(), name) == declared.end()) {
      throw IntegrityError("assertion references undeclared variable '" + name + "'");
    }
  }
}

namespace detail {

inline std::string smt_number(double v) {
  if (!std::isfinite(v)) throw IntegrityError("non-finite constant in constraint");
  std::string digits = format_fixed_decimal(std::abs(v));
  if (digits.find('.') == std::string::npos) digits += ".0";
  return v < 0 ? "(- " + digits + ")" : digits;
}

inline std::string_view smt_relation(Relation r) {
  switch (r) {
    case Relation::kLt: return "<";
    case Relation::kLe: return "<=";
    case Relation::kGt: return ">";
    case Relation::kGe: return ">=";
    case Relation::kEq: return "=";
    case Relation::kNe: return "=";
  }
  return "=";
}

inline bool exact_reciprocal(double c) {
  int exp = 0;
  return c != 0.0 && std::isfinite(c) && std::abs(std::frexp(c, &exp)) == 0.5 && std::isfinite(1.0 / c) &&
         1.0 / c != 0.0;
}

class SmtWriter {
 public:
  using Clock = std::chrono::steady_clock;

  explicit SmtWriter(std::optional<Clock::time_point> deadline) : deadline_(deadline) {}

  // False when the deadline passed.
  bool prepare(std::span<const SymExpr> roots) {
    auto order = topological_nodes(roots, [this] { return tick(); });
    if (!order) return false;
    order_ = std::move(*order);
    std::unordered_map<const ExprNode*, int> refs;
    for (const auto& r : roots) ++refs[r.get()];
    for (std::size_t i = 0; i < order_.size(); ++i) {
      if (!tick()) return false;
      const ExprNode* n = order_[i];
      if (n->lhs) ++refs[n->lhs.get()];
      if (n->rhs) ++refs[n->rhs.get()];
    }
    for (const auto* n : order_) {
      if (!tick()) return false;
      if (n->op != OpKind::kConst && n->op != OpKind::kVar && refs[n] >= 2) shared_.emplace(n, std::string());
    }
    return true;
  }

  // Emits define-fun lines for shared nodes in dependency order.
  bool define_shared(std::string& out) {
    std::size_t k = 0;
    for (const auto* n : order_) {
      auto it = shared_.find(n);
      if (it == shared_.end()) continue;
      if (!tick()) return false;
      std::string body;
      if (!render_ref(n, body)) return false;
      it->second = "t!" + std::to_string(k++);
      out += "(define-fun " + it->second + " () Real " + body + ")\n";
    }
    return true;
  }

  bool render(const SymExpr& e, std::string& out) { return render_ref(e.get(), out); }

 private:
  bool tick() {
    if (!deadline_ || ++ticks_ % 4096 != 0) return true;
    return Clock::now() < *deadline_;
  }

  // Renders `n`, referring to already named shared nodes by name. Uses an
  // explicit work stack so deep unshared chains cannot overflow the call stack.
  // False when the deadline passed.
  bool render_ref(const ExprNode* root, std::string& out) {
    struct Task {
      const ExprNode* node = nullptr;
      std::string text;
    };
    std::vector<Task> stack;
    stack.push_back({root, {}});
    while (!stack.empty()) {
      Task t = std::move(stack.back());
      stack.pop_back();
      if (!t.node) {
        out += t.text;
        continue;
      }
      const ExprNode* n = t.node;
      if (auto it = shared_.find(n); it != shared_.end() && !it->second.empty()) {
        out += it->second;
        continue;
      }
      if (!tick()) return false;
      switch (n->op) {
        case OpKind::kConst: out += smt_number(n->value); continue;
        case OpKind::kVar: out += n->name; continue;
        case OpKind::kNeg:
          out += "(- ";
          stack.push_back({nullptr, ")"});
          stack.push_back({n->lhs.get(), {}});
          continue;
        case OpKind::kDiv:
          if (n->rhs->op == OpKind::kConst && exact_reciprocal(n->rhs->value)) {
            out += "(* ";
            stack.push_back({nullptr, " " + smt_number(1.0 / n->rhs->value) + ")"});
            stack.push_back({n->lhs.get(), {}});
            continue;
          }
          out += "(/ ";
          break;
        case OpKind::kAdd: out += "(+ "; break;
        case OpKind::kSub: out += "(- "; break;
        case OpKind::kMul: out += "(* "; break;
      }
      stack.push_back({nullptr, ")"});
      stack.push_back({n->rhs.get(), {}});
      stack.push_back({nullptr, " "});
      stack.push_back({n->lhs.get(), {}});
    }
    return true;
  }

  std::optional<Clock::time_point> deadline_;
  std::vector<const ExprNode*> order_;
  std::unordered_map<const ExprNode*, std::string> shared_;
  std::size_t ticks_ = 0;
};

}  // namespace detail

// SMT-LIB2 script for the request, or nullopt when `deadline` passes during
// emission. Identical requests produce identical text.
inline std::optional<std::string> emit_smtlib(const SolverRequest& request,
                                              std::optional<std::chrono::steady_clock::time_point> deadline) {
  std::string out = "(set-logic QF_NRA)\n";
  for (const auto& v : request.variables) out += "(declare-fun " + v.name + " () Real)\n";
  for (const auto& v : request.variables) {
    out += "(assert (<= " + detail::smt_number(v.lo) + " " + v.name + "))\n";
    out += "(assert (<= " + v.name + " " + detail::smt_number(v.hi) + "))\n";
  }
  std::vector<SymExpr> roots;
  for (const auto& c : request.assertion) {
    roots.push_back(c.lhs);
    roots.push_back(c.rhs);
  }
  detail::SmtWriter writer(deadline);
  if (!writer.prepare(roots) || !writer.define_shared(out)) return std::nullopt;
  for (const auto& c : request.assertion) {
    std::string lhs, rhs;
    if (!writer.render(c.lhs, lhs) || !writer.render(c.rhs, rhs)) return std::nullopt;
    std::string atom = "(" + std::string(detail::smt_relation(c.rel)) + " " + lhs + " " + rhs + ")";
    if (c.rel == Relation::kNe) atom = "(not " + atom + ")";
    out += "(assert " + atom + ")\n";
  }
  out += "(check-sat)\n(get-model)\n";
  return out;
}

inline std::string emit_smtlib(const SolverRequest& request) { return *emit_smtlib(request, std::nullopt); }

// ---------------------------------------------------------------------------
// Model parsing

using Rational = boost::multiprecision::cpp_rational;

namespace detail {

struct Sexp {
  std::string atom;  // empty for lists
  std::vector<Sexp> items;
  bool is_list() const { return atom.empty(); }
};

class SexpReader {
 public:
  explicit SexpReader(std::string_view text) : text_(text) {}

  std::optional<Sexp> next() {
    skip();
    if (pos_ >= text_.size()) return std::nullopt;
    return read();
  }

 private:
  void skip() {
    while (pos_ < text_.size()) {
      if (std::isspace(static_cast<unsigned char>(text_[pos_]))) {
        ++pos_;
      } else if (text_[pos_] == ';') {
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  Sexp read() {
    skip();
    if (pos_ >= text_.size()) throw SolverError("unexpected end of solver output");
    const char c = text_[pos_];
    if (c == ')') throw SolverError("unbalanced ')' in solver output");
    if (c == '(') {
      ++pos_;
      Sexp list;
      for (;;) {
        skip();
        if (pos_ >= text_.size()) throw SolverError("unterminated list in solver output");
        if (text_[pos_] == ')') {
          ++pos_;
          return list;
        }
        list.items.push_back(read());
      }
    }
    Sexp atom;
    if (c == '"' || c == '|') {
      const char close = c;
      const std::size_t start = pos_++;
      while (pos_ < text_.size() && text_[pos_] != close) ++pos_;
      if (pos_ >= text_.size()) throw SolverError("unterminated literal in solver output");
      ++pos_;
      atom.atom = std::string(text_.substr(start, pos_ - start));
      return atom;
    }
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) && text_[pos_] != '(' &&
           text_[pos_] != ')') {
      ++pos_;
    }
    atom.atom = std::string(text_.substr(start, pos_ - start));
    return atom;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

inline Rational parse_decimal(const std::string& s) {
  using boost::multiprecision::cpp_int;
  if (s.empty()) throw SolverError("empty numeral");
  const auto dot = s.find('.');
  const std::string whole = s.substr(0, dot);
  const std::string frac = dot == std::string::npos ? "" : s.substr(dot + 1);
  auto digits = [](const std::string& d) {
    return std::all_of(d.begin(), d.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  if (whole.empty() || !digits(whole) || !digits(frac) || (dot != std::string::npos && frac.empty())) {
    throw SolverError("malformed numeral '" + s + "'");
  }
  cpp_int num(whole + frac);
  cpp_int den = boost::multiprecision::pow(cpp_int(10), static_cast<unsigned>(frac.size()));
  return Rational(num, den);
}

inline Rational parse_value(const Sexp& e) {
  if (!e.is_list()) return parse_decimal(e.atom);
  if (e.items.size() == 2 && !e.items[0].is_list() && e.items[0].atom == "-") return -parse_value(e.items[1]);
  if (e.items.size() == 3 && !e.items[0].is_list() && e.items[0].atom == "/") {
    Rational den = parse_value(e.items[2]);
    if (den == 0) throw SolverError("zero denominator in model value");
    return parse_value(e.items[1]) / den;
  }
  throw SolverError("unsupported model value");
}

inline void collect_definitions(const Sexp& e, const std::vector<VariableBounds>& vars, Assignment& out) {
  if (!e.is_list()) return;
  if (e.items.size() == 5 && !e.items[0].is_list() && e.items[0].atom == "define-fun" && !e.items[1].is_list()) {
    std::string name = e.items[1].atom;
    if (name.size() >= 2 && name.front() == '|' && name.back() == '|') name = name.substr(1, name.size() - 2);
    auto it = std::find_if(vars.begin(), vars.end(), [&](const VariableBounds& v) { return v.name == name; });
    if (it == vars.end()) return;
    const double v = parse_value(e.items[4]).convert_to<double>();
    out[name] = std::clamp(v, it->lo, it->hi);
    return;
  }
  for (const auto& item : e.items) collect_definitions(item, vars, out);
}

}  // namespace detail

// Interprets a solver transcript. The status line decides sat/unsat/unknown;
// for sat the model must assign every declared variable a rational value.
inline SolverVerdict parse_solver_output(const std::string& text, const std::vector<VariableBounds>& vars) {
  SolverVerdict verdict;
  verdict.transcript = text;
  try {
    detail::SexpReader reader(text);
    auto first = reader.next();
    if (!first || first->is_list()) throw SolverError("missing status line");
    if (first->atom == "unsat") {
      verdict.status = SolverStatus::kUnsat;
      return verdict;
    }
    if (first->atom == "unknown" || first->atom == "timeout") {
      verdict.status = SolverStatus::kUnknown;
      return verdict;
    }
    if (first->atom != "sat") throw SolverError("unexpected status '" + first->atom + "'");
    while (auto e = reader.next()) detail::collect_definitions(*e, vars, verdict.assignment);
    for (const auto& v : vars) {
      if (!verdict.assignment.contains(v.name)) throw SolverError("model lacks variable '" + v.name + "'");
    }
    verdict.status = SolverStatus::kSat;
  } catch (const SolverError&) {
    verdict.status = SolverStatus::kSolverError;
    verdict.assignment.clear();
  }
  return verdict;
}

// ---------------------------------------------------------------------------
// External process

// Splits a command line on whitespace; single and double quotes group.
inline std::vector<std::string> split_command(const std::string& cmd) {
  std::vector<std::string> argv;
  std::string cur;
  bool in_word = false;
  char quote = 0;
  for (char c : cmd) {
    if (quote) {
      if (c == quote) {
        quote = 0;
      } else {
        cur += c;
      }
    } else if (c == '\'' || c == '"') {
      quote = c;
      in_word = true;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      if (in_word) argv.push_back(std::exchange(cur, {}));
      in_word = false;
    } else {
      cur += c;
      in_word = true;
    }
  }
  if (quote) throw ConfigError("unterminated quote in solver command");
  if (in_word) argv.push_back(cur);
  return argv;
}

struct ProcessResult {
  bool timed_out = false;
  int exit_code = 0;  // -1 when killed by a signal
  std::string output;
};

// Runs argv with `input` on stdin and collects stdout and stderr until exit
// or until `timeout_seconds` elapse, in which case the child is killed and
// reaped. Throws SolverError when the program cannot be started.
inline ProcessResult run_process(const std::vector<std::string>& argv, const std::string& input, double timeout_seconds) {
  if (argv.empty()) throw SolverError("empty solver command");
  int in_fds[2];
  int out_fds[2];
  if (socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, in_fds) != 0) throw SolverError("socketpair failed");
  if (pipe2(out_fds, O_CLOEXEC) != 0) {
    close(in_fds[0]);
    close(in_fds[1]);
    throw SolverError("pipe failed");
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_fds[1], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_fds[1], STDOUT_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_fds[1], STDERR_FILENO);
  std::vector<char*> cargv;
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);
  pid_t pid = 0;
  const int rc = posix_spawnp(&pid, cargv[0], &actions, nullptr, cargv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  close(in_fds[1]);
  close(out_fds[1]);
  if (rc != 0) {
    close(in_fds[0]);
    close(out_fds[0]);
    throw SolverError("cannot start solver '" + argv[0] + "': " + std::strerror(rc));
  }
  fcntl(in_fds[0], F_SETFL, fcntl(in_fds[0], F_GETFL) | O_NONBLOCK);

  using Clock = std::chrono::steady_clock;
  const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                           std::chrono::duration<double>(std::max(0.0, timeout_seconds)));
  ProcessResult result;
  std::size_t written = 0;
  int in_fd = in_fds[0];
  if (input.empty()) {
    close(in_fd);
    in_fd = -1;
  }
  int out_fd = out_fds[0];
  char buf[65536];
  while (out_fd >= 0) {
    const auto now = Clock::now();
    if (now >= deadline) {
      result.timed_out = true;
      break;
    }
    const int wait_ms =
        static_cast<int>(std::min<long long>(std::chrono::ceil<std::chrono::milliseconds>(deadline - now).count(), 1000));
    pollfd fds[2];
    nfds_t n = 0;
    fds[n++] = {out_fd, POLLIN, 0};
    if (in_fd >= 0) fds[n++] = {in_fd, POLLOUT, 0};
    if (poll(fds, n, wait_ms) < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (in_fd >= 0 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
      const ssize_t w = send(in_fd, input.data() + written, input.size() - written, MSG_NOSIGNAL);
      if (w > 0) written += static_cast<std::size_t>(w);
      if (w < 0 && errno != EAGAIN && errno != EINTR) written = input.size();
      if (written == input.size()) {
        close(in_fd);
        in_fd = -1;
      }
    }
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      const ssize_t r = read(out_fd, buf, sizeof buf);
      if (r > 0) {
        result.output.append(buf, static_cast<std::size_t>(r));
      } else if (r == 0 || (errno != EAGAIN && errno != EINTR)) {
        close(out_fd);
        out_fd = -1;
      }
    }
  }
  if (in_fd >= 0) close(in_fd);
  if (out_fd >= 0) close(out_fd);
  if (result.timed_out) kill(pid, SIGKILL);
  int status = 0;
  while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

// ---------------------------------------------------------------------------
// Backends

// Evaluates the assertion on the (resolution + 1)^d grid over the bounds and
// returns the first satisfying point in lexicographic order. No satisfying
// point is reported as unknown.
inline SolverVerdict grid_oracle(const SolverRequest& request, int resolution) {
  validate(request);
  if (request.variables.size() > 2) throw ConfigError("grid oracle supports at most two variables");
  if (resolution < 1) throw ConfigError("grid resolution must be positive");
  std::vector<SymExpr> roots;
  std::vector<std::string> names;
  for (const auto& v : request.variables) names.push_back(v.name);
  for (const auto& c : request.assertion) {
    roots.push_back(c.lhs);
    roots.push_back(c.rhs);
  }
  ExprProgram program(roots, names);
  std::vector<double> out(roots.size());
  std::vector<double> point(names.size());
  const std::size_t steps = static_cast<std::size_t>(resolution) + 1;
  std::size_t total = 1;
  for (std::size_t i = 0; i < names.size(); ++i) total *= steps;
  auto coord = [&](std::size_t var, std::size_t k) {
    const auto& b = request.variables[var];
    return k == static_cast<std::size_t>(resolution) ? b.hi
                                                     : b.lo + (b.hi - b.lo) * static_cast<double>(k) / resolution;
  };
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat;
    for (std::size_t d = names.size(); d-- > 0;) {
      point[d] = coord(d, rem % steps);
      rem /= steps;
    }
    program.run(point, out);
    bool ok = true;
    for (std::size_t i = 0; i < request.assertion.size() && ok; ++i) {
      ok = holds(request.assertion[i].rel, out[2 * i], out[2 * i + 1]);
    }
    if (ok) {
      SolverVerdict v;
      v.status = SolverStatus::kSat;
      for (std::size_t d = 0; d < names.size(); ++d) v.assignment[names[d]] = point[d];
      return v;
    }
  }
  return {SolverStatus::kUnknown, {}, {}};
}

struct ExternalSolver {
  std::vector<std::string> argv;
};

struct GridSolver {
  int resolution = 1024;
};

using SolverBackend = std::variant<ExternalSolver, GridSolver>;

// "grid" or "grid:N" selects the grid oracle; anything else is a command line.
inline SolverBackend parse_backend(const std::string& spec) {
  if (spec == "grid") return GridSolver{};
  if (spec.rfind("grid:", 0) == 0) {
    try {
      std::size_t used = 0;
      const int res = std::stoi(spec.substr(5), &used);
      if (used != spec.size() - 5 || res < 1) throw std::invalid_argument("range");
      return GridSolver{res};
    } catch (const std::exception&) {
      throw ConfigError("invalid grid resolution in '" + spec + "'");
    }
  }
  auto argv = split_command(spec);
  if (argv.empty()) throw ConfigError("empty solver command");
  return ExternalSolver{std::move(argv)};
}

// Runs the request against the backend. `script` may carry pre-emitted text
// for the external backend.
inline SolverVerdict check(const SolverBackend& backend, const SolverRequest& request,
                           const std::string* script = nullptr) {
  if (const auto* grid = std::get_if<GridSolver>(&backend)) return grid_oracle(request, grid->resolution);
  validate(request);
  const auto& ext = std::get<ExternalSolver>(backend);
  std::string owned;
  if (!script) {
    owned = emit_smtlib(request);
    script = &owned;
  }
  ProcessResult proc = run_process(ext.argv, *script, request.timeout_seconds);
  if (proc.timed_out) return {SolverStatus::kTimeout, {}, std::move(proc.output)};
  SolverVerdict v = parse_solver_output(proc.output, request.variables);
  // Some solvers exit non-zero when get-model follows unsat.
  if (proc.exit_code != 0 && v.status != SolverStatus::kUnsat) {
    v.status = SolverStatus::kSolverError;
    v.assignment.clear();
  }
  return v;
}

// Substitution check of a sat assignment: strict relations exactly,
// non-strict ones within `slack`.
inline bool satisfies(const std::vector<Comparison>& assertion, const Assignment& env, double slack = 1e-9) {
  for (const auto& c : assertion) {
    SymExpr sides[] = {c.lhs, c.rhs};
    const auto v = evaluate(std::span<const SymExpr>(sides), env);
    const double scale = std::max({1.0, std::abs(v[0]), std::abs(v[1])});
    bool ok = holds(c.rel, v[0], v[1]);
    if (!ok) {
      switch (c.rel) {
        case Relation::kLe: ok = v[0] <= v[1] + slack * scale; break;
        case Relation::kGe: ok = v[0] + slack * scale >= v[1]; break;
        case Relation::kEq: ok = std::abs(v[0] - v[1]) <= slack * scale; break;
        default: break;
      }
    }
    if (!ok) return false;
  }
  return true;
}

}  // namespace shapcolic
