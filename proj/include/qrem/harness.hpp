#pragma once

// Experiment configuration, deterministic task fan-out over a worker pool,
// and CSV / JSON emission for the command-line driver.

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "qrem/disorder.hpp"
#include "qrem/dynamics.hpp"
#include "qrem/ensemble.hpp"
#include "qrem/error.hpp"
#include "qrem/operators.hpp"
#include "qrem/spectra.hpp"

#ifndef QREM_VERSION
#define QREM_VERSION "unknown"
#endif

namespace qrem::harness {

inline constexpr int exit_success = 0;
inline constexpr int exit_validation = 1;
inline constexpr int exit_task_failures = 2;
inline constexpr int exit_io = 3;

inline std::string version() { return QREM_VERSION; }

// ---------------------------------------------------------------- CSV

using Cell = std::variant<std::int64_t, std::uint64_t, double, std::string>;
using Row = std::vector<Cell>;

/// Shortest form is not required; 17 significant digits always round-trip.
inline std::string format_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string format_cell(const Cell& c) {
  return std::visit(
      [](const auto& v) -> std::string {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, double>) {
          return format_real(v);
        } else if constexpr (std::is_same_v<V, std::string>) {
          return csv_escape(v);
        } else {
          return std::to_string(v);
        }
      },
      c);
}

inline std::string csv_line(const Row& row) {
  std::string out;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out += ',';
    out += format_cell(row[i]);
  }
  return out + '\n';
}

inline std::string csv_header(const std::vector<std::string>& columns) {
  Row r(columns.begin(), columns.end());
  return csv_line(r);
}

/// Header plus rows. Rows must have one cell per column.
inline void emit_csv(const std::vector<Row>& rows, const std::vector<std::string>& columns, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << csv_header(columns);
  for (const auto& r : rows) {
    if (r.size() != columns.size()) throw DimensionMismatch("row width does not match the schema for " + path);
    f << csv_line(r);
  }
  if (!f) throw IoError("write failed for " + path);
}

// ---------------------------------------------------------------- schema

struct Column {
  std::string name;
  std::string description;
};

struct Schema {
  std::string command;
  std::string summary;
  std::vector<Column> columns;

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& c : columns) out.push_back(c.name);
    return out;
  }
};

inline const std::vector<Schema>& schemas() {
  static const std::vector<Schema> all = {
      {"gap-scan",
       "One row per evaluated parameter value (coarse grid and golden-section refinement), ascending, for each "
       "landscape. With `parameter=s` the third column is named `s` and holds the interpolation parameter.",
       {{"n", "spin count"},
        {"seed", "landscape index from the seeds range (synthetic energies use 0)"},
        {"kappa", "coupling of H(kappa) = -Delta + kappa U"},
        {"e0", "lowest eigenvalue"},
        {"e1", "second-lowest eigenvalue"},
        {"gap", "e1 - e0"},
        {"ipr", "inverse participation ratio of the ground vector"}}},
      {"extremes",
       "One row per sampled landscape: its minimum energy and the rescaled minimum.",
       {{"n", "spin count"},
        {"seed", "landscape index from the seeds range"},
        {"min_u", "smallest energy u0"},
        {"rescaled_min", "u0/kappa_c + n/kappa_c^2 - ln(4 pi n ln 2)/2"}}},
      {"extremes-analytic",
       "Written by `extremes` with `analytic=true`: the exact finite-n law of the minimum on an x grid.",
       {{"n", "spin count"},
        {"x", "extreme-value coordinate"},
        {"exact_law", "P(min u >= -sqrt(n) v_n(x)) = (1 - 2^-n e^-x)^(2^n)"},
        {"gumbel_limit", "exp(-exp(-x))"}}},
      {"evolve",
       "One row per (landscape, permutation, T) trajectory started in the uniform state.",
       {{"n", "spin count"},
        {"seed", "landscape index from the seeds range"},
        {"perm_seed", "permutation seed; 0 denotes the identity permutation"},
        {"T", "adiabatic time scale"},
        {"success_prob", "|psi(T)(pi(j0))|^2"},
        {"infidelity", "sqrt(1 - success_prob)"}}},
      {"scramble",
       "One row per sampled permutation of each landscape.",
       {{"n", "spin count"},
        {"seed", "landscape index from the seeds range"},
        {"perm_seed", "permutation seed"},
        {"T", "adiabatic time scale"},
        {"b", "success threshold"},
        {"success_prob", "|psi(T)(pi(j0))|^2"},
        {"gamma_sharp", "min over the s-profile of min(gap^3, gap^2)"}}},
      {"bound-check",
       "One row per (landscape, permutation, T): measured infidelity against the adiabatic-theorem right-hand "
       "side.",
       {{"n", "spin count"},
        {"seed", "landscape index from the seeds range"},
        {"perm_seed", "permutation seed; 0 denotes the identity permutation"},
        {"T", "adiabatic time scale"},
        {"infidelity", "measured sqrt(1 - |<e_pi(j0), psi(T)>|^2)"},
        {"rhs", "adiabatic-theorem bound at this T"},
        {"holds", "1 when infidelity <= rhs + 1e-6, else 0"}}},
      {"scaling",
       "One row per landscape: the minimum of the kappa-gap and its location.",
       {{"n", "spin count"},
        {"seed", "landscape index from the seeds range"},
        {"min_gap", "min over the kappa range of E1 - E0"},
        {"argmin_kappa", "kappa at the minimum"}}},
      {"errors",
       "Written next to every CSV as `<out>.errors.csv`; one row per failed task.",
       {{"task", "task index in enumeration order"},
        {"n", "spin count"},
        {"seed", "landscape index"},
        {"message", "error text"}}},
  };
  return all;
}

inline const Schema& schema_for(const std::string& name) {
  for (const auto& s : schemas()) {
    if (s.command == name) return s;
  }
  throw ConfigError("no schema named " + name);
}

/// The text of docs/csv_schema.md.
inline std::string schema_markdown() {
  std::ostringstream o;
  o << "# CSV schemas\n\n"
    << "Generated by `qrem schema`. Every file has a header row, uses `,` as separator and `.` as decimal point, "
       "writes reals with 17 significant digits and ends lines with LF.\n";
  for (const auto& s : schemas()) {
    o << "\n## " << s.command << "\n\n" << s.summary << "\n\n| column | meaning |\n|---|---|\n";
    for (const auto& c : s.columns) o << "| `" << c.name << "` | " << c.description << " |\n";
  }
  return o.str();
}

// ---------------------------------------------------------------- config

enum class Command { GapScan, Extremes, Evolve, Scramble, BoundCheck, Scaling };

inline const std::map<std::string, Command>& command_names() {
  static const std::map<std::string, Command> m = {
      {"gap-scan", Command::GapScan}, {"extremes", Command::Extremes},      {"evolve", Command::Evolve},
      {"scramble", Command::Scramble}, {"bound-check", Command::BoundCheck}, {"scaling", Command::Scaling}};
  return m;
}

inline std::string to_string(Command c) {
  for (const auto& [k, v] : command_names()) {
    if (v == c) return k;
  }
  return "?";
}

/// Keys accepted in config files and as --flags.
inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "command", "n",           "n-list",      "seeds",      "master-seed", "parameter", "kappa-min",
      "kappa-max", "kappa-points", "s-min",     "s-max",      "t",           "epsilon",   "b",
      "permutations", "tol",    "workers",     "out",        "summary",     "energies",  "analytic",
      "x-min",     "x-max",     "x-points"};
  return keys;
}

using RawConfig = std::map<std::string, std::string>;

/// Flat key=value text; '#' starts a comment, blank lines are skipped.
inline RawConfig parse_config_text(const std::string& text) {
  RawConfig out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

inline RawConfig read_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

struct ExperimentConfig {
  Command command = Command::GapScan;
  std::vector<int> n_values;
  std::uint64_t seed_first = 0;
  std::uint64_t seed_last = 0;
  std::uint64_t master_seed = 0;
  ScanParameter parameter = ScanParameter::Kappa;
  double range_min = 0.01;
  double range_max = 3.0;
  std::size_t points = 64;
  std::vector<double> T_values{1.0};
  double epsilon = 0.5;
  double b = 0.5;
  std::size_t permutations = 0;
  double tol = 1e-10;
  std::size_t workers = 1;
  std::string out;
  std::string summary;
  std::optional<std::vector<double>> energies;
  bool analytic = false;
  double x_min = -4.0;
  double x_max = 6.0;
  std::size_t x_points = 101;
  /// Effective key=value pairs, echoed into the summary.
  RawConfig echo;

  std::size_t seed_count() const { return static_cast<std::size_t>(seed_last - seed_first + 1); }
};

namespace detail {

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": not a number: '" + v + "'");
  }
  if (pos != v.size() || !std::isfinite(x)) throw ConfigError(key + ": not a finite number: '" + v + "'");
  return x;
}

inline std::uint64_t parse_unsigned(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(key + ": not a non-negative integer: '" + v + "'");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": out of range: '" + v + "'");
  }
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

}  // namespace detail

/// Validates every key and range before anything is computed.
inline ExperimentConfig make_config(const RawConfig& raw) {
  const std::set<std::string> known(config_keys().begin(), config_keys().end());
  for (const auto& [k, v] : raw) {
    if (!known.count(k)) throw ConfigError("unknown key '" + k + "'");
  }
  auto get = [&](const std::string& k) -> std::optional<std::string> {
    auto it = raw.find(k);
    if (it == raw.end()) return std::nullopt;
    return it->second;
  };

  ExperimentConfig c;
  c.echo = raw;
  const auto cmd = get("command");
  if (!cmd) throw ConfigError("no command given");
  const auto it = command_names().find(*cmd);
  if (it == command_names().end()) throw ConfigError("unknown command '" + *cmd + "'");
  c.command = it->second;

  if (auto e = get("energies")) {
    std::vector<double> u;
    for (const auto& tok : detail::split(*e, ',')) u.push_back(detail::parse_real("energies", tok));
    c.energies = std::move(u);
  }
  if (get("n") && get("n-list")) throw ConfigError("give either n or n-list, not both");
  if (auto v = get("n")) c.n_values = {static_cast<int>(detail::parse_unsigned("n", *v))};
  if (auto v = get("n-list")) {
    for (const auto& tok : detail::split(*v, ',')) c.n_values.push_back(static_cast<int>(detail::parse_unsigned("n-list", tok)));
  }
  if (c.energies) {
    if (c.command != Command::GapScan && c.command != Command::Evolve && c.command != Command::BoundCheck) {
      throw ConfigError("energies is only accepted by gap-scan, evolve and bound-check");
    }
    const std::size_t len = c.energies->size();
    if (len < 2 || (len & (len - 1)) != 0) throw ConfigError("energies must have 2^n entries with n >= 1");
    const int n = std::countr_zero(len);
    if (!c.n_values.empty() && (c.n_values.size() != 1 || c.n_values[0] != n)) {
      throw ConfigError("n does not match the number of energies");
    }
    c.n_values = {n};
    if (get("seeds")) throw ConfigError("seeds cannot be combined with energies");
  }
  if (c.n_values.empty()) throw ConfigError("n or n-list is required");

  int n_lo = 1, n_hi = 16;
  switch (c.command) {
    case Command::Extremes: n_hi = max_spins; break;
    case Command::Scramble:
    case Command::BoundCheck: n_hi = 8; break;
    case Command::Evolve: n_hi = 14; break;
    case Command::Scaling: n_lo = 6; break;
    default: break;
  }
  for (int n : c.n_values) {
    if (n < n_lo || n > n_hi) {
      throw ConfigError(to_string(c.command) + " supports n in [" + std::to_string(n_lo) + ", " + std::to_string(n_hi) +
                        "], got " + std::to_string(n));
    }
  }

  if (auto v = get("seeds")) {
    const auto dots = v->find("..");
    if (dots == std::string::npos) {
      c.seed_first = c.seed_last = detail::parse_unsigned("seeds", *v);
    } else {
      c.seed_first = detail::parse_unsigned("seeds", v->substr(0, dots));
      c.seed_last = detail::parse_unsigned("seeds", v->substr(dots + 2));
    }
    if (c.seed_last < c.seed_first) throw ConfigError("seeds: empty range " + *v);
    if (c.seed_last - c.seed_first >= 10'000'000) throw ConfigError("seeds: range too large");
  }
  if (auto v = get("master-seed")) c.master_seed = detail::parse_unsigned("master-seed", *v);

  if (auto v = get("parameter")) {
    if (*v == "kappa") c.parameter = ScanParameter::Kappa;
    else if (*v == "s") c.parameter = ScanParameter::S;
    else throw ConfigError("parameter must be 'kappa' or 's'");
    if (c.command != Command::GapScan) throw ConfigError("parameter is only accepted by gap-scan");
  }
  if (c.parameter == ScanParameter::S) {
    if (get("kappa-min") || get("kappa-max")) throw ConfigError("kappa-min/kappa-max do not apply to an s-scan");
    c.range_min = 0.0;
    c.range_max = 1.0;
    if (auto v = get("s-min")) c.range_min = detail::parse_real("s-min", *v);
    if (auto v = get("s-max")) c.range_max = detail::parse_real("s-max", *v);
    if (!(c.range_min >= 0.0 && c.range_max <= 1.0 && c.range_min < c.range_max)) {
      throw ConfigError("s range must satisfy 0 <= s-min < s-max <= 1");
    }
  } else {
    if (get("s-min") || get("s-max")) throw ConfigError("s-min/s-max need parameter=s");
    if (auto v = get("kappa-min")) c.range_min = detail::parse_real("kappa-min", *v);
    if (auto v = get("kappa-max")) c.range_max = detail::parse_real("kappa-max", *v);
    if (!(c.range_min >= 0.0 && c.range_min < c.range_max && c.range_max <= 1e3)) {
      throw ConfigError("kappa range must satisfy 0 <= kappa-min < kappa-max <= 1000");
    }
  }
  if (auto v = get("kappa-points")) c.points = detail::parse_unsigned("kappa-points", *v);
  if (c.points < 8 || c.points > 100000) throw ConfigError("kappa-points must lie in [8, 100000]");

  if (auto v = get("t")) {
    c.T_values.clear();
    for (const auto& tok : detail::split(*v, ',')) {
      const double T = detail::parse_real("t", tok);
      if (!(T >= 0.0 && T <= 1e7)) throw ConfigError("t values must lie in [0, 1e7]");
      c.T_values.push_back(T);
    }
  }
  if (c.command == Command::Scramble && c.T_values.size() != 1) throw ConfigError("scramble takes a single t");
  if (c.command == Command::BoundCheck) {
    for (double T : c.T_values) {
      if (!(T > 0.0)) throw ConfigError("bound-check needs t > 0");
    }
  }
  if (auto v = get("epsilon")) c.epsilon = detail::parse_real("epsilon", *v);
  if (!(c.epsilon > 0.0 && c.epsilon <= 1.0)) throw ConfigError("epsilon must lie in (0, 1]");
  if (auto v = get("b")) c.b = detail::parse_real("b", *v);
  if (!(c.b > 0.0 && c.b <= 1.0)) throw ConfigError("b must lie in (0, 1]");
  if (auto v = get("permutations")) c.permutations = detail::parse_unsigned("permutations", *v);
  if (c.permutations > 100000) throw ConfigError("permutations must be at most 100000");
  if (c.command == Command::Scramble && c.permutations < 10) throw ConfigError("scramble needs permutations >= 10");
  if (c.command == Command::Scaling && c.seed_count() < 10) throw ConfigError("scaling needs at least 10 seeds per n");
  if (auto v = get("tol")) c.tol = detail::parse_real("tol", *v);
  if (!(c.tol >= 1e-13 && c.tol <= 1e-6)) throw ConfigError("tol must lie in [1e-13, 1e-6]");

  if (auto v = get("workers")) {
    c.workers = detail::parse_unsigned("workers", *v);
  } else if (const char* env = std::getenv("QREM_WORKERS"); env != nullptr && *env != '\0') {
    c.workers = detail::parse_unsigned("QREM_WORKERS", env);
  }
  if (c.workers < 1 || c.workers > 256) throw ConfigError("workers must lie in [1, 256]");

  if (auto v = get("out")) c.out = *v;
  if (c.out.empty()) throw ConfigError("out is required");
  if (auto v = get("summary")) c.summary = *v;
  if (c.summary.empty()) c.summary = c.out + ".summary.json";
  if (auto v = get("analytic")) c.analytic = detail::parse_bool("analytic", *v);
  if (c.analytic && c.command != Command::Extremes) throw ConfigError("analytic applies to extremes only");
  if (auto v = get("x-min")) c.x_min = detail::parse_real("x-min", *v);
  if (auto v = get("x-max")) c.x_max = detail::parse_real("x-max", *v);
  if (auto v = get("x-points")) c.x_points = detail::parse_unsigned("x-points", *v);
  if (!(c.x_min < c.x_max) || c.x_points < 2 || c.x_points > 1000000) {
    throw ConfigError("x grid needs x-min < x-max and 2 <= x-points <= 1000000");
  }
  if (c.analytic) {
    for (int n : c.n_values) {
      if (!(c.x_min > -n * std::numbers::ln2)) throw ConfigError("analytic extremes need x-min > -n ln 2");
    }
  }
  return c;
}

// ---------------------------------------------------------------- pool

/// Runs tasks[0..k) on `workers` threads and hands results to `sink` in task
/// order as soon as each prefix is complete.
template <class Result>
void run_ordered(std::size_t count, std::size_t workers, const std::function<Result(std::size_t)>& task,
                 const std::function<void(std::size_t, Result&)>& sink) {
  std::vector<std::optional<Result>> slots(count);
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      Result r = task(i);
      {
        std::lock_guard<std::mutex> lock(mu);
        slots[i] = std::move(r);
      }
      cv.notify_all();
    }
  };
  std::vector<std::thread> pool;
  const std::size_t k = std::min(workers, std::max<std::size_t>(count, 1));
  if (k <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      Result r = task(i);
      sink(i, r);
    }
    return;
  }
  for (std::size_t w = 0; w < k; ++w) pool.emplace_back(worker);
  for (std::size_t i = 0; i < count; ++i) {
    std::unique_lock<std::mutex> lock(mu);
    cv.wait(lock, [&] { return slots[i].has_value(); });
    Result r = std::move(*slots[i]);
    slots[i].reset();
    lock.unlock();
    sink(i, r);
  }
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------- run

struct TaskId {
  int n = 0;
  std::uint64_t seed = 0;
  std::size_t perm_index = 0;
};

struct TaskOutput {
  std::vector<Row> rows;
  std::optional<std::string> error;
  nlohmann::json info;
};

struct RunReport {
  int exit_code = exit_success;
  std::size_t tasks = 0;
  std::size_t failures = 0;
  nlohmann::json summary;
};

namespace detail {

inline DisorderRealization task_disorder(const ExperimentConfig& c, int n, std::uint64_t seed_index) {
  if (c.energies) return DisorderRealization(n, *c.energies, 0);
  return sample_task_disorder(c.master_seed, n, seed_index);
}

/// Permutation index 0 is the identity when no permutations were requested.
inline std::pair<std::uint64_t, Permutation> task_permutation(const ExperimentConfig& c,
                                                              const DisorderRealization& d, std::size_t index) {
  if (c.permutations == 0) return {0, Permutation::identity(d.dim())};
  const std::uint64_t s = permutation_seed(hash_words({c.master_seed, d.seed(), 0x70736565ULL}), index);
  return {s, Permutation::random(d.dim(), s)};
}

inline ScanOptions scan_options(const ExperimentConfig& c) {
  ScanOptions so;
  so.coarse_points = c.points;
  so.tol = c.tol;
  return so;
}

inline std::vector<TaskId> enumerate_tasks(const ExperimentConfig& c) {
  std::vector<TaskId> out;
  const std::size_t perms =
      (c.command == Command::Evolve || c.command == Command::BoundCheck) ? std::max<std::size_t>(c.permutations, 1) : 1;
  for (int n : c.n_values) {
    for (std::uint64_t s = c.seed_first; s <= c.seed_last; ++s) {
      for (std::size_t p = 0; p < perms; ++p) out.push_back({n, s, p});
    }
  }
  return out;
}

inline TaskOutput run_task(const ExperimentConfig& c, const TaskId& id) {
  TaskOutput out;
  const auto n64 = static_cast<std::int64_t>(id.n);
  try {
    switch (c.command) {
      case Command::GapScan: {
        const auto d = task_disorder(c, id.n, id.seed);
        const auto res = scan_gap(d, c.parameter, c.range_min, c.range_max, scan_options(c));
        for (const auto& p : res.points) out.rows.push_back({n64, id.seed, p.parameter, p.e0, p.e1, p.gap, p.ipr});
        out.info = {{"n", id.n}, {"seed", id.seed}, {"min_gap", res.min_gap}, {"argmin", res.argmin},
                    {"refined", res.refined}};
        break;
      }
      case Command::Extremes: {
        const auto d = task_disorder(c, id.n, id.seed);
        out.rows.push_back({n64, id.seed, d.u0(), rescale_energy(id.n, d.u0())});
        break;
      }
      case Command::Evolve: {
        const auto d = task_disorder(c, id.n, id.seed);
        const auto [ps, pi] = task_permutation(c, d, id.perm_index);
        for (double T : c.T_values) {
          const auto r = evolve(d, pi, T);
          out.rows.push_back({n64, id.seed, ps, T, r.success_probability, r.infidelity});
        }
        break;
      }
      case Command::Scramble: {
        const auto d = task_disorder(c, id.n, id.seed);
        ScrambleOptions so;
        so.with_gap_functional = true;
        so.scan = scan_options(c);
        so.scan.coarse_points = std::min<std::size_t>(c.points, 32);
        const auto rep =
            scramble_experiment(d, c.T_values.front(), c.b, c.permutations,
                                hash_words({c.master_seed, d.seed(), 0x70736565ULL}), so);
        if (rep.failures > 0) throw ConvergenceError(std::to_string(rep.failures) + " trajectories failed");
        for (const auto& r : rep.per_pi_records) {
          out.rows.push_back({n64, id.seed, r.permutation_seed, rep.T, rep.b, r.success_probability,
                              r.gamma_sharp.value_or(0.0)});
        }
        const auto tb = runtime_lower_bound(static_cast<double>(d.dim()), c.b, c.epsilon, sigma_m(d));
        out.info = {{"n", id.n},
                    {"seed", id.seed},
                    {"fraction", rep.fraction},
                    {"ci_low", rep.binomial_ci.lower},
                    {"ci_high", rep.binomial_ci.upper},
                    {"t_lower", tb.t_lower},
                    {"vacuous", tb.vacuous}};
        break;
      }
      case Command::BoundCheck: {
        const auto d = task_disorder(c, id.n, id.seed);
        const auto [ps, pi] = task_permutation(c, d, id.perm_index);
        const RealVector diag = scramble(d.energies(), pi);
        const double hprime = derivative_norms(diag).analytic_bound;
        const auto bound = adiabatic_bound(interpolated_gap_function(diag, c.tol), hprime, 1.0);
        for (double T : c.T_values) {
          const auto r = evolve_diagonal(diag, pi(d.j0()), T);
          const double rhs = bound.at(T).rhs;
          const bool holds = r.infidelity <= rhs + 1e-6;
          out.rows.push_back({n64, id.seed, ps, T, r.infidelity, rhs, static_cast<std::int64_t>(holds)});
        }
        break;
      }
      case Command::Scaling: {
        const auto d = task_disorder(c, id.n, id.seed);
        const auto res = scan_gap(d, ScanParameter::Kappa, c.range_min, c.range_max, scan_options(c));
        out.rows.push_back({n64, id.seed, res.min_gap, res.argmin});
        out.info = {{"n", id.n}, {"seed", id.seed}, {"min_gap", res.min_gap}, {"argmin", res.argmin},
                    {"refined", res.refined}, {"variational_min_slack", res.variational_min_slack}};
        break;
      }
    }
  } catch (const std::exception& e) {
    out.rows.clear();
    out.error = e.what();
  }
  return out;
}

inline std::string utc_timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::vector<Row> analytic_extremes(const ExperimentConfig& c) {
  std::vector<Row> rows;
  for (int n : c.n_values) {
    for (std::size_t i = 0; i < c.x_points; ++i) {
      const double x = c.x_min + (c.x_max - c.x_min) * static_cast<double>(i) / static_cast<double>(c.x_points - 1);
      rows.push_back({static_cast<std::int64_t>(n), x, min_law_cdf_complement(n, x), gumbel_limit(x)});
    }
  }
  return rows;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw IoError("write failed for " + path);
}

}  // namespace detail

inline std::string errors_path(const ExperimentConfig& c) { return c.out + ".errors.csv"; }

/// Executes a validated config: the result CSV is written row by row in task
/// order, failed tasks go to the errors file, and a summary JSON closes the run.
inline RunReport run(const ExperimentConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  RunReport rep;
  const bool analytic = c.command == Command::Extremes && c.analytic;
  const Schema& schema = schema_for(analytic ? std::string("extremes-analytic") : to_string(c.command));
  auto columns = schema.names();
  if (c.command == Command::GapScan && c.parameter == ScanParameter::S) columns[2] = "s";

  std::ofstream csv(c.out, std::ios::binary | std::ios::trunc);
  if (!csv) throw IoError("cannot open " + c.out + " for writing");
  std::ofstream err(errors_path(c), std::ios::binary | std::ios::trunc);
  if (!err) throw IoError("cannot open " + errors_path(c) + " for writing");
  csv << csv_header(columns);
  err << csv_header(schema_for("errors").names());

  nlohmann::json task_info = nlohmann::json::array();
  std::vector<ScalingRecord> scaling_records;
  if (analytic) {
    for (const auto& r : detail::analytic_extremes(c)) csv << csv_line(r);
    rep.tasks = 1;
  } else {
    const auto tasks = detail::enumerate_tasks(c);
    rep.tasks = tasks.size();
    run_ordered<TaskOutput>(
        tasks.size(), c.workers, [&](std::size_t i) { return detail::run_task(c, tasks[i]); },
        [&](std::size_t i, TaskOutput& o) {
          if (o.error) {
            ++rep.failures;
            err << csv_line({static_cast<std::int64_t>(i), static_cast<std::int64_t>(tasks[i].n), tasks[i].seed, *o.error});
            err.flush();
            return;
          }
          for (const auto& r : o.rows) csv << csv_line(r);
          csv.flush();
          if (!o.info.is_null()) task_info.push_back(o.info);
          if (c.command == Command::Scaling) {
            scaling_records.push_back({tasks[i].n, tasks[i].seed, o.info["min_gap"].get<double>(),
                                       o.info["argmin"].get<double>(), o.info["refined"].get<bool>()});
          }
        });
  }
  if (!csv || !err) throw IoError("write failed for " + c.out);
  csv.close();
  err.close();

  nlohmann::json s;
  s["command"] = to_string(c.command);
  s["config"] = c.echo;
  s["version"] = version();
  s["timestamp"] = detail::utc_timestamp();
  s["tasks"] = rep.tasks;
  s["failures"] = rep.failures;
  s["output"] = c.out;
  s["errors"] = errors_path(c);
  if (!task_info.empty()) s["per_task"] = task_info;
  if (c.command == Command::Scaling && !scaling_records.empty()) {
    try {
      std::vector<int> present;
      for (int n : c.n_values) {
        if (std::any_of(scaling_records.begin(), scaling_records.end(), [n](const auto& r) { return r.n == n; })) {
          present.push_back(n);
        }
      }
      const auto study = summarize_scaling(present, scaling_records);
      s["fit"] = {{"n_values", study.fit.n_values},
                  {"median_min_gaps", study.fit.median_min_gaps},
                  {"median_argmin", study.median_argmin},
                  {"slope", study.fit.slope},
                  {"intercept", study.fit.intercept},
                  {"r_squared", study.fit.r_squared},
                  {"bound_constant", study.bound_constant},
                  {"strictly_decreasing", study.strictly_decreasing}};
    } catch (const Error& e) {
      s["fit_error"] = e.what();
    }
  }
  s["wall_time_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  detail::write_text(c.summary, s.dump(2) + "\n");
  rep.summary = std::move(s);
  rep.exit_code = rep.failures > 0 ? exit_task_failures : exit_success;
  return rep;
}

}  // namespace qrem::harness
