#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "qrem/harness.hpp"

using Catch::Approx;
using namespace qrem;
namespace h = qrem::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("qrem_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

h::ExperimentConfig config(h::RawConfig raw) { return h::make_config(raw); }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(QREM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("reals are written with 17 significant digits") {
  CHECK(h::format_real(1.0 / 3.0) == "0.33333333333333331");
  CHECK(std::stod(h::format_real(1.0 / 3.0)) == 1.0 / 3.0);
  for (double x : {0.1, 2.0 / 7.0, 1e-300, -123456.789, 6.02214076e23}) CHECK(std::stod(h::format_real(x)) == x);
  CHECK(h::format_cell(h::Cell{std::int64_t{-4}}) == "-4");
  CHECK(h::format_cell(h::Cell{std::uint64_t{18446744073709551615ULL}}) == "18446744073709551615");
}

TEST_CASE("csv quoting and line endings") {
  CHECK(h::csv_escape("plain") == "plain");
  CHECK(h::csv_escape("a,b") == "\"a,b\"");
  CHECK(h::csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
  CHECK(h::csv_escape("two\nlines") == "\"two\nlines\"");
  CHECK(h::csv_line({std::int64_t{1}, 0.5, std::string("x")}) == "1,0.5,x\n");
  CHECK(h::csv_header({"a", "b"}) == "a,b\n");
}

TEST_CASE("emit_csv") {
  const auto dir = scratch_dir("emit");
  const auto empty = dir / "empty.csv";
  h::emit_csv({}, {"n", "gap"}, empty.string());
  CHECK(slurp(empty) == "n,gap\n");

  const auto one = dir / "one.csv";
  h::emit_csv({{std::int64_t{3}, 1.0 / 3.0}}, {"n", "gap"}, one.string());
  CHECK(slurp(one) == "n,gap\n3,0.33333333333333331\n");

  CHECK_THROWS_AS(h::emit_csv({{std::int64_t{3}}}, {"n", "gap"}, (dir / "bad.csv").string()), DimensionMismatch);
  CHECK_THROWS_AS(h::emit_csv({}, {"n"}, (dir / "missing" / "x.csv").string()), IoError);
  fs::remove_all(dir);
}

TEST_CASE("fixed column sets per command") {
  CHECK(h::schema_for("gap-scan").names() == std::vector<std::string>{"n", "seed", "kappa", "e0", "e1", "gap", "ipr"});
  CHECK(h::schema_for("scaling").names() == std::vector<std::string>{"n", "seed", "min_gap", "argmin_kappa"});
  CHECK(h::schema_for("extremes").names() == std::vector<std::string>{"n", "seed", "min_u", "rescaled_min"});
  CHECK(h::schema_for("evolve").names() ==
        std::vector<std::string>{"n", "seed", "perm_seed", "T", "success_prob", "infidelity"});
  CHECK(h::schema_for("scramble").names() ==
        std::vector<std::string>{"n", "seed", "perm_seed", "T", "b", "success_prob", "gamma_sharp"});
  for (const auto& [name, cmd] : h::command_names()) CHECK_NOTHROW(h::schema_for(name));
}

TEST_CASE("schema reference matches the generated text") {
  const fs::path doc = fs::path(QREM_SOURCE_DIR) / "docs" / "csv_schema.md";
  REQUIRE(fs::exists(doc));
  CHECK(slurp(doc) == h::schema_markdown());
  for (const auto& s : h::schemas()) {
    for (const auto& c : s.columns) {
      CHECK_FALSE(c.description.empty());
      CHECK(slurp(doc).find("`" + c.name + "`") != std::string::npos);
    }
  }
}

TEST_CASE("config text parsing") {
  const auto raw = h::parse_config_text("# comment\ncommand = gap-scan\n\n n=4  # trailing\nseeds=0..3\r\n");
  CHECK(raw.at("command") == "gap-scan");
  CHECK(raw.at("n") == "4");
  CHECK(raw.at("seeds") == "0..3");
  CHECK_THROWS_AS(h::parse_config_text("n 4\n"), ConfigError);
  CHECK_THROWS_AS(h::read_config_file("/nonexistent/qrem.cfg"), IoError);
}

TEST_CASE("config validation") {
  const h::RawConfig base{{"command", "gap-scan"}, {"n", "4"}, {"seeds", "0..3"}, {"out", "x.csv"}};
  const auto c = config(base);
  CHECK(c.command == h::Command::GapScan);
  CHECK(c.n_values == std::vector<int>{4});
  CHECK(c.seed_count() == 4);
  CHECK(c.summary == "x.csv.summary.json");
  CHECK(c.parameter == ScanParameter::Kappa);

  auto with = [&](std::string k, std::string v) {
    auto r = base;
    r[k] = v;
    return r;
  };
  CHECK_THROWS_AS(config(with("bogus", "1")), ConfigError);
  CHECK_THROWS_AS(config(with("command", "dance")), ConfigError);
  CHECK_THROWS_AS(config(with("n", "0")), ConfigError);
  CHECK_THROWS_AS(config(with("n", "17")), ConfigError);
  CHECK_THROWS_AS(config(with("n", "four")), ConfigError);
  CHECK_THROWS_AS(config(with("seeds", "5..2")), ConfigError);
  CHECK_THROWS_AS(config(with("kappa-min", "-1")), ConfigError);
  CHECK_THROWS_AS(config(with("kappa-max", "0.001")), ConfigError);
  CHECK_THROWS_AS(config(with("kappa-points", "2")), ConfigError);
  CHECK_THROWS_AS(config(with("tol", "1e-3")), ConfigError);
  CHECK_THROWS_AS(config(with("workers", "0")), ConfigError);
  CHECK_THROWS_AS(config(with("parameter", "beta")), ConfigError);
  CHECK_THROWS_AS(config(with("energies", "0,1")), ConfigError);
  auto no_out = base;
  no_out.erase("out");
  CHECK_THROWS_AS(config(no_out), ConfigError);

  auto listed = with("n-list", "4,5");
  CHECK_THROWS_AS(config(listed), ConfigError);
  listed.erase("n");
  CHECK(config(listed).n_values == std::vector<int>{4, 5});
  CHECK(config(with("seeds", "7")).seed_count() == 1);
  CHECK(config(with("workers", "3")).workers == 3);

  const auto s = config(with("parameter", "s"));
  CHECK(s.parameter == ScanParameter::S);
  CHECK_THROWS_AS(config({{"command", "gap-scan"}, {"n", "2"}, {"parameter", "s"}, {"s-max", "1.5"}, {"out", "x"}}),
                  ConfigError);

  CHECK_THROWS_AS(config({{"command", "scramble"}, {"n", "9"}, {"permutations", "20"}, {"out", "x"}}), ConfigError);
  CHECK_THROWS_AS(config({{"command", "scramble"}, {"n", "4"}, {"permutations", "5"}, {"out", "x"}}), ConfigError);
  CHECK_THROWS_AS(config({{"command", "scramble"}, {"n", "4"}, {"permutations", "20"}, {"b", "1.5"}, {"out", "x"}}),
                  ConfigError);
  CHECK_THROWS_AS(config({{"command", "scaling"}, {"n-list", "8,10"}, {"seeds", "0..4"}, {"out", "x"}}), ConfigError);
  CHECK_THROWS_AS(config({{"command", "evolve"}, {"n", "4"}, {"t", "-1"}, {"out", "x"}}), ConfigError);
  CHECK(config({{"command", "evolve"}, {"n", "4"}, {"t", "1,5,25"}, {"out", "x"}}).T_values ==
        std::vector<double>{1, 5, 25});
  CHECK_THROWS_AS(config({{"command", "extremes"}, {"n", "2"}, {"analytic", "true"}, {"x-min", "-10"}, {"out", "x"}}),
                  ConfigError);
}

TEST_CASE("worker count falls back to the environment") {
  ::setenv("QREM_WORKERS", "3", 1);
  CHECK(config({{"command", "extremes"}, {"n", "4"}, {"out", "x"}}).workers == 3);
  CHECK(config({{"command", "extremes"}, {"n", "4"}, {"out", "x"}, {"workers", "2"}}).workers == 2);
  ::setenv("QREM_WORKERS", "zero", 1);
  CHECK_THROWS_AS(config({{"command", "extremes"}, {"n", "4"}, {"out", "x"}}), ConfigError);
  ::unsetenv("QREM_WORKERS");
}

TEST_CASE("ordered pool preserves task order") {
  for (std::size_t workers : {1, 2, 5}) {
    std::vector<std::size_t> seen;
    h::run_ordered<std::size_t>(
        40, workers, [](std::size_t i) { return i * i; },
        [&](std::size_t i, std::size_t& r) {
          CHECK(r == i * i);
          seen.push_back(i);
        });
    CHECK(seen.size() == 40);
    CHECK(std::is_sorted(seen.begin(), seen.end()));
  }
}

TEST_CASE("synthetic two-level gap scan") {
  const auto dir = scratch_dir("twolevel");
  const auto out = (dir / "gaps.csv").string();
  const auto c = config({{"command", "gap-scan"}, {"n", "1"}, {"energies", "0,2"}, {"parameter", "s"},
                         {"s-min", "0"}, {"s-max", "1"}, {"out", out}});
  const auto rep = h::run(c);
  CHECK(rep.exit_code == h::exit_success);
  const auto& info = rep.summary.at("per_task").at(0);
  CHECK(info.at("min_gap").get<double>() == Approx(std::sqrt(2.0)).margin(1e-5));
  CHECK(info.at("argmin").get<double>() == Approx(0.5).margin(1e-3));
  const auto rows = read_csv(out);
  CHECK(rows.front() == std::vector<std::string>{"n", "seed", "s", "e0", "e1", "gap", "ipr"});
  // 64 grid points plus the golden-section refinement evaluations
  CHECK(rows.size() >= 1 + 64);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(std::stod(rows[i][5]) >= std::sqrt(2.0) - 1e-9);
  fs::remove_all(dir);
}

TEST_CASE("analytic extremes") {
  const auto dir = scratch_dir("analytic");
  const auto out = (dir / "law.csv").string();
  const auto rep = h::run(config({{"command", "extremes"}, {"n", "2"}, {"analytic", "true"}, {"x-min", "-1"},
                                  {"x-max", "1"}, {"x-points", "21"}, {"out", out}}));
  CHECK(rep.exit_code == 0);
  const auto rows = read_csv(out);
  REQUIRE(rows.size() == 22);
  CHECK(rows[0] == std::vector<std::string>{"n", "x", "exact_law", "gumbel_limit"});
  CHECK(std::stod(rows[11][1]) == 0.0);
  CHECK(std::stod(rows[11][2]) == Approx(0.31640625).epsilon(1e-15));
  fs::remove_all(dir);
}

TEST_CASE("summary json") {
  const auto dir = scratch_dir("summary");
  const auto out = (dir / "m.csv").string();
  h::run(config({{"command", "extremes"}, {"n", "6"}, {"seeds", "0..9"}, {"out", out}}));
  const auto s = nlohmann::json::parse(slurp(out + ".summary.json"));
  CHECK(s.at("command") == "extremes");
  CHECK(s.at("tasks") == 10);
  CHECK(s.at("failures") == 0);
  CHECK(s.at("config").at("seeds") == "0..9");
  CHECK(s.at("version").get<std::string>() == h::version());
  CHECK(s.contains("timestamp"));
  CHECK(s.contains("wall_time_seconds"));
  CHECK(read_csv(out).size() == 11);
  CHECK(slurp(out + ".errors.csv") == "task,n,seed,message\n");
  fs::remove_all(dir);
}

TEST_CASE("failed tasks go to the errors file") {
  const auto dir = scratch_dir("fail");
  const auto out = (dir / "g.csv").string();
  const auto rep = h::run(config({{"command", "gap-scan"}, {"n", "1"}, {"energies", "1,1"}, {"out", out}}));
  CHECK(rep.exit_code == h::exit_task_failures);
  CHECK(rep.failures == 1);
  CHECK(read_csv(out).size() == 1);
  const auto errs = read_csv(out + ".errors.csv");
  CHECK(errs.size() == 2);
  fs::remove_all(dir);
}

TEST_CASE("output does not depend on the worker count") {
  const auto dir = scratch_dir("determinism");
  const std::vector<h::RawConfig> configs = {
      {{"command", "gap-scan"}, {"n", "5"}, {"seeds", "0..5"}, {"kappa-points", "16"}},
      {{"command", "extremes"}, {"n-list", "6,8"}, {"seeds", "0..40"}},
      {{"command", "evolve"}, {"n", "3"}, {"seeds", "0..3"}, {"permutations", "2"}, {"t", "0.5,2"}},
      {{"command", "scramble"}, {"n", "3"}, {"seeds", "0..1"}, {"permutations", "10"}, {"t", "1"}},
      {{"command", "bound-check"}, {"n", "3"}, {"seeds", "0..2"}, {"t", "1,5"}},
      {{"command", "scaling"}, {"n-list", "6,7"}, {"seeds", "0..9"}, {"kappa-points", "12"}},
  };
  for (const auto& base : configs) {
    INFO(base.at("command"));
    std::string first;
    for (std::string workers : {"1", "3", "4"}) {
      auto raw = base;
      raw["workers"] = workers;
      raw["out"] = (dir / (base.at("command") + "_" + workers + ".csv")).string();
      const auto rep = h::run(config(raw));
      CHECK(rep.exit_code == 0);
      const auto text = slurp(raw["out"]);
      if (first.empty()) first = text;
      CHECK(text == first);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("cli exit codes") {
  const auto dir = scratch_dir("cli");
  const auto out = (dir / "x.csv").string();
  CHECK(run_cli("extremes --n 4 --seeds 0..3 --out " + out) == h::exit_success);
  CHECK(run_cli("extremes --n 30 --out " + out) == h::exit_validation);
  CHECK(run_cli("extremes --n 4 --frobnicate 1 --out " + out) == h::exit_validation);
  CHECK(run_cli("") == h::exit_validation);
  CHECK(run_cli("extremes --n 4 --out " + (dir / "nope" / "x.csv").string()) == h::exit_io);
  CHECK(run_cli("gap-scan --n 1 --energies 1,1 --out " + out) == h::exit_task_failures);

  const auto cfg = dir / "run.cfg";
  std::ofstream(cfg) << "command=extremes\nn=4\nseeds=0..2\nout=" << out << "\n";
  CHECK(run_cli("extremes --config " + cfg.string()) == 0);
  CHECK(read_csv(out).size() == 4);
  CHECK(run_cli("extremes --config " + cfg.string() + " --seeds 0..5") == 0);
  CHECK(read_csv(out).size() == 7);
  CHECK(run_cli("gap-scan --config " + cfg.string()) == h::exit_validation);
  CHECK(run_cli("extremes --config " + (dir / "absent.cfg").string()) == h::exit_io);
  CHECK(run_cli("schema --out " + (dir / "schema.md").string()) == 0);
  CHECK(slurp(dir / "schema.md") == h::schema_markdown());
  fs::remove_all(dir);
}
