// qrem: command-line driver for the QREM experiments.
//
//   qrem gap-scan --n 10 --seeds 0..19 --out gaps.csv
//   qrem extremes --n 12 --seeds 0..9999 --out minima.csv --workers 4
//   qrem schema > docs/csv_schema.md

#include <cstdio>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "qrem/harness.hpp"

namespace h = qrem::harness;

int main(int argc, char** argv) {
  CLI::App app{"Adiabatic search and quantum random energy model experiments"};
  app.require_subcommand(1);

  std::string command;
  std::string config_file;
  std::map<std::string, std::string> flag_values;
  std::map<std::string, CLI::Option*> flag_options;
  bool analytic = false;

  std::vector<CLI::App*> runs;
  for (const auto& [name, cmd] : h::command_names()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " experiment");
    sub->add_option("--config", config_file, "flat key=value file; flags override it");
    for (const auto& key : h::config_keys()) {
      if (key == "command") continue;
      if (key == "analytic") {
        flag_options[name + ":" + key] = sub->add_flag("--analytic", analytic, "exact law on an x grid");
        continue;
      }
      flag_options[name + ":" + key] = sub->add_option("--" + key, flag_values[name + ":" + key]);
    }
    sub->callback([&command, name = name] { command = name; });
    runs.push_back(sub);
  }
  auto* schema = app.add_subcommand("schema", "print the CSV schema reference (markdown)");
  std::string schema_out;
  schema->add_option("--out", schema_out, "write to this file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? h::exit_success : h::exit_validation;
  }

  if (schema->parsed()) {
    const std::string md = h::schema_markdown();
    if (schema_out.empty()) {
      std::cout << md;
      return h::exit_success;
    }
    try {
      h::detail::write_text(schema_out, md);
    } catch (const qrem::IoError& e) {
      std::cerr << "qrem: " << e.what() << "\n";
      return h::exit_io;
    }
    return h::exit_success;
  }

  h::RawConfig raw;
  try {
    if (!config_file.empty()) raw = h::read_config_file(config_file);
  } catch (const qrem::IoError& e) {
    std::cerr << "qrem: " << e.what() << "\n";
    return h::exit_io;
  } catch (const qrem::Error& e) {
    std::cerr << "qrem: " << config_file << ": " << e.what() << "\n";
    return h::exit_validation;
  }
  if (auto it = raw.find("command"); it != raw.end() && it->second != command) {
    std::cerr << "qrem: config file names command '" << it->second << "' but '" << command << "' was given\n";
    return h::exit_validation;
  }
  raw["command"] = command;
  for (const auto& key : h::config_keys()) {
    auto it = flag_options.find(command + ":" + key);
    if (it == flag_options.end() || it->second->count() == 0) continue;
    raw[key] = key == "analytic" ? (analytic ? "true" : "false") : flag_values[command + ":" + key];
  }

  h::ExperimentConfig cfg;
  try {
    cfg = h::make_config(raw);
  } catch (const qrem::Error& e) {
    std::cerr << "qrem: invalid configuration: " << e.what() << "\n";
    return h::exit_validation;
  }

  try {
    const auto rep = h::run(cfg);
    if (rep.failures > 0) {
      std::cerr << "qrem: " << rep.failures << " of " << rep.tasks << " tasks failed; see " << h::errors_path(cfg)
                << "\n";
    }
    return rep.exit_code;
  } catch (const qrem::IoError& e) {
    std::cerr << "qrem: " << e.what() << "\n";
    return h::exit_io;
  } catch (const std::exception& e) {
    std::cerr << "qrem: " << e.what() << "\n";
    return h::exit_task_failures;
  }
}
