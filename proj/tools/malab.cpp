#include "malab/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

int fail(const malab::Error& e) {
  std::cerr << e.to_json().dump() << '\n';
  return e.kind() == malab::ErrorKind::usage ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monge-Ampere numerical lab"};
  std::string command, config_path, out, fixture, suite;
  std::vector<std::string> sets;
  int threads = 0;
  app.add_option("command", command, "solve | geometry | verify | blowup | catalog")
      ->required()
      ->check(CLI::IsMember(malab::cli::commands()));
  app.add_option("--config", config_path, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--set", sets, "override a config key: dotted.key=value (repeatable)");
  app.add_option("--out", out, "output directory");
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--fixture", fixture, "shorthand for --set fixture=<name>");
  app.add_option("--suite", suite, "shorthand for --set suite=<name>");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    malab::json cfg = malab::json::object();
    if (!config_path.empty()) {
      cfg = malab::json::parse(malab::cli::detail::read_file(config_path), nullptr, false);
      if (cfg.is_discarded() || !cfg.is_object()) throw malab::Error(malab::ErrorKind::usage, "config is not a JSON object");
    }
    if (cfg.contains("command") && cfg.at("command") != command)
      throw malab::Error(malab::ErrorKind::usage, "config command differs from the command line");
    cfg["command"] = command;
    if (!fixture.empty()) cfg["fixture"] = fixture;
    if (!suite.empty()) cfg["suite"] = suite;
    for (const auto& s : sets) malab::cli::apply_set(cfg, s);
    if (!out.empty()) cfg["out"] = out;
    if (threads > 0) cfg["threads"] = threads;
    cfg = malab::cli::validate_config(std::move(cfg));

    const auto result = malab::cli::run(cfg);
    malab::cli::write_artifacts(cfg.at("out"), result.artifacts);
    if (command == "catalog") {
      std::cout << result.artifacts.front().content;
    } else {
      malab::json summary = result.summary;
      malab::json names = malab::json::array();
      for (const auto& a : result.artifacts) names.push_back(a.name);
      summary["artifacts"] = names;
      std::cout << summary.dump() << '\n';
    }
    return 0;
  } catch (const malab::Error& e) {
    return fail(e);
  } catch (const malab::json::exception& e) {
    return fail(malab::Error(malab::ErrorKind::usage, e.what()));
  } catch (const std::exception& e) {
    return fail(malab::Error(malab::ErrorKind::io, e.what()));
  }
}
