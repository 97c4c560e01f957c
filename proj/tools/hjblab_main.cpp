#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hjblab/errors.hpp"
#include "hjblab/experiment.hpp"

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "hjblab: monotone grid solvers and regression Monte Carlo for long-time HJB asymptotics"};

  std::string config_path;
  std::string out_dir;
  std::string experiments_csv;
  std::uint64_t seed = 0;
  unsigned workers = 0;

  app.add_option("--config", config_path, "run configuration: a JSON file or builtin:NAME");
  auto* out_opt = app.add_option("--out", out_dir, "output directory override");
  auto* seed_opt = app.add_option("--seed", seed, "seed override");
  auto* workers_opt = app.add_option("--workers", workers, "worker count (0 = all hardware)");
  auto* exp_opt =
      app.add_option("--experiments", experiments_csv,
                     "comma-separated stage subset (validate,simulate,pde,bsde,asymptotics)");
  auto* list_cmd = app.add_subcommand("list-builtins", "print the builtin instance catalog");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (list_cmd->parsed()) {
    std::cout << hjblab::list_builtins();
    return 0;
  }
  if (config_path.empty()) {
    std::cerr << "error: --config is required (or use the list-builtins subcommand)\n";
    return 2;
  }

  hjblab::RunOverrides overrides;
  if (*out_opt) overrides.out_dir = out_dir;
  if (*seed_opt) overrides.seed = seed;
  if (*workers_opt) overrides.workers = workers;
  if (*exp_opt) overrides.experiments = split_csv(experiments_csv);

  hjblab::RunConfig config;
  try {
    config = hjblab::load_config_file(config_path, overrides);
  } catch (const hjblab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  hjblab::RunReport report;
  try {
    report = hjblab::run_experiment(config);
  } catch (const std::exception& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return 3;
  }

  for (const auto& exp : report.experiments) {
    std::cout << (exp.passed ? "[pass] " : "[FAIL] ") << exp.name;
    if (!exp.note.empty()) std::cout << "  (" << exp.note << ")";
    std::cout << "\n";
  }
  std::cout << "artifacts in " << config.out_dir << " (" << report.artifacts.size()
            << " files), wall clock " << report.wall_clock_seconds << " s\n";
  return report.all_passed() ? 0 : 4;
}
