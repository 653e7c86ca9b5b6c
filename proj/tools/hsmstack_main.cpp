// hsmstack: command-line driver for the labeling pipeline.
//
//   hsmstack synth   --out-dir run --seed 7
//   hsmstack all     --config run.cfg
//   hsmstack validate --set knn.k=0

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "hsmstack/pipeline.hpp"

namespace {

const std::vector<std::string> kChain{"synth", "hsm", "train", "infer", "stack", "analyze", "svm", "report"};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crowd-label probabilistic targets, stacked classifiers and entropy triage"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed");
  app.add_option("--out-dir", out_dir, "run directory holding every artifact");
  app.add_option("--set", overrides, "override a config key (key=value), repeatable");

  for (const auto& stage : hsmstack::stage_names()) app.add_subcommand(stage, "run the " + stage + " stage");
  app.add_subcommand("all", "run synth through report in order");
  app.add_subcommand("validate", "check the configuration without touching data");
  app.add_subcommand("config", "print the effective configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? hsmstack::kExitOk : hsmstack::kExitUsage;
  }

  hsmstack::PipelineConfig config;
  try {
    if (!config_path.empty()) config = hsmstack::load_config(config_path);
    for (const auto& o : overrides) hsmstack::apply_override(config, o);
  } catch (const hsmstack::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return hsmstack::kExitUsage;
  }
  if (seed) config.seed = *seed;
  if (!out_dir.empty()) config.out_dir = out_dir;

  const std::string command = app.get_subcommands().front()->get_name();
  if (command == "config") {
    std::cout << hsmstack::dump_config(config);
    return hsmstack::kExitOk;
  }
  if (command == "validate") {
    const auto problems = hsmstack::validate_config(config);
    for (const auto& p : problems) std::cout << p << '\n';
    if (problems.empty()) std::cout << "ok\n";
    return problems.empty() ? hsmstack::kExitOk : hsmstack::kExitUsage;
  }
  if (command == "all") {
    for (const auto& stage : kChain) {
      const int rc = hsmstack::run_stage(stage, config, std::cout, std::cerr);
      if (rc != hsmstack::kExitOk) return rc;
    }
    return hsmstack::kExitOk;
  }
  return hsmstack::run_stage(command, config, std::cout, std::cerr);
}
