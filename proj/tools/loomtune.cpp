// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "loomtune/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"loomtune: search-based tensor program tuning on a simulated machine"};
  app.require_subcommand(1);

  std::string config, out, log;
  std::optional<int64_t> budget;
  std::optional<uint64_t> seed;
  size_t k = 30;
  uint64_t split_seed = 0;

  auto* tune = app.add_subcommand("tune", "run a tuning session and write its log");
  tune->add_option("--config", config, "JSON configuration")->required()->check(CLI::ExistingFile);
  tune->add_option("--out", out, "log file to write")->required();
  tune->add_option("--budget", budget, "override the measurement budget");
  tune->add_option("--seed", seed, "override the seed");

  auto* replay = app.add_subcommand("replay", "re-measure every logged program and compare");
  replay->add_option("log", log, "tuning log")->required()->check(CLI::ExistingFile);

  auto* curve = app.add_subcommand("export-curve", "write the tuning curve as CSV");
  curve->add_option("log", log, "tuning log")->required()->check(CLI::ExistingFile);
  curve->add_option("--out", out, "CSV file to write")->required();

  auto* eval = app.add_subcommand("eval-model", "train on 80% of a log and score the rest");
  eval->add_option("log", log, "tuning log")->required()->check(CLI::ExistingFile);
  eval->add_option("--k", k, "recall cut-off")->check(CLI::PositiveNumber);
  eval->add_option("--split-seed", split_seed, "seed of the train/test split");

  auto* list = app.add_subcommand("list-workloads", "list registered workloads and their default parameters");

  CLI11_PARSE(app, argc, argv);
  using namespace loomtune;
  try {
    if (*tune) return cmd_tune(config, out, budget, seed, std::cout);
    if (*replay) return cmd_replay(log, std::cout);
    if (*curve) return cmd_export_curve(log, out);
    if (*eval) return cmd_eval_model(log, k, split_seed, std::cout);
    if (*list) return cmd_list_workloads(std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
