// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the loomtune tool. Each returns the process
// exit status and writes its report to `out`.

#pragma once

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "json.hpp"
#include "loomtune/tuning_log.hpp"

namespace loomtune {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitMismatch = 3;

inline nlohmann::json load_config_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

/// Seed precedence: config file, then LOOMTUNE_SEED, then the explicit override.
inline int cmd_tune(const std::string& config_path, const std::string& log_path, std::optional<int64_t> budget,
                    std::optional<uint64_t> seed, std::ostream& out) {
  nlohmann::json j = load_config_json(config_path);
  if (const char* env = std::getenv("LOOMTUNE_SEED")) {
    try {
      j["seed"] = std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("LOOMTUNE_SEED is not an unsigned integer: ") + env);
    }
  }
  if (seed) j["seed"] = *seed;
  if (budget) j["budget"] = *budget;
  const TuneConfig cfg = config_from_json(j);
  TuneResult r = tune(cfg);
  const auto summary = tune_summary(r);
  r.log.push_back(summary);
  write_log(log_path, r.log);
  out << summary.dump(2) << "\n";
  return kExitOk;
}

inline int cmd_replay(const std::string& log_path, std::ostream& out) {
  const auto rep = replay_log(read_log(log_path));
  for (const auto& m : rep.mismatches) out << "mismatch: " << m << "\n";
  out << "checked " << rep.checked << " measurements, " << rep.mismatches.size() << " mismatches\n";
  return rep.clean() ? kExitOk : kExitMismatch;
}

inline int cmd_export_curve(const std::string& log_path, const std::string& csv_path) {
  const std::string csv = export_curve(read_log(log_path));
  std::ofstream f(csv_path, std::ios::binary);
  if (!f) throw LogError("cannot open '" + csv_path + "' for writing");
  f << csv;
  return f ? kExitOk : kExitError;
}

inline int cmd_eval_model(const std::string& log_path, size_t k, uint64_t split_seed, std::ostream& out) {
  const auto e = eval_model(read_log(log_path), k, split_seed);
  auto j = evaluation_to_json(e);
  j["k"] = k;
  j["split_seed"] = split_seed;
  out << j.dump(2) << "\n";
  return kExitOk;
}

inline int cmd_list_workloads(std::ostream& out) {
  const auto& reg = WorkloadRegistry::instance();
  for (const auto& name : reg.names()) {
    const auto& e = reg.entry(name);
    std::ostringstream params;
    for (const auto& [k, v] : e.defaults) params << ' ' << k << '=' << v;
    out << name << params.str() << "  # " << e.description << "\n";
  }
  return kExitOk;
}

}  // namespace loomtune
