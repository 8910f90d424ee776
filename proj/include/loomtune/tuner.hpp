// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Multi-task tuning run: configuration, the per-unit search round, and the
// log records it emits.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "loomtune/cost_model.hpp"
#include "loomtune/evolution.hpp"
#include "loomtune/machine_model.hpp"
#include "loomtune/scheduler.hpp"
#include "loomtune/sketch.hpp"
#include "loomtune/workloads.hpp"

namespace loomtune {

inline constexpr int kLogSchemaVersion = 1;

/// Full: all sketch rules, evolution and the learned model. Random: fresh
/// samples only. Limited: two-level tiling and no compute-location changes.
enum class SearchMode { Full, Random, Limited };

inline const char* to_string(SearchMode m) {
  switch (m) {
    case SearchMode::Full: return "full";
    case SearchMode::Random: return "random";
    case SearchMode::Limited: return "limited";
  }
  return "?";
}

struct WorkloadSpec {
  std::string name;
  WorkloadParams params;
  double weight = 1;
  int dnn = 0;
};

struct TuneConfig {
  std::vector<WorkloadSpec> workloads;
  Objective objective;
  SchedulerParams scheduler;
  int64_t budget = 96;  // measurements, naive baselines excluded
  int batch_size = 16;
  double explore_fraction = 0.25;   // share of each batch drawn fresh instead of from evolution
  uint64_t seed = 0;
  SearchMode search = SearchMode::Full;
  MachineSpec machine;
  AnnotationPolicy policy;
  EvolutionConfig evolution;
  TrainParams training;
  double cost_ceiling = std::numeric_limits<double>::infinity();
  int64_t spot_check_max_flops = int64_t{1} << 21;
  double tolerance = 1e-5;

  int64_t units() const { return (budget + batch_size - 1) / batch_size; }
};

namespace detail {

/// Reads one config field, turning type errors into a diagnostic naming it.
template <typename T>
T config_field(const nlohmann::json& j, const std::string& path, const std::string& key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config field '" + path + key + "': " + e.what());
  }
}

template <typename F>
auto config_section(const nlohmann::json& j, const std::string& key, F parse) {
  try {
    return parse(j.contains(key) ? j.at(key) : nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config field '" + key + "': " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError("config field '" + key + "': " + e.what());
  }
}

inline std::map<int, double> dnn_map(const nlohmann::json& j, const std::string& path) {
  std::map<int, double> out;
  if (!j.is_object()) throw ConfigError("config field '" + path + "': expected an object keyed by DNN id");
  for (const auto& [k, v] : j.items()) {
    try {
      out[std::stoi(k)] = v.get<double>();
    } catch (const std::exception& e) {
      throw ConfigError("config field '" + path + "." + k + "': " + e.what());
    }
  }
  return out;
}

inline nlohmann::json dnn_map_json(const std::map<int, double>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

}  // namespace detail

inline nlohmann::json train_to_json(const TrainParams& t) {
  return {{"num_trees", t.num_trees}, {"max_depth", t.max_depth}, {"shrinkage", t.shrinkage},
          {"lambda", t.lambda},       {"leaf_ridge", t.leaf_ridge}};
}

inline TrainParams train_from_json(const nlohmann::json& j, TrainParams t = {}) {
  t.num_trees = j.value("num_trees", t.num_trees);
  t.max_depth = j.value("max_depth", t.max_depth);
  t.shrinkage = j.value("shrinkage", t.shrinkage);
  t.lambda = j.value("lambda", t.lambda);
  t.leaf_ridge = j.value("leaf_ridge", t.leaf_ridge);
  if (t.num_trees < 0 || t.max_depth < 0) throw ConfigError("tree counts must be nonnegative");
  if (!(t.shrinkage > 0) || !(t.lambda >= 0) || !(t.leaf_ridge >= 0)) throw ConfigError("invalid training rates");
  return t;
}

inline nlohmann::json config_to_json(const TuneConfig& c) {
  nlohmann::json w = nlohmann::json::array();
  for (const auto& s : c.workloads)
    w.push_back({{"name", s.name}, {"params", s.params}, {"weight", s.weight}, {"dnn", s.dnn}});
  nlohmann::json j = {
      {"workloads", w},
      {"objective",
       {{"kind", to_string(c.objective.kind)},
        {"latency_requirement", detail::dnn_map_json(c.objective.latency_requirement)},
        {"reference_latency", detail::dnn_map_json(c.objective.reference_latency)}}},
      {"scheduler", scheduler_to_json(c.scheduler)},
      {"budget", c.budget},
      {"batch_size", c.batch_size},
      {"explore_fraction", c.explore_fraction},
      {"seed", c.seed},
      {"search", to_string(c.search)},
      {"machine", spec_to_json(c.machine)},
      {"policy", policy_to_json(c.policy)},
      {"evolution", evolution_to_json(c.evolution)},
      {"training", train_to_json(c.training)},
      {"measure",
       {{"cost_ceiling", std::isfinite(c.cost_ceiling) ? nlohmann::json(c.cost_ceiling) : nlohmann::json()},
        {"spot_check_max_flops", c.spot_check_max_flops},
        {"tolerance", c.tolerance}}}};
  return j;
}

/// Parses and checks a configuration. Errors name the offending field.
inline TuneConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  TuneConfig c;
  if (!j.contains("workloads") || !j.at("workloads").is_array() || j.at("workloads").empty())
    throw ConfigError("config field 'workloads': expected a nonempty array");
  const auto& reg = WorkloadRegistry::instance();
  for (size_t i = 0; i < j.at("workloads").size(); ++i) {
    const auto& w = j.at("workloads")[i];
    const std::string path = str_cat("workloads[", i, "].");
    WorkloadSpec s;
    s.name = detail::config_field<std::string>(w, path, "name", "");
    s.params = detail::config_field<WorkloadParams>(w, path, "params", {});
    s.weight = detail::config_field<double>(w, path, "weight", 1.0);
    s.dnn = detail::config_field<int>(w, path, "dnn", 0);
    if (!(s.weight >= 1)) throw ConfigError("config field '" + path + "weight': must be at least 1");
    try {
      reg.build(s.name, s.params);
    } catch (const ConfigError& e) {
      throw ConfigError("config field '" + path + "name': " + e.what());
    }
    c.workloads.push_back(std::move(s));
  }
  c.budget = detail::config_field<int64_t>(j, "", "budget", c.budget);
  c.batch_size = detail::config_field<int>(j, "", "batch_size", c.batch_size);
  c.seed = detail::config_field<uint64_t>(j, "", "seed", c.seed);
  c.explore_fraction = detail::config_field<double>(j, "", "explore_fraction", c.explore_fraction);
  if (c.batch_size < 1) throw ConfigError("config field 'batch_size': must be positive");
  if (!(c.explore_fraction >= 0 && c.explore_fraction <= 1))
    throw ConfigError("config field 'explore_fraction': must lie in [0, 1]");
  if (c.units() < static_cast<int64_t>(c.workloads.size()))
    throw ConfigError("config field 'budget': must give every workload at least one batch");
  const auto mode = detail::config_field<std::string>(j, "", "search", "full");
  if (mode == "full") c.search = SearchMode::Full;
  else if (mode == "random") c.search = SearchMode::Random;
  else if (mode == "limited") c.search = SearchMode::Limited;
  else throw ConfigError("config field 'search': expected full, random or limited");

  c.objective = detail::config_section(j, "objective", [](const nlohmann::json& o) {
    Objective obj;
    obj.kind = objective_kind_from_string(o.value("kind", std::string("F1")));
    if (o.contains("latency_requirement")) obj.latency_requirement = detail::dnn_map(o.at("latency_requirement"), "objective.latency_requirement");
    if (o.contains("reference_latency")) obj.reference_latency = detail::dnn_map(o.at("reference_latency"), "objective.reference_latency");
    return obj;
  });
  c.scheduler = detail::config_section(j, "scheduler", [](const nlohmann::json& s) { return scheduler_from_json(s); });
  c.objective.early_stop_window = c.scheduler.early_stop_window;
  c.machine = detail::config_section(j, "machine", [](const nlohmann::json& s) { return spec_from_json(s); });
  c.policy = detail::config_section(j, "policy", [](const nlohmann::json& s) { return policy_from_json(s); });
  c.evolution = detail::config_section(j, "evolution", [](const nlohmann::json& s) { return evolution_from_json(s); });
  c.training = detail::config_section(j, "training", [](const nlohmann::json& s) { return train_from_json(s); });
  detail::config_section(j, "measure", [&](const nlohmann::json& m) {
    if (m.contains("cost_ceiling") && !m.at("cost_ceiling").is_null()) c.cost_ceiling = m.at("cost_ceiling").get<double>();
    c.spot_check_max_flops = m.value("spot_check_max_flops", c.spot_check_max_flops);
    c.tolerance = m.value("tolerance", c.tolerance);
    if (!(c.cost_ceiling > 0) || !(c.tolerance > 0)) throw ConfigError("cost_ceiling and tolerance must be positive");
    return 0;
  });
  std::vector<SchedTask> probe;
  for (const auto& w : c.workloads) probe.push_back({w.weight, w.dnn, 1, {}, ""});
  detail::config_section(j, "objective", [&](const nlohmann::json&) {
    check_objective(c.objective, probe);
    return 0;
  });
  return c;
}

/// A task ready for tuning: its DAG, sketches and measured programs.
struct TuneTask {
  std::string name;
  WorkloadSpec spec;
  DagPtr dag;
  std::vector<Sketch> sketches;
  std::string signature;
  double naive_cost = 0;
  std::vector<std::pair<Program, double>> measured;  // valid programs and costs
  std::set<std::string> measured_keys;  // feature keys
  double best_cost = std::numeric_limits<double>::infinity();
  Program best_program;
};

/// Rule ids that fire anywhere in the sketch derivations.
inline std::string rule_signature(const std::vector<Sketch>& sketches) {
  std::set<int> ids;
  for (const auto& s : sketches) ids.insert(s.derivation.begin(), s.derivation.end());
  std::string out;
  for (int id : ids) out += str_cat(out.empty() ? "" : ",", id);
  return out;
}

inline SketchOptions sketch_options(SearchMode mode) {
  SketchOptions o;
  if (mode == SearchMode::Limited) o.tile_structure = "SRS";
  return o;
}

inline TuneTask make_task(const WorkloadSpec& spec, SearchMode mode, size_t index) {
  TuneTask t;
  t.spec = spec;
  t.name = spec.name;
  t.dag = WorkloadRegistry::instance().build(spec.name, spec.params);
  try {
    t.sketches = generate_sketches(t.dag, sketch_options(mode));
  } catch (const std::exception& e) {
    throw StructuralError(str_cat("task ", index, " (", spec.name, "): sketch generation failed: ", e.what()));
  }
  if (t.sketches.empty()) throw StructuralError(str_cat("task ", index, " (", spec.name, "): no sketches"));
  t.signature = rule_signature(t.sketches);
  return t;
}

inline nlohmann::json task_to_json(const TuneTask& t, size_t index) {
  return {{"id", index},           {"name", t.name},          {"params", t.spec.params},
          {"weight", t.spec.weight}, {"dnn", t.spec.dnn},        {"dag", t.dag->id()},
          {"flops", t.dag->flop_count()}, {"signature", t.signature}, {"sketches", t.sketches.size()}};
}

inline nlohmann::json cost_json(double c) { return std::isfinite(c) ? nlohmann::json(c) : nlohmann::json(); }

struct TuneResult {
  std::vector<TuneTask> tasks;
  std::vector<nlohmann::json> log;
  std::vector<int64_t> allocation;
};

inline MeasureLimits measure_limits(const TuneConfig& c, uint64_t check_seed) {
  MeasureLimits l;
  l.cost_ceiling = c.cost_ceiling;
  l.spot_check_max_flops = c.spot_check_max_flops;
  l.tolerance = c.tolerance;
  l.seed = check_seed;
  return l;
}

/// Normalized throughput labels over every valid measurement.
inline std::vector<ProgramSample> training_set(const std::vector<TuneTask>& tasks) {
  std::vector<ProgramSample> data;
  for (const auto& t : tasks)
    for (const auto& [p, cost] : t.measured) data.push_back({extract_features(p), t.best_cost / cost});
  return data;
}

namespace detail {

/// Up to `n` fresh samples whose keys are not in `exclude`.
inline std::vector<Program> fresh_samples(const TuneTask& t, const AnnotationPolicy& pol, size_t n,
                                          std::set<std::string>& exclude, Rng& rng) {
  std::vector<Program> out;
  for (size_t tries = 0; out.size() < n && tries < 20 * n + 20; ++tries) {
    Program p = sample_program(rng.pick(t.sketches).program, pol, rng);
    if (exclude.insert(feature_key(p)).second) out.push_back(std::move(p));
  }
  return out;
}

}  // namespace detail

/// Runs a full tuning session.
inline TuneResult tune(const TuneConfig& cfg) {
  TuneResult res;
  for (size_t i = 0; i < cfg.workloads.size(); ++i) res.tasks.push_back(make_task(cfg.workloads[i], cfg.search, i));
  auto& tasks = res.tasks;
  res.allocation.assign(tasks.size(), 0);

  AnnotationPolicy pol = cfg.policy;
  EvolutionConfig evo = cfg.evolution;
  if (cfg.search == SearchMode::Limited) {
    pol.compute_location_prob = 0;
    evo.mutation_weights[3] = 0;
  }

  nlohmann::json task_list = nlohmann::json::array();
  for (size_t i = 0; i < tasks.size(); ++i) task_list.push_back(task_to_json(tasks[i], i));
  res.log.push_back({{"type", "header"}, {"schema", kLogSchemaVersion}, {"seed", cfg.seed},
                     {"config", config_to_json(cfg)}, {"tasks", task_list}});

  MeasureState mstate;
  int64_t iteration = 0;
  auto record = [&](int64_t unit, size_t ti, const std::vector<Program>& progs, const std::vector<double>& predicted,
                    uint64_t check_seed) {
    TuneTask& t = tasks[ti];
    const auto results = measure_batch(progs, t.dag, cfg.machine, measure_limits(cfg, check_seed), mstate);
    for (size_t k = 0; k < progs.size(); ++k) {
      const auto& r = results[k];
      t.measured_keys.insert(feature_key(progs[k]));
      if (r.status == MeasureStatus::Valid) {
        t.measured.emplace_back(progs[k], r.cost);
        if (r.cost < t.best_cost) {
          t.best_cost = r.cost;
          t.best_program = progs[k];
        }
      }
      res.log.push_back({{"type", "measure"},
                         {"iteration", iteration++},
                         {"unit", unit},
                         {"task", ti},
                         {"batch_index", k},
                         {"check_seed", check_seed},
                         {"history", history_to_json(progs[k].history)},
                         {"predicted", predicted[k]},
                         {"cost", cost_json(r.cost)},
                         {"status", to_string(r.status)},
                         {"error", r.error},
                         {"best", cost_json(t.best_cost)},
                         {"allocation", res.allocation}});
    }
  };

  // The naive program is measured first so every task has a baseline.
  for (size_t i = 0; i < tasks.size(); ++i) {
    Program naive = replay(tasks[i].dag, {});  // bounds inferred
    tasks[i].naive_cost = machine_cost(naive, cfg.machine);
    record(0, i, {naive}, {0.0}, derive_seed(cfg.seed, 0, i));
  }

  CostModel model;
  bool trained = false;
  const Scorer scorer = [&](const std::vector<Program>& ps) {
    std::vector<double> out(ps.size(), 0.0);
    if (trained)
      for (size_t i = 0; i < ps.size(); ++i) out[i] = model.predict(ps[i]);
    return out;
  };

  std::vector<SchedTask> sched;
  for (const auto& t : tasks)
    sched.push_back({t.spec.weight, t.spec.dnn, static_cast<double>(t.dag->flop_count()), {}, t.signature});
  Rng sched_rng(derive_seed(cfg.seed, 0x5c4ed));
  int64_t unit = 0, spent = 0;

  auto run_unit = [&](size_t ti) {
    ++unit;
    TuneTask& t = tasks[ti];
    const auto n = static_cast<size_t>(std::min<int64_t>(cfg.batch_size, cfg.budget - spent));
    Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(unit)));
    std::set<std::string> exclude = t.measured_keys;
    std::vector<Program> batch;
    std::vector<double> predicted;
    if (cfg.search == SearchMode::Random) {
      batch = detail::fresh_samples(t, pol, n, exclude, rng);
      predicted.assign(batch.size(), 0.0);
    } else {
      std::vector<std::pair<double, size_t>> order;
      for (size_t k = 0; k < t.measured.size(); ++k) order.emplace_back(t.measured[k].second, k);
      std::sort(order.begin(), order.end());
      const auto pop = static_cast<size_t>(evo.population);
      const auto reuse = std::min(order.size(), static_cast<size_t>(std::floor(evo.measured_fraction * static_cast<double>(pop))));
      std::vector<Program> init;
      for (size_t k = 0; k < reuse; ++k) init.push_back(t.measured[order[k].second].first);
      std::set<std::string> seen;
      for (const auto& p : init) seen.insert(feature_key(p));
      for (auto& p : detail::fresh_samples(t, pol, pop - init.size(), seen, rng)) init.push_back(std::move(p));
      EvolutionConfig e = evo;
      e.k = static_cast<int>(std::min<size_t>(n, pop));
      const auto out = evolve(init, scorer, e, pol, derive_seed(cfg.seed, static_cast<uint64_t>(unit), 1), exclude,
                              feature_key);
      const auto explore = static_cast<size_t>(std::ceil(cfg.explore_fraction * static_cast<double>(n)));
      for (const auto& c : out.best) {
        if (batch.size() + explore >= n) break;
        exclude.insert(feature_key(c.program));
        batch.push_back(c.program);
        predicted.push_back(c.fitness);
      }
      nlohmann::json stats = nlohmann::json::array();
      for (const auto& s : out.stats) stats.push_back(stats_to_json(s));
      res.log.push_back({{"type", "evolution"}, {"unit", unit}, {"task", ti}, {"stats", stats}});
      for (auto& p : detail::fresh_samples(t, pol, n - batch.size(), exclude, rng)) {
        predicted.push_back(scorer({p})[0]);
        batch.push_back(std::move(p));
      }
    }
    ++res.allocation[ti];
    spent += static_cast<int64_t>(n);
    record(unit, ti, batch, predicted, derive_seed(cfg.seed, static_cast<uint64_t>(unit), 2));
    if (cfg.search != SearchMode::Random) {
      model = train_cost_model(training_set(tasks), cfg.training);
      trained = true;
    }
    return t.best_cost;
  };

  schedule(sched, cfg.objective, cfg.scheduler, static_cast<int>(cfg.units()), sched_rng, run_unit,
           [&](const TaskChoice& c) {
             res.log.push_back({{"type", "decision"},
                                {"unit", unit + 1},
                                {"task", c.task},
                                {"pick", to_string(c.pick)},
                                {"gradients", c.gradients},
                                {"allocation", res.allocation}});
           });
  return res;
}

/// Per-task summary: naive cost, best cost and their ratio.
inline nlohmann::json tune_summary(const TuneResult& r) {
  nlohmann::json tasks = nlohmann::json::array();
  for (size_t i = 0; i < r.tasks.size(); ++i) {
    const auto& t = r.tasks[i];
    tasks.push_back({{"task", i},
                     {"name", t.name},
                     {"units", r.allocation[i]},
                     {"naive_cost", t.naive_cost},
                     {"best_cost", cost_json(t.best_cost)},
                     {"speedup", t.naive_cost / t.best_cost}});
  }
  return {{"type", "summary"}, {"tasks", tasks}};
}

}  // namespace loomtune
