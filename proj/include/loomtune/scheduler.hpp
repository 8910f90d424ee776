// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Task scheduling: objectives over per-task latency histories, the gradient
// estimate used to rank tasks, and the epsilon-greedy task choice.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "loomtune/common.hpp"

namespace loomtune {

enum class ObjectiveKind { F1, F2, F3, F4 };

inline const char* to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::F1: return "F1";
    case ObjectiveKind::F2: return "F2";
    case ObjectiveKind::F3: return "F3";
    case ObjectiveKind::F4: return "F4";
  }
  return "?";
}

inline ObjectiveKind objective_kind_from_string(const std::string& s) {
  for (auto k : {ObjectiveKind::F1, ObjectiveKind::F2, ObjectiveKind::F3, ObjectiveKind::F4})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown objective kind '" + s + "' (expected F1, F2, F3 or F4)");
}

struct SchedulerParams {
  double alpha = 0.2;
  double beta = 2.0;
  int delta_t = 1;
  double epsilon = 0.05;
  int early_stop_window = 8;

  void check() const {
    if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("scheduler alpha must lie in [0, 1]");
    if (!(epsilon >= 0 && epsilon <= 1)) throw ConfigError("scheduler epsilon must lie in [0, 1]");
    if (!(beta > 0)) throw ConfigError("scheduler beta must be positive");
    if (delta_t < 1) throw ConfigError("scheduler delta_t must be at least 1");
    if (early_stop_window < 1) throw ConfigError("scheduler early_stop_window must be at least 1");
  }
};

struct Objective {
  ObjectiveKind kind = ObjectiveKind::F1;
  std::map<int, double> latency_requirement;  // L_j per DNN, F2
  std::map<int, double> reference_latency;    // B_j per DNN, F3
  int early_stop_window = 8;                  // F4
};

/// One task as the scheduler sees it. g[t - 1] is the best cost after t units.
struct SchedTask {
  double weight = 1;
  int dnn = 0;
  double flops = 1;
  std::vector<double> g;
  std::string signature;  // tasks with equal signatures are similar
};

inline nlohmann::json scheduler_to_json(const SchedulerParams& s) {
  return {{"alpha", s.alpha},     {"beta", s.beta}, {"delta_t", s.delta_t},
          {"epsilon", s.epsilon}, {"early_stop_window", s.early_stop_window}};
}

inline SchedulerParams scheduler_from_json(const nlohmann::json& j, SchedulerParams s = {}) {
  s.alpha = j.value("alpha", s.alpha);
  s.beta = j.value("beta", s.beta);
  s.delta_t = j.value("delta_t", s.delta_t);
  s.epsilon = j.value("epsilon", s.epsilon);
  s.early_stop_window = j.value("early_stop_window", s.early_stop_window);
  s.check();
  return s;
}

inline void check_objective(const Objective& obj, const std::vector<SchedTask>& tasks) {
  for (const auto& t : tasks) {
    if (obj.kind == ObjectiveKind::F2 && !obj.latency_requirement.count(t.dnn))
      throw ConfigError(str_cat("objective F2 needs a latency requirement for DNN ", t.dnn));
    if (obj.kind == ObjectiveKind::F3) {
      auto it = obj.reference_latency.find(t.dnn);
      if (it == obj.reference_latency.end() || !(it->second > 0))
        throw ConfigError(str_cat("objective F3 needs a positive reference latency for DNN ", t.dnn));
    }
  }
}

/// Early-stop value of a history: the latched latency once it has not
/// improved for `window` units, or nothing (-inf) while it still moves.
inline double early_stop_value(const std::vector<double>& g, int window) {
  for (size_t t = static_cast<size_t>(window); t < g.size(); ++t)
    if (!(g[t] < g[t - static_cast<size_t>(window)])) return g[t];
  return -std::numeric_limits<double>::infinity();
}

namespace detail {

/// Weighted latency sum per DNN.
inline std::map<int, double> dnn_sums(const std::vector<SchedTask>& tasks) {
  std::map<int, double> s;
  for (const auto& t : tasks) {
    LOOMTUNE_REQUIRE(!t.g.empty(), "every task needs a latency observation");
    s[t.dnn] += t.weight * t.g.back();
  }
  return s;
}

}  // namespace detail

inline double objective_value(const Objective& obj, const std::vector<SchedTask>& tasks) {
  check_objective(obj, tasks);
  const auto sums = detail::dnn_sums(tasks);
  switch (obj.kind) {
    case ObjectiveKind::F1: {
      double v = 0;
      for (const auto& [j, s] : sums) v += s;
      return v;
    }
    case ObjectiveKind::F2: {
      double v = 0;
      for (const auto& [j, s] : sums) v += std::max(s, obj.latency_requirement.at(j));
      return v;
    }
    case ObjectiveKind::F3: {
      double log_sum = 0;
      for (const auto& [j, s] : sums) log_sum += std::log(obj.reference_latency.at(j) / s);
      return -std::exp(log_sum / static_cast<double>(sums.size()));
    }
    case ObjectiveKind::F4: {
      double v = 0;
      for (const auto& t : tasks) v += t.weight * std::max(t.g.back(), early_stop_value(t.g, obj.early_stop_window));
      return v;
    }
  }
  return 0;
}

/// Partial derivative of the objective with respect to task i's latency.
inline double objective_partial(const Objective& obj, const std::vector<SchedTask>& tasks, size_t i) {
  check_objective(obj, tasks);
  const auto sums = detail::dnn_sums(tasks);
  const SchedTask& t = tasks[i];
  switch (obj.kind) {
    case ObjectiveKind::F1: return t.weight;
    case ObjectiveKind::F2: return sums.at(t.dnn) >= obj.latency_requirement.at(t.dnn) ? t.weight : 0.0;
    case ObjectiveKind::F3: {
      double log_sum = 0;
      for (const auto& [j, s] : sums) log_sum += std::log(obj.reference_latency.at(j) / s);
      const double m = static_cast<double>(sums.size());
      return std::exp(log_sum / m) * t.weight / (m * sums.at(t.dnn));
    }
    case ObjectiveKind::F4:
      // a latched task's term is frozen at its early-stop value
      return std::isinf(early_stop_value(t.g, obj.early_stop_window)) ? t.weight : 0.0;
  }
  return 0;
}

/// Tasks similar to i, i included.
inline std::vector<size_t> similar_tasks(const std::vector<SchedTask>& tasks, size_t i) {
  std::vector<size_t> out;
  for (size_t k = 0; k < tasks.size(); ++k)
    if (tasks[k].signature == tasks[i].signature) out.push_back(k);
  return out;
}

/// Estimated change of the objective per extra unit given to task i.
inline double approx_gradient(const std::vector<SchedTask>& tasks, size_t i, const Objective& obj,
                              const SchedulerParams& prm) {
  const SchedTask& t = tasks[i];
  const auto ti = static_cast<int>(t.g.size());
  LOOMTUNE_REQUIRE(ti >= 1, "approx_gradient needs at least one allocated unit");
  const double g = t.g.back();
  double backward = 0;
  if (ti > prm.delta_t) backward = (g - t.g[static_cast<size_t>(ti - 1 - prm.delta_t)]) / prm.delta_t;
  double forward = -g / ti;
  double max_speed = 0;
  for (size_t k : similar_tasks(tasks, i))
    if (!tasks[k].g.empty()) max_speed = std::max(max_speed, tasks[k].flops / tasks[k].g.back());
  if (max_speed > 0) forward = std::min(forward, prm.beta * t.flops / max_speed - g);
  return objective_partial(obj, tasks, i) * (prm.alpha * backward + (1 - prm.alpha) * forward);
}

enum class Pick { Warmup, Explore, Greedy };

inline const char* to_string(Pick p) {
  switch (p) {
    case Pick::Warmup: return "warmup";
    case Pick::Explore: return "explore";
    case Pick::Greedy: return "greedy";
  }
  return "?";
}

struct TaskChoice {
  size_t task = 0;
  Pick pick = Pick::Warmup;
  std::vector<double> gradients;  // empty during warmup
};

inline size_t argmax_abs(const std::vector<double>& v) {
  LOOMTUNE_REQUIRE(!v.empty(), "argmax of an empty vector");
  size_t best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  return best;
}

inline TaskChoice next_task(const std::vector<SchedTask>& tasks, const Objective& obj, const SchedulerParams& prm,
                            Rng& rng) {
  LOOMTUNE_REQUIRE(!tasks.empty(), "next_task needs at least one task");
  for (size_t i = 0; i < tasks.size(); ++i)
    if (tasks[i].g.empty()) return {i, Pick::Warmup, {}};
  TaskChoice c;
  for (size_t i = 0; i < tasks.size(); ++i) c.gradients.push_back(approx_gradient(tasks, i, obj, prm));
  if (rng.bernoulli(prm.epsilon)) {
    c.task = static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(tasks.size())));
    c.pick = Pick::Explore;
  } else {
    c.task = argmax_abs(c.gradients);
    c.pick = Pick::Greedy;
  }
  return c;
}

/// Runs `units` scheduling decisions. `run_unit(i)` spends one unit on task i
/// and returns its best cost so far.
inline void schedule(std::vector<SchedTask>& tasks, const Objective& obj, const SchedulerParams& prm, int units,
                     Rng& rng, const std::function<double(size_t)>& run_unit,
                     const std::function<void(const TaskChoice&)>& on_choice = {}) {
  prm.check();
  check_objective(obj, tasks);
  for (int u = 0; u < units; ++u) {
    const TaskChoice c = next_task(tasks, obj, prm, rng);
    if (on_choice) on_choice(c);
    double g = run_unit(c.task);
    auto& hist = tasks[c.task].g;
    if (!hist.empty()) g = std::min(g, hist.back());
    hist.push_back(g);
  }
}

}  // namespace loomtune
