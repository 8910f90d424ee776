// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Newline-delimited JSON tuning logs: reading, writing, replay verification,
// curve export and offline cost-model evaluation.

#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "loomtune/tuner.hpp"

namespace loomtune {

class LogError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string serialize_log(const std::vector<nlohmann::json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

inline void write_log(const std::string& path, const std::vector<nlohmann::json>& records) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw LogError("cannot open '" + path + "' for writing");
  f << serialize_log(records);
  if (!f) throw LogError("write to '" + path + "' failed");
}

/// Parses a log. Malformed or truncated lines are reported by line number.
inline std::vector<nlohmann::json> parse_log(const std::string& text) {
  std::vector<nlohmann::json> out;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error&) {
      throw LogError(str_cat("line ", lineno, ": truncated or malformed record"));
    }
    if (!out.back().is_object() || !out.back().contains("type"))
      throw LogError(str_cat("line ", lineno, ": record has no type"));
  }
  if (!text.empty() && text.back() != '\n') throw LogError(str_cat("line ", lineno, ": truncated record (no newline)"));
  if (out.empty()) throw LogError("empty log");
  const auto& h = out.front();
  if (h.at("type") != "header") throw LogError("line 1: expected a header record");
  if (!h.contains("schema") || h.at("schema") != kLogSchemaVersion)
    throw LogError(str_cat("schema version ", h.value("schema", nlohmann::json()).dump(), " is not supported (expected ",
                           kLogSchemaVersion, ")"));
  return out;
}

inline std::vector<nlohmann::json> read_log(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LogError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_log(ss.str());
}

/// The configuration and task DAGs a log was produced with.
struct LogContext {
  TuneConfig config;
  std::vector<DagPtr> dags;
};

inline LogContext log_context(const std::vector<nlohmann::json>& records) {
  LogContext c;
  c.config = config_from_json(records.front().at("config"));
  for (const auto& w : c.config.workloads) c.dags.push_back(WorkloadRegistry::instance().build(w.name, w.params));
  return c;
}

struct ReplayReport {
  size_t checked = 0;
  std::vector<std::string> mismatches;
  bool clean() const { return mismatches.empty(); }
};

namespace detail {

inline bool same_cost(const nlohmann::json& recorded, double measured) {
  if (recorded.is_null()) return !std::isfinite(measured);
  return recorded.is_number() && recorded.get<double>() == measured;
}

}  // namespace detail

/// Rebuilds every recorded program, measures it again and compares status,
/// cost and the running best against the log.
inline ReplayReport replay_log(const std::vector<nlohmann::json>& records) {
  const LogContext ctx = log_context(records);
  ReplayReport rep;
  MeasureState state;
  std::vector<double> best(ctx.dags.size(), std::numeric_limits<double>::infinity());
  size_t i = 1;
  while (i < records.size()) {
    if (records[i].at("type") != "measure") {
      ++i;
      continue;
    }
    const auto unit = records[i].at("unit").get<int64_t>();
    const auto task = records[i].at("task").get<size_t>();
    if (task >= ctx.dags.size()) throw LogError(str_cat("line ", i + 1, ": task id out of range"));
    std::vector<size_t> lines;
    std::vector<Program> progs;
    for (; i < records.size() && records[i].at("type") == "measure" && records[i].at("unit") == unit &&
           records[i].at("task") == task;
         ++i) {
      lines.push_back(i);
      try {
        progs.push_back(replay(ctx.dags[task], history_from_json(records[i].at("history"))));
      } catch (const std::exception&) {
        progs.emplace_back();  // measured as invalid: no DAG
      }
    }
    const auto seed = records[lines[0]].at("check_seed").get<uint64_t>();
    const auto results = measure_batch(progs, ctx.dags[task], ctx.config.machine, measure_limits(ctx.config, seed), state);
    for (size_t k = 0; k < lines.size(); ++k) {
      const auto& rec = records[lines[k]];
      const auto& r = results[k];
      ++rep.checked;
      const std::string where = str_cat("line ", lines[k] + 1, " (task ", task, ", iteration ", rec.value("iteration", -1), ")");
      if (rec.at("status") != to_string(r.status))
        rep.mismatches.push_back(str_cat(where, ": recorded status ", rec.at("status").dump(), ", measured ", to_string(r.status)));
      if (!detail::same_cost(rec.at("cost"), r.cost))
        rep.mismatches.push_back(str_cat(where, ": recorded cost ", rec.at("cost").dump(), ", measured ", cost_json(r.cost).dump()));
      if (r.status == MeasureStatus::Valid) best[task] = std::min(best[task], r.cost);
      if (!detail::same_cost(rec.at("best"), best[task]))
        rep.mismatches.push_back(str_cat(where, ": recorded best ", rec.at("best").dump(), ", recomputed ", cost_json(best[task]).dump()));
    }
  }
  return rep;
}

/// One CSV row per measured program: iteration, task, the task's best cost so
/// far and the objective over all tasks' best costs (empty until every task
/// has a measurement).
inline std::string export_curve(const std::vector<nlohmann::json>& records) {
  const LogContext ctx = log_context(records);
  std::vector<SchedTask> tasks;
  for (const auto& w : ctx.config.workloads) tasks.push_back({w.weight, w.dnn, 1, {}, ""});
  std::vector<int64_t> last_unit(tasks.size(), -1);
  std::ostringstream out;
  out.precision(17);
  out << "iteration,task,best_cost,objective\r\n";
  for (const auto& rec : records) {
    if (rec.at("type") != "measure") continue;
    const auto task = rec.at("task").get<size_t>();
    const auto unit = rec.at("unit").get<int64_t>();
    const auto& b = rec.at("best");
    out << rec.at("iteration").get<int64_t>() << ',' << task << ',';
    if (!b.is_null()) {
      out << b.get<double>();
      auto& g = tasks[task].g;
      if (unit != last_unit[task] || g.empty()) g.push_back(b.get<double>());
      else g.back() = b.get<double>();
      last_unit[task] = unit;
    }
    out << ',';
    const bool ready = std::all_of(tasks.begin(), tasks.end(), [](const SchedTask& t) { return !t.g.empty(); });
    if (ready) out << objective_value(ctx.config.objective, tasks);
    out << "\r\n";
  }
  return out.str();
}

struct ModelEvaluation {
  size_t train = 0, test = 0;
  EvalMetrics metrics;
};

inline nlohmann::json evaluation_to_json(const ModelEvaluation& e) {
  return {{"train", e.train},
          {"test", e.test},
          {"rmse", e.metrics.rmse},
          {"r2", e.metrics.r2},
          {"pairwise_accuracy", e.metrics.pairwise_accuracy},
          {"recall_at_k", e.metrics.recall_at_k}};
}

inline constexpr size_t kMinEvalRecords = 50;

/// Trains on a random 80% of the valid measurements and scores the rest.
inline ModelEvaluation eval_model(const std::vector<nlohmann::json>& records, size_t k, uint64_t split_seed) {
  const LogContext ctx = log_context(records);
  std::vector<std::pair<size_t, const nlohmann::json*>> valid;
  std::vector<double> best(ctx.dags.size(), std::numeric_limits<double>::infinity());
  for (const auto& rec : records) {
    if (rec.at("type") != "measure" || rec.at("status") != "valid") continue;
    const auto task = rec.at("task").get<size_t>();
    valid.emplace_back(task, &rec);
    best[task] = std::min(best[task], rec.at("cost").get<double>());
  }
  if (valid.size() < kMinEvalRecords)
    throw LogError(str_cat("eval-model needs at least ", kMinEvalRecords, " valid records, log has ", valid.size()));
  std::vector<ProgramSample> data;
  for (const auto& [task, rec] : valid) {
    const Program p = replay(ctx.dags[task], history_from_json(rec->at("history")));
    data.push_back({extract_features(p), best[task] / rec->at("cost").get<double>()});
  }
  Rng rng(split_seed);
  for (size_t i = data.size(); i > 1; --i)
    std::swap(data[i - 1], data[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i)))]);
  const size_t ntrain = data.size() * 4 / 5;
  std::vector<ProgramSample> train(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(ntrain));
  std::vector<ProgramSample> test(data.begin() + static_cast<std::ptrdiff_t>(ntrain), data.end());
  ModelEvaluation e;
  e.train = train.size();
  e.test = test.size();
  e.metrics = eval_metrics(train_cost_model(train, ctx.config.training), test, k);
  return e;
}

}  // namespace loomtune
