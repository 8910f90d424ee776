// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "loomtune/scheduler.hpp"
#include "loomtune/tuning_log.hpp"

using namespace loomtune;

namespace {

SchedTask task(double w, std::vector<double> g, int dnn = 0, double flops = 1, std::string sig = "") {
  return {w, dnn, flops, std::move(g), std::move(sig)};
}

TuneConfig tiny_config(uint64_t seed = 3) {
  TuneConfig c;
  c.workloads = {{"matmul_relu", {{"N", 16}, {"M", 16}, {"K", 16}}, 1, 0},
                 {"matrix_norm", {{"N", 16}, {"M", 16}}, 2, 0}};
  c.budget = 64;
  c.batch_size = 8;
  c.seed = seed;
  c.evolution.population = 24;
  c.evolution.generations = 2;
  c.training.num_trees = 8;
  return c;
}

std::vector<nlohmann::json> tiny_log() {
  static const std::vector<nlohmann::json> log = tune(tiny_config()).log;
  return log;
}

size_t count_type(const std::vector<nlohmann::json>& log, const std::string& type) {
  return static_cast<size_t>(std::count_if(log.begin(), log.end(), [&](const auto& r) { return r.at("type") == type; }));
}

}  // namespace

TEST(Objective, TableExamples) {
  Objective f1;
  EXPECT_DOUBLE_EQ(objective_value(f1, {task(2, {3}), task(1, {4})}), 10.0);

  Objective f2;
  f2.kind = ObjectiveKind::F2;
  f2.latency_requirement = {{0, 12}};
  EXPECT_DOUBLE_EQ(objective_value(f2, {task(2, {3}), task(1, {4})}), 12.0);

  Objective f3;
  f3.kind = ObjectiveKind::F3;
  f3.reference_latency = {{0, 8}};
  EXPECT_DOUBLE_EQ(objective_value(f3, {task(1, {4})}), -2.0);
}

TEST(Objective, F3GeometricMeanOverDnns) {
  Objective f3;
  f3.kind = ObjectiveKind::F3;
  f3.reference_latency = {{0, 8}, {1, 16}};
  // speedups 2 and 8 -> geometric mean 4
  EXPECT_NEAR(objective_value(f3, {task(1, {4}, 0), task(1, {2}, 1)}), -4.0, 1e-12);
}

TEST(Objective, F4UsesTheLatchedValue) {
  Objective f4;
  f4.kind = ObjectiveKind::F4;
  f4.early_stop_window = 2;
  // Still improving: plain weighted latency.
  EXPECT_DOUBLE_EQ(objective_value(f4, {task(1, {9, 8, 7})}), 7.0);
  // Stagnant for two units at 5: latched, further gains no longer count.
  EXPECT_DOUBLE_EQ(early_stop_value({9, 5, 5, 5, 4}, 2), 5.0);
  EXPECT_DOUBLE_EQ(objective_value(f4, {task(1, {9, 5, 5, 5, 4})}), 5.0);
  EXPECT_DOUBLE_EQ(objective_partial(f4, {task(1, {9, 5, 5, 5, 4})}, 0), 0.0);
  EXPECT_DOUBLE_EQ(objective_partial(f4, {task(3, {9, 8, 7})}, 0), 3.0);
}

TEST(Objective, MissingParametersAreConfigErrors) {
  Objective f2;
  f2.kind = ObjectiveKind::F2;
  EXPECT_THROW(objective_value(f2, {task(1, {1})}), ConfigError);
  Objective f3;
  f3.kind = ObjectiveKind::F3;
  f3.reference_latency = {{0, 0}};
  EXPECT_THROW(objective_value(f3, {task(1, {1})}), ConfigError);
}

TEST(Objective, PartialsMatchFiniteDifferences) {
  const std::vector<SchedTask> base = {task(2, {3}, 0), task(1, {4}, 0), task(3, {5}, 1)};
  Objective f1;
  Objective f2;
  f2.kind = ObjectiveKind::F2;
  f2.latency_requirement = {{0, 5}, {1, 100}};
  Objective f3;
  f3.kind = ObjectiveKind::F3;
  f3.reference_latency = {{0, 20}, {1, 30}};
  for (const Objective* obj : {&f1, &f2, &f3})
    for (size_t i = 0; i < base.size(); ++i) {
      const double h = 1e-6;
      auto up = base, down = base;
      up[i].g[0] += h;
      down[i].g[0] -= h;
      const double fd = (objective_value(*obj, up) - objective_value(*obj, down)) / (2 * h);
      EXPECT_NEAR(objective_partial(*obj, base, i), fd, 1e-6) << to_string(obj->kind) << " task " << i;
    }
}

TEST(Gradient, Examples) {
  Objective f1;
  SchedulerParams p;
  p.alpha = 1;
  p.delta_t = 1;
  EXPECT_DOUBLE_EQ(approx_gradient({task(1, {14, 10})}, 0, f1, p), -4.0);

  p.alpha = 0;
  p.beta = 1.3;  // beta * C / max V = 1.3 * 10 = 13
  EXPECT_DOUBLE_EQ(approx_gradient({task(1, {14, 10}, 0, 50)}, 0, f1, p), -5.0);
  p.beta = 0.3;  // 3
  EXPECT_DOUBLE_EQ(approx_gradient({task(1, {14, 10}, 0, 50)}, 0, f1, p), -7.0);
}

TEST(Gradient, SimilarTasksSetTheSpeedBar) {
  Objective f1;
  SchedulerParams p;
  p.alpha = 0;
  p.beta = 1;
  // task 1 runs 100 flops in 2 units of cost (speed 50); task 0 with 1000
  // flops could reach 1000 / 50 = 20, below its current 30.
  std::vector<SchedTask> ts = {task(1, {40, 30}, 0, 1000, "mm"), task(1, {2}, 0, 100, "mm")};
  EXPECT_DOUBLE_EQ(approx_gradient(ts, 0, f1, p), std::min(-30.0 / 2, 20.0 - 30.0));
  ts[1].signature = "other";
  EXPECT_DOUBLE_EQ(approx_gradient(ts, 0, f1, p), std::min(-15.0, 1.0 * 1000 / (1000.0 / 30) - 30));
}

TEST(Gradient, NeedsAnObservation) {
  Objective f1;
  EXPECT_THROW(approx_gradient({task(1, {})}, 0, f1, {}), ContractViolation);
}

TEST(NextTask, WarmupIsRoundRobin) {
  Objective f1;
  Rng rng(1);
  const auto c = next_task({task(1, {5}), task(1, {}), task(1, {})}, f1, {}, rng);
  EXPECT_EQ(c.pick, Pick::Warmup);
  EXPECT_EQ(c.task, 1u);
  const auto d = next_task({task(1, {5}), task(1, {3}), task(1, {})}, f1, {}, rng);
  EXPECT_EQ(d.task, 2u);
}

TEST(NextTask, GreedyArgmaxWithLowestIndexTies) {
  EXPECT_EQ(argmax_abs({7, -2}), 0u);
  EXPECT_EQ(argmax_abs({-2, -7}), 1u);
  EXPECT_EQ(argmax_abs({3, -3, 1}), 0u);
  EXPECT_EQ(argmax_abs({21, -6, 3}), argmax_abs({7, -2, 1}));  // scale invariant
  Objective f1;
  SchedulerParams p;
  p.epsilon = 0;
  p.alpha = 1;
  Rng rng(2);
  const auto c = next_task({task(1, {20, 13}), task(1, {20, 18})}, f1, p, rng);
  EXPECT_EQ(c.pick, Pick::Greedy);
  EXPECT_EQ(c.task, 0u);
  ASSERT_EQ(c.gradients.size(), 2u);
  EXPECT_DOUBLE_EQ(c.gradients[0], -7.0);
  EXPECT_DOUBLE_EQ(c.gradients[1], -2.0);
}

TEST(NextTask, FullExplorationIsUniform) {
  Objective f1;
  SchedulerParams p;
  p.epsilon = 1;
  Rng rng(3);
  const std::vector<SchedTask> ts = {task(1, {5}), task(1, {9}), task(1, {1}), task(1, {2})};
  std::vector<int> count(ts.size(), 0);
  const int n = 100000;
  for (int t = 0; t < n; ++t) ++count[next_task(ts, f1, p, rng).task];
  for (int c : count) EXPECT_NEAR(c / double(n), 0.25, 0.02);
}

TEST(Schedule, HighLatencyTaskGetsMostUnits) {
  // Synthetic tuning curves: each unit closes part of the gap to a floor.
  Objective f1;
  SchedulerParams p;
  std::vector<SchedTask> ts = {task(1, {}), task(1, {})};
  const double start[] = {1000, 100};
  Rng rng(4);
  std::vector<int> units(2, 0);
  schedule(ts, f1, p, 42, rng, [&](size_t i) {
    ++units[i];
    return start[i] * (0.3 + 0.7 / units[i]);
  });
  EXPECT_EQ(units[0] + units[1], 42);
  EXPECT_GE(units[0] - 1, 24);  // >= 60% of the 40 post-warmup units
  for (const auto& t : ts)
    for (size_t k = 1; k < t.g.size(); ++k) EXPECT_LE(t.g[k], t.g[k - 1]);
}

TEST(Config, RoundTripAndDiagnostics) {
  const TuneConfig c = tiny_config();
  const auto j = config_to_json(c);
  EXPECT_EQ(config_to_json(config_from_json(j)), j);

  auto bad = j;
  bad["workloads"][0]["params"]["N"] = "many";
  try {
    config_from_json(bad);
    FAIL() << "expected a config error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("workloads[0].params"), std::string::npos) << e.what();
  }
  bad = j;
  bad["workloads"][0]["name"] = "no_such_workload";
  EXPECT_THROW(config_from_json(bad), ConfigError);
  bad = j;
  bad["objective"] = {{"kind", "F2"}};
  EXPECT_THROW(config_from_json(bad), ConfigError);
}

TEST(Tune, BudgetOfOneBatchPerTaskIsPureWarmup) {
  TuneConfig c = tiny_config();
  c.budget = static_cast<int64_t>(c.workloads.size()) * c.batch_size;
  const auto r = tune(c);
  EXPECT_EQ(r.allocation, (std::vector<int64_t>{1, 1}));
  const auto log = r.log;
  EXPECT_EQ(count_type(log, "measure"), c.workloads.size() + static_cast<size_t>(c.budget));
  for (const auto& rec : log)
    if (rec.at("type") == "decision") EXPECT_EQ(rec.at("pick"), "warmup");
}

TEST(Tune, DeterministicAndBestNonIncreasing) {
  const auto a = serialize_log(tune(tiny_config(5)).log);
  const auto b = serialize_log(tune(tiny_config(5)).log);
  EXPECT_EQ(a, b);
  const auto log = parse_log(a);
  std::map<size_t, double> best;
  size_t measured = 0;
  for (const auto& rec : log) {
    if (rec.at("type") != "measure") continue;
    if (rec.at("unit") != 0) ++measured;
    const auto t = rec.at("task").get<size_t>();
    if (rec.at("best").is_null()) continue;
    const double v = rec.at("best").get<double>();
    if (best.count(t)) EXPECT_LE(v, best[t]);
    best[t] = v;
  }
  EXPECT_EQ(measured, 64u);
}

TEST(Tune, SummaryReportsSpeedups) {
  const auto r = tune(tiny_config());
  const auto s = tune_summary(r);
  ASSERT_EQ(s.at("tasks").size(), 2u);
  for (const auto& t : s.at("tasks")) EXPECT_GE(t.at("speedup").get<double>(), 1.0);
}

TEST(Log, ParseRoundTrip) {
  const auto log = tiny_log();
  EXPECT_EQ(parse_log(serialize_log(log)), log);
  EXPECT_EQ(log.front().at("type"), "header");
  EXPECT_EQ(log.front().at("schema"), kLogSchemaVersion);
  EXPECT_GT(count_type(log, "decision"), 0u);
  EXPECT_GT(count_type(log, "evolution"), 0u);
}

TEST(Log, TruncatedAndMalformedFilesNameTheLine) {
  const std::string text = serialize_log(tiny_log());
  const std::string cut = text.substr(0, text.size() - 20);
  const auto lines = static_cast<size_t>(std::count(cut.begin(), cut.end(), '\n')) + 1;
  try {
    parse_log(cut);
    FAIL() << "expected a log error";
  } catch (const LogError& e) {
    EXPECT_NE(std::string(e.what()).find("line " + std::to_string(lines)), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_log(""), LogError);
  EXPECT_THROW(parse_log("{\"type\":\"measure\"}\n"), LogError);
  EXPECT_THROW(parse_log("{\"type\":\"header\",\"schema\":99}\n"), LogError);
  EXPECT_THROW(parse_log("{\"type\":\"header\",\"schema\":1}\nnot json\n"), LogError);
}

TEST(Log, ReplayIsCleanAndCatchesTampering) {
  auto log = tiny_log();
  const auto rep = replay_log(log);
  EXPECT_TRUE(rep.clean()) << (rep.mismatches.empty() ? "" : rep.mismatches[0]);
  EXPECT_EQ(rep.checked, count_type(log, "measure"));

  for (auto& rec : log)
    if (rec.at("type") == "measure" && rec.at("status") == "valid" && rec.at("unit") != 0) {
      rec["cost"] = rec.at("cost").get<double>() * 0.5;
      break;
    }
  const auto bad = replay_log(log);
  EXPECT_FALSE(bad.clean());
}

TEST(Log, CurveRowsAndMonotonicity) {
  const auto log = tiny_log();
  const std::string csv = export_curve(log);
  ASSERT_EQ(csv.rfind("iteration,task,best_cost,objective\r\n", 0), 0u);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  size_t rows = 0;
  double prev_obj = std::numeric_limits<double>::infinity();
  std::map<int, double> prev_best;
  while (std::getline(in, line)) {
    ASSERT_FALSE(line.empty());
    ASSERT_EQ(line.back(), '\r');
    line.pop_back();
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    ASSERT_EQ(cells.size(), 4u) << line;
    EXPECT_EQ(std::stoll(cells[0]), static_cast<long long>(rows));
    const int t = std::stoi(cells[1]);
    if (!cells[2].empty()) {
      const double b = std::stod(cells[2]);
      if (prev_best.count(t)) EXPECT_LE(b, prev_best[t]);
      prev_best[t] = b;
    }
    if (!cells[3].empty()) {
      const double o = std::stod(cells[3]);
      EXPECT_LE(o, prev_obj * (1 + 1e-15));
      prev_obj = o;
    }
    ++rows;
  }
  EXPECT_EQ(rows, count_type(log, "measure"));
  EXPECT_TRUE(std::isfinite(prev_obj));
}

TEST(Log, EvalModelNeedsEnoughRecords) {
  auto log = tiny_log();
  const auto e = eval_model(log, 5, 1);
  EXPECT_EQ(e.train + e.test, static_cast<size_t>(std::count_if(log.begin(), log.end(), [](const auto& r) {
              return r.at("type") == "measure" && r.at("status") == "valid";
            })));
  EXPECT_GE(e.metrics.pairwise_accuracy, 0.0);
  EXPECT_LE(e.metrics.pairwise_accuracy, 1.0);
  const auto again = eval_model(log, 5, 1);
  EXPECT_EQ(evaluation_to_json(again), evaluation_to_json(e));
  EXPECT_THROW(eval_model(log, 10000, 1), ContractViolation);
  log.resize(20);
  EXPECT_THROW(eval_model(log, 5, 1), LogError);
}
