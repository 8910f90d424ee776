// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// The simulated machine: a deterministic cost computed from statement
// features, and batch measurement with validity checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "loomtune/features.hpp"
#include "loomtune/interpreter.hpp"
#include "loomtune/validate.hpp"

namespace loomtune {

struct MachineSpec {
  int64_t cores = 8;
  int64_t lanes = 8;
  double op_cost = 1.0;
  double miss_penalty = 8.0;
  double iteration_overhead = 0.5;

  void check() const {
    if (cores < 1 || lanes < 1 || !(op_cost > 0) || !(miss_penalty > 0) || !(iteration_overhead > 0))
      throw ConfigError("machine spec values must be positive");
  }
};

inline nlohmann::json spec_to_json(const MachineSpec& m) {
  return {{"cores", m.cores},
          {"lanes", m.lanes},
          {"op_cost", m.op_cost},
          {"miss_penalty", m.miss_penalty},
          {"iteration_overhead", m.iteration_overhead}};
}

inline MachineSpec spec_from_json(const nlohmann::json& j, MachineSpec m = {}) {
  m.cores = j.value("cores", m.cores);
  m.lanes = j.value("lanes", m.lanes);
  m.op_cost = j.value("op_cost", m.op_cost);
  m.miss_penalty = j.value("miss_penalty", m.miss_penalty);
  m.iteration_overhead = j.value("iteration_overhead", m.iteration_overhead);
  m.check();
  return m;
}

/// Cost of one statement from its feature vector alone.
inline double machine_cost_from_features(const FeatureVector& f, const MachineSpec& m = {}) {
  const double flops = f[1] + f[2] + f[3] + f[4] + f[5];
  double lanes = 1.0;
  const double vec_len = f[feat::kVectorize + feat::kGroupLen];
  const bool inner_spatial = f[feat::kVectorize + feat::kGroupPos + static_cast<size_t>(LoopPosition::InnerSpatial)] > 0;
  if (vec_len > 1 && inner_spatial) {
    bool unit = true;
    for (size_t b = 0; b < kBufferSlots; ++b) {
      const double s = f[feat::kBuffers + b * kBufferBlock + feat::kBufStride];
      unit = unit && (s == 0.0 || s == 1.0);
    }
    if (unit) lanes = std::min(static_cast<double>(m.lanes), vec_len);
  }
  const double par = f[feat::kParallel + feat::kGroupProd];
  const double threads = par >= 1.0 ? std::min(par, static_cast<double>(m.cores)) : 1.0;
  double unique_lines = 0;
  for (size_t b = 0; b < kBufferSlots; ++b) unique_lines += f[feat::kBuffers + b * kBufferBlock + feat::kBufUniqueLines];
  const double iterations = f[feat::kOther + 1];
  const double unrolled = std::max(1.0, f[feat::kUnroll + feat::kGroupProd]);
  return m.op_cost * flops / (lanes * threads) + unique_lines * m.miss_penalty / threads +
         m.iteration_overhead * iterations / unrolled;
}

inline double machine_cost(const Program& p, const MachineSpec& m = {}) {
  double total = 0;
  for (const auto& f : extract_features(p)) total += machine_cost_from_features(f, m);
  return total;
}

enum class MeasureStatus { Valid, Invalid, Timeout };

inline const char* to_string(MeasureStatus s) {
  switch (s) {
    case MeasureStatus::Valid: return "valid";
    case MeasureStatus::Invalid: return "invalid";
    case MeasureStatus::Timeout: return "timeout";
  }
  return "?";
}

struct MeasureResult {
  double cost = std::numeric_limits<double>::infinity();
  double throughput = 0.0;
  MeasureStatus status = MeasureStatus::Invalid;
  std::string error;
};

struct MeasureLimits {
  double cost_ceiling = std::numeric_limits<double>::infinity();
  int64_t spot_check_max_flops = int64_t{1} << 21;  // larger DAGs skip the interpreter check
  double tolerance = 1e-5;
  uint64_t seed = 0;
};

/// Best valid cost seen so far per DAG id.
struct MeasureState {
  std::map<std::string, double> best_cost;
};

inline std::vector<MeasureResult> measure_batch(const std::vector<Program>& programs, const DagPtr& dag,
                                                const MachineSpec& m, const MeasureLimits& limits,
                                                MeasureState& state) {
  std::vector<MeasureResult> out(programs.size());
  const bool spot_check = dag->flop_count() <= limits.spot_check_max_flops;
  for (size_t i = 0; i < programs.size(); ++i) {
    const Program& p = programs[i];
    MeasureResult& r = out[i];
    try {
      if (!p.dag || p.dag->id() != dag->id()) {
        r.error = "program targets a different DAG";
        continue;
      }
      const auto v = validate(p);
      if (!v) {
        r.error = v.message();
        continue;
      }
      if (spot_check) {
        const double err = program_error(p, derive_seed(limits.seed, i));
        if (!(err <= limits.tolerance)) {
          r.error = str_cat("interpreter mismatch, relative error ", err);
          continue;
        }
      }
      r.cost = machine_cost(p, m);
      if (!std::isfinite(r.cost) || r.cost <= 0) {
        r.error = "non-finite cost";
        continue;
      }
      r.status = r.cost > limits.cost_ceiling ? MeasureStatus::Timeout : MeasureStatus::Valid;
    } catch (const std::exception& e) {
      r.status = MeasureStatus::Invalid;
      r.error = e.what();
    }
  }
  double& best = state.best_cost.try_emplace(dag->id(), std::numeric_limits<double>::infinity()).first->second;
  for (const auto& r : out)
    if (r.status == MeasureStatus::Valid) best = std::min(best, r.cost);
  for (auto& r : out) r.throughput = r.status == MeasureStatus::Valid ? best / r.cost : 0.0;
  return out;
}

}  // namespace loomtune
