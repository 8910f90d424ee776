// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Evolutionary fine-tuning. Every operator edits the rewrite history and
// replays it, so children are valid by construction or rejected.

#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "loomtune/annotation.hpp"
#include "loomtune/features.hpp"
#include "loomtune/validate.hpp"

namespace loomtune {

struct EvolutionConfig {
  int population = 128;
  int generations = 4;
  double mutation_prob = 0.85;
  double crossover_prob = 0.15;
  std::vector<double> mutation_weights = {1, 1, 1, 1};  // tile size, parallel, pragma, compute location
  int k = 16;
  double epsilon = 0.05;
  double measured_fraction = 0.5;   // share of the initial population taken from measured programs

  void check() const {
    if (population < 1 || generations < 0 || k < 1) throw ConfigError("evolution sizes must be positive");
    if (k > population) throw ConfigError("evolution output count k must not exceed the population");
    if (mutation_prob < 0 || crossover_prob < 0 || std::abs(mutation_prob + crossover_prob - 1.0) > 1e-9)
      throw ConfigError("mutation and crossover probabilities must sum to 1");
    if (mutation_weights.size() != 4) throw ConfigError("expected four mutation weights");
    double s = 0;
    for (double w : mutation_weights) {
      if (w < 0) throw ConfigError("mutation weights must be nonnegative");
      s += w;
    }
    if (s <= 0) throw ConfigError("at least one mutation weight must be positive");
    if (!(epsilon >= 0 && epsilon <= 1)) throw ConfigError("epsilon must lie in [0, 1]");
    if (!(measured_fraction >= 0 && measured_fraction <= 1 - epsilon))
      throw ConfigError("measured_fraction must lie in [0, 1 - epsilon]");
  }
};

inline nlohmann::json evolution_to_json(const EvolutionConfig& c) {
  return {{"population", c.population},       {"generations", c.generations},
          {"mutation_prob", c.mutation_prob}, {"crossover_prob", c.crossover_prob},
          {"mutation_weights", c.mutation_weights}, {"k", c.k},
          {"epsilon", c.epsilon}, {"measured_fraction", c.measured_fraction}};
}

inline EvolutionConfig evolution_from_json(const nlohmann::json& j, EvolutionConfig c = {}) {
  c.population = j.value("population", c.population);
  c.generations = j.value("generations", c.generations);
  c.mutation_prob = j.value("mutation_prob", c.mutation_prob);
  c.crossover_prob = j.value("crossover_prob", c.crossover_prob);
  c.mutation_weights = j.value("mutation_weights", c.mutation_weights);
  c.k = j.value("k", c.k);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.measured_fraction = j.value("measured_fraction", std::min(c.measured_fraction, 1 - c.epsilon));
  c.check();
  return c;
}

struct Candidate {
  Program program;
  double fitness = 0.0;
};

/// Identity of a program for deduplication.
inline std::string program_key(const Program& p) { return history_to_json(p.history).dump(); }

/// Identity up to what the cost model can see: programs with equal feature
/// vectors are indistinguishable to it.
inline std::string feature_key(const Program& p) {
  std::string out;
  for (const auto& f : extract_features(p)) out.append(reinterpret_cast<const char*>(f.data()), sizeof(double) * f.size());
  return out;
}

using ProgramKey = std::function<std::string(const Program&)>;

inline constexpr double kFitnessFloor = 1e-12;

/// Fitness-proportional draw. `uniform_fallback` is set when no fitness is positive.
inline size_t select_parent(const std::vector<double>& fitness, Rng& rng, bool* uniform_fallback = nullptr) {
  LOOMTUNE_REQUIRE(!fitness.empty(), "select_parent needs a nonempty population");
  const bool any_positive = std::any_of(fitness.begin(), fitness.end(), [](double f) { return f > 0; });
  if (uniform_fallback) *uniform_fallback = !any_positive;
  if (!any_positive) return static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(fitness.size())));
  double total = 0;
  for (double f : fitness) {
    LOOMTUNE_REQUIRE(std::isfinite(f), "fitness must be finite");
    total += std::max(f, kFitnessFloor);
  }
  double u = rng.uniform() * total;
  for (size_t i = 0; i < fitness.size(); ++i) {
    u -= std::max(fitness[i], kFitnessFloor);
    if (u < 0) return i;
  }
  return fitness.size() - 1;
}

inline size_t select_parent(const std::vector<Candidate>& pop, Rng& rng, bool* uniform_fallback = nullptr) {
  std::vector<double> f;
  for (const auto& c : pop) f.push_back(c.fitness);
  return select_parent(f, rng, uniform_fallback);
}

namespace detail {

/// Full extent of the split loop at each Split step (0 for other steps).
inline std::vector<int64_t> split_extents(const DagPtr& dag, const std::vector<RewriteStep>& hist) {
  std::vector<int64_t> out(hist.size(), 0);
  Program p = naive_program(dag);
  for (size_t i = 0; i < hist.size(); ++i) {
    const auto& st = hist[i];
    if (st.kind == StepKind::Split) {
      const Stage& s = p.stage(st.stage);
      check_loop(s, st.loop);
      out[i] = s.loops[static_cast<size_t>(st.loop)].full_extent();
    }
    apply_step_in_place(p, st);
  }
  return out;
}

inline std::optional<Program> try_finalize(const DagPtr& dag, const std::vector<RewriteStep>& hist) {
  try {
    Program p = finalize_history(dag, hist);
    if (validate(p)) return p;
  } catch (const StepError&) {
  }
  return std::nullopt;
}

inline std::string step_node(const std::string& stage) {
  std::string s = stage;
  for (bool changed = true; changed;) {
    changed = false;
    for (const std::string suffix : {".local", ".rf"})
      if (s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0) {
        s.resize(s.size() - suffix.size());
        changed = true;
      }
  }
  return s;
}

}  // namespace detail

/// Moves a factor between two tile levels of one split. nullopt: not applicable.
inline std::optional<Program> mutate_tile_size(const Program& p, Rng& rng) {
  auto hist = structural_history(p.history);
  std::vector<size_t> splits;
  for (size_t i = 0; i < hist.size(); ++i)
    if (hist[i].kind == StepKind::Split) splits.push_back(i);
  if (splits.empty()) return std::nullopt;
  const auto extents = detail::split_extents(p.dag, hist);
  std::vector<size_t> movable;
  for (size_t i : splits)
    if (extents[i] > 1) movable.push_back(i);
  if (movable.empty()) return std::nullopt;
  for (int attempt = 0; attempt < 8; ++attempt) {
    const size_t si = rng.pick(movable);
    auto& st = hist[si];
    std::vector<int64_t> levels{extents[si]};
    for (auto f : st.factors) {
      levels[0] /= std::max<int64_t>(f, 1);
      levels.push_back(std::max<int64_t>(f, 1));
    }
    std::vector<size_t> sources;
    for (size_t l = 0; l < levels.size(); ++l)
      if (levels[l] > 1) sources.push_back(l);
    const size_t src = rng.pick(sources);
    auto ds = divisors(levels[src]);
    ds.erase(ds.begin());  // drop 1
    const int64_t f = rng.pick(ds);
    size_t dst = static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(levels.size()) - 1));
    if (dst >= src) ++dst;
    const auto saved = st.factors;
    levels[src] /= f;
    levels[dst] *= f;
    st.factors.assign(levels.begin() + 1, levels.end());
    if (auto child = detail::try_finalize(p.dag, hist)) return child;
    st.factors = saved;
  }
  return std::nullopt;
}

/// Fuses the parallel loop with its inner neighbour, or splits it keeping the
/// outer part parallel.
inline std::optional<Program> mutate_parallel(const Program& p, Rng& rng) {
  const auto hist = structural_history(p.history);
  std::vector<size_t> ann;
  for (size_t i = 0; i < hist.size(); ++i)
    if (hist[i].kind == StepKind::Annotate && hist[i].annotation == Annotation::Parallel) ann.push_back(i);
  if (ann.empty()) return std::nullopt;
  for (int attempt = 0; attempt < 8; ++attempt) {
    const size_t a = rng.pick(ann);
    const auto& st = hist[a];
    std::vector<RewriteStep> h2 = hist;
    if (rng.bernoulli(0.5)) {
      h2.insert(h2.begin() + static_cast<std::ptrdiff_t>(a), RewriteStep::fuse(st.stage, st.loop));
    } else {
      Program before = replay(p.dag, std::vector<RewriteStep>(hist.begin(), hist.begin() + static_cast<std::ptrdiff_t>(a) + 1));
      const Loop& l = before.stage(st.stage).loops[static_cast<size_t>(st.loop)];
      auto fs = aligned_factors(l);
      fs.erase(std::remove_if(fs.begin(), fs.end(), [&](int64_t f) { return f == 1 || f == l.full_extent(); }), fs.end());
      if (fs.empty()) continue;
      h2.insert(h2.begin() + static_cast<std::ptrdiff_t>(a) + 1, RewriteStep::split(st.stage, st.loop, {rng.pick(fs)}));
    }
    if (auto child = detail::try_finalize(p.dag, h2)) return child;
  }
  return std::nullopt;
}

/// Replaces one stage's unroll pragma with a different value from the set.
inline std::optional<Program> mutate_pragma(const Program& p, const std::vector<int64_t>& values, Rng& rng) {
  if (values.size() < 2) return std::nullopt;
  auto hist = structural_history(p.history);
  std::vector<std::string> stages;
  for (const auto& s : p.stages)
    if (!s.inlined) stages.push_back(s.name);
  if (stages.empty()) return std::nullopt;
  const std::string name = rng.pick(stages);
  const int64_t current = p.stage(name).auto_unroll_max_step;
  std::vector<int64_t> others;
  for (auto v : values)
    if (v != current && std::find(others.begin(), others.end(), v) == others.end()) others.push_back(v);
  if (others.empty()) return std::nullopt;
  const int64_t v = rng.pick(others);
  bool replaced = false;
  for (size_t i = hist.size(); i-- > 0;)
    if (hist[i].kind == StepKind::Pragma && hist[i].stage == name) {
      hist[i].value = v;
      replaced = true;
      break;
    }
  if (!replaced) hist.push_back(RewriteStep::pragma(name, v));
  return detail::try_finalize(p.dag, hist);
}

/// Moves a flexible stage to another valid attach point (Root included).
inline std::optional<Program> mutate_compute_location(const Program& p, Rng& rng) {
  auto flex = flexible_stages(p);
  while (!flex.empty()) {
    const size_t i = static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(flex.size())));
    const std::string name = flex[i];
    flex.erase(flex.begin() + static_cast<std::ptrdiff_t>(i));
    const auto opts = compute_location_options(p, name);
    if (opts.empty()) continue;
    auto hist = structural_history(p.history);
    hist.erase(std::remove_if(hist.begin(), hist.end(),
                              [&](const RewriteStep& s) { return s.kind == StepKind::ComputeAt && s.stage == name; }),
               hist.end());
    hist.push_back(rng.pick(opts));
    if (auto child = detail::try_finalize(p.dag, hist)) return child;
  }
  return std::nullopt;
}

/// Node-based crossover. nullopt: the merged program is infeasible.
inline std::optional<Program> crossover(const Program& a, const Program& b, Rng& rng) {
  LOOMTUNE_REQUIRE(a.dag && b.dag && a.dag->id() == b.dag->id(), "crossover parents must share a DAG");
  const auto ha = structural_history(a.history), hb = structural_history(b.history);
  std::vector<RewriteStep> body, attach;
  for (const auto& node : a.dag->producer_order()) {
    if (a.dag->node(node).placeholder) continue;
    const auto& src = rng.bernoulli(0.5) ? ha : hb;
    for (const auto& st : src) {
      if (detail::step_node(st.stage) != node) continue;
      (st.kind == StepKind::ComputeAt ? attach : body).push_back(st);
    }
  }
  body.insert(body.end(), attach.begin(), attach.end());
  return detail::try_finalize(a.dag, body);
}

struct GenerationStats {
  int generation = 0;
  double best = 0, median = 0;
  int crossovers = 0, infeasible = 0, not_applicable = 0;
  bool uniform_fallback = false;
};

inline nlohmann::json stats_to_json(const GenerationStats& s) {
  return {{"generation", s.generation}, {"best", s.best},
          {"median", s.median},         {"crossovers", s.crossovers},
          {"infeasible", s.infeasible}, {"not_applicable", s.not_applicable},
          {"uniform_fallback", s.uniform_fallback}};
}

/// Scores a batch of programs; higher is better.
using Scorer = std::function<std::vector<double>(const std::vector<Program>&)>;

namespace detail {

inline std::optional<Program> mutate(const Program& p, const EvolutionConfig& cfg, const AnnotationPolicy& pol, Rng& rng,
                                     int& not_applicable) {
  std::vector<double> w = cfg.mutation_weights;
  for (int tries = 0; tries < 4; ++tries) {
    double total = 0;
    for (double x : w) total += x;
    if (total <= 0) break;
    double u = rng.uniform() * total;
    size_t op = 0;
    for (; op + 1 < w.size(); ++op) {
      u -= w[op];
      if (u < 0) break;
    }
    std::optional<Program> child;
    switch (op) {
      case 0: child = mutate_tile_size(p, rng); break;
      case 1: child = mutate_parallel(p, rng); break;
      case 2: child = mutate_pragma(p, pol.unroll_values, rng); break;
      default: child = mutate_compute_location(p, rng); break;
    }
    if (child) return child;
    ++not_applicable;
    w[op] = 0;  // resample among the remaining operators
  }
  return std::nullopt;
}

}  // namespace detail

struct EvolutionResult {
  std::vector<Candidate> best;  // best-ever, highest fitness first
  std::vector<GenerationStats> stats;
};

/// Runs the evolutionary search and returns the k best distinct programs seen
/// whose keys are not in `exclude`. Programs with equal keys count once.
inline EvolutionResult evolve(const std::vector<Program>& initial, const Scorer& score, const EvolutionConfig& cfg,
                              const AnnotationPolicy& pol, uint64_t seed, const std::set<std::string>& exclude = {},
                              const ProgramKey& key_of = program_key) {
  LOOMTUNE_REQUIRE(!initial.empty(), "evolve needs a nonempty initial population");
  cfg.check();
  EvolutionResult res;
  std::map<std::string, Candidate> seen;
  auto record = [&](const std::vector<Program>& progs, const std::vector<double>& fit) {
    for (size_t i = 0; i < progs.size(); ++i) {
      const auto key = key_of(progs[i]);
      if (exclude.count(key) || seen.count(key)) continue;
      seen.emplace(key, Candidate{progs[i], std::isfinite(fit[i]) ? fit[i] : 0.0});
    }
  };
  auto stats_of = [](int gen, std::vector<double> f) {
    GenerationStats s;
    s.generation = gen;
    std::sort(f.begin(), f.end());
    s.best = f.back();
    s.median = f[f.size() / 2];
    return s;
  };

  std::vector<Program> pop = initial;
  std::vector<double> fit = score(pop);
  record(pop, fit);
  res.stats.push_back(stats_of(0, fit));
  for (int gen = 1; gen <= cfg.generations; ++gen) {
    GenerationStats st;
    std::vector<Program> next;
    for (int slot = 0; static_cast<int>(next.size()) < cfg.population; ++slot) {
      Rng rng(derive_seed(seed, static_cast<uint64_t>(gen), static_cast<uint64_t>(slot)));
      bool fallback = false;
      const Program& pa = pop[select_parent(fit, rng, &fallback)];
      st.uniform_fallback = st.uniform_fallback || fallback;
      std::optional<Program> child;
      if (pop.size() > 1 && rng.bernoulli(cfg.crossover_prob)) {
        ++st.crossovers;
        const Program& pb = pop[select_parent(fit, rng, &fallback)];
        child = crossover(pa, pb, rng);
        if (!child) ++st.infeasible;
      }
      if (!child) child = detail::mutate(pa, cfg, pol, rng, st.not_applicable);
      next.push_back(child ? std::move(*child) : pa);
    }
    pop = std::move(next);
    fit = score(pop);
    record(pop, fit);
    auto s = stats_of(gen, fit);
    st.generation = gen;
    st.best = s.best;
    st.median = s.median;
    res.stats.push_back(st);
  }
  for (auto& [key, c] : seen) res.best.push_back(std::move(c));
  std::stable_sort(res.best.begin(), res.best.end(),
                   [](const Candidate& x, const Candidate& y) { return x.fitness > y.fitness; });
  if (res.best.size() > static_cast<size_t>(cfg.k)) res.best.resize(static_cast<size_t>(cfg.k));
  return res;
}

}  // namespace loomtune
