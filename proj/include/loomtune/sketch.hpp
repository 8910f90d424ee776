// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Sketch generation: derivation rules applied over the DAG from the output
// towards the inputs. A sketch fixes the high-level loop structure and leaves
// tile sizes, unroll steps and annotations for the sampler.

#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "loomtune/compute_dag.hpp"
#include "loomtune/transform.hpp"

namespace loomtune {

struct SketchState {
  Program program;
  int index = 0;                // 1-based position in producer order; 0 = terminal
  std::vector<int> derivation;  // rule ids applied so far
};

/// What a rule sees: the current state and the node it is positioned on.
struct RuleContext {
  const SketchState& state;
  const ComputeNode& node;
  std::string stage;   // working stage for the node ("<node>.local" after a cache write)
  NodeTraits traits;   // evaluated on the current state
  const std::string& tile_structure;
};

/// A derivation rule. `apply` returns the successor states, or nothing when
/// the rule does not fire.
struct SketchRule {
  int id = 0;
  std::string name;
  std::function<std::vector<SketchState>(const RuleContext&)> apply;
};

struct SketchOptions {
  AnalysisConfig analysis;
  std::string tile_structure = "SSRSRS";
  size_t max_states = 10000;
  std::vector<SketchRule> extra_rules;  // tried after the built-in rules
};

struct Sketch {
  Program program;
  std::vector<int> derivation;
};

/// Number of levels each loop kind gets under a structure string like "SSRSRS".
inline std::pair<int, int> structure_levels(const std::string& structure) {
  int s = 0, r = 0;
  for (char c : structure) {
    if (c == 'S') ++s;
    else if (c == 'R') ++r;
    else throw ConfigError("tile structure may only contain 'S' and 'R': " + structure);
  }
  if (s == 0) throw ConfigError("tile structure needs at least one 'S' level");
  return {s, r};
}

/// Steps that split every loop of a naive stage into levels and reorder them
/// by the structure string. Tile sizes are placeholders.
inline std::vector<RewriteStep> multi_level_tile_steps(const Stage& s, const std::string& structure) {
  const auto [ns, nr] = structure_levels(structure);
  std::vector<RewriteStep> steps;
  const int nloops = static_cast<int>(s.loops.size());
  std::vector<int> levels(static_cast<size_t>(nloops));
  for (int l = nloops - 1; l >= 0; --l) {
    const bool red = s.loops[static_cast<size_t>(l)].kind == LoopKind::Reduction;
    const int c = red ? std::max(nr, 1) : ns;
    levels[static_cast<size_t>(l)] = c;
    if (c > 1) steps.push_back(RewriteStep::split(s.name, l, std::vector<int64_t>(static_cast<size_t>(c - 1), 0)));
  }
  std::vector<int> base(static_cast<size_t>(nloops), 0);
  for (int l = 1; l < nloops; ++l) base[static_cast<size_t>(l)] = base[static_cast<size_t>(l - 1)] + levels[static_cast<size_t>(l - 1)];
  std::vector<int> order;
  int si = 0, ri = 0;
  for (char c : structure) {
    const bool red = c == 'R';
    const int level = red ? ri++ : si++;
    for (int l = 0; l < nloops; ++l)
      if ((s.loops[static_cast<size_t>(l)].kind == LoopKind::Reduction) == red)
        order.push_back(base[static_cast<size_t>(l)] + level);
  }
  if (nr == 0)  // reduction loops stay innermost when the structure has no R level
    for (int l = 0; l < nloops; ++l)
      if (s.loops[static_cast<size_t>(l)].kind == LoopKind::Reduction) order.push_back(base[static_cast<size_t>(l)]);
  steps.push_back(RewriteStep::reorder(s.name, order, structure));
  return steps;
}

/// Name of the loop a fused consumer attaches after: the last loop of the
/// deepest space level that precedes the first reduction level.
inline std::string fusion_loop_name(const Stage& tiled, const std::string& structure) {
  int level = -1;
  for (char c : structure) {
    if (c == 'R') break;
    ++level;
  }
  std::string name;
  for (const auto& l : tiled.loops)
    if (l.kind == LoopKind::Space && l.name.size() > 2 && l.name.substr(l.name.rfind('.') + 1) == std::to_string(level))
      name = l.name;
  return name;
}

namespace detail {

/// The single non-inlined consumer reading `name` element-wise with the same
/// shape and no reduction; empty if there is none.
inline std::string fusible_consumer(const Program& p, const std::string& name) {
  std::vector<const Stage*> cons;
  for (const auto& s : p.stages)
    if (!s.inlined && s.name != name && stage_reads_buffer(s, name)) cons.push_back(&s);
  if (cons.size() != 1) return {};
  const Stage& c = *cons[0];
  const Stage& w = p.stage(name);
  if (c.reduce != ReduceKind::None || c.out_shape != w.out_shape || !plain_outputs(c)) return {};
  bool ok = true;
  for_each_read(c.body, [&](const ExprNode& r) {
    if (r.buffer != name) return;
    if (r.indices.size() != c.out_index.size()) {
      ok = false;
      return;
    }
    for (size_t d = 0; d < r.indices.size(); ++d)
      ok = ok && r.indices[d].is_plain() && r.indices[d].affine == AffineExpr::var(c.out_index[d].iter);
  });
  return ok ? c.name : std::string();
}

inline SketchState advance(const SketchState& s, Program p, int next_index, int rule) {
  SketchState out{std::move(p), next_index, s.derivation};
  out.derivation.push_back(rule);
  return out;
}

}  // namespace detail

/// The six built-in rules in table order.
inline std::vector<SketchRule> builtin_sketch_rules() {
  std::vector<SketchRule> rules;
  rules.push_back({1, "skip", [](const RuleContext& c) -> std::vector<SketchState> {
                     if (!c.node.placeholder && c.traits.strict_inlinable &&
                         !c.state.program.dag->is_output(c.node.name))
                       return {};
                     return {detail::advance(c.state, c.state.program, c.state.index - 1, 1)};
                   }});
  rules.push_back({2, "always_inline", [](const RuleContext& c) -> std::vector<SketchState> {
                     if (c.node.placeholder || !c.traits.strict_inlinable ||
                         c.state.program.dag->is_output(c.node.name))
                       return {};
                     Program p = apply_step(c.state.program, RewriteStep::compute_inline(c.stage));
                     return {detail::advance(c.state, std::move(p), c.state.index - 1, 2)};
                   }});
  rules.push_back({3, "multi_level_tiling", [](const RuleContext& c) -> std::vector<SketchState> {
                     if (c.node.placeholder || !c.traits.has_data_reuse) return {};
                     const Stage& w = c.state.program.stage(c.stage);
                     Program p = apply_steps(c.state.program, multi_level_tile_steps(w, c.tile_structure));
                     return {detail::advance(c.state, std::move(p), c.state.index - 1, 3)};
                   }});
  rules.push_back({4, "multi_level_tiling_with_fusion", [](const RuleContext& c) -> std::vector<SketchState> {
                     if (c.node.placeholder || !c.traits.has_data_reuse || !c.traits.has_fusible_consumer) return {};
                     const std::string consumer = detail::fusible_consumer(c.state.program, c.stage);
                     const Stage& w = c.state.program.stage(c.stage);
                     Program p = apply_steps(c.state.program, multi_level_tile_steps(w, c.tile_structure));
                     const std::string at = fusion_loop_name(p.stage(c.stage), c.tile_structure);
                     p = apply_step(p, RewriteStep::compute_at(consumer, c.stage, at));
                     return {detail::advance(c.state, std::move(p), c.state.index - 1, 4)};
                   }});
  rules.push_back({5, "add_cache_stage", [](const RuleContext& c) -> std::vector<SketchState> {
                     if (c.node.placeholder || !c.traits.has_data_reuse || c.traits.has_fusible_consumer ||
                         c.state.program.has_stage(c.node.name + ".local"))
                       return {};
                     Program p = apply_step(c.state.program, RewriteStep::cache_write(c.stage));
                     return {detail::advance(c.state, std::move(p), c.state.index, 5)};
                   }});
  rules.push_back({6, "reduction_factorization", [](const RuleContext& c) -> std::vector<SketchState> {
                     if (c.node.placeholder || !c.traits.has_more_reduction_parallel ||
                         c.state.program.has_stage(c.stage + ".rf"))
                       return {};
                     const Stage& w = c.state.program.stage(c.stage);
                     std::vector<RewriteStep> steps;
                     int first = -1, count = 0;
                     for (size_t l = 0; l < w.loops.size(); ++l)
                       if (w.loops[l].kind == LoopKind::Reduction) {
                         if (first < 0) first = static_cast<int>(l);
                         ++count;
                       }
                     if (first < 0) return {};
                     for (int k = 1; k < count; ++k) steps.push_back(RewriteStep::fuse(c.stage, first));
                     steps.push_back(RewriteStep::rfactor(c.stage, first, 0));
                     Program p = apply_steps(c.state.program, steps);
                     return {detail::advance(c.state, std::move(p), c.state.index - 1, 6)};
                   }});
  return rules;
}

/// Traits of a node in the current state: node-level analyses from the DAG,
/// fusibility from the current stages.
inline NodeTraits state_traits(const Program& p, const ComputeNode& n, const std::string& stage,
                               const AnalysisConfig& cfg) {
  if (n.placeholder) return {};
  NodeTraits t = analyze_node(*p.dag, n.name, cfg);
  t.has_fusible_consumer = !detail::fusible_consumer(p, stage).empty();
  return t;
}

/// All sketches reachable by the rules, deduplicated by simplified structure,
/// in discovery order.
inline std::vector<Sketch> generate_sketches(const DagPtr& dag, const SketchOptions& opts = {}) {
  structure_levels(opts.tile_structure);
  auto rules = builtin_sketch_rules();
  rules.insert(rules.end(), opts.extra_rules.begin(), opts.extra_rules.end());
  const auto& order = dag->producer_order();

  std::vector<Sketch> out;
  std::vector<Program> seen;
  std::deque<SketchState> work;
  Program start = naive_program(dag);
  infer_bounds(start);
  work.push_back({start, static_cast<int>(order.size()), {}});
  size_t states = 0;
  while (!work.empty()) {
    if (++states > opts.max_states) throw StepError("sketch generation exceeded the state limit");
    SketchState st = std::move(work.front());
    work.pop_front();
    if (st.index == 0) {
      Program simple = simplify(st.program);
      const bool dup = std::any_of(seen.begin(), seen.end(), [&](const Program& q) { return q.same_structure(simple); });
      if (!dup) {
        seen.push_back(simple);
        out.push_back({std::move(st.program), std::move(st.derivation)});
      }
      continue;
    }
    const ComputeNode& node = dag->node(order[static_cast<size_t>(st.index - 1)]);
    std::string stage = node.name;
    if (st.program.has_stage(node.name + ".local")) stage = node.name + ".local";
    RuleContext ctx{st, node, stage, state_traits(st.program, node, stage, opts.analysis), opts.tile_structure};
    for (const auto& rule : rules) {
      std::vector<SketchState> next;
      try {
        next = rule.apply(ctx);
      } catch (const StepError&) {
        continue;  // the rule does not apply to this state
      }
      for (auto& n : next) work.push_back(std::move(n));
    }
  }
  return out;
}

}  // namespace loomtune
