// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Naive lowering of a DAG into root loop nests, plus loop-part helpers shared
// by the rewrite steps.

#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "loomtune/compute_dag.hpp"
#include "loomtune/program.hpp"

namespace loomtune {

namespace detail {

inline void drop_unit_parts(std::vector<LoopPart>& parts) {
  parts.erase(std::remove_if(parts.begin(), parts.end(), [](const LoopPart& p) { return p.extent == 1; }),
              parts.end());
}

inline Loop make_loop(const std::string& name, LoopKind kind, int iter, int64_t extent) {
  Loop l;
  l.name = name;
  l.kind = kind;
  if (extent > 1) l.parts.push_back({iter, 1, extent, extent});
  return l;
}

inline std::vector<Loop> naive_loops(const std::vector<IterVar>& iters) {
  std::vector<Loop> loops;
  for (size_t i = 0; i < iters.size(); ++i)
    loops.push_back(make_loop(iters[i].name, iters[i].reduction ? LoopKind::Reduction : LoopKind::Space,
                              static_cast<int>(i), iters[i].extent));
  return loops;
}

/// Splits a digit list (outer first) so that the inner result has product f.
/// Throws when f does not align with the mixed-radix structure.
inline std::pair<std::vector<LoopPart>, std::vector<LoopPart>> split_parts(const std::vector<LoopPart>& parts,
                                                                           int64_t f) {
  std::vector<LoopPart> outer, inner;
  if (f == 1) return {parts, inner};
  int64_t p = 1;
  for (int idx = static_cast<int>(parts.size()) - 1; idx >= 0; --idx) {
    const auto& c = parts[static_cast<size_t>(idx)];
    if (p == f) {
      outer.assign(parts.begin(), parts.begin() + idx + 1);
      inner.assign(parts.begin() + idx + 1, parts.end());
      return {outer, inner};
    }
    if (f % p != 0) break;
    const int64_t q = f / p;
    if (c.extent % q == 0) {
      outer.assign(parts.begin(), parts.begin() + idx);
      outer.push_back({c.iter, c.stride * q, c.extent / q, c.extent / q});
      inner.push_back({c.iter, c.stride, q, q});
      inner.insert(inner.end(), parts.begin() + idx + 1, parts.end());
      drop_unit_parts(outer);
      return {outer, inner};
    }
    if (q % c.extent != 0) break;
    p *= c.extent;
  }
  if (p == f) return {outer, parts};
  throw StepError(str_cat("split factor ", f, " does not align with the loop structure"));
}

/// Remaps attach loop indices of stages attached to `target` after its loops
/// were rearranged. `remap(old)` returns the new index, or -2 if the loop is gone.
inline void remap_attach(Program& p, const std::string& target, const std::function<int(int)>& remap) {
  for (auto& s : p.stages) {
    if (s.attach.kind == AttachKind::Root || s.attach.target != target || s.attach.loop < 0) continue;
    s.attach.loop = remap(s.attach.loop);
  }
}

inline bool plain_outputs(const Stage& s) {
  return std::all_of(s.out_index.begin(), s.out_index.end(), [](const OutputDim& d) { return d.plain(); });
}

inline bool has_attached(const Program& p, const std::string& name) {
  return std::any_of(p.stages.begin(), p.stages.end(), [&](const Stage& s) {
    return !s.inlined && s.attach.kind != AttachKind::Root && s.attach.target == name;
  });
}

inline Stage& stage_for(Program& p, const RewriteStep& step) {
  Stage& s = p.stage(step.stage);
  if (s.inlined) throw StepError("stage '" + s.name + "' is inlined");
  return s;
}

inline void check_loop(const Stage& s, int loop) {
  if (loop < 0 || loop >= static_cast<int>(s.loops.size()))
    throw StepError(str_cat("dangling loop reference: stage '", s.name, "' has no loop ", loop));
}

}  // namespace detail

/// The untransformed program: one root stage per computed node, loops in
/// iterator order, producers first.
inline Program naive_program(const DagPtr& dag) {
  Program p;
  p.dag = dag;
  for (const auto& name : dag->producer_order()) {
    const auto& n = dag->node(name);
    if (n.placeholder) continue;
    Stage s;
    s.name = n.name;
    s.node = n.name;
    s.iters = n.iters;
    s.reduce = n.reduce;
    s.body = n.body;
    for (size_t i = 0; i < n.iters.size(); ++i)
      if (!n.iters[i].reduction) s.out_index.push_back({static_cast<int>(i), {}});
    s.out_shape = n.shape();
    s.loops = detail::naive_loops(n.iters);
    p.stages.push_back(std::move(s));
  }
  return p;
}

}  // namespace loomtune
