// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Random completion of sketches: tile sizes, parallel and vector loops,
// unroll pragmas, compute-location tweaks and constant layout packing.

#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "loomtune/sketch.hpp"
#include "loomtune/transform.hpp"
#include "loomtune/validate.hpp"

namespace loomtune {

struct AnnotationPolicy {
  int64_t max_vectorize_extent = 16;
  std::vector<int64_t> unroll_values = {0, 16, 64, 512};
  double compute_location_prob = 0.1;
  bool parallel = true;

  void check() const {
    if (unroll_values.empty()) throw ConfigError("unroll value set must be nonempty");
    if (!(compute_location_prob >= 0.0 && compute_location_prob <= 1.0))
      throw ConfigError("compute location probability must lie in [0, 1]");
    if (max_vectorize_extent < 1) throw ConfigError("max_vectorize_extent must be positive");
  }
};

inline nlohmann::json policy_to_json(const AnnotationPolicy& p) {
  return {{"max_vectorize_extent", p.max_vectorize_extent},
          {"unroll_values", p.unroll_values},
          {"compute_location_prob", p.compute_location_prob},
          {"parallel", p.parallel}};
}

inline AnnotationPolicy policy_from_json(const nlohmann::json& j, AnnotationPolicy p = {}) {
  p.max_vectorize_extent = j.value("max_vectorize_extent", p.max_vectorize_extent);
  p.unroll_values = j.value("unroll_values", p.unroll_values);
  p.compute_location_prob = j.value("compute_location_prob", p.compute_location_prob);
  p.parallel = j.value("parallel", p.parallel);
  p.check();
  return p;
}

/// `parts` extents, outermost first, whose product is `extent`. Each inner
/// extent is drawn uniformly from the divisors of what remains.
inline std::vector<int64_t> random_factorization(int64_t extent, int parts, Rng& rng) {
  LOOMTUNE_REQUIRE(extent >= 1 && parts >= 1, "random_factorization needs extent >= 1 and parts >= 1");
  std::vector<int64_t> out(static_cast<size_t>(parts), 1);
  int64_t rem = extent;
  for (int i = parts - 1; i >= 1; --i) {
    const auto ds = divisors(rem);
    const int64_t d = rng.pick(ds);
    out[static_cast<size_t>(i)] = d;
    rem /= d;
  }
  out[0] = rem;
  return out;
}

/// Factors f that split the loop without breaking its digit structure.
inline std::vector<int64_t> aligned_factors(const Loop& l) {
  std::vector<int64_t> out;
  for (auto d : divisors(l.full_extent())) {
    try {
      detail::split_parts(l.parts, d);
      out.push_back(d);
    } catch (const StepError&) {
    }
  }
  return out;
}

/// History without the derived tail (layout rewrites and the simplify marker).
inline std::vector<RewriteStep> structural_history(const std::vector<RewriteStep>& h) {
  std::vector<RewriteStep> out;
  for (const auto& s : h)
    if (s.kind != StepKind::Simplify && s.kind != StepKind::LayoutRewrite) out.push_back(s);
  return out;
}

namespace detail {

/// Layout that stores `buffer` in the order stage `w`'s loops walk it.
inline std::optional<LayoutDescriptor> derive_layout(const Program& p, const Stage& w, const std::string& buffer) {
  const auto shape = p.dag->node(buffer).shape();
  std::vector<IndexExpr> idx;
  bool consistent = true;
  for_each_read(w.body, [&](const ExprNode& r) {
    if (r.buffer != buffer) return;
    if (!idx.empty() && idx != r.indices) consistent = false;
    idx = r.indices;
  });
  if (!consistent || idx.size() != shape.size()) return std::nullopt;
  std::vector<int> dim_of(w.iters.size(), -1);
  for (size_t d = 0; d < idx.size(); ++d) {
    if (!idx[d].is_plain() || !idx[d].affine.is_single_iter()) return std::nullopt;
    const int x = idx[d].affine.terms()[0].first;
    if (dim_of[static_cast<size_t>(x)] >= 0 || w.iters[static_cast<size_t>(x)].extent != shape[d]) return std::nullopt;
    dim_of[static_cast<size_t>(x)] = static_cast<int>(d);
  }
  LayoutDescriptor desc;
  for (const auto& l : w.loops)
    for (const auto& part : l.parts) {
      const int d = dim_of[static_cast<size_t>(part.iter)];
      if (d >= 0) desc.push_back({d, part.stride, part.extent});
    }
  return desc;
}

}  // namespace detail

/// Appends a packing step for each constant buffer read only by one
/// multi-level-tiled stage. A trailing simplify marker stays last.
inline Program rewrite_constant_layout(const Program& p) {
  const bool simplified = !p.history.empty() && p.history.back().kind == StepKind::Simplify;
  auto hist = structural_history(p.history);
  Program q = replay(p.dag, hist);
  std::vector<RewriteStep> extra;
  for (const auto& n : p.dag->nodes()) {
    if (!n.placeholder || !n.constant) continue;
    std::vector<const Stage*> readers;
    for (const auto& s : q.stages)
      if (!s.inlined && stage_reads_buffer(s, n.name)) readers.push_back(&s);
    if (readers.size() != 1 || readers[0]->tile_structure.empty()) continue;
    auto desc = detail::derive_layout(q, *readers[0], n.name);
    if (desc) extra.push_back(RewriteStep::layout_rewrite(n.name, *desc));
  }
  hist.insert(hist.end(), extra.begin(), extra.end());
  if (simplified) hist.push_back(RewriteStep::simplify());
  return replay(p.dag, hist);
}

/// Rebuilds derived steps after an edit of the structural history.
inline Program finalize_history(const DagPtr& dag, std::vector<RewriteStep> hist) {
  Program p = replay(dag, structural_history(hist));
  p = rewrite_constant_layout(p);
  return simplify(p);
}

/// Stages whose compute location may be moved: not inlined, not multi-level
/// tiled, not a DAG output attached nowhere else, with nothing attached to them.
inline std::vector<std::string> flexible_stages(const Program& p) {
  std::vector<std::string> out;
  for (const auto& s : p.stages) {
    if (s.inlined || !s.tile_structure.empty() || detail::has_attached(p, s.name)) continue;
    out.push_back(s.name);
  }
  return out;
}

/// Valid ComputeAt steps that would move `stage` somewhere else.
inline std::vector<RewriteStep> compute_location_options(const Program& p, const std::string& stage) {
  std::vector<RewriteStep> out;
  const Stage& s = p.stage(stage);
  if (!s.is_root()) out.push_back(RewriteStep::compute_root(stage));
  for (const auto& t : p.stages) {
    if (t.inlined || t.name == stage) continue;
    const bool inside = stage_reads_buffer(t, stage), after = stage_reads_buffer(s, t.name);
    if (!inside && !after) continue;
    for (int l = -1; l < static_cast<int>(t.loops.size()); ++l) {
      if (l >= 0 && t.loops[static_cast<size_t>(l)].full_extent() == 1) continue;
      AttachPoint ap{inside ? AttachKind::Inside : AttachKind::After, t.name, l};
      if (ap == s.attach) continue;
      Program q = p;
      Stage& qs = q.stage(stage);
      qs.attach = ap;
      for (auto& lp : qs.loops)
        if (lp.annotation == Annotation::Parallel) lp.annotation = Annotation::None;
      if (!check_attach(q, qs).empty()) continue;
      out.push_back(RewriteStep::compute_at(stage, t.name, l < 0 ? std::string() : t.loops[static_cast<size_t>(l)].name));
    }
  }
  return out;
}

namespace detail {

inline void fill_placeholders(Program& p, const std::vector<RewriteStep>& hist, Rng& rng) {
  for (auto st : hist) {
    if (st.kind == StepKind::Split && std::find(st.factors.begin(), st.factors.end(), 0) != st.factors.end()) {
      if (std::any_of(st.factors.begin(), st.factors.end(), [](int64_t f) { return f != 0; }))
        throw ContractViolation("split mixes placeholder and concrete factors");
      const Stage& s = p.stage(st.stage);
      check_loop(s, st.loop);
      const auto f = random_factorization(s.loops[static_cast<size_t>(st.loop)].full_extent(),
                                          static_cast<int>(st.factors.size()) + 1, rng);
      st.factors.assign(f.begin() + 1, f.end());
    } else if (st.kind == StepKind::Rfactor && !st.factors.empty() && st.factors[0] == 0) {
      const Stage& s = p.stage(st.stage);
      check_loop(s, st.loop);
      st.factors[0] = rng.pick(aligned_factors(s.loops[static_cast<size_t>(st.loop)]));
    }
    apply_step_in_place(p, st);
  }
  infer_bounds(p);
}

inline void annotate_stages(Program& p, const AnnotationPolicy& pol, Rng& rng) {
  const auto names = [&] {
    std::vector<std::string> n;
    for (const auto& s : p.stages)
      if (!s.inlined) n.push_back(s.name);
    return n;
  }();
  for (const auto& name : names) {
    const Stage& s = p.stage(name);
    int inner = -1;
    for (int l = static_cast<int>(s.loops.size()) - 1; l >= 0; --l)
      if (s.loops[static_cast<size_t>(l)].full_extent() > 1) {
        inner = l;
        break;
      }
    if (inner >= 0) {
      const Loop& l = s.loops[static_cast<size_t>(inner)];
      const bool unit_stride = !l.parts.empty() && l.parts.back().stride == 1;
      const bool parallel_target = s.is_root() && pol.parallel && inner == 0 && s.tile_structure.empty();
      if (l.kind == LoopKind::Space && unit_stride && l.extent() <= pol.max_vectorize_extent &&
          l.annotation == Annotation::None && !parallel_target)
        apply_step_in_place(p, RewriteStep::annotate(name, inner, Annotation::Vectorize));
    }
    apply_step_in_place(p, RewriteStep::pragma(name, rng.pick(pol.unroll_values)));
  }
  infer_bounds(p);
  if (!pol.parallel) return;
  for (const auto& name : names) {
    const Stage& s = p.stage(name);
    if (!s.is_root()) continue;
    int count = 0;
    if (!s.tile_structure.empty()) {
      int nspace = 0;
      for (const auto& it : s.iters) nspace += it.reduction ? 0 : 1;
      if (s.tile_structure[0] == 'S')
        while (count < nspace && count < static_cast<int>(s.loops.size()) &&
               s.loops[static_cast<size_t>(count)].kind == LoopKind::Space)
          ++count;
    } else {
      while (count + 1 < static_cast<int>(s.loops.size()) &&
             s.loops[static_cast<size_t>(count)].kind == LoopKind::Space &&
             s.loops[static_cast<size_t>(count)].annotation == Annotation::None)
        ++count;
    }
    if (count == 0) continue;
    for (int k = 1; k < count; ++k) apply_step_in_place(p, RewriteStep::fuse(name, 0));
    if (p.stage(name).loops[0].full_extent() > 1 && p.stage(name).loops[0].annotation == Annotation::None)
      apply_step_in_place(p, RewriteStep::annotate(name, 0, Annotation::Parallel));
  }
  infer_bounds(p);
}

}  // namespace detail

/// One random complete program from a sketch.
inline Program sample_program(const Program& sketch, const AnnotationPolicy& pol, Rng& rng) {
  pol.check();
  const auto base = structural_history(sketch.history);
  for (int attempt = 0; attempt < 16; ++attempt) {
    try {
      Program p = naive_program(sketch.dag);
      detail::fill_placeholders(p, base, rng);
      if (rng.bernoulli(pol.compute_location_prob)) {
        const auto flex = flexible_stages(p);
        if (!flex.empty()) {
          const auto opts = compute_location_options(p, rng.pick(flex));
          if (!opts.empty()) {
            apply_step_in_place(p, rng.pick(opts));
            infer_bounds(p);
          }
        }
      }
      detail::annotate_stages(p, pol, rng);
      Program out = simplify(rewrite_constant_layout(p));
      if (validate(out)) return out;
    } catch (const StepError&) {
    }
  }
  throw StepError("could not complete sketch into a valid program");
}

}  // namespace loomtune
