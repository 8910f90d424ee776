// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Semantics of the rewrite steps and history replay.

#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "loomtune/bounds.hpp"
#include "loomtune/lowering.hpp"

namespace loomtune {

namespace detail {

inline void do_split(Program& p, const RewriteStep& st) {
  Stage& s = stage_for(p, st);
  check_loop(s, st.loop);
  if (st.factors.empty()) throw StepError("split without factors");
  const Loop old = s.loops[static_cast<size_t>(st.loop)];
  int64_t prod = 1;
  for (auto f : st.factors) {
    if (f < 0) throw StepError("negative split factor");
    prod *= std::max<int64_t>(f, 1);
  }
  if (old.full_extent() % prod != 0)
    throw StepError(str_cat("split factors of '", old.name, "' do not divide its extent ", old.full_extent()));
  const size_t k = st.factors.size();
  std::vector<Loop> parts(k + 1);
  std::vector<LoopPart> rest = old.parts;
  for (size_t i = k; i >= 1; --i) {
    auto [outer, inner] = split_parts(rest, std::max<int64_t>(st.factors[i - 1], 1));
    parts[i].parts = std::move(inner);
    rest = std::move(outer);
  }
  parts[0].parts = std::move(rest);
  for (size_t i = 0; i <= k; ++i) {
    parts[i].name = str_cat(old.name, ".", i);
    parts[i].kind = old.kind;
  }
  if (old.annotation == Annotation::Parallel) parts[0].annotation = old.annotation;
  else parts[k].annotation = old.annotation;
  s.loops.erase(s.loops.begin() + st.loop);
  s.loops.insert(s.loops.begin() + st.loop, parts.begin(), parts.end());
  const int at = st.loop, n = static_cast<int>(k);
  remap_attach(p, s.name, [at, n](int l) { return l < at ? l : (l == at ? at + n : l + n); });
}

inline void do_fuse(Program& p, const RewriteStep& st) {
  Stage& s = stage_for(p, st);
  check_loop(s, st.loop);
  check_loop(s, st.loop + 1);
  Loop& a = s.loops[static_cast<size_t>(st.loop)];
  const Loop& b = s.loops[static_cast<size_t>(st.loop + 1)];
  if (a.kind != b.kind) throw StepError("cannot fuse a space loop with a reduction loop");
  a.name += "@" + b.name;
  a.parts.insert(a.parts.end(), b.parts.begin(), b.parts.end());
  if (a.annotation == Annotation::None) a.annotation = b.annotation;
  s.loops.erase(s.loops.begin() + st.loop + 1);
  const int at = st.loop;
  remap_attach(p, s.name, [at](int l) { return l <= at ? l : (l == at + 1 ? at : l - 1); });
}

inline void do_reorder(Program& p, const RewriteStep& st) {
  Stage& s = stage_for(p, st);
  const size_t n = s.loops.size();
  if (st.order.size() != n) throw StepError("reorder must list every loop of '" + s.name + "'");
  std::vector<int> pos(n, -1);
  for (size_t i = 0; i < n; ++i) {
    const int o = st.order[i];
    if (o < 0 || o >= static_cast<int>(n) || pos[static_cast<size_t>(o)] >= 0)
      throw StepError("reorder is not a permutation");
    pos[static_cast<size_t>(o)] = static_cast<int>(i);
  }
  std::vector<Loop> loops;
  for (int o : st.order) loops.push_back(s.loops[static_cast<size_t>(o)]);
  s.loops = std::move(loops);
  if (!st.structure.empty()) s.tile_structure = st.structure;
  remap_attach(p, s.name, [&pos](int l) { return pos[static_cast<size_t>(l)]; });
}

inline int resolve_loop_name(const Stage& t, const std::string& name) {
  if (name.empty()) return -1;
  const int exact = t.find_loop(name);
  if (exact >= 0) return exact;
  auto pieces = [](const std::string& n) {
    std::vector<std::string> out;
    size_t start = 0;
    for (size_t i = 0; i <= n.size(); ++i)
      if (i == n.size() || n[i] == '@') {
        out.push_back(n.substr(start, i - start));
        start = i + 1;
      }
    return out;
  };
  for (size_t l = 0; l < t.loops.size(); ++l)
    for (const auto& piece : pieces(t.loops[l].name))
      if (piece == name) return static_cast<int>(l);
  for (size_t l = t.loops.size(); l-- > 0;)
    for (const auto& piece : pieces(t.loops[l].name))
      if (piece.rfind(name + ".", 0) == 0) return static_cast<int>(l);
  return -2;
}

inline void do_compute_at(Program& p, const RewriteStep& st) {
  Stage& s = stage_for(p, st);
  if (st.target.empty()) {
    s.attach = AttachPoint{};
    return;
  }
  const Stage& t = p.stage(st.target);
  if (t.name == s.name) throw StepError("stage cannot be computed at itself");
  AttachPoint ap;
  ap.target = t.name;
  if (stage_reads_buffer(t, s.name)) ap.kind = AttachKind::Inside;
  else if (stage_reads_buffer(s, t.name)) ap.kind = AttachKind::After;
  else throw StepError("'" + s.name + "' and '" + t.name + "' have no producer/consumer relation");
  for (auto& l : s.loops)
    if (l.annotation == Annotation::Parallel) l.annotation = Annotation::None;
  const int resolved = resolve_loop_name(t, st.target_loop);
  const AttachPoint before = s.attach;
  if (resolved >= -1) {
    ap.loop = resolved;
    s.attach = ap;
    const auto err = check_attach(p, p.stage(st.stage));
    if (!err.empty()) {
      p.stage(st.stage).attach = before;
      throw StepError(err);
    }
    return;
  }
  // The named loop no longer exists: use the deepest legal space loop.
  const size_t nloops = t.loops.size();
  for (int l = static_cast<int>(nloops) - 1; l >= -1; --l) {
    if (l >= 0 && p.stage(st.target).loops[static_cast<size_t>(l)].kind != LoopKind::Space) continue;
    ap.loop = l;
    p.stage(st.stage).attach = ap;
    if (check_attach(p, p.stage(st.stage)).empty()) return;
  }
  p.stage(st.stage).attach = before;
  throw StepError("no legal attach point for '" + st.stage + "' in '" + st.target + "'");
}

inline void do_inline(Program& p, const RewriteStep& st) {
  Stage& s = stage_for(p, st);
  if (s.reduce != ReduceKind::None) throw StepError("cannot inline reduction '" + s.name + "'");
  if (p.dag->is_output(s.name)) throw StepError("cannot inline output '" + s.name + "'");
  if (!plain_outputs(s)) throw StepError("cannot inline '" + s.name + "'");
  if (has_attached(p, s.name)) throw StepError("'" + s.name + "' has stages attached to it");
  const Stage src = s;
  for (auto& c : p.stages) {
    if (c.inlined || c.name == src.name || !stage_reads_buffer(c, src.name)) continue;
    c.body = rewrite_reads(c.body, [&](const ExprNode& r) -> Expr {
      if (r.buffer != src.name) return Expr();
      std::vector<AffineExpr> values(src.iters.size());
      for (size_t d = 0; d < r.indices.size(); ++d) {
        if (!r.indices[d].is_plain()) throw StepError("cannot inline through a packed read");
        values[static_cast<size_t>(src.out_index[d].iter)] = r.indices[d].affine;
      }
      return substitute_iters(src.body, values);
    });
  }
  Stage& t = p.stage(st.stage);
  t.inlined = true;
  t.loops.clear();
  t.attach = AttachPoint{};
}

inline void do_cache_write(Program& p, const RewriteStep& st) {
  Stage& s = stage_for(p, st);
  if (!s.is_root()) throw StepError("cache_write needs a root stage");
  if (has_attached(p, s.name)) throw StepError("'" + s.name + "' has stages attached to it");
  if (!plain_outputs(s)) throw StepError("cache_write of a partial reduction");
  const std::string local_name = s.name + ".local";
  if (p.has_stage(local_name)) throw StepError("'" + local_name + "' already exists");
  Stage local = s;
  local.name = local_name;
  std::vector<IterVar> space;
  std::vector<AffineExpr> idx;
  for (const auto& od : s.out_index) {
    space.push_back(s.iters[static_cast<size_t>(od.iter)]);
    idx.push_back(AffineExpr::var(static_cast<int>(space.size()) - 1));
  }
  s.iters = space;
  s.reduce = ReduceKind::None;
  s.body = rd(local_name, idx);
  for (size_t d = 0; d < s.out_index.size(); ++d) s.out_index[d] = {static_cast<int>(d), {}};
  s.loops = naive_loops(space);
  s.tile_structure.clear();
  s.auto_unroll_max_step = 0;
  const int at = p.stage_index(s.name);
  p.stages.insert(p.stages.begin() + at, std::move(local));
}

inline void do_rfactor(Program& p, const RewriteStep& st) {
  Stage& s = stage_for(p, st);
  check_loop(s, st.loop);
  if (!s.is_root() || has_attached(p, s.name)) throw StepError("rfactor needs a root stage with nothing attached");
  if (s.reduce == ReduceKind::None) throw StepError("rfactor of a non-reduction stage");
  if (!plain_outputs(s)) throw StepError("rfactor of a partial reduction");
  const Loop l = s.loops[static_cast<size_t>(st.loop)];
  if (l.kind != LoopKind::Reduction) throw StepError("rfactor needs a reduction loop");
  const int64_t f = std::max<int64_t>(st.factors.empty() ? 1 : st.factors[0], 1);
  if (l.full_extent() % f != 0) throw StepError("rfactor factor does not divide the loop extent");
  auto [outer, inner] = split_parts(l.parts, f);
  const std::string rf_name = s.name + ".rf";
  if (p.has_stage(rf_name)) throw StepError("'" + rf_name + "' already exists");

  Stage rf = s;
  rf.name = rf_name;
  Loop lo{l.name + ".0", LoopKind::Reduction, Annotation::None, outer};
  Loop li{l.name + ".1", LoopKind::Space, Annotation::None, inner};
  rf.loops.erase(rf.loops.begin() + st.loop);
  rf.loops.insert(rf.loops.begin() + st.loop, {lo, li});
  rf.out_index.push_back({-1, inner});
  rf.out_shape.push_back(f);
  rf.tile_structure.clear();

  std::vector<IterVar> iters;
  std::vector<AffineExpr> idx;
  for (const auto& od : s.out_index) {
    iters.push_back(s.iters[static_cast<size_t>(od.iter)]);
    idx.push_back(AffineExpr::var(static_cast<int>(iters.size()) - 1));
  }
  iters.push_back({"rf", f, true});
  idx.push_back(AffineExpr::var(static_cast<int>(iters.size()) - 1));
  s.iters = iters;
  s.body = rd(rf_name, idx);
  for (size_t d = 0; d < s.out_index.size(); ++d) s.out_index[d] = {static_cast<int>(d), {}};
  s.loops = naive_loops(iters);
  s.tile_structure.clear();
  const int at = p.stage_index(s.name);
  p.stages.insert(p.stages.begin() + at, std::move(rf));
}

inline void do_annotate(Program& p, const RewriteStep& st) {
  Stage& s = stage_for(p, st);
  check_loop(s, st.loop);
  Loop& l = s.loops[static_cast<size_t>(st.loop)];
  if (st.annotation == Annotation::Parallel && (l.kind != LoopKind::Space || !s.is_root()))
    throw StepError("parallel annotation needs a space loop of a root stage");
  if (st.annotation == Annotation::Vectorize) {
    if (l.kind != LoopKind::Space) throw StepError("vectorize annotation needs a space loop");
    for (size_t i = static_cast<size_t>(st.loop) + 1; i < s.loops.size(); ++i)
      if (s.loops[i].full_extent() > 1) throw StepError("vectorize annotation needs the innermost loop");
  }
  l.annotation = st.annotation;
}

inline void do_layout_rewrite(Program& p, const RewriteStep& st) {
  if (!p.dag->has_node(st.buffer)) throw StepError("unknown buffer '" + st.buffer + "'");
  const auto& n = p.dag->node(st.buffer);
  if (!n.placeholder || !n.constant) throw StepError("layout rewrite needs a constant buffer");
  if (p.layouts.count(st.buffer)) throw StepError("'" + st.buffer + "' layout already rewritten");
  const auto shape = n.shape();
  for (size_t d = 0; d < shape.size(); ++d) {
    std::vector<LayoutPart> dp;
    for (const auto& lp : st.layout) {
      if (lp.dim < 0 || lp.dim >= static_cast<int>(shape.size()) || lp.extent < 1 || lp.stride < 1)
        throw StepError("malformed layout descriptor");
      if (lp.dim == static_cast<int>(d)) dp.push_back(lp);
    }
    std::sort(dp.begin(), dp.end(), [](const LayoutPart& a, const LayoutPart& b) { return a.stride < b.stride; });
    int64_t expect = 1;
    for (const auto& lp : dp) {
      if (lp.stride != expect) throw StepError("layout descriptor does not tile the buffer");
      expect *= lp.extent;
    }
    if (expect != shape[d]) throw StepError("layout descriptor does not cover the buffer");
  }
  for (auto& s : p.stages) {
    s.body = rewrite_reads(s.body, [&](const ExprNode& r) -> Expr {
      if (r.buffer != st.buffer) return Expr();
      std::vector<IndexExpr> idx;
      for (const auto& lp : st.layout) {
        const auto& orig = r.indices[static_cast<size_t>(lp.dim)];
        if (!orig.is_plain()) throw StepError("buffer already packed");
        if (lp.stride == 1 && lp.extent == shape[static_cast<size_t>(lp.dim)]) idx.emplace_back(orig.affine);
        else idx.emplace_back(orig.affine, lp.stride, lp.extent);
      }
      return make_read(r.buffer, std::move(idx), r.zero_pad);
    });
  }
  p.layouts[st.buffer] = st.layout;
}

inline void do_simplify(Program& p) {
  for (auto& s : p.stages) {
    std::vector<int> remap(s.loops.size(), -1);
    std::vector<Loop> kept;
    for (size_t i = 0; i < s.loops.size(); ++i) {
      if (s.loops[i].full_extent() > 1) kept.push_back(s.loops[i]);
      remap[i] = static_cast<int>(kept.size()) - 1;  // nearest outer surviving loop
    }
    s.loops = std::move(kept);
    remap_attach(p, s.name, [&remap](int l) { return remap[static_cast<size_t>(l)]; });
  }
}

}  // namespace detail

/// Applies one step in place and appends it to the history. Bounds are not
/// refreshed; call infer_bounds afterwards.
inline void apply_step_in_place(Program& p, const RewriteStep& st) {
  switch (st.kind) {
    case StepKind::Split: detail::do_split(p, st); break;
    case StepKind::Fuse: detail::do_fuse(p, st); break;
    case StepKind::Reorder: detail::do_reorder(p, st); break;
    case StepKind::ComputeAt: detail::do_compute_at(p, st); break;
    case StepKind::ComputeInline: detail::do_inline(p, st); break;
    case StepKind::CacheWrite: detail::do_cache_write(p, st); break;
    case StepKind::Rfactor: detail::do_rfactor(p, st); break;
    case StepKind::Annotate: detail::do_annotate(p, st); break;
    case StepKind::Pragma:
      if (st.value < 0) throw StepError("negative unroll step");
      detail::stage_for(p, st).auto_unroll_max_step = st.value;
      break;
    case StepKind::LayoutRewrite: detail::do_layout_rewrite(p, st); break;
    case StepKind::Simplify: detail::do_simplify(p); break;
  }
  p.history.push_back(st);
}

inline Program apply_step(const Program& p, const RewriteStep& st) {
  Program out = p;
  apply_step_in_place(out, st);
  infer_bounds(out);
  return out;
}

inline Program apply_steps(const Program& p, const std::vector<RewriteStep>& steps) {
  Program out = p;
  for (const auto& st : steps) apply_step_in_place(out, st);
  infer_bounds(out);
  return out;
}

/// Rebuilds a program from the naive program and a history. Throws StepError
/// if any step does not apply.
inline Program replay(const DagPtr& dag, const std::vector<RewriteStep>& history) {
  Program p = naive_program(dag);
  infer_bounds(p);
  return apply_steps(p, history);
}

/// Removes unit loops and marks the program as final.
inline Program simplify(const Program& p) { return apply_step(p, RewriteStep::simplify()); }

/// History with Simplify markers removed (for further editing).
inline std::vector<RewriteStep> editable_history(const std::vector<RewriteStep>& h) {
  std::vector<RewriteStep> out;
  for (const auto& s : h)
    if (s.kind != StepKind::Simplify) out.push_back(s);
  return out;
}

}  // namespace loomtune
