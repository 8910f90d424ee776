// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Attachment legality and region inference for stages computed inside or
// after another stage's loops.

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "loomtune/lowering.hpp"

namespace loomtune {

namespace detail {

/// Largest value each iterator of `t` can add through loops deeper than `loop`.
inline std::vector<int64_t> free_span(const Stage& t, int loop) {
  std::vector<int64_t> span(t.iters.size(), 0);
  for (size_t l = static_cast<size_t>(loop + 1); l < t.loops.size(); ++l)
    for (const auto& p : t.loops[l].parts) span[static_cast<size_t>(p.iter)] += (p.bound - 1) * p.stride;
  return span;
}

inline bool attach_chain_reaches(const Program& p, const std::string& from, const std::string& to) {
  std::string cur = from;
  for (size_t guard = 0; guard <= p.stages.size(); ++guard) {
    if (cur == to) return true;
    const int i = p.stage_index(cur);
    if (i < 0) return false;
    const auto& s = p.stages[static_cast<size_t>(i)];
    if (s.attach.kind == AttachKind::Root) return false;
    cur = s.attach.target;
  }
  return true;
}

inline std::string check_inside(const Program& p, const Stage& s) {
  const int ti = p.stage_index(s.attach.target);
  if (ti < 0) return "attach target '" + s.attach.target + "' does not exist";
  const Stage& t = p.stages[static_cast<size_t>(ti)];
  if (t.inlined) return "attach target '" + t.name + "' is inlined";
  if (t.attach.kind == AttachKind::After) return "cannot compute inside a stage that is itself fused after its producer";
  if (!stage_reads_buffer(t, s.name)) return "'" + t.name + "' does not consume '" + s.name + "'";
  if (p.dag->is_output(s.name)) return "output stage '" + s.name + "' cannot be computed inside another stage";
  for (const auto& o : p.stages)
    if (!o.inlined && o.name != t.name && stage_reads_buffer(o, s.name))
      return "'" + s.name + "' has a second consumer '" + o.name + "'";
  if (s.attach.loop >= static_cast<int>(t.loops.size())) return "dangling loop reference in attach point";
  for (const auto& l : s.loops)
    if (l.annotation == Annotation::Parallel) return "parallel loop in attached stage '" + s.name + "'";
  if (attach_chain_reaches(p, t.name, s.name)) return "attach cycle through '" + s.name + "'";
  return {};
}

inline std::string check_after(const Program& p, const Stage& d) {
  const int ci = p.stage_index(d.attach.target);
  if (ci < 0) return "attach target '" + d.attach.target + "' does not exist";
  const Stage& c = p.stages[static_cast<size_t>(ci)];
  if (c.inlined || !c.is_root()) return "fusion target '" + c.name + "' must be a root stage";
  if (d.reduce != ReduceKind::None) return "a reduction cannot be fused after its producer";
  if (!plain_outputs(c) || !plain_outputs(d) || c.out_index.size() != d.out_index.size())
    return "fusion needs matching output dimensions";
  bool reads = false, identity = true;
  for_each_read(d.body, [&](const ExprNode& r) {
    if (r.buffer != c.name) return;
    reads = true;
    for (size_t k = 0; k < r.indices.size(); ++k) {
      const auto& ix = r.indices[k];
      if (!ix.is_plain() || !(ix.affine == AffineExpr::var(d.out_index[k].iter))) identity = false;
    }
  });
  if (!reads) return "'" + d.name + "' does not consume '" + c.name + "'";
  if (!identity) return "'" + d.name + "' does not read '" + c.name + "' element-wise";
  const int L = d.attach.loop;
  if (L >= static_cast<int>(c.loops.size())) return "dangling loop reference in attach point";
  for (int l = 0; l <= L; ++l)
    if (c.loops[static_cast<size_t>(l)].kind == LoopKind::Reduction)
      return "reduction loop '" + c.loops[static_cast<size_t>(l)].name + "' lies outside the fusion point";
  for (const auto& od : c.out_index) {
    std::vector<LoopPart> inner;
    for (size_t l = static_cast<size_t>(L + 1); l < c.loops.size(); ++l)
      for (const auto& part : c.loops[l].parts)
        if (part.iter == od.iter) inner.push_back(part);
    std::sort(inner.begin(), inner.end(), [](const LoopPart& a, const LoopPart& b) { return a.stride < b.stride; });
    int64_t expect = 1;
    for (const auto& part : inner) {
      if (part.stride != expect) return "fusion point does not cover a contiguous tile of '" + c.name + "'";
      expect *= part.extent;
    }
  }
  for (const auto& b : stage_reads(d)) {
    if (b == c.name) continue;
    const int bi = p.stage_index(b);
    if (bi < 0) continue;  // placeholder
    const Stage& bs = p.stages[static_cast<size_t>(bi)];
    if (!bs.is_root() || bi > ci) return "'" + d.name + "' reads '" + b + "' which is not ready at the fusion point";
  }
  if (has_attached(p, d.name)) return "'" + d.name + "' has stages attached to it";
  for (const auto& l : d.loops)
    if (l.annotation == Annotation::Parallel) return "parallel loop in attached stage '" + d.name + "'";
  return {};
}

}  // namespace detail

/// Empty when the stage's attach point is legal.
inline std::string check_attach(const Program& p, const Stage& s) {
  if (s.inlined || s.attach.kind == AttachKind::Root) return {};
  if (s.attach.target == s.name) return "stage attached to itself";
  return s.attach.kind == AttachKind::Inside ? detail::check_inside(p, s) : detail::check_after(p, s);
}

namespace detail {

inline void set_region(const Program& p, Stage& s) {
  const size_t n = s.iters.size();
  s.region.assign(n, 0);
  s.region_full.assign(n, 1);
  s.region_base.assign(n, AffineExpr());
  for (size_t i = 0; i < n; ++i) s.region[i] = s.iters[i].extent;
  if (s.attach.kind == AttachKind::Root) return;
  const Stage& t = p.stage(s.attach.target);
  const auto span = free_span(t, s.attach.loop);

  for (size_t d = 0; d < s.out_index.size(); ++d) {
    if (!s.out_index[d].plain()) continue;
    const auto x = static_cast<size_t>(s.out_index[d].iter);
    const int64_t ext = s.iters[x].extent;
    int64_t r = ext;
    AffineExpr base;
    bool linear = false;
    if (s.attach.kind == AttachKind::After) {
      const int y = t.out_index[d].iter;
      r = span[static_cast<size_t>(y)] + 1;
      base = AffineExpr::var(y);
      linear = true;
    } else {
      std::vector<AffineExpr> idx;
      bool plain = true;
      for_each_read(t.body, [&](const ExprNode& rd) {
        if (rd.buffer != s.name) return;
        plain = plain && rd.indices[d].is_plain();
        idx.push_back(rd.indices[d].affine);
      });
      if (plain && !idx.empty()) {
        linear = std::all_of(idx.begin(), idx.end(), [&](const AffineExpr& a) { return a.terms() == idx[0].terms(); });
        if (linear) {
          int64_t lo = idx[0].constant(), hi = lo, width = 1, neg = 0;
          for (const auto& a : idx) {
            lo = std::min(lo, a.constant());
            hi = std::max(hi, a.constant());
          }
          for (const auto& [y, c] : idx[0].terms()) {
            width += (c < 0 ? -c : c) * span[static_cast<size_t>(y)];
            neg += std::min<int64_t>(c, 0) * span[static_cast<size_t>(y)];
          }
          r = hi - lo + width;
          base = idx[0] - idx[0].constant() + (lo + neg);
        }
      }
    }
    if (linear && r < ext) {
      s.region[x] = r;
      s.region_full[x] = 0;
      s.region_base[x] = base;
    }
  }
}

}  // namespace detail

/// Recomputes regions and per-part loop bounds for every stage.
inline void infer_bounds(Program& p) {
  std::vector<uint8_t> done(p.stages.size(), 0);
  for (size_t pass = 0; pass <= p.stages.size(); ++pass) {
    bool progress = false;
    for (size_t i = 0; i < p.stages.size(); ++i) {
      if (done[i]) continue;
      Stage& s = p.stages[i];
      if (s.attach.kind != AttachKind::Root && !s.inlined) {
        const int ti = p.stage_index(s.attach.target);
        if (ti < 0) throw StepError("attach target '" + s.attach.target + "' does not exist");
        if (!done[static_cast<size_t>(ti)]) continue;
      }
      detail::set_region(p, s);
      for (auto& l : s.loops)
        for (auto& part : l.parts) {
          const auto x = static_cast<size_t>(part.iter);
          part.bound = s.region_full[x] ? part.extent : std::min(part.extent, ceil_div(s.region[x], part.stride));
        }
      done[i] = 1;
      progress = true;
    }
    if (!progress) break;
  }
  if (std::find(done.begin(), done.end(), 0) != done.end()) throw StepError("attach cycle between stages");
}

}  // namespace loomtune
