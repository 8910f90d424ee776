// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Analytical memory-access model of one statement in its full loop nest.
//
// The nest of a statement is the chain of loops enclosing it: the loops of
// the stages it is attached to (down to the attach loop) followed by its own
// loops. Loops of extent 1 are dropped so the analysis is invariant under
// simplify(). Footprints are boxes: per buffer dimension, the index range a
// group of inner loops can sweep.

#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "loomtune/program.hpp"

namespace loomtune {

inline constexpr int64_t kCacheLineBytes = 64;
inline constexpr int64_t kElementBytes = 4;
inline constexpr int64_t kCacheBytes = 32 * 1024;
inline constexpr int64_t kElementsPerLine = kCacheLineBytes / kElementBytes;

/// One digit of a nest loop, expressed against the statement's iterators.
struct NestTerm {
  int iter = 0;
  int64_t stride = 1;
  int64_t bound = 1;
};

struct NestLoop {
  std::string name;
  int64_t extent = 1;
  LoopKind kind = LoopKind::Space;
  Annotation annotation = Annotation::None;
  std::vector<NestTerm> terms;
  bool context = false;  // belongs to an enclosing stage
};

namespace detail {

inline std::vector<NestLoop> own_nest(const Stage& s, int upto) {
  std::vector<NestLoop> out;
  for (int l = 0; l < upto; ++l) {
    const Loop& lp = s.loops[static_cast<size_t>(l)];
    NestLoop n{lp.name, lp.extent(), lp.kind, lp.annotation, {}, false};
    for (const auto& part : lp.parts) n.terms.push_back({part.iter, part.stride, part.bound});
    out.push_back(std::move(n));
  }
  return out;
}

inline std::vector<NestLoop> context_nest(const Program& p, const Stage& s, int depth = 0) {
  if (s.is_root() || s.inlined || depth > static_cast<int>(p.stages.size())) return {};
  const Stage& t = p.stage(s.attach.target);
  auto outer = context_nest(p, t, depth + 1);
  auto mine = own_nest(t, s.attach.loop + 1);
  outer.insert(outer.end(), mine.begin(), mine.end());
  for (auto& n : outer) {
    std::vector<NestTerm> mapped;
    for (const auto& term : n.terms)
      for (size_t x = 0; x < s.iters.size(); ++x) {
        if (s.region_full.empty() || s.region_full[x]) continue;
        const int64_t c = s.region_base[x].coeff(term.iter);
        if (c != 0) mapped.push_back({static_cast<int>(x), c * term.stride, term.bound});
      }
    n.terms = std::move(mapped);
    n.context = true;
  }
  return outer;
}

}  // namespace detail

/// Loops enclosing the statement of `s`, outermost first, extent-1 loops removed.
inline std::vector<NestLoop> statement_nest(const Program& p, const Stage& s) {
  auto nest = detail::context_nest(p, s);
  auto own = detail::own_nest(s, static_cast<int>(s.loops.size()));
  nest.insert(nest.end(), own.begin(), own.end());
  nest.erase(std::remove_if(nest.begin(), nest.end(), [](const NestLoop& n) { return n.extent <= 1; }), nest.end());
  return nest;
}

enum class AccessType { Read, Write, ReadWrite };
enum class ReuseType { LoopMultipleRead, SerialMultipleRead, NoReuse };

/// One buffer dimension of an access: an index expression, or a digit group.
struct AccessDim {
  IndexExpr index;
  std::vector<LoopPart> group;  // nonempty for a digit-group dimension
  int64_t extent = 1;           // physical extent of the buffer dimension
};

struct BufferAccess {
  std::string buffer;
  AccessType type = AccessType::Read;
  int count = 1;  // textual occurrences in the statement
  std::vector<AccessDim> dims;
};

/// Accesses of a statement: each distinct read buffer, then the output.
inline std::vector<BufferAccess> statement_accesses(const Program& p, const Stage& s) {
  std::vector<BufferAccess> out;
  auto phys_shape = [&](const std::string& b) -> std::vector<int64_t> {
    auto lay = p.layouts.find(b);
    if (lay != p.layouts.end()) {
      std::vector<int64_t> sh;
      for (const auto& lp : lay->second) sh.push_back(lp.extent);
      return sh;
    }
    if (p.has_stage(b)) return p.stage(b).out_shape;
    return p.dag->node(b).shape();
  };
  for_each_read(s.body, [&](const ExprNode& r) {
    for (auto& a : out)
      if (a.buffer == r.buffer) {
        ++a.count;
        return;
      }
    BufferAccess a;
    a.buffer = r.buffer;
    const auto shape = phys_shape(r.buffer);
    for (size_t d = 0; d < r.indices.size(); ++d) a.dims.push_back({r.indices[d], {}, shape[d]});
    out.push_back(std::move(a));
  });
  BufferAccess w;
  w.buffer = s.name;
  w.type = s.reduce == ReduceKind::None ? AccessType::Write : AccessType::ReadWrite;
  for (size_t d = 0; d < s.out_index.size(); ++d) {
    const auto& od = s.out_index[d];
    if (od.plain()) w.dims.push_back({IndexExpr(AffineExpr::var(od.iter)), {}, s.out_shape[d]});
    else w.dims.push_back({IndexExpr(), od.digits, s.out_shape[d]});
  }
  out.push_back(std::move(w));
  return out;
}

/// Box footprint of an access over loops [from, nest.size()).
struct Footprint {
  int64_t elements = 1;
  int64_t lines = 1;
};

inline Footprint footprint(const BufferAccess& a, const std::vector<NestLoop>& nest, size_t from, size_t niters) {
  std::vector<int64_t> span(niters, 0);
  for (size_t l = from; l < nest.size(); ++l)
    for (const auto& t : nest[l].terms) span[static_cast<size_t>(t.iter)] += (t.bound - 1) * std::abs(t.stride);
  std::vector<int64_t> range(a.dims.size(), 1);
  for (size_t d = 0; d < a.dims.size(); ++d) {
    const auto& dim = a.dims[d];
    int64_t r = 1;
    if (!dim.group.empty()) {
      for (const auto& g : dim.group) r *= std::min(g.extent, span[static_cast<size_t>(g.iter)] / g.stride + 1);
    } else {
      int64_t w = 0;
      for (const auto& [x, c] : dim.index.affine.terms()) w += std::abs(c) * span[static_cast<size_t>(x)];
      if (dim.index.is_plain()) r = w + 1;
      else r = ceil_div(w, dim.index.div) + 1;
      if (dim.index.mod > 0) r = std::min(r, dim.index.mod);
    }
    range[d] = std::clamp<int64_t>(r, 1, dim.extent);
  }
  Footprint f;
  for (auto r : range) f.elements *= r;
  if (range.empty()) return f;
  size_t d = range.size() - 1;
  int64_t run = range[d];
  while (d > 0 && range[d] == a.dims[d].extent) {
    --d;
    run *= range[d];
  }
  int64_t outer = 1;
  for (size_t k = 0; k < d; ++k) outer *= range[k];
  f.lines = outer * ceil_div(run, kElementsPerLine);
  return f;
}

/// Whether loop `l` changes the element the access touches.
inline bool access_depends_on(const BufferAccess& a, const NestLoop& l) {
  for (const auto& t : l.terms)
    for (const auto& dim : a.dims) {
      if (!dim.group.empty()) {
        for (const auto& g : dim.group)
          if (g.iter == t.iter) return true;
      } else if (dim.index.affine.coeff(t.iter) != 0) {
        return true;
      }
    }
  return false;
}

/// Change of the physical element offset per step of the innermost loop.
inline int64_t innermost_stride(const BufferAccess& a, const std::vector<NestLoop>& nest) {
  if (nest.empty() || nest.back().terms.empty()) return 0;
  const NestTerm& t = nest.back().terms.back();
  int64_t total = 0, row = 1;
  for (size_t d = a.dims.size(); d-- > 0;) {
    const auto& dim = a.dims[d];
    int64_t step = 0;
    if (!dim.group.empty()) {
      int64_t radix = 1;
      for (size_t g = dim.group.size(); g-- > 0;) {
        if (dim.group[g].iter == t.iter && t.stride >= dim.group[g].stride &&
            t.stride < dim.group[g].stride * dim.group[g].extent)
          step = radix * (t.stride / dim.group[g].stride);
        radix *= dim.group[g].extent;
      }
    } else {
      const int64_t c = dim.index.affine.coeff(t.iter) * t.stride;
      if (dim.index.is_plain()) {
        step = c;
      } else {
        step = c / dim.index.div;  // a packed digit changes once every div steps
        if (dim.index.mod > 0) step %= dim.index.mod;
      }
    }
    total += step * row;
    row *= dim.extent;
  }
  return std::abs(total);
}

struct AccessSummary {
  std::string buffer;
  AccessType type = AccessType::Read;
  double bytes = 0, unique_bytes = 0, lines = 0, unique_lines = 0;
  ReuseType reuse = ReuseType::NoReuse;
  double reuse_dis_iter = 0, reuse_dis_bytes = 0, reuse_ct = 0;
  double stride = 0;
};

inline AccessSummary summarize_access(const BufferAccess& a, const std::vector<NestLoop>& nest, size_t niters) {
  AccessSummary s;
  s.buffer = a.buffer;
  s.type = a.type;
  const size_t n = nest.size();
  std::vector<double> outer_prod(n + 1, 1.0);  // product of extents of loops < l
  for (size_t l = 0; l < n; ++l) outer_prod[l + 1] = outer_prod[l] * static_cast<double>(nest[l].extent);
  const double iterations = outer_prod[n];
  s.bytes = iterations * a.count * kElementBytes;
  const Footprint all = footprint(a, nest, 0, niters);
  s.unique_bytes = static_cast<double>(all.elements * kElementBytes);
  const size_t inner = n == 0 ? 0 : n - 1;
  s.lines = outer_prod[inner] * static_cast<double>(footprint(a, nest, inner, niters).lines);
  for (size_t l = 0; l <= n; ++l) {
    const Footprint f = footprint(a, nest, l, niters);
    if (f.lines * kCacheLineBytes <= kCacheBytes || l == n) {
      s.unique_lines = outer_prod[l] * static_cast<double>(f.lines);
      break;
    }
  }
  for (size_t l = n; l-- > 0;) {
    if (access_depends_on(a, nest[l])) continue;
    s.reuse = ReuseType::LoopMultipleRead;
    s.reuse_dis_iter = iterations / outer_prod[l + 1];
    s.reuse_dis_bytes = static_cast<double>(footprint(a, nest, l + 1, niters).elements * kElementBytes);
    s.reuse_ct = static_cast<double>(nest[l].extent);
    break;
  }
  if (s.reuse == ReuseType::NoReuse && a.count > 1) {
    s.reuse = ReuseType::SerialMultipleRead;
    s.reuse_dis_iter = 1;
    s.reuse_dis_bytes = static_cast<double>(a.count * kElementBytes);
    s.reuse_ct = a.count;
  }
  s.stride = static_cast<double>(innermost_stride(a, nest));
  return s;
}

}  // namespace loomtune
