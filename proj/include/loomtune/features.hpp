// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Per-statement feature vectors. Layout (164 entries):
//
//   [0, 16)    op counts x iterations: float mad, add/sub, mul, div, cmp,
//              math, other; int mad, add/sub, mul, div/mod, cmp, math,
//              other; bool; select
//   [16, 27)   vectorize: innermost length, position one-hot (8), product, count
//   [27, 38)   unroll (loops covered by auto_unroll_max_step): same shape
//   [38, 49)   parallel: same shape
//   [49, 57)   GPU thread binding, always zero
//   [57, 67)   arithmetic intensity sampled at depth fractions 0.1 .. 1.0
//   [67, 157)  five buffer blocks of 18, largest unique bytes first:
//              access type (read, write, read-write), bytes, unique bytes,
//              lines, unique lines, reuse type (loop, serial, none), reuse
//              distance in iterations and bytes, reuse counter, bytes,
//              unique bytes, lines and unique lines each / reuse counter,
//              innermost stride
//   [157, 161) allocation: output bytes, allocation count, allocation outer
//              product, iterations per allocation
//   [161, 164) loop count, total iterations, auto_unroll_max_step
//
// Position one-hot order: InnerSpatial, MiddleSpatial, OuterSpatial,
// InnerReduce, MiddleReduce, OuterReduce, Mixed, None.

#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "loomtune/access_analysis.hpp"
#include "loomtune/program.hpp"

namespace loomtune {

inline constexpr size_t kFeatureLength = 164;
inline constexpr size_t kBufferSlots = 5;
inline constexpr size_t kBufferBlock = 18;

namespace feat {
inline constexpr size_t kOps = 0;
inline constexpr size_t kVectorize = 16;
inline constexpr size_t kUnroll = 27;
inline constexpr size_t kParallel = 38;
inline constexpr size_t kGpu = 49;
inline constexpr size_t kIntensity = 57;
inline constexpr size_t kBuffers = 67;
inline constexpr size_t kAlloc = 157;
inline constexpr size_t kOther = 161;

// Offsets inside an annotation group and a buffer block.
inline constexpr size_t kGroupLen = 0, kGroupPos = 1, kGroupProd = 9, kGroupNum = 10;
inline constexpr size_t kBufBytes = 3, kBufUniqueBytes = 4, kBufLines = 5, kBufUniqueLines = 6;
inline constexpr size_t kBufReuse = 7, kBufReuseIter = 10, kBufReuseBytes = 11, kBufReuseCt = 12;
inline constexpr size_t kBufRatios = 13, kBufStride = 17;
}  // namespace feat

enum class LoopPosition { InnerSpatial, MiddleSpatial, OuterSpatial, InnerReduce, MiddleReduce, OuterReduce, Mixed, None };

using FeatureVector = std::array<double, kFeatureLength>;

namespace detail {

inline LoopPosition loop_position(const std::vector<NestLoop>& nest, size_t k) {
  const LoopKind kind = nest[k].kind;
  bool deeper = false, shallower = false;
  for (size_t j = 0; j < nest.size(); ++j) {
    if (nest[j].kind != kind || j == k) continue;
    (j > k ? deeper : shallower) = true;
  }
  const bool space = kind == LoopKind::Space;
  if (!deeper) return space ? LoopPosition::InnerSpatial : LoopPosition::InnerReduce;
  if (!shallower) return space ? LoopPosition::OuterSpatial : LoopPosition::OuterReduce;
  return space ? LoopPosition::MiddleSpatial : LoopPosition::MiddleReduce;
}

/// Fills an annotation group from the loops flagged in `marked`.
inline void fill_group(FeatureVector& f, size_t at, const std::vector<NestLoop>& nest, const std::vector<bool>& marked) {
  double prod = 1, num = 0, len = 0;
  int innermost = -1;
  bool has_space = false, has_reduce = false;
  for (size_t k = 0; k < nest.size(); ++k) {
    if (!marked[k]) continue;
    prod *= static_cast<double>(nest[k].extent);
    num += 1;
    innermost = static_cast<int>(k);
    (nest[k].kind == LoopKind::Space ? has_space : has_reduce) = true;
  }
  LoopPosition pos = LoopPosition::None;
  if (innermost >= 0) {
    len = static_cast<double>(nest[static_cast<size_t>(innermost)].extent);
    pos = has_space && has_reduce ? LoopPosition::Mixed : loop_position(nest, static_cast<size_t>(innermost));
  } else {
    prod = 0;
  }
  f[at + feat::kGroupLen] = len;
  f[at + feat::kGroupPos + static_cast<size_t>(pos)] = 1.0;
  f[at + feat::kGroupProd] = prod;
  f[at + feat::kGroupNum] = num;
}

}  // namespace detail

/// Innermost loops fully unrolled under an auto_unroll_max_step budget.
inline std::vector<bool> unrolled_loops(const std::vector<NestLoop>& nest, int64_t max_step) {
  std::vector<bool> marked(nest.size(), false);
  int64_t prod = 1;
  for (size_t k = nest.size(); k-- > 0;) {
    if (nest[k].context || prod * nest[k].extent > max_step) break;
    prod *= nest[k].extent;
    marked[k] = true;
  }
  return marked;
}

inline FeatureVector statement_features(const Program& p, const Stage& s) {
  FeatureVector f{};
  const auto nest = statement_nest(p, s);
  double iterations = 1;
  for (const auto& l : nest) iterations *= static_cast<double>(l.extent);

  const OpCounts ops = statement_ops(s.body, s.reduce);
  f[0] = static_cast<double>(ops.mad) * iterations;
  f[1] = static_cast<double>(ops.add_sub) * iterations;
  f[2] = static_cast<double>(ops.mul) * iterations;
  f[3] = static_cast<double>(ops.div) * iterations;
  f[4] = static_cast<double>(ops.cmp) * iterations;
  f[5] = static_cast<double>(ops.math) * iterations;
  f[8] = static_cast<double>(ops.int_add) * iterations;
  f[9] = static_cast<double>(ops.int_mul) * iterations;
  f[10] = static_cast<double>(ops.int_divmod) * iterations;
  f[15] = static_cast<double>(ops.select) * iterations;

  std::vector<bool> vec(nest.size()), par(nest.size());
  for (size_t k = 0; k < nest.size(); ++k) {
    vec[k] = nest[k].annotation == Annotation::Vectorize;
    par[k] = nest[k].annotation == Annotation::Parallel;
  }
  detail::fill_group(f, feat::kVectorize, nest, vec);
  detail::fill_group(f, feat::kUnroll, nest, unrolled_loops(nest, s.auto_unroll_max_step));
  detail::fill_group(f, feat::kParallel, nest, par);

  const size_t niters = s.iters.size();
  const auto accesses = statement_accesses(p, s);
  std::vector<AccessSummary> sums;
  for (const auto& a : accesses) sums.push_back(summarize_access(a, nest, niters));

  // Arithmetic intensity: flops over bytes fetched when the inner loops from
  // depth d on are cache-resident, as a curve over the nest depth.
  const double flops = f[1] + f[2] + f[3] + f[4] + f[5];
  const size_t n = nest.size();
  if (flops > 0 && n > 0) {
    std::vector<double> ai(n + 1, 0.0);
    double outer = 1;
    for (size_t d = 0; d < n; ++d) {
      double bytes = 0;
      for (const auto& a : accesses)
        bytes += outer * static_cast<double>(footprint(a, nest, d, niters).lines * kCacheLineBytes);
      ai[d + 1] = bytes > 0 ? flops / bytes : 0.0;
      outer *= static_cast<double>(nest[d].extent);
    }
    for (int i = 0; i < 10; ++i) {
      const double x = (i + 1) * 0.1 * static_cast<double>(n);
      const auto lo = static_cast<size_t>(std::min<double>(std::floor(x), static_cast<double>(n)));
      const double frac = x - static_cast<double>(lo);
      const double hi = lo < n ? ai[lo + 1] : ai[n];
      f[feat::kIntensity + static_cast<size_t>(i)] = ai[lo] + (hi - ai[lo]) * frac;
    }
  }

  std::stable_sort(sums.begin(), sums.end(),
                   [](const AccessSummary& a, const AccessSummary& b) { return a.unique_bytes > b.unique_bytes; });
  for (size_t b = 0; b < std::min(sums.size(), kBufferSlots); ++b) {
    const auto& a = sums[b];
    const size_t at = feat::kBuffers + b * kBufferBlock;
    f[at + static_cast<size_t>(a.type)] = 1.0;
    f[at + feat::kBufBytes] = a.bytes;
    f[at + feat::kBufUniqueBytes] = a.unique_bytes;
    f[at + feat::kBufLines] = a.lines;
    f[at + feat::kBufUniqueLines] = a.unique_lines;
    f[at + feat::kBufReuse + static_cast<size_t>(a.reuse)] = 1.0;
    f[at + feat::kBufReuseIter] = a.reuse_dis_iter;
    f[at + feat::kBufReuseBytes] = a.reuse_dis_bytes;
    f[at + feat::kBufReuseCt] = a.reuse_ct;
    const double ct = std::max(a.reuse_ct, 1.0);
    f[at + feat::kBufRatios + 0] = a.bytes / ct;
    f[at + feat::kBufRatios + 1] = a.unique_bytes / ct;
    f[at + feat::kBufRatios + 2] = a.lines / ct;
    f[at + feat::kBufRatios + 3] = a.unique_lines / ct;
    f[at + feat::kBufStride] = a.stride;
  }

  double ctx = 1;
  for (const auto& l : nest)
    if (l.context) ctx *= static_cast<double>(l.extent);
  f[feat::kAlloc + 0] = static_cast<double>(s.output_size() * kElementBytes);
  f[feat::kAlloc + 1] = 1.0;
  f[feat::kAlloc + 2] = ctx;
  f[feat::kAlloc + 3] = iterations / ctx;
  f[feat::kOther + 0] = static_cast<double>(n);
  f[feat::kOther + 1] = iterations;
  f[feat::kOther + 2] = static_cast<double>(s.auto_unroll_max_step);
  return f;
}

/// One vector per non-inlined stage, in stage order.
inline std::vector<FeatureVector> extract_features(const Program& p) {
  std::vector<FeatureVector> out;
  for (const auto& s : p.stages)
    if (!s.inlined) out.push_back(statement_features(p, s));
  return out;
}

}  // namespace loomtune
