// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Loop-nest program representation and the closed set of rewrite steps.
//
// Every loop is a list of parts. A part contributes digit·stride to one of the
// stage's iterators, so an iterator's value is the sum over all parts that
// name it, plus the region base when the stage is attached inside another
// stage. Splits, fusions and reorders only rearrange parts between loops, which
// keeps the per-iterator extent product invariant by construction.

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "loomtune/compute_dag.hpp"
#include "loomtune/expr.hpp"

namespace loomtune {

enum class LoopKind { Space, Reduction };
enum class Annotation { None, Parallel, Vectorize, Unroll };

inline const char* to_string(Annotation a) {
  switch (a) {
    case Annotation::None: return "none";
    case Annotation::Parallel: return "parallel";
    case Annotation::Vectorize: return "vectorize";
    case Annotation::Unroll: return "unroll";
  }
  return "?";
}

struct LoopPart {
  int iter = 0;
  int64_t stride = 1;
  int64_t extent = 1;  // structural extent of this digit
  int64_t bound = 1;   // extent after region inference (== extent at root)
  friend bool operator==(const LoopPart&, const LoopPart&) = default;
};

struct Loop {
  std::string name;
  LoopKind kind = LoopKind::Space;
  Annotation annotation = Annotation::None;
  std::vector<LoopPart> parts;  // outer digit first

  int64_t extent() const {
    int64_t e = 1;
    for (const auto& p : parts) e *= p.bound;
    return e;
  }
  int64_t full_extent() const {
    int64_t e = 1;
    for (const auto& p : parts) e *= p.extent;
    return e;
  }
  friend bool operator==(const Loop&, const Loop&) = default;
};

/// An output buffer dimension: either a plain iterator, or (iter == -1) the
/// mixed-radix value of a digit group, used by reduction factorization.
struct OutputDim {
  int iter = -1;
  std::vector<LoopPart> digits;  // outer digit first; bound unused
  bool plain() const { return iter >= 0; }
  friend bool operator==(const OutputDim&, const OutputDim&) = default;
};

enum class AttachKind { Root, Inside, After };

/// Inside: the stage runs within `loop` of `target` before the target's inner
/// loops (a producer computed at its consumer). After: it runs after the
/// target's inner loops finish (a consumer fused into its producer's tile).
/// loop == -1 attaches at the target's stage level.
struct AttachPoint {
  AttachKind kind = AttachKind::Root;
  std::string target;
  int loop = -1;
  friend bool operator==(const AttachPoint&, const AttachPoint&) = default;
};

struct Stage {
  std::string name;  // also the name of the stage's output buffer
  std::string node;  // originating DAG node
  std::vector<IterVar> iters;
  ReduceKind reduce = ReduceKind::None;
  Expr body;
  std::vector<OutputDim> out_index;
  std::vector<int64_t> out_shape;
  std::vector<Loop> loops;
  AttachPoint attach;
  int64_t auto_unroll_max_step = 0;
  bool inlined = false;
  std::string tile_structure;  // set by multi-level tiling

  // Derived by bound inference.
  std::vector<int64_t> region;       // per iterator: extent of the computed window
  std::vector<uint8_t> region_full;  // per iterator: window is the whole extent, base 0
  std::vector<AffineExpr> region_base;  // per iterator: window start over the target's iterators

  bool is_root() const { return attach.kind == AttachKind::Root; }
  int find_loop(const std::string& loop_name) const {
    for (size_t i = 0; i < loops.size(); ++i)
      if (loops[i].name == loop_name) return static_cast<int>(i);
    return -1;
  }
  int64_t output_size() const {
    int64_t s = 1;
    for (auto e : out_shape) s *= e;
    return s;
  }
  friend bool operator==(const Stage& a, const Stage& b) {
    return a.name == b.name && a.node == b.node && a.iters == b.iters && a.reduce == b.reduce && a.body == b.body &&
           a.out_index == b.out_index && a.out_shape == b.out_shape && a.loops == b.loops && a.attach == b.attach &&
           a.auto_unroll_max_step == b.auto_unroll_max_step && a.inlined == b.inlined &&
           a.tile_structure == b.tile_structure && a.region == b.region && a.region_full == b.region_full &&
           a.region_base == b.region_base;
  }
};

/// Packed layout of a constant buffer: physical dimensions in order, each the
/// digit (index[dim] / stride) % extent of one logical dimension.
struct LayoutPart {
  int dim = 0;
  int64_t stride = 1;
  int64_t extent = 1;
  friend bool operator==(const LayoutPart&, const LayoutPart&) = default;
};
using LayoutDescriptor = std::vector<LayoutPart>;

inline LayoutDescriptor identity_layout(const std::vector<int64_t>& shape) {
  LayoutDescriptor d;
  for (size_t i = 0; i < shape.size(); ++i) d.push_back({static_cast<int>(i), 1, shape[i]});
  return d;
}

enum class StepKind {
  Split,
  Fuse,
  Reorder,
  ComputeAt,
  ComputeInline,
  CacheWrite,
  Rfactor,
  Annotate,
  Pragma,
  LayoutRewrite,
  Simplify
};

inline const char* to_string(StepKind k) {
  switch (k) {
    case StepKind::Split: return "split";
    case StepKind::Fuse: return "fuse";
    case StepKind::Reorder: return "reorder";
    case StepKind::ComputeAt: return "compute_at";
    case StepKind::ComputeInline: return "compute_inline";
    case StepKind::CacheWrite: return "cache_write";
    case StepKind::Rfactor: return "rfactor";
    case StepKind::Annotate: return "annotate";
    case StepKind::Pragma: return "pragma";
    case StepKind::LayoutRewrite: return "layout_rewrite";
    case StepKind::Simplify: return "simplify";
  }
  return "?";
}

/// One gene of a program. Fields not used by a kind stay at their defaults.
struct RewriteStep {
  StepKind kind = StepKind::Simplify;
  std::string stage;
  int loop = -1;
  std::vector<int64_t> factors;  // Split: inner factors, 0 = unresolved tile size. Rfactor: {factor}.
  std::vector<int> order;        // Reorder permutation
  std::string structure;         // Reorder produced by multi-level tiling
  std::string target;            // ComputeAt: empty = root
  std::string target_loop;       // ComputeAt: empty = target's stage level
  Annotation annotation = Annotation::None;
  int64_t value = 0;             // Pragma
  std::string buffer;            // LayoutRewrite
  LayoutDescriptor layout;

  static RewriteStep split(std::string stage, int loop, std::vector<int64_t> factors) {
    RewriteStep s;
    s.kind = StepKind::Split;
    s.stage = std::move(stage);
    s.loop = loop;
    s.factors = std::move(factors);
    return s;
  }
  static RewriteStep fuse(std::string stage, int loop) {
    RewriteStep s;
    s.kind = StepKind::Fuse;
    s.stage = std::move(stage);
    s.loop = loop;
    return s;
  }
  static RewriteStep reorder(std::string stage, std::vector<int> order, std::string structure = {}) {
    RewriteStep s;
    s.kind = StepKind::Reorder;
    s.stage = std::move(stage);
    s.order = std::move(order);
    s.structure = std::move(structure);
    return s;
  }
  static RewriteStep compute_at(std::string stage, std::string target, std::string target_loop) {
    RewriteStep s;
    s.kind = StepKind::ComputeAt;
    s.stage = std::move(stage);
    s.target = std::move(target);
    s.target_loop = std::move(target_loop);
    return s;
  }
  static RewriteStep compute_root(std::string stage) { return compute_at(std::move(stage), {}, {}); }
  static RewriteStep compute_inline(std::string stage) {
    RewriteStep s;
    s.kind = StepKind::ComputeInline;
    s.stage = std::move(stage);
    return s;
  }
  static RewriteStep cache_write(std::string stage) {
    RewriteStep s;
    s.kind = StepKind::CacheWrite;
    s.stage = std::move(stage);
    return s;
  }
  static RewriteStep rfactor(std::string stage, int loop, int64_t factor) {
    RewriteStep s;
    s.kind = StepKind::Rfactor;
    s.stage = std::move(stage);
    s.loop = loop;
    s.factors = {factor};
    return s;
  }
  static RewriteStep annotate(std::string stage, int loop, Annotation a) {
    RewriteStep s;
    s.kind = StepKind::Annotate;
    s.stage = std::move(stage);
    s.loop = loop;
    s.annotation = a;
    return s;
  }
  static RewriteStep pragma(std::string stage, int64_t value) {
    RewriteStep s;
    s.kind = StepKind::Pragma;
    s.stage = std::move(stage);
    s.value = value;
    return s;
  }
  static RewriteStep layout_rewrite(std::string buffer, LayoutDescriptor layout) {
    RewriteStep s;
    s.kind = StepKind::LayoutRewrite;
    s.buffer = std::move(buffer);
    s.layout = std::move(layout);
    return s;
  }
  static RewriteStep simplify() { return RewriteStep{}; }

  friend bool operator==(const RewriteStep&, const RewriteStep&) = default;
};

/// A program is its DAG, its current stages, and the history that produced
/// them from the naive program.
struct Program {
  DagPtr dag;
  std::vector<Stage> stages;
  std::vector<RewriteStep> history;
  std::map<std::string, LayoutDescriptor> layouts;

  int stage_index(const std::string& name) const {
    for (size_t i = 0; i < stages.size(); ++i)
      if (stages[i].name == name) return static_cast<int>(i);
    return -1;
  }
  const Stage& stage(const std::string& name) const {
    const int i = stage_index(name);
    if (i < 0) throw StepError("unknown stage '" + name + "'");
    return stages[static_cast<size_t>(i)];
  }
  Stage& stage(const std::string& name) {
    const int i = stage_index(name);
    if (i < 0) throw StepError("unknown stage '" + name + "'");
    return stages[static_cast<size_t>(i)];
  }
  bool has_stage(const std::string& name) const { return stage_index(name) >= 0; }

  /// Stages that emit code (not inlined).
  size_t active_stage_count() const {
    return static_cast<size_t>(std::count_if(stages.begin(), stages.end(), [](const Stage& s) { return !s.inlined; }));
  }

  /// Structural equality: stages and layouts, ignoring history.
  bool same_structure(const Program& o) const { return stages == o.stages && layouts == o.layouts; }
};

/// Buffers a stage body reads, deduplicated in first-read order.
inline std::vector<std::string> stage_reads(const Stage& s) {
  std::vector<std::string> out;
  for_each_read(s.body, [&](const ExprNode& r) {
    if (std::find(out.begin(), out.end(), r.buffer) == out.end()) out.push_back(r.buffer);
  });
  return out;
}

inline bool stage_reads_buffer(const Stage& s, const std::string& buffer) {
  bool found = false;
  for_each_read(s.body, [&](const ExprNode& r) { found = found || r.buffer == buffer; });
  return found;
}

// ---------------------------------------------------------------------------
// JSON for rewrite histories (the unit of record in tuning logs).

inline nlohmann::json step_to_json(const RewriteStep& s) {
  using nlohmann::json;
  json j{{"kind", to_string(s.kind)}};
  switch (s.kind) {
    case StepKind::Split: j.update({{"stage", s.stage}, {"loop", s.loop}, {"factors", s.factors}}); break;
    case StepKind::Fuse: j.update({{"stage", s.stage}, {"loop", s.loop}}); break;
    case StepKind::Reorder:
      j.update({{"stage", s.stage}, {"order", s.order}});
      if (!s.structure.empty()) j["structure"] = s.structure;
      break;
    case StepKind::ComputeAt:
      j.update({{"stage", s.stage}, {"target", s.target}, {"target_loop", s.target_loop}});
      break;
    case StepKind::ComputeInline:
    case StepKind::CacheWrite: j["stage"] = s.stage; break;
    case StepKind::Rfactor: j.update({{"stage", s.stage}, {"loop", s.loop}, {"factor", s.factors.at(0)}}); break;
    case StepKind::Annotate:
      j.update({{"stage", s.stage}, {"loop", s.loop}, {"annotation", to_string(s.annotation)}});
      break;
    case StepKind::Pragma: j.update({{"stage", s.stage}, {"auto_unroll_max_step", s.value}}); break;
    case StepKind::LayoutRewrite: {
      json parts = json::array();
      for (const auto& p : s.layout) parts.push_back({p.dim, p.stride, p.extent});
      j.update({{"buffer", s.buffer}, {"layout", parts}});
      break;
    }
    case StepKind::Simplify: break;
  }
  return j;
}

inline RewriteStep step_from_json(const nlohmann::json& j) {
  static const std::map<std::string, StepKind> kinds = {
      {"split", StepKind::Split},         {"fuse", StepKind::Fuse},
      {"reorder", StepKind::Reorder},     {"compute_at", StepKind::ComputeAt},
      {"compute_inline", StepKind::ComputeInline}, {"cache_write", StepKind::CacheWrite},
      {"rfactor", StepKind::Rfactor},     {"annotate", StepKind::Annotate},
      {"pragma", StepKind::Pragma},       {"layout_rewrite", StepKind::LayoutRewrite},
      {"simplify", StepKind::Simplify}};
  static const std::map<std::string, Annotation> anns = {{"none", Annotation::None},
                                                         {"parallel", Annotation::Parallel},
                                                         {"vectorize", Annotation::Vectorize},
                                                         {"unroll", Annotation::Unroll}};
  const auto kname = j.at("kind").get<std::string>();
  auto it = kinds.find(kname);
  if (it == kinds.end()) throw StepError("unknown step kind '" + kname + "'");
  RewriteStep s;
  s.kind = it->second;
  switch (s.kind) {
    case StepKind::Split:
      s.stage = j.at("stage");
      s.loop = j.at("loop");
      s.factors = j.at("factors").get<std::vector<int64_t>>();
      break;
    case StepKind::Fuse:
      s.stage = j.at("stage");
      s.loop = j.at("loop");
      break;
    case StepKind::Reorder:
      s.stage = j.at("stage");
      s.order = j.at("order").get<std::vector<int>>();
      s.structure = j.value("structure", std::string());
      break;
    case StepKind::ComputeAt:
      s.stage = j.at("stage");
      s.target = j.at("target");
      s.target_loop = j.at("target_loop");
      break;
    case StepKind::ComputeInline:
    case StepKind::CacheWrite: s.stage = j.at("stage"); break;
    case StepKind::Rfactor:
      s.stage = j.at("stage");
      s.loop = j.at("loop");
      s.factors = {j.at("factor").get<int64_t>()};
      break;
    case StepKind::Annotate: {
      s.stage = j.at("stage");
      s.loop = j.at("loop");
      auto a = anns.find(j.at("annotation").get<std::string>());
      if (a == anns.end()) throw StepError("unknown annotation");
      s.annotation = a->second;
      break;
    }
    case StepKind::Pragma:
      s.stage = j.at("stage");
      s.value = j.at("auto_unroll_max_step");
      break;
    case StepKind::LayoutRewrite:
      s.buffer = j.at("buffer");
      for (const auto& p : j.at("layout"))
        s.layout.push_back({p.at(0).get<int>(), p.at(1).get<int64_t>(), p.at(2).get<int64_t>()});
      break;
    case StepKind::Simplify: break;
  }
  return s;
}

inline nlohmann::json history_to_json(const std::vector<RewriteStep>& h) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& s : h) a.push_back(step_to_json(s));
  return a;
}

inline std::vector<RewriteStep> history_from_json(const nlohmann::json& j) {
  std::vector<RewriteStep> h;
  for (const auto& s : j) h.push_back(step_from_json(s));
  return h;
}

}  // namespace loomtune
