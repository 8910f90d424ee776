// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <set>
#include <string>
#include <vector>

#include "loomtune/transform.hpp"

namespace loomtune {

struct ValidationResult {
  bool ok = true;
  std::vector<std::string> errors;
  explicit operator bool() const { return ok; }
  std::string message() const {
    std::string m;
    for (const auto& e : errors) m += (m.empty() ? "" : "; ") + e;
    return m;
  }
};

/// Structural checks on the current stages plus a replay of the history,
/// which must reproduce the same stages.
inline ValidationResult validate(const Program& p) {
  ValidationResult r;
  auto fail = [&](std::string e) {
    r.ok = false;
    r.errors.push_back(std::move(e));
  };
  for (const auto& s : p.stages) {
    if (s.inlined) continue;
    std::set<std::string> names;
    std::vector<std::vector<LoopPart>> per_iter(s.iters.size());
    for (size_t li = 0; li < s.loops.size(); ++li) {
      const auto& l = s.loops[li];
      if (!names.insert(l.name).second) fail("duplicate loop name '" + l.name + "' in '" + s.name + "'");
      for (const auto& part : l.parts) {
        if (part.iter < 0 || part.iter >= static_cast<int>(s.iters.size())) {
          fail("dangling iterator reference in '" + s.name + "'");
          continue;
        }
        if (l.kind == LoopKind::Reduction && !s.iters[static_cast<size_t>(part.iter)].reduction)
          fail("space iterator in reduction loop '" + l.name + "' of '" + s.name + "'");
        per_iter[static_cast<size_t>(part.iter)].push_back(part);
      }
      if (l.annotation == Annotation::Parallel && (l.kind != LoopKind::Space || !s.is_root()))
        fail("parallel loop '" + l.name + "' must be a space loop of a root stage");
      if (l.annotation == Annotation::Vectorize) {
        bool innermost = l.kind == LoopKind::Space;
        for (size_t k = li + 1; k < s.loops.size(); ++k) innermost = innermost && s.loops[k].full_extent() == 1;
        if (!innermost) fail("vectorized loop '" + l.name + "' is not the innermost space loop");
      }
    }
    for (size_t i = 0; i < per_iter.size(); ++i) {
      auto parts = per_iter[i];
      std::sort(parts.begin(), parts.end(), [](const LoopPart& a, const LoopPart& b) { return a.stride < b.stride; });
      int64_t expect = 1;
      for (const auto& part : parts) {
        if (part.stride != expect) fail("iterator '" + s.iters[i].name + "' of '" + s.name + "' is not fully covered");
        expect *= part.extent;
      }
      if (expect != s.iters[i].extent)
        fail(str_cat("iterator '", s.iters[i].name, "' of '", s.name, "' covers ", expect, " of ", s.iters[i].extent));
    }
    const auto err = check_attach(p, s);
    if (!err.empty()) fail(err);
  }
  if (!r.ok) return r;
  try {
    Program again = replay(p.dag, p.history);
    if (!again.same_structure(p)) fail("history does not reproduce the program");
  } catch (const StepError& e) {
    fail(std::string("replay failed: ") + e.what());
  }
  return r;
}

}  // namespace loomtune
