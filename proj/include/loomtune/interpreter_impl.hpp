// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Loop-nest interpreter. Stage bodies are flattened to a small stack machine
// once per run; loops are walked digit by digit.

#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "loomtune/interpreter.hpp"
#include "loomtune/program.hpp"

namespace loomtune {

namespace detail {

struct ReadRef {
  const Tensor* buf = nullptr;
  std::string name;
  std::vector<IndexExpr> idx;
  bool pad = false;
};

struct Instr {
  Expr::Kind kind;
  double value = 0.0;
  int ref = -1;  // Index: affine slot; Read: read slot
  BinaryOp bop = BinaryOp::Add;
  UnaryOp uop = UnaryOp::Exp;
};

struct CompiledBody {
  std::vector<Instr> code;
  std::vector<AffineExpr> affines;
  std::vector<ReadRef> reads;

  void emit(const Expr& e, const TensorMap& bufs) {
    Instr in{e->kind};
    switch (e->kind) {
      case Expr::Kind::Const: in.value = e->value; break;
      case Expr::Kind::Index:
        in.ref = static_cast<int>(affines.size());
        affines.push_back(e->index);
        break;
      case Expr::Kind::Read: {
        auto it = bufs.find(e->buffer);
        if (it == bufs.end()) throw IrError("read of unknown buffer '" + e->buffer + "'");
        in.ref = static_cast<int>(reads.size());
        reads.push_back({&it->second, e->buffer, e->indices, e->zero_pad});
        break;
      }
      case Expr::Kind::Binary:
        emit(e->a, bufs);
        emit(e->b, bufs);
        in.bop = e->bop;
        break;
      case Expr::Kind::Unary:
        emit(e->a, bufs);
        in.uop = e->uop;
        break;
    }
    code.push_back(in);
  }

  double run(const int64_t* it, std::vector<double>& stack, const std::string& stage) const {
    stack.clear();
    for (const auto& in : code) {
      switch (in.kind) {
        case Expr::Kind::Const: stack.push_back(in.value); break;
        case Expr::Kind::Index:
          stack.push_back(static_cast<double>(affines[static_cast<size_t>(in.ref)].eval(it)));
          break;
        case Expr::Kind::Read: {
          const auto& r = reads[static_cast<size_t>(in.ref)];
          int64_t off = 0;
          bool zero = false;
          for (size_t d = 0; d < r.idx.size(); ++d) {
            const int64_t v = r.idx[d].eval(it);
            const int64_t ext = r.buf->shape[d];
            if (v < 0 || v >= ext) {
              if (r.pad) {
                zero = true;
                break;
              }
              throw IrError(str_cat("stage '", stage, "': read of '", r.name, "' dimension ", d, " index ", v,
                                    " outside [0, ", ext, ")"));
            }
            off = off * ext + v;
          }
          stack.push_back(zero ? 0.0 : r.buf->data[static_cast<size_t>(off)]);
          break;
        }
        case Expr::Kind::Binary: {
          const double b = stack.back();
          stack.pop_back();
          stack.back() = apply_binary(in.bop, stack.back(), b);
          break;
        }
        case Expr::Kind::Unary: stack.back() = apply_unary(in.uop, stack.back()); break;
      }
    }
    return stack.back();
  }
};

class LoopInterpreter {
 public:
  LoopInterpreter(const Program& p, TensorMap& bufs) : p_(p), bufs_(bufs) {
    const size_t n = p.stages.size();
    bodies_.resize(n);
    stamps_.resize(n);
    instance_.assign(n, 0);
    inside_.resize(n);
    after_.resize(n);
    for (size_t i = 0; i < n; ++i) {
      const Stage& s = p.stages[i];
      if (s.inlined) continue;
      bufs_[s.name] = Tensor(s.out_shape, 0.0);
      stamps_[i].assign(static_cast<size_t>(s.output_size()), 0);
    }
    for (size_t i = 0; i < n; ++i) {
      const Stage& s = p.stages[i];
      if (s.inlined) continue;
      bodies_[i].emit(s.body, bufs_);
      if (s.is_root()) continue;
      const int t = p.stage_index(s.attach.target);
      if (t < 0) throw IrError("attach target '" + s.attach.target + "' missing");
      auto& lists = s.attach.kind == AttachKind::Inside ? inside_ : after_;
      auto& per = lists[static_cast<size_t>(t)];
      const size_t slot = static_cast<size_t>(s.attach.loop + 1);
      if (per.size() <= slot) per.resize(slot + 1);
      per[slot].push_back(static_cast<int>(i));
    }
  }

  void run() {
    for (size_t i = 0; i < p_.stages.size(); ++i)
      if (!p_.stages[i].inlined && p_.stages[i].is_root()) run_stage(static_cast<int>(i), nullptr);
  }

 private:
  struct Frame {
    int stage;
    std::vector<int64_t> vals, base;
    std::vector<LoopPart> flat;    // all parts, loop order
    std::vector<int> loop_end;     // flat index one past each loop's parts
  };

  void run_stage(int si, const int64_t* target_vals) {
    const Stage& s = p_.stages[static_cast<size_t>(si)];
    ++instance_[static_cast<size_t>(si)];
    Frame f;
    f.stage = si;
    f.base.assign(s.iters.size(), 0);
    for (size_t x = 0; x < s.iters.size(); ++x)
      if (!s.is_root() && !s.region_full[x]) f.base[x] = s.region_base[x].eval(target_vals);
    f.vals = f.base;
    for (const auto& l : s.loops) {
      f.flat.insert(f.flat.end(), l.parts.begin(), l.parts.end());
      f.loop_end.push_back(static_cast<int>(f.flat.size()));
    }
    walk(f, 0, 0);
  }

  void run_attached(const std::vector<std::vector<int>>& lists, const Frame& f, int slot) {
    if (static_cast<size_t>(slot) >= lists.size()) return;
    for (int c : lists[static_cast<size_t>(slot)]) run_stage(c, f.vals.data());
  }

  // `loop` is the next loop to enter; `part` the next flat part inside it.
  void walk(Frame& f, int loop, int part) {
    const int nloops = static_cast<int>(f.loop_end.size());
    const auto& ins = inside_[static_cast<size_t>(f.stage)];
    const auto& aft = after_[static_cast<size_t>(f.stage)];
    const bool loop_start = loop == 0 ? part == 0 : part == f.loop_end[static_cast<size_t>(loop - 1)];
    if (loop_start) run_attached(ins, f, loop);
    if (loop == nloops) {
      statement(f);
    } else if (part == f.loop_end[static_cast<size_t>(loop)]) {
      walk(f, loop + 1, part);
    } else {
      const LoopPart& lp = f.flat[static_cast<size_t>(part)];
      int64_t& v = f.vals[static_cast<size_t>(lp.iter)];
      for (int64_t d = 0; d < lp.bound; ++d) {
        walk(f, loop, part + 1);
        v += lp.stride;
      }
      v -= lp.bound * lp.stride;
    }
    if (loop_start) run_attached(aft, f, loop);
  }

  void statement(Frame& f) {
    const Stage& s = p_.stages[static_cast<size_t>(f.stage)];
    for (size_t x = 0; x < s.iters.size(); ++x) {
      const int64_t v = f.vals[x];
      if (v < 0 || v >= s.iters[x].extent) return;
      if (!s.is_root() && !s.region_full[x] && v - f.base[x] >= s.region[x]) return;
    }
    Tensor& out = bufs_[s.name];
    int64_t off = 0;
    for (size_t d = 0; d < s.out_index.size(); ++d) {
      const auto& od = s.out_index[d];
      int64_t v = 0;
      if (od.plain()) {
        v = f.vals[static_cast<size_t>(od.iter)];
      } else {
        for (const auto& g : od.digits) v = v * g.extent + (f.vals[static_cast<size_t>(g.iter)] / g.stride) % g.extent;
      }
      off = off * s.out_shape[d] + v;
    }
    const double val = bodies_[static_cast<size_t>(f.stage)].run(f.vals.data(), stack_, s.name);
    double& dst = out.data[static_cast<size_t>(off)];
    if (s.reduce == ReduceKind::None) {
      dst = val;
      return;
    }
    auto& stamp = stamps_[static_cast<size_t>(f.stage)][static_cast<size_t>(off)];
    if (stamp != instance_[static_cast<size_t>(f.stage)]) {
      dst = reduce_identity(s.reduce);
      stamp = instance_[static_cast<size_t>(f.stage)];
    }
    dst = s.reduce == ReduceKind::Sum ? dst + val : std::max(dst, val);
  }

  const Program& p_;
  TensorMap& bufs_;
  std::vector<CompiledBody> bodies_;
  std::vector<std::vector<int64_t>> stamps_;
  std::vector<int64_t> instance_;
  std::vector<std::vector<std::vector<int>>> inside_, after_;
  std::vector<double> stack_;
};

}  // namespace detail

/// Runs a program on logical inputs; returns every buffer, keyed by name.
/// Packed constants are converted to their physical layout first.
inline TensorMap interpret(const Program& p, const TensorMap& inputs) {
  TensorMap bufs;
  for (const auto& n : p.dag->nodes()) {
    if (!n.placeholder) continue;
    auto it = inputs.find(n.name);
    if (it == inputs.end()) throw ContractViolation("missing input '" + n.name + "'");
    auto lay = p.layouts.find(n.name);
    bufs[n.name] = lay == p.layouts.end() ? it->second : pack_layout(it->second, lay->second);
  }
  detail::LoopInterpreter(p, bufs).run();
  return bufs;
}

/// Largest relative error over the DAG outputs between the program and the
/// direct DAG evaluation.
inline double program_error(const Program& p, uint64_t seed) {
  const auto inputs = random_inputs(*p.dag, seed);
  const auto got = interpret(p, inputs);
  const auto want = evaluate_dag(*p.dag, inputs);
  double err = 0.0;
  for (const auto& o : p.dag->outputs()) {
    const double e = relative_error(got.at(o), want.at(o));
    if (!(e <= err)) err = e;
  }
  return err;
}

}  // namespace loomtune
