// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Reference execution of programs and of DAGs. The DAG evaluator walks the
// expression tree directly and shares nothing with the loop-nest interpreter,
// so the two can check each other.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "loomtune/program.hpp"

namespace loomtune {

struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s, double fill = 0.0) : shape(std::move(s)) {
    int64_t n = 1;
    for (auto e : shape) n *= e;
    data.assign(static_cast<size_t>(n), fill);
  }
  int64_t size() const { return static_cast<int64_t>(data.size()); }
};

using TensorMap = std::map<std::string, Tensor>;

/// Uniform values in [-1, 1) for every placeholder.
inline TensorMap random_inputs(const ComputeDAG& dag, uint64_t seed) {
  TensorMap m;
  Rng rng(seed);
  for (const auto& n : dag.nodes()) {
    if (!n.placeholder) continue;
    Tensor t(n.shape());
    for (auto& v : t.data) v = 2.0 * rng.uniform() - 1.0;
    m[n.name] = std::move(t);
  }
  return m;
}

/// max |a - b| / max(1, max |b|).
inline double relative_error(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return INFINITY;
  double diff = 0.0, scale = 1.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = std::fabs(a.data[i] - b.data[i]);
    if (!(d <= diff)) diff = d;  // NaN-propagating max
    scale = std::max(scale, std::fabs(b.data[i]));
  }
  return diff / scale;
}

namespace detail {

inline int64_t flat_offset(const std::vector<int64_t>& shape, const std::vector<int64_t>& idx) {
  int64_t off = 0;
  for (size_t d = 0; d < shape.size(); ++d) off = off * shape[d] + idx[d];
  return off;
}

inline double eval_direct(const Expr& e, const std::vector<int64_t>& it, const TensorMap& bufs) {
  switch (e->kind) {
    case Expr::Kind::Const: return e->value;
    case Expr::Kind::Index: return static_cast<double>(e->index.eval(it.data()));
    case Expr::Kind::Read: {
      const Tensor& t = bufs.at(e->buffer);
      std::vector<int64_t> idx;
      for (size_t d = 0; d < e->indices.size(); ++d) {
        const int64_t v = e->indices[d].eval(it.data());
        if (v < 0 || v >= t.shape[d]) {
          if (e->zero_pad) return 0.0;
          throw IrError(str_cat("read of '", e->buffer, "' out of range in dimension ", d, ": ", v));
        }
        idx.push_back(v);
      }
      return t.data[static_cast<size_t>(flat_offset(t.shape, idx))];
    }
    case Expr::Kind::Binary:
      return apply_binary(e->bop, eval_direct(e->a, it, bufs), eval_direct(e->b, it, bufs));
    case Expr::Kind::Unary: return apply_unary(e->uop, eval_direct(e->a, it, bufs));
  }
  return 0.0;
}

}  // namespace detail

/// Evaluates the DAG node by node from its definition.
inline TensorMap evaluate_dag(const ComputeDAG& dag, const TensorMap& inputs) {
  TensorMap bufs = inputs;
  for (const auto& name : dag.producer_order()) {
    const auto& n = dag.node(name);
    if (n.placeholder) {
      if (!bufs.count(name)) throw ContractViolation("missing input '" + name + "'");
      continue;
    }
    Tensor out(n.shape());
    const size_t ni = n.iters.size();
    std::vector<int64_t> it(ni, 0);
    const int ns = n.space_count();
    for (int64_t flat = 0; flat < out.size(); ++flat) {
      int64_t rem = flat;
      for (int d = ns - 1; d >= 0; --d) {
        it[static_cast<size_t>(d)] = rem % n.iters[static_cast<size_t>(d)].extent;
        rem /= n.iters[static_cast<size_t>(d)].extent;
      }
      if (n.reduce == ReduceKind::None) {
        out.data[static_cast<size_t>(flat)] = detail::eval_direct(n.body, it, bufs);
        continue;
      }
      double acc = reduce_identity(n.reduce);
      const int64_t rp = n.reduction_product();
      for (int64_t r = 0; r < rp; ++r) {
        int64_t rr = r;
        for (size_t d = ni; d-- > static_cast<size_t>(ns);) {
          it[d] = rr % n.iters[d].extent;
          rr /= n.iters[d].extent;
        }
        const double v = detail::eval_direct(n.body, it, bufs);
        acc = n.reduce == ReduceKind::Sum ? acc + v : std::max(acc, v);
      }
      out.data[static_cast<size_t>(flat)] = acc;
    }
    bufs[name] = std::move(out);
  }
  return bufs;
}

/// Physical image of a logical tensor under a packed layout.
inline Tensor pack_layout(const Tensor& t, const LayoutDescriptor& layout) {
  std::vector<int64_t> pshape;
  for (const auto& lp : layout) pshape.push_back(lp.extent);
  Tensor out(pshape);
  std::vector<int64_t> pidx(layout.size(), 0), lidx(t.shape.size(), 0);
  for (int64_t flat = 0; flat < out.size(); ++flat) {
    int64_t rem = flat;
    for (size_t d = layout.size(); d-- > 0;) {
      pidx[d] = rem % pshape[d];
      rem /= pshape[d];
    }
    std::fill(lidx.begin(), lidx.end(), 0);
    for (size_t d = 0; d < layout.size(); ++d) lidx[static_cast<size_t>(layout[d].dim)] += pidx[d] * layout[d].stride;
    out.data[static_cast<size_t>(flat)] = t.data[static_cast<size_t>(detail::flat_offset(t.shape, lidx))];
  }
  return out;
}

}  // namespace loomtune

#include "loomtune/interpreter_impl.hpp"
