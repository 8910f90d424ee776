// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Declarative computation DAG and the static read/write-pattern analyses that
// gate sketch derivation rules.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "loomtune/common.hpp"
#include "loomtune/expr.hpp"

namespace loomtune {

struct IterVar {
  std::string name;
  int64_t extent = 1;
  bool reduction = false;
  friend bool operator==(const IterVar&, const IterVar&) = default;
};

/// A node of the DAG. Iterators are ordered space-first; a node's output
/// buffer has the node's name and the space extents as its shape.
struct ComputeNode {
  std::string name;
  std::vector<IterVar> iters;
  ReduceKind reduce = ReduceKind::None;
  Expr body;
  bool placeholder = false;
  bool constant = false;  // placeholder whose value is known at compile time
  std::vector<int64_t> placeholder_shape;

  int space_count() const {
    int n = 0;
    for (const auto& it : iters) n += it.reduction ? 0 : 1;
    return n;
  }
  std::vector<int64_t> shape() const {
    if (placeholder) return placeholder_shape;
    std::vector<int64_t> s;
    for (const auto& it : iters)
      if (!it.reduction) s.push_back(it.extent);
    return s;
  }
  int64_t space_product() const {
    int64_t p = 1;
    for (const auto& it : iters)
      if (!it.reduction) p *= it.extent;
    return p;
  }
  int64_t reduction_product() const {
    int64_t p = 1;
    for (const auto& it : iters)
      if (it.reduction) p *= it.extent;
    return p;
  }
};

struct NodeTraits {
  bool strict_inlinable = false;
  bool has_data_reuse = false;
  bool has_fusible_consumer = false;
  bool has_more_reduction_parallel = false;
  friend bool operator==(const NodeTraits&, const NodeTraits&) = default;
};

/// Thresholds for "little space parallelism, ample reduction parallelism".
struct AnalysisConfig {
  int64_t threshold_space = 256;
  int64_t ratio_threshold = 16;
};

class ComputeDAG {
 public:
  ComputeDAG() = default;

  /// Validates and freezes the DAG; throws StructuralError on any defect.
  ComputeDAG(std::string id, std::vector<ComputeNode> nodes, std::vector<std::string> outputs)
      : id_(std::move(id)), nodes_(std::move(nodes)), outputs_(std::move(outputs)) {
    for (size_t i = 0; i < nodes_.size(); ++i) {
      if (!index_.emplace(nodes_[i].name, static_cast<int>(i)).second)
        throw StructuralError("duplicate node name '" + nodes_[i].name + "'");
    }
    check();
    order_ = compute_order();
  }

  const std::string& id() const { return id_; }
  const std::vector<ComputeNode>& nodes() const { return nodes_; }
  const std::vector<std::string>& outputs() const { return outputs_; }
  bool has_node(const std::string& name) const { return index_.count(name) > 0; }
  const ComputeNode& node(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw StructuralError("unknown node '" + name + "'");
    return nodes_[static_cast<size_t>(it->second)];
  }
  bool is_output(const std::string& name) const {
    return std::find(outputs_.begin(), outputs_.end(), name) != outputs_.end();
  }

  /// Names of nodes read by `name`, deduplicated, in first-read order.
  std::vector<std::string> producers(const std::string& name) const {
    std::vector<std::string> out;
    const auto& n = node(name);
    if (n.placeholder) return out;
    for_each_read(n.body, [&](const ExprNode& r) {
      if (std::find(out.begin(), out.end(), r.buffer) == out.end()) out.push_back(r.buffer);
    });
    return out;
  }

  std::vector<std::string> consumers(const std::string& name) const {
    std::vector<std::string> out;
    for (const auto& n : nodes_) {
      if (n.placeholder) continue;
      bool reads = false;
      for_each_read(n.body, [&](const ExprNode& r) { reads = reads || r.buffer == name; });
      if (reads) out.push_back(n.name);
    }
    return out;
  }

  /// Producer-first order (inputs first, ties broken by ascending name). The
  /// derivation index i of a node is its 1-based position in this order.
  const std::vector<std::string>& producer_order() const { return order_; }

  /// Total floating point operations of one evaluation of the DAG.
  int64_t flop_count() const {
    int64_t total = 0;
    for (const auto& n : nodes_) {
      if (n.placeholder) continue;
      total += n.space_product() * n.reduction_product() * statement_ops(n.body, n.reduce).float_total();
    }
    return total;
  }

 private:
  void check() const {
    for (const auto& out : outputs_)
      if (!has_node(out)) throw StructuralError("output '" + out + "' is not a node");
    if (outputs_.empty()) throw StructuralError("DAG '" + id_ + "' has no output");
    for (const auto& n : nodes_) {
      if (n.placeholder) {
        if (n.body.defined()) throw StructuralError("placeholder '" + n.name + "' has a body");
        for (auto e : n.placeholder_shape)
          if (e < 1) throw StructuralError("placeholder '" + n.name + "' has a non-positive extent");
        continue;
      }
      if (!n.body.defined()) throw StructuralError("node '" + n.name + "' has no body");
      bool seen_reduction = false;
      for (const auto& it : n.iters) {
        if (it.extent < 1) throw StructuralError("iterator '" + it.name + "' of '" + n.name + "' has extent < 1");
        if (it.reduction) seen_reduction = true;
        if (!it.reduction && seen_reduction)
          throw StructuralError("node '" + n.name + "' lists a space iterator after a reduction iterator");
      }
      if (seen_reduction != (n.reduce != ReduceKind::None))
        throw StructuralError("node '" + n.name + "': reduction iterators and reduction marker disagree");
      std::vector<bool> used;
      collect_iters(n.body, used);
      if (used.size() > n.iters.size())
        throw StructuralError("node '" + n.name + "' references an undeclared iterator");
      for_each_read(n.body, [&](const ExprNode& r) {
        if (!has_node(r.buffer))
          throw StructuralError("node '" + n.name + "' reads unknown buffer '" + r.buffer + "'");
        const auto& p = node(r.buffer);
        const auto shape = p.shape();
        if (r.indices.size() != shape.size())
          throw StructuralError("node '" + n.name + "' reads '" + r.buffer + "' with wrong rank");
        if (r.zero_pad && !p.placeholder)
          throw StructuralError("zero-padded read of non-placeholder '" + r.buffer + "'");
        for (size_t d = 0; d < shape.size(); ++d) {
          const auto& ix = r.indices[d];
          if (!ix.is_plain()) throw StructuralError("DAG reads must use affine indices");
          int64_t lo = ix.affine.constant(), hi = ix.affine.constant();
          for (const auto& [i, c] : ix.affine.terms()) {
            const int64_t span = c * (n.iters[static_cast<size_t>(i)].extent - 1);
            (span < 0 ? lo : hi) += span;
          }
          if (!r.zero_pad && (lo < 0 || hi >= shape[d]))
            throw StructuralError(str_cat("node '", n.name, "' reads '", r.buffer, "' out of bounds in dim ", d));
        }
      });
    }
  }

  std::vector<std::string> compute_order() const {
    std::map<std::string, int> pending;
    for (const auto& n : nodes_) pending[n.name] = static_cast<int>(producers(n.name).size());
    std::set<std::string> ready;
    for (const auto& [name, cnt] : pending)
      if (cnt == 0) ready.insert(name);
    std::vector<std::string> order;
    while (!ready.empty()) {
      const std::string cur = *ready.begin();
      ready.erase(ready.begin());
      order.push_back(cur);
      for (const auto& c : consumers(cur))
        if (--pending[c] == 0) ready.insert(c);
    }
    if (order.size() != nodes_.size()) throw StructuralError("cycle detected in DAG '" + id_ + "'");
    return order;
  }

  std::string id_;
  std::vector<ComputeNode> nodes_;
  std::vector<std::string> outputs_;
  std::map<std::string, int> index_;
  std::vector<std::string> order_;
};

using DagPtr = std::shared_ptr<const ComputeDAG>;

/// Output node first, placeholders last; every consumer precedes its producers.
/// Among ready nodes, computed nodes come before placeholders, then name order.
inline std::vector<std::string> topological_order(const ComputeDAG& dag) {
  std::map<std::string, int> pending;  // consumers not yet emitted
  for (const auto& n : dag.nodes()) pending.emplace(n.name, 0);
  for (const auto& n : dag.nodes())
    for (const auto& p : dag.producers(n.name)) ++pending[p];
  std::set<std::pair<bool, std::string>> ready;
  auto push = [&](const std::string& name) { ready.emplace(dag.node(name).placeholder, name); };
  for (const auto& [name, c] : pending)
    if (c == 0) push(name);
  std::vector<std::string> order;
  while (!ready.empty()) {
    const std::string name = ready.begin()->second;
    ready.erase(ready.begin());
    order.push_back(name);
    for (const auto& p : dag.producers(name))
      if (--pending[p] == 0) push(p);
  }
  if (order.size() != pending.size()) throw StructuralError("cycle detected in DAG '" + dag.id() + "'");
  return order;
}

namespace detail {

// Each read index is a bare iterator and the iterators of a read appear in
// increasing order (identity and broadcast reads; no offsets, no transposes).
inline bool reads_elementwise(const ComputeNode& n) {
  if (n.reduce != ReduceKind::None) return false;
  bool ok = true;
  for_each_read(n.body, [&](const ExprNode& r) {
    if (r.zero_pad) ok = false;
    int last = -1;
    for (const auto& ix : r.indices) {
      if (!ix.is_plain() || !ix.affine.is_single_iter()) {
        ok = false;
        return;
      }
      const int it = ix.affine.terms()[0].first;
      if (it <= last) ok = false;
      last = it;
    }
  });
  return ok;
}

inline bool reads_identity(const ComputeNode& consumer, const std::string& buffer, const ComputeNode& producer) {
  if (consumer.reduce != ReduceKind::None) return false;
  if (consumer.shape() != producer.shape()) return false;
  bool ok = true, any = false;
  for_each_read(consumer.body, [&](const ExprNode& r) {
    if (r.buffer != buffer) return;
    any = true;
    if (r.zero_pad) ok = false;
    for (size_t d = 0; d < r.indices.size(); ++d)
      if (!(r.indices[d].is_plain() && r.indices[d].affine == AffineExpr::var(static_cast<int>(d)))) ok = false;
  });
  return ok && any;
}

}  // namespace detail

inline NodeTraits analyze_node(const ComputeDAG& dag, const std::string& name, const AnalysisConfig& cfg = {}) {
  const auto& n = dag.node(name);
  LOOMTUNE_REQUIRE(!n.placeholder, "analyze_node called on placeholder '", name, "'");
  NodeTraits t;
  t.strict_inlinable = detail::reads_elementwise(n);
  if (n.reduce != ReduceKind::None) {
    for_each_read(n.body, [&](const ExprNode& r) {
      std::vector<bool> used(n.iters.size(), false);
      for (const auto& ix : r.indices)
        for (const auto& [i, c] : ix.affine.terms()) used[static_cast<size_t>(i)] = true;
      for (size_t i = 0; i < n.iters.size(); ++i)
        if (!used[i] && n.iters[i].extent > 1) t.has_data_reuse = true;
    });
  }
  const auto consumers = dag.consumers(name);
  t.has_fusible_consumer =
      consumers.size() == 1 && detail::reads_identity(dag.node(consumers[0]), name, n);
  const int64_t space = n.space_product();
  t.has_more_reduction_parallel = n.reduce != ReduceKind::None && space < cfg.threshold_space &&
                                  n.reduction_product() >= cfg.ratio_threshold * space;
  return t;
}

// ---------------------------------------------------------------------------
// Construction helpers

/// Incremental DAG construction; iterators are addressed by AffineExpr handles.
class DagBuilder {
 public:
  explicit DagBuilder(std::string id) : id_(std::move(id)) {}

  DagBuilder& placeholder(const std::string& name, std::vector<int64_t> shape, bool constant = false) {
    ComputeNode n;
    n.name = name;
    n.placeholder = true;
    n.constant = constant;
    n.placeholder_shape = std::move(shape);
    nodes_.push_back(std::move(n));
    return *this;
  }

  using BodyFn = std::function<Expr(const std::vector<AffineExpr>&)>;

  DagBuilder& compute(const std::string& name, const std::vector<std::pair<std::string, int64_t>>& space,
                      const std::vector<std::pair<std::string, int64_t>>& reduction, ReduceKind reduce,
                      const BodyFn& body) {
    ComputeNode n;
    n.name = name;
    n.reduce = reduce;
    std::vector<AffineExpr> vars;
    for (const auto& [s, e] : space) {
      vars.push_back(AffineExpr::var(static_cast<int>(n.iters.size())));
      n.iters.push_back({s, e, false});
    }
    for (const auto& [s, e] : reduction) {
      vars.push_back(AffineExpr::var(static_cast<int>(n.iters.size())));
      n.iters.push_back({s, e, true});
    }
    n.body = body(vars);
    nodes_.push_back(std::move(n));
    return *this;
  }

  DagBuilder& output(const std::string& name) {
    outputs_.push_back(name);
    return *this;
  }

  std::shared_ptr<const ComputeDAG> build() {
    if (outputs_.empty() && !nodes_.empty()) outputs_.push_back(nodes_.back().name);
    return std::make_shared<const ComputeDAG>(id_, nodes_, outputs_);
  }

 private:
  std::string id_;
  std::vector<ComputeNode> nodes_;
  std::vector<std::string> outputs_;
};

/// Read helper for builder bodies.
inline Expr rd(const std::string& buffer, std::vector<AffineExpr> idx, bool zero_pad = false) {
  std::vector<IndexExpr> ix;
  ix.reserve(idx.size());
  for (auto& a : idx) ix.emplace_back(std::move(a));
  return make_read(buffer, std::move(ix), zero_pad);
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json dag_to_json(const ComputeDAG& dag) {
  using nlohmann::json;
  json nodes = json::array();
  for (const auto& n : dag.nodes()) {
    json j{{"name", n.name}, {"placeholder", n.placeholder}};
    if (n.placeholder) {
      j["shape"] = n.placeholder_shape;
      j["constant"] = n.constant;
    } else {
      json iters = json::array();
      for (const auto& it : n.iters) iters.push_back({{"name", it.name}, {"extent", it.extent}, {"reduction", it.reduction}});
      j["iters"] = iters;
      j["reduce"] = to_string(n.reduce);
      j["body"] = expr_to_json(n.body);
    }
    nodes.push_back(j);
  }
  return {{"id", dag.id()}, {"nodes", nodes}, {"outputs", dag.outputs()}};
}

inline std::shared_ptr<const ComputeDAG> dag_from_json(const nlohmann::json& j) {
  std::vector<ComputeNode> nodes;
  for (const auto& jn : j.at("nodes")) {
    ComputeNode n;
    n.name = jn.at("name").get<std::string>();
    n.placeholder = jn.at("placeholder").get<bool>();
    if (n.placeholder) {
      n.placeholder_shape = jn.at("shape").get<std::vector<int64_t>>();
      n.constant = jn.at("constant").get<bool>();
    } else {
      for (const auto& it : jn.at("iters"))
        n.iters.push_back({it.at("name").get<std::string>(), it.at("extent").get<int64_t>(), it.at("reduction").get<bool>()});
      const auto r = jn.at("reduce").get<std::string>();
      n.reduce = r == "sum" ? ReduceKind::Sum : r == "max" ? ReduceKind::Max : ReduceKind::None;
      n.body = expr_from_json(jn.at("body"));
    }
    nodes.push_back(std::move(n));
  }
  return std::make_shared<const ComputeDAG>(j.at("id").get<std::string>(), std::move(nodes),
                                            j.at("outputs").get<std::vector<std::string>>());
}

}  // namespace loomtune
