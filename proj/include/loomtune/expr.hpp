// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Element expressions of compute nodes: affine index arithmetic over the
// owning node's iterators, buffer reads, and a closed set of scalar ops.

#pragma once

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "loomtune/common.hpp"

namespace loomtune {

/// Σ coeff·iter + constant, iterators named by their index in the owner's
/// iterator list. Terms are kept sorted by iterator with no zero coefficients.
class AffineExpr {
 public:
  AffineExpr() = default;
  explicit AffineExpr(int64_t constant) : constant_(constant) {}
  static AffineExpr var(int iter, int64_t coeff = 1) {
    AffineExpr e;
    e.add_term(iter, coeff);
    return e;
  }

  const std::vector<std::pair<int, int64_t>>& terms() const { return terms_; }
  int64_t constant() const { return constant_; }

  int64_t coeff(int iter) const {
    for (const auto& [i, c] : terms_)
      if (i == iter) return c;
    return 0;
  }

  void add_term(int iter, int64_t coeff) {
    if (coeff == 0) return;
    auto it = std::lower_bound(terms_.begin(), terms_.end(), iter,
                               [](const auto& t, int v) { return t.first < v; });
    if (it != terms_.end() && it->first == iter) {
      it->second += coeff;
      if (it->second == 0) terms_.erase(it);
    } else {
      terms_.insert(it, {iter, coeff});
    }
  }

  int64_t eval(const int64_t* iters) const {
    int64_t v = constant_;
    for (const auto& [i, c] : terms_) v += c * iters[i];
    return v;
  }

  bool is_single_iter() const { return constant_ == 0 && terms_.size() == 1 && terms_[0].second == 1; }

  /// Replaces every iterator i by `values[i]`.
  AffineExpr substitute(const std::vector<AffineExpr>& values) const {
    AffineExpr out(constant_);
    for (const auto& [i, c] : terms_) {
      LOOMTUNE_REQUIRE(i >= 0 && static_cast<size_t>(i) < values.size(), "substitution misses iterator ", i);
      out += values[static_cast<size_t>(i)] * c;
    }
    return out;
  }

  AffineExpr& operator+=(const AffineExpr& o) {
    constant_ += o.constant_;
    for (const auto& [i, c] : o.terms_) add_term(i, c);
    return *this;
  }
  friend AffineExpr operator+(AffineExpr a, const AffineExpr& b) { return a += b; }
  friend AffineExpr operator+(AffineExpr a, int64_t c) {
    a.constant_ += c;
    return a;
  }
  friend AffineExpr operator-(AffineExpr a, int64_t c) { return a + (-c); }
  friend AffineExpr operator-(AffineExpr a, const AffineExpr& b) { return a + b * -1; }
  friend AffineExpr operator*(AffineExpr a, int64_t c) {
    if (c == 0) return AffineExpr();
    a.constant_ *= c;
    for (auto& t : a.terms_) t.second *= c;
    return a;
  }
  friend AffineExpr operator*(int64_t c, AffineExpr a) { return std::move(a) * c; }
  friend bool operator==(const AffineExpr&, const AffineExpr&) = default;

 private:
  std::vector<std::pair<int, int64_t>> terms_;
  int64_t constant_ = 0;
};

/// One buffer index dimension: floor(affine / div) mod `mod` (mod == 0: no
/// modulus). Plain affine indices have div == 1, mod == 0; the digit form only
/// appears after a constant buffer's layout is rewritten.
struct IndexExpr {
  AffineExpr affine;
  int64_t div = 1;
  int64_t mod = 0;

  IndexExpr() = default;
  IndexExpr(AffineExpr a) : affine(std::move(a)) {}  // NOLINT(google-explicit-constructor)
  IndexExpr(AffineExpr a, int64_t d, int64_t m) : affine(std::move(a)), div(d), mod(m) {}

  bool is_plain() const { return div == 1 && mod == 0; }
  int64_t eval(const int64_t* iters) const {
    const int64_t a = affine.eval(iters);
    if (is_plain()) return a;
    const int64_t q = floor_div(a, div);
    return mod == 0 ? q : floor_mod(q, mod);
  }
  friend bool operator==(const IndexExpr&, const IndexExpr&) = default;
};

enum class BinaryOp { Add, Sub, Mul, Div, Max, Min, Less, Greater };
enum class UnaryOp { Exp, Sqrt, Neg };
enum class ReduceKind { None, Sum, Max };

inline const char* to_string(BinaryOp op) {
  switch (op) {
    case BinaryOp::Add: return "add";
    case BinaryOp::Sub: return "sub";
    case BinaryOp::Mul: return "mul";
    case BinaryOp::Div: return "div";
    case BinaryOp::Max: return "max";
    case BinaryOp::Min: return "min";
    case BinaryOp::Less: return "lt";
    case BinaryOp::Greater: return "gt";
  }
  return "?";
}
inline const char* to_string(UnaryOp op) {
  switch (op) {
    case UnaryOp::Exp: return "exp";
    case UnaryOp::Sqrt: return "sqrt";
    case UnaryOp::Neg: return "neg";
  }
  return "?";
}
inline const char* to_string(ReduceKind k) {
  switch (k) {
    case ReduceKind::None: return "none";
    case ReduceKind::Sum: return "sum";
    case ReduceKind::Max: return "max";
  }
  return "?";
}

inline double reduce_identity(ReduceKind k) {
  return k == ReduceKind::Max ? -std::numeric_limits<double>::infinity() : 0.0;
}

inline double apply_binary(BinaryOp op, double a, double b) {
  switch (op) {
    case BinaryOp::Add: return a + b;
    case BinaryOp::Sub: return a - b;
    case BinaryOp::Mul: return a * b;
    case BinaryOp::Div: return a / b;
    case BinaryOp::Max: return std::max(a, b);
    case BinaryOp::Min: return std::min(a, b);
    case BinaryOp::Less: return a < b ? 1.0 : 0.0;
    case BinaryOp::Greater: return a > b ? 1.0 : 0.0;
  }
  return 0.0;
}

inline double apply_unary(UnaryOp op, double a) {
  switch (op) {
    case UnaryOp::Exp: return std::exp(a);
    case UnaryOp::Sqrt: return std::sqrt(a);
    case UnaryOp::Neg: return -a;
  }
  return 0.0;
}

struct ExprNode;

/// Immutable expression tree handle. Copies share structure.
class Expr {
 public:
  enum class Kind { Const, Index, Read, Binary, Unary };

  Expr() = default;
  explicit Expr(std::shared_ptr<const ExprNode> n) : node_(std::move(n)) {}

  const ExprNode& operator*() const { return *node_; }
  const ExprNode* operator->() const { return node_.get(); }
  bool defined() const { return node_ != nullptr; }

 private:
  std::shared_ptr<const ExprNode> node_;
};

struct ExprNode {
  Expr::Kind kind = Expr::Kind::Const;
  double value = 0.0;                // Const
  AffineExpr index;                  // Index: scalar value of an index expression
  std::string buffer;                // Read
  std::vector<IndexExpr> indices;    // Read
  bool zero_pad = false;             // Read: out-of-range indices yield 0
  BinaryOp bop = BinaryOp::Add;
  UnaryOp uop = UnaryOp::Exp;
  Expr a, b;
};

inline Expr make_const(double v) {
  auto n = std::make_shared<ExprNode>();
  n->kind = Expr::Kind::Const;
  n->value = v;
  return Expr(std::move(n));
}
inline Expr make_index(AffineExpr e) {
  auto n = std::make_shared<ExprNode>();
  n->kind = Expr::Kind::Index;
  n->index = std::move(e);
  return Expr(std::move(n));
}
inline Expr make_read(std::string buffer, std::vector<IndexExpr> indices, bool zero_pad = false) {
  auto n = std::make_shared<ExprNode>();
  n->kind = Expr::Kind::Read;
  n->buffer = std::move(buffer);
  n->indices = std::move(indices);
  n->zero_pad = zero_pad;
  return Expr(std::move(n));
}
inline Expr make_binary(BinaryOp op, Expr a, Expr b) {
  auto n = std::make_shared<ExprNode>();
  n->kind = Expr::Kind::Binary;
  n->bop = op;
  n->a = std::move(a);
  n->b = std::move(b);
  return Expr(std::move(n));
}
inline Expr make_unary(UnaryOp op, Expr a) {
  auto n = std::make_shared<ExprNode>();
  n->kind = Expr::Kind::Unary;
  n->uop = op;
  n->a = std::move(a);
  return Expr(std::move(n));
}

inline Expr operator+(Expr a, Expr b) { return make_binary(BinaryOp::Add, std::move(a), std::move(b)); }
inline Expr operator-(Expr a, Expr b) { return make_binary(BinaryOp::Sub, std::move(a), std::move(b)); }
inline Expr operator*(Expr a, Expr b) { return make_binary(BinaryOp::Mul, std::move(a), std::move(b)); }
inline Expr operator/(Expr a, Expr b) { return make_binary(BinaryOp::Div, std::move(a), std::move(b)); }
inline Expr max(Expr a, Expr b) { return make_binary(BinaryOp::Max, std::move(a), std::move(b)); }
inline Expr min(Expr a, Expr b) { return make_binary(BinaryOp::Min, std::move(a), std::move(b)); }
inline Expr exp(Expr a) { return make_unary(UnaryOp::Exp, std::move(a)); }
inline Expr sqrt(Expr a) { return make_unary(UnaryOp::Sqrt, std::move(a)); }

bool operator==(const Expr& x, const Expr& y);

inline bool operator==(const ExprNode& x, const ExprNode& y) {
  if (x.kind != y.kind) return false;
  switch (x.kind) {
    case Expr::Kind::Const: return x.value == y.value;
    case Expr::Kind::Index: return x.index == y.index;
    case Expr::Kind::Read: return x.buffer == y.buffer && x.indices == y.indices && x.zero_pad == y.zero_pad;
    case Expr::Kind::Binary: return x.bop == y.bop && x.a == y.a && x.b == y.b;
    case Expr::Kind::Unary: return x.uop == y.uop && x.a == y.a;
  }
  return false;
}

inline bool operator==(const Expr& x, const Expr& y) {
  if (!x.defined() || !y.defined()) return x.defined() == y.defined();
  if (&*x == &*y) return true;
  return *x == *y;
}

/// Visits every Read node.
inline void for_each_read(const Expr& e, const std::function<void(const ExprNode&)>& fn) {
  if (!e.defined()) return;
  switch (e->kind) {
    case Expr::Kind::Read: fn(*e); break;
    case Expr::Kind::Binary:
      for_each_read(e->a, fn);
      for_each_read(e->b, fn);
      break;
    case Expr::Kind::Unary: for_each_read(e->a, fn); break;
    default: break;
  }
}

/// Rebuilds the tree bottom-up; `fn` may replace Read nodes (return an undefined
/// Expr to keep the node).
inline Expr rewrite_reads(const Expr& e, const std::function<Expr(const ExprNode&)>& fn) {
  switch (e->kind) {
    case Expr::Kind::Read: {
      Expr r = fn(*e);
      return r.defined() ? r : e;
    }
    case Expr::Kind::Binary: {
      Expr a = rewrite_reads(e->a, fn), b = rewrite_reads(e->b, fn);
      if (&*a == &*e->a && &*b == &*e->b) return e;
      return make_binary(e->bop, a, b);
    }
    case Expr::Kind::Unary: {
      Expr a = rewrite_reads(e->a, fn);
      if (&*a == &*e->a) return e;
      return make_unary(e->uop, a);
    }
    default: return e;
  }
}

/// Substitutes every iterator reference (in Index nodes and read indices).
inline Expr substitute_iters(const Expr& e, const std::vector<AffineExpr>& values) {
  switch (e->kind) {
    case Expr::Kind::Const: return e;
    case Expr::Kind::Index: return make_index(e->index.substitute(values));
    case Expr::Kind::Read: {
      std::vector<IndexExpr> idx;
      idx.reserve(e->indices.size());
      for (const auto& ix : e->indices) idx.emplace_back(ix.affine.substitute(values), ix.div, ix.mod);
      return make_read(e->buffer, std::move(idx), e->zero_pad);
    }
    case Expr::Kind::Binary:
      return make_binary(e->bop, substitute_iters(e->a, values), substitute_iters(e->b, values));
    case Expr::Kind::Unary: return make_unary(e->uop, substitute_iters(e->a, values));
  }
  return e;
}

/// Iterators referenced anywhere in the expression.
inline void collect_iters(const Expr& e, std::vector<bool>& used) {
  auto mark = [&](const AffineExpr& a) {
    for (const auto& [i, c] : a.terms()) {
      if (static_cast<size_t>(i) >= used.size()) used.resize(static_cast<size_t>(i) + 1, false);
      used[static_cast<size_t>(i)] = true;
    }
  };
  switch (e->kind) {
    case Expr::Kind::Index: mark(e->index); break;
    case Expr::Kind::Read:
      for (const auto& ix : e->indices) mark(ix.affine);
      break;
    case Expr::Kind::Binary:
      collect_iters(e->a, used);
      collect_iters(e->b, used);
      break;
    case Expr::Kind::Unary: collect_iters(e->a, used); break;
    default: break;
  }
}

/// Per-evaluation operation counts, grouped the way the feature extractor
/// reports them.
struct OpCounts {
  int64_t add_sub = 0, mul = 0, div = 0, cmp = 0, math = 0, mad = 0;
  int64_t int_add = 0, int_mul = 0, int_divmod = 0, select = 0;
  int64_t float_total() const { return add_sub + mul + div + cmp + math; }
};

inline void count_affine(const AffineExpr& a, OpCounts& c) {
  const auto n = static_cast<int64_t>(a.terms().size());
  for (const auto& [i, k] : a.terms())
    if (k != 1) ++c.int_mul;
  c.int_add += std::max<int64_t>(0, n - 1) + (a.constant() != 0 && n > 0 ? 1 : 0);
}

inline void count_ops(const Expr& e, OpCounts& c, bool parent_is_add = false) {
  switch (e->kind) {
    case Expr::Kind::Const: break;
    case Expr::Kind::Index: count_affine(e->index, c); break;
    case Expr::Kind::Read:
      for (const auto& ix : e->indices) {
        count_affine(ix.affine, c);
        if (ix.div != 1) ++c.int_divmod;
        if (ix.mod != 0) ++c.int_divmod;
      }
      if (e->zero_pad) ++c.select;
      break;
    case Expr::Kind::Binary: {
      const bool is_add = e->bop == BinaryOp::Add || e->bop == BinaryOp::Sub;
      switch (e->bop) {
        case BinaryOp::Add:
        case BinaryOp::Sub: ++c.add_sub; break;
        case BinaryOp::Mul:
          ++c.mul;
          if (parent_is_add) ++c.mad;
          break;
        case BinaryOp::Div: ++c.div; break;
        default: ++c.cmp; break;
      }
      count_ops(e->a, c, is_add);
      count_ops(e->b, c, is_add);
      break;
    }
    case Expr::Kind::Unary:
      if (e->uop == UnaryOp::Neg)
        ++c.add_sub;
      else
        ++c.math;
      count_ops(e->a, c, false);
      break;
  }
}

/// Counts for one evaluation of a statement, including the reduction combine.
inline OpCounts statement_ops(const Expr& body, ReduceKind reduce) {
  OpCounts c;
  count_ops(body, c, reduce == ReduceKind::Sum);
  if (reduce == ReduceKind::Sum) ++c.add_sub;
  if (reduce == ReduceKind::Max) ++c.cmp;
  return c;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json affine_to_json(const AffineExpr& a) {
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& [i, c] : a.terms()) terms.push_back({i, c});
  return {{"terms", terms}, {"const", a.constant()}};
}

inline AffineExpr affine_from_json(const nlohmann::json& j) {
  AffineExpr a(j.at("const").get<int64_t>());
  for (const auto& t : j.at("terms")) a.add_term(t.at(0).get<int>(), t.at(1).get<int64_t>());
  return a;
}

inline nlohmann::json expr_to_json(const Expr& e) {
  using nlohmann::json;
  switch (e->kind) {
    case Expr::Kind::Const: return {{"k", "const"}, {"v", e->value}};
    case Expr::Kind::Index: return {{"k", "index"}, {"e", affine_to_json(e->index)}};
    case Expr::Kind::Read: {
      json idx = json::array();
      for (const auto& ix : e->indices) idx.push_back({{"a", affine_to_json(ix.affine)}, {"div", ix.div}, {"mod", ix.mod}});
      return {{"k", "read"}, {"buf", e->buffer}, {"idx", idx}, {"pad", e->zero_pad}};
    }
    case Expr::Kind::Binary:
      return {{"k", "bin"}, {"op", static_cast<int>(e->bop)}, {"a", expr_to_json(e->a)}, {"b", expr_to_json(e->b)}};
    case Expr::Kind::Unary: return {{"k", "un"}, {"op", static_cast<int>(e->uop)}, {"a", expr_to_json(e->a)}};
  }
  return {};
}

inline Expr expr_from_json(const nlohmann::json& j) {
  const auto k = j.at("k").get<std::string>();
  if (k == "const") return make_const(j.at("v").get<double>());
  if (k == "index") return make_index(affine_from_json(j.at("e")));
  if (k == "read") {
    std::vector<IndexExpr> idx;
    for (const auto& x : j.at("idx"))
      idx.emplace_back(affine_from_json(x.at("a")), x.at("div").get<int64_t>(), x.at("mod").get<int64_t>());
    return make_read(j.at("buf").get<std::string>(), std::move(idx), j.at("pad").get<bool>());
  }
  if (k == "bin")
    return make_binary(static_cast<BinaryOp>(j.at("op").get<int>()), expr_from_json(j.at("a")), expr_from_json(j.at("b")));
  if (k == "un") return make_unary(static_cast<UnaryOp>(j.at("op").get<int>()), expr_from_json(j.at("a")));
  throw StructuralError("unknown expression kind '" + k + "'");
}

}  // namespace loomtune
