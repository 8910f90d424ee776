// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Gradient-boosted regression trees over statement features. A program's
// score is the sum of its statements' outputs; training minimizes
// sum_p y_p (score_p - y_p)^2.
//
// Tree shapes come from exact greedy splits on per-statement gradients. Leaf
// values are then solved exactly for the program-level objective (a small
// ridge least-squares problem) and scaled by the shrinkage rate, so every
// boosting round leaves the training loss non-increasing.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "loomtune/features.hpp"

namespace loomtune {

struct TreeNode {
  int feature = -1;  // -1: leaf
  double threshold = 0.0;
  int left = -1, right = -1;
  double value = 0.0;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;

  double predict(const FeatureVector& f) const {
    int n = 0;
    while (nodes[static_cast<size_t>(n)].feature >= 0) {
      const auto& node = nodes[static_cast<size_t>(n)];
      n = f[static_cast<size_t>(node.feature)] < node.threshold ? node.left : node.right;
    }
    return nodes[static_cast<size_t>(n)].value;
  }
  int leaf_of(const FeatureVector& f) const {
    int n = 0;
    while (nodes[static_cast<size_t>(n)].feature >= 0) {
      const auto& node = nodes[static_cast<size_t>(n)];
      n = f[static_cast<size_t>(node.feature)] < node.threshold ? node.left : node.right;
    }
    return n;
  }
};

struct TrainParams {
  int num_trees = 30;
  int max_depth = 6;
  double shrinkage = 0.3;
  double lambda = 1.0;          // L2 term of the split gain
  double leaf_ridge = 1e-3;     // ridge of the leaf least-squares solve
  double min_child_hessian = 1e-6;
  double min_split_gain = 1e-12;
};

/// Statements of one program and its normalized throughput.
struct ProgramSample {
  std::vector<FeatureVector> statements;
  double y = 0.0;
};

class CostModel {
 public:
  double base_score = 0.0;
  double shrinkage = 0.3;
  std::vector<RegressionTree> trees;

  double predict_statement(const FeatureVector& f) const {
    double v = base_score;
    for (const auto& t : trees) v += t.predict(f);
    return v;
  }
  double predict(const std::vector<FeatureVector>& statements) const {
    double v = 0;
    for (const auto& f : statements) v += predict_statement(f);
    return v;
  }
  double predict(const Program& p) const { return predict(extract_features(p)); }
};

inline double weighted_loss(const CostModel& m, const std::vector<ProgramSample>& data) {
  double l = 0;
  for (const auto& s : data) {
    const double r = m.predict(s.statements) - s.y;
    l += s.y * r * r;
  }
  return l;
}

namespace detail {

struct Row {
  size_t program;
  const FeatureVector* f;
};

/// Grows one tree shape on per-row gradients with exact greedy splits.
inline RegressionTree grow_tree(const std::vector<Row>& rows, const std::vector<double>& g, const std::vector<double>& h,
                                const std::vector<std::vector<uint32_t>>& sorted, const TrainParams& hp) {
  RegressionTree tree;
  tree.nodes.push_back({});
  std::vector<int> node_of(rows.size(), 0);
  std::vector<int> frontier = {0};
  for (int depth = 0; depth < hp.max_depth && !frontier.empty(); ++depth) {
    const size_t nf = frontier.size();
    std::vector<int> slot(tree.nodes.size(), -1);
    for (size_t i = 0; i < nf; ++i) slot[static_cast<size_t>(frontier[i])] = static_cast<int>(i);
    std::vector<double> G(nf, 0), H(nf, 0);
    for (size_t r = 0; r < rows.size(); ++r) {
      const int s = node_of[r] >= 0 ? slot[static_cast<size_t>(node_of[r])] : -1;
      if (s < 0) continue;
      G[static_cast<size_t>(s)] += g[r];
      H[static_cast<size_t>(s)] += h[r];
    }
    std::vector<double> best_gain(nf, hp.min_split_gain), best_thr(nf, 0);
    std::vector<int> best_feat(nf, -1);
    std::vector<double> gl(nf), hl(nf), prev(nf);
    std::vector<uint8_t> seen(nf);
    for (size_t feat = 0; feat < kFeatureLength; ++feat) {
      std::fill(gl.begin(), gl.end(), 0.0);
      std::fill(hl.begin(), hl.end(), 0.0);
      std::fill(seen.begin(), seen.end(), 0);
      for (uint32_t r : sorted[feat]) {
        const int nd = node_of[r];
        if (nd < 0) continue;
        const int si = slot[static_cast<size_t>(nd)];
        if (si < 0) continue;
        const auto s = static_cast<size_t>(si);
        const double v = (*rows[r].f)[feat];
        if (seen[s] && v > prev[s] && hl[s] >= hp.min_child_hessian && H[s] - hl[s] >= hp.min_child_hessian) {
          const double gr = G[s] - gl[s], hr = H[s] - hl[s];
          const double gain = gl[s] * gl[s] / (hl[s] + hp.lambda) + gr * gr / (hr + hp.lambda) -
                              G[s] * G[s] / (H[s] + hp.lambda);
          if (gain > best_gain[s]) {
            best_gain[s] = gain;
            best_feat[s] = static_cast<int>(feat);
            best_thr[s] = prev[s] + (v - prev[s]) / 2;
          }
        }
        gl[s] += g[r];
        hl[s] += h[r];
        prev[s] = v;
        seen[s] = 1;
      }
    }
    std::vector<int> next;
    for (size_t i = 0; i < nf; ++i) {
      if (best_feat[i] < 0) continue;
      const int id = frontier[i];
      const int l = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({});
      tree.nodes.push_back({});
      auto& nd = tree.nodes[static_cast<size_t>(id)];
      nd.feature = best_feat[i];
      nd.threshold = best_thr[i];
      nd.left = l;
      nd.right = l + 1;
      next.push_back(l);
      next.push_back(l + 1);
    }
    for (size_t r = 0; r < rows.size(); ++r) {
      const int nd = node_of[r];
      if (nd < 0) continue;
      const auto& n = tree.nodes[static_cast<size_t>(nd)];
      if (n.feature < 0) {
        node_of[r] = -1;  // finished leaf
        continue;
      }
      node_of[r] = (*rows[r].f)[static_cast<size_t>(n.feature)] < n.threshold ? n.left : n.right;
    }
    frontier = std::move(next);
  }
  return tree;
}

}  // namespace detail

/// Fits a fresh model. Programs with y = 0 carry zero weight.
inline CostModel train_cost_model(const std::vector<ProgramSample>& data, const TrainParams& hp = {}) {
  double wsum = 0;
  for (const auto& s : data) {
    if (!(s.y >= 0.0 && s.y <= 1.0)) throw ContractViolation("throughput labels must lie in [0, 1]");
    wsum += s.y;
  }
  if (data.empty() || wsum <= 0) throw ContractViolation("training needs at least one record with positive throughput");

  CostModel m;
  m.shrinkage = hp.shrinkage;
  std::vector<detail::Row> rows;
  for (size_t p = 0; p < data.size(); ++p)
    for (const auto& f : data[p].statements) rows.push_back({p, &f});

  double num = 0, den = 0;  // base score minimizing the weighted loss alone
  for (const auto& s : data) {
    const auto n = static_cast<double>(s.statements.size());
    num += s.y * n * s.y;
    den += s.y * n * n;
  }
  m.base_score = den > 0 ? num / den : 0.0;

  std::vector<std::vector<uint32_t>> sorted(kFeatureLength);
  for (size_t f = 0; f < kFeatureLength; ++f) {
    sorted[f].resize(rows.size());
    std::iota(sorted[f].begin(), sorted[f].end(), 0u);
    std::stable_sort(sorted[f].begin(), sorted[f].end(),
                     [&](uint32_t a, uint32_t b) { return (*rows[a].f)[f] < (*rows[b].f)[f]; });
  }

  std::vector<double> pred(data.size());
  for (size_t p = 0; p < data.size(); ++p)
    pred[p] = m.base_score * static_cast<double>(data[p].statements.size());
  std::vector<double> g(rows.size()), h(rows.size());
  for (int t = 0; t < hp.num_trees; ++t) {
    for (size_t r = 0; r < rows.size(); ++r) {
      const auto& s = data[rows[r].program];
      g[r] = 2.0 * s.y * (pred[rows[r].program] - s.y);
      h[r] = 2.0 * s.y;
    }
    RegressionTree tree = detail::grow_tree(rows, g, h, sorted, hp);
    std::vector<int> leaves;
    for (size_t i = 0; i < tree.nodes.size(); ++i)
      if (tree.nodes[i].feature < 0) leaves.push_back(static_cast<int>(i));
    std::vector<int> leaf_index(tree.nodes.size(), -1);
    for (size_t i = 0; i < leaves.size(); ++i) leaf_index[static_cast<size_t>(leaves[i])] = static_cast<int>(i);

    // A[p][leaf] = statements of program p that land in the leaf.
    const auto nl = static_cast<Eigen::Index>(leaves.size());
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(data.size()), nl);
    for (const auto& row : rows)
      A(static_cast<Eigen::Index>(row.program), leaf_index[static_cast<size_t>(tree.leaf_of(*row.f))]) += 1.0;
    Eigen::VectorXd w(static_cast<Eigen::Index>(data.size())), resid(static_cast<Eigen::Index>(data.size()));
    for (size_t p = 0; p < data.size(); ++p) {
      w(static_cast<Eigen::Index>(p)) = data[p].y;
      resid(static_cast<Eigen::Index>(p)) = data[p].y - pred[p];
    }
    Eigen::MatrixXd lhs = A.transpose() * w.asDiagonal() * A;
    lhs.diagonal().array() += hp.leaf_ridge;
    const Eigen::VectorXd rhs = A.transpose() * w.asDiagonal() * resid;
    const Eigen::VectorXd v = lhs.ldlt().solve(rhs) * hp.shrinkage;
    if (!v.allFinite()) break;
    for (size_t i = 0; i < leaves.size(); ++i) tree.nodes[static_cast<size_t>(leaves[i])].value = v(static_cast<Eigen::Index>(i));
    const Eigen::VectorXd delta = A * v;
    for (size_t p = 0; p < data.size(); ++p) pred[p] += delta(static_cast<Eigen::Index>(p));
    m.trees.push_back(std::move(tree));
  }
  return m;
}

struct EvalMetrics {
  double rmse = 0, r2 = 0, pairwise_accuracy = 0, recall_at_k = 0;
};

/// Metrics of predictions against labels. Pairs with equal labels are
/// skipped; pairs with equal predictions count one half.
inline EvalMetrics eval_metrics(const std::vector<double>& pred, const std::vector<double>& y, size_t k) {
  LOOMTUNE_REQUIRE(!y.empty() && pred.size() == y.size(), "eval_metrics needs matching nonempty inputs");
  LOOMTUNE_REQUIRE(k >= 1 && k <= y.size(), "k must lie in [1, test set size]");
  const auto n = static_cast<double>(y.size());
  EvalMetrics e;
  double sse = 0, mean = 0;
  for (size_t i = 0; i < y.size(); ++i) {
    sse += (pred[i] - y[i]) * (pred[i] - y[i]);
    mean += y[i];
  }
  mean /= n;
  double sst = 0;
  for (double v : y) sst += (v - mean) * (v - mean);
  e.rmse = std::sqrt(sse / n);
  e.r2 = sst > 0 ? 1.0 - sse / sst : (sse == 0 ? 1.0 : 0.0);
  double agree = 0, pairs = 0;
  for (size_t i = 0; i < y.size(); ++i)
    for (size_t j = i + 1; j < y.size(); ++j) {
      if (y[i] == y[j]) continue;
      pairs += 1;
      if (pred[i] == pred[j]) agree += 0.5;
      else if ((pred[i] < pred[j]) == (y[i] < y[j])) agree += 1;
    }
  e.pairwise_accuracy = pairs > 0 ? agree / pairs : 1.0;
  auto top = [&](const std::vector<double>& v) {
    std::vector<size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] > v[b]; });
    return std::set<size_t>(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  };
  const auto G = top(y), P = top(pred);
  size_t hit = 0;
  for (auto i : P) hit += G.count(i);
  e.recall_at_k = static_cast<double>(hit) / static_cast<double>(k);
  return e;
}

inline EvalMetrics eval_metrics(const CostModel& m, const std::vector<ProgramSample>& test, size_t k) {
  std::vector<double> pred, y;
  for (const auto& s : test) {
    pred.push_back(m.predict(s.statements));
    y.push_back(s.y);
  }
  return eval_metrics(pred, y, k);
}

inline nlohmann::json model_to_json(const CostModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    trees.push_back(nodes);
  }
  return {{"base_score", m.base_score},
          {"shrinkage", m.shrinkage},
          {"trees", trees},
          {"meta",
           {{"feature_length", kFeatureLength},
            {"cache_line_bytes", kCacheLineBytes},
            {"element_bytes", kElementBytes},
            {"cache_bytes", kCacheBytes}}}};
}

inline CostModel model_from_json(const nlohmann::json& j) {
  CostModel m;
  m.base_score = j.at("base_score");
  m.shrinkage = j.at("shrinkage");
  for (const auto& t : j.at("trees")) {
    RegressionTree tree;
    for (const auto& n : t) {
      TreeNode node{n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(), n.at(3).get<int>(),
                    n.at(4).get<double>()};
      if (node.feature >= static_cast<int>(kFeatureLength)) throw ConfigError("model references an unknown feature");
      tree.nodes.push_back(node);
    }
    m.trees.push_back(std::move(tree));
  }
  return m;
}

}  // namespace loomtune
