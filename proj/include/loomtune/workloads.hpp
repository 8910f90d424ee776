// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Built-in workload registry. Each entry is a named DAG constructor with
// integer parameters and defaults.

#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "loomtune/compute_dag.hpp"

namespace loomtune {

using WorkloadParams = std::map<std::string, int64_t>;

namespace workloads {

inline std::string make_id(const std::string& name, const WorkloadParams& p) {
  std::string id = name;
  for (const auto& [k, v] : p) id += str_cat("_", k, v);
  return id;
}

/// C[i,j] = Σ_k A[i,k]·B[k,j]
inline DagPtr matmul(int64_t n, int64_t m, int64_t k, bool constant_b = true) {
  DagBuilder b(make_id("matmul", {{"N", n}, {"M", m}, {"K", k}}));
  b.placeholder("A", {n, k}).placeholder("B", {k, m}, constant_b);
  b.compute("C", {{"i", n}, {"j", m}}, {{"k", k}}, ReduceKind::Sum,
            [](const auto& v) { return rd("A", {v[0], v[2]}) * rd("B", {v[2], v[1]}); });
  return b.build();
}

/// matmul followed by an element-wise ReLU (the two-node tiling+fusion case).
inline DagPtr matmul_relu(int64_t n, int64_t m, int64_t k) {
  DagBuilder b(make_id("matmul_relu", {{"N", n}, {"M", m}, {"K", k}}));
  b.placeholder("A", {n, k}).placeholder("B", {k, m}, true);
  b.compute("C", {{"i", n}, {"j", m}}, {{"k", k}}, ReduceKind::Sum,
            [](const auto& v) { return rd("A", {v[0], v[2]}) * rd("B", {v[2], v[1]}); });
  b.compute("D", {{"i", n}, {"j", m}}, {}, ReduceKind::None,
            [](const auto& v) { return max(rd("C", {v[0], v[1]}), make_const(0.0)); });
  return b.build();
}

inline DagPtr matmul_bias_relu(int64_t n, int64_t m, int64_t k) {
  DagBuilder b(make_id("matmul_bias_relu", {{"N", n}, {"M", m}, {"K", k}}));
  b.placeholder("A", {n, k}).placeholder("B", {k, m}, true).placeholder("bias", {m}, true);
  b.compute("matmul", {{"i", n}, {"j", m}}, {{"k", k}}, ReduceKind::Sum,
            [](const auto& v) { return rd("A", {v[0], v[2]}) * rd("B", {v[2], v[1]}); });
  b.compute("bias_add", {{"i", n}, {"j", m}}, {}, ReduceKind::None,
            [](const auto& v) { return rd("matmul", {v[0], v[1]}) + rd("bias", {v[1]}); });
  b.compute("relu", {{"i", n}, {"j", m}}, {}, ReduceKind::None,
            [](const auto& v) { return max(rd("bias_add", {v[0], v[1]}), make_const(0.0)); });
  return b.build();
}

/// Small space / large reduction with an element-wise producer and a
/// transposed operand: A(placeholder) B=relu(A) C(placeholder) D=transpose(C)
/// E[i,j] = Σ_k B[i,k]·D[k,j].
inline DagPtr small_space_matmul(int64_t n, int64_t m, int64_t k) {
  DagBuilder b(make_id("small_space_matmul", {{"N", n}, {"M", m}, {"K", k}}));
  b.placeholder("A", {n, k});
  b.compute("B", {{"i", n}, {"l", k}}, {}, ReduceKind::None,
            [](const auto& v) { return max(rd("A", {v[0], v[1]}), make_const(0.0)); });
  b.placeholder("C", {m, k});
  b.compute("D", {{"l", k}, {"j", m}}, {}, ReduceKind::None, [](const auto& v) { return rd("C", {v[1], v[0]}); });
  b.compute("E", {{"i", n}, {"j", m}}, {{"k", k}}, ReduceKind::Sum,
            [](const auto& v) { return rd("B", {v[0], v[2]}) * rd("D", {v[2], v[1]}); });
  return b.build();
}

/// NHWC conv2d (batch 1) with explicit zero padding node and ReLU.
inline DagPtr conv2d_relu(int64_t h, int64_t w, int64_t ci, int64_t co, int64_t kernel, int64_t stride,
                          int64_t pad) {
  DagBuilder b(make_id("conv2d_relu",
                       {{"H", h}, {"W", w}, {"CI", ci}, {"CO", co}, {"KS", kernel}, {"S", stride}, {"P", pad}}));
  const int64_t hp = h + 2 * pad, wp = w + 2 * pad;
  const int64_t oh = (hp - kernel) / stride + 1, ow = (wp - kernel) / stride + 1;
  LOOMTUNE_REQUIRE(oh >= 1 && ow >= 1, "conv2d output would be empty");
  b.placeholder("data", {1, h, w, ci}).placeholder("weight", {kernel, kernel, ci, co}, true);
  b.compute("pad", {{"n", 1}, {"h", hp}, {"w", wp}, {"c", ci}}, {}, ReduceKind::None, [&](const auto& v) {
    return rd("data", {v[0], v[1] - pad, v[2] - pad, v[3]}, true);
  });
  b.compute("conv", {{"n", 1}, {"h", oh}, {"w", ow}, {"co", co}}, {{"rh", kernel}, {"rw", kernel}, {"rc", ci}},
            ReduceKind::Sum, [&](const auto& v) {
              return rd("pad", {v[0], v[1] * stride + v[4], v[2] * stride + v[5], v[6]}) *
                     rd("weight", {v[4], v[5], v[6], v[3]});
            });
  b.compute("relu", {{"n", 1}, {"h", oh}, {"w", ow}, {"co", co}}, {}, ReduceKind::None,
            [](const auto& v) { return max(rd("conv", {v[0], v[1], v[2], v[3]}), make_const(0.0)); });
  return b.build();
}

/// Grouped conv2d: output channels split into `groups` blocks, each reading its
/// own slice of input channels. Output layout [1, OH, OW, G, CO/G].
inline DagPtr grouped_conv2d(int64_t h, int64_t w, int64_t ci, int64_t co, int64_t kernel, int64_t stride,
                             int64_t pad, int64_t groups) {
  LOOMTUNE_REQUIRE(groups >= 1 && ci % groups == 0 && co % groups == 0, "channels must divide groups");
  DagBuilder b(make_id("grouped_conv2d", {{"H", h}, {"W", w}, {"CI", ci}, {"CO", co}, {"KS", kernel},
                                          {"S", stride}, {"P", pad}, {"G", groups}}));
  const int64_t hp = h + 2 * pad, wp = w + 2 * pad;
  const int64_t oh = (hp - kernel) / stride + 1, ow = (wp - kernel) / stride + 1;
  const int64_t cig = ci / groups, cog = co / groups;
  b.placeholder("data", {1, h, w, ci}).placeholder("weight", {kernel, kernel, cig, co}, true);
  b.compute("pad", {{"n", 1}, {"h", hp}, {"w", wp}, {"c", ci}}, {}, ReduceKind::None, [&](const auto& v) {
    return rd("data", {v[0], v[1] - pad, v[2] - pad, v[3]}, true);
  });
  b.compute("gconv", {{"n", 1}, {"h", oh}, {"w", ow}, {"g", groups}, {"c", cog}},
            {{"rh", kernel}, {"rw", kernel}, {"rc", cig}}, ReduceKind::Sum, [&](const auto& v) {
              return rd("pad", {v[0], v[1] * stride + v[5], v[2] * stride + v[6], v[3] * cig + v[7]}) *
                     rd("weight", {v[5], v[6], v[7], v[3] * cog + v[4]});
            });
  return b.build();
}

/// sqrt(Σ_{i,j} A[i,j]²)
inline DagPtr matrix_norm(int64_t n, int64_t m) {
  DagBuilder b(make_id("matrix_norm", {{"N", n}, {"M", m}}));
  b.placeholder("A", {n, m});
  b.compute("sumsq", {}, {{"i", n}, {"j", m}}, ReduceKind::Sum,
            [](const auto& v) { return rd("A", {v[0], v[1]}) * rd("A", {v[0], v[1]}); });
  b.compute("norm", {}, {}, ReduceKind::None, [](const auto&) { return sqrt(rd("sumsq", {})); });
  return b.build();
}

/// Three element-wise nodes in a chain: scale, shift, relu.
inline DagPtr elementwise_chain(int64_t n, int64_t m) {
  DagBuilder b(make_id("elementwise_chain", {{"N", n}, {"M", m}}));
  b.placeholder("A", {n, m});
  b.compute("scale", {{"i", n}, {"j", m}}, {}, ReduceKind::None,
            [](const auto& v) { return rd("A", {v[0], v[1]}) * make_const(2.0); });
  b.compute("shift", {{"i", n}, {"j", m}}, {}, ReduceKind::None,
            [](const auto& v) { return rd("scale", {v[0], v[1]}) + make_const(1.0); });
  b.compute("out", {{"i", n}, {"j", m}}, {}, ReduceKind::None,
            [](const auto& v) { return max(rd("shift", {v[0], v[1]}), make_const(0.0)); });
  return b.build();
}

/// One element-wise output node over a placeholder.
inline DagPtr elementwise(int64_t n) {
  DagBuilder b(make_id("elementwise", {{"N", n}}));
  b.placeholder("A", {n});
  b.compute("B", {{"i", n}}, {}, ReduceKind::None,
            [](const auto& v) { return rd("A", {v[0]}) + make_const(1.0); });
  return b.build();
}

}  // namespace workloads

struct WorkloadEntry {
  std::string name;
  std::string description;
  WorkloadParams defaults;
  std::function<DagPtr(const WorkloadParams&)> make;
};

/// Named DAG constructors. Listing order is sorted by name.
class WorkloadRegistry {
 public:
  static const WorkloadRegistry& instance() {
    static const WorkloadRegistry reg;
    return reg;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }
  const WorkloadEntry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown workload '" + name + "'");
    return it->second;
  }

  /// Builds with `params` overriding defaults; unknown parameter names are errors.
  DagPtr build(const std::string& name, const WorkloadParams& params = {}) const {
    const auto& e = entry(name);
    WorkloadParams p = e.defaults;
    for (const auto& [k, v] : params) {
      if (!p.count(k)) throw ConfigError("workload '" + name + "' has no parameter '" + k + "'");
      if (v < 0 || (v == 0 && k != "P")) throw ConfigError(str_cat("workload '", name, "' parameter ", k, " must be positive"));
      p[k] = v;
    }
    return e.make(p);
  }

 private:
  WorkloadRegistry() {
    add({"matmul", "C = A x B (B constant)", {{"N", 64}, {"M", 64}, {"K", 64}},
         [](const WorkloadParams& p) { return workloads::matmul(p.at("N"), p.at("M"), p.at("K")); }});
    add({"matmul_relu", "relu(A x B)", {{"N", 64}, {"M", 64}, {"K", 64}},
         [](const WorkloadParams& p) { return workloads::matmul_relu(p.at("N"), p.at("M"), p.at("K")); }});
    add({"matmul_bias_relu", "relu(A x B + bias)", {{"N", 64}, {"M", 64}, {"K", 64}},
         [](const WorkloadParams& p) { return workloads::matmul_bias_relu(p.at("N"), p.at("M"), p.at("K")); }});
    add({"small_space_matmul", "relu(A) x transpose(C), small output", {{"N", 8}, {"M", 4}, {"K", 512}},
         [](const WorkloadParams& p) { return workloads::small_space_matmul(p.at("N"), p.at("M"), p.at("K")); }});
    add({"conv2d_relu", "relu(conv2d(pad(data), weight)), NHWC",
         {{"H", 14}, {"W", 14}, {"CI", 16}, {"CO", 16}, {"KS", 3}, {"S", 1}, {"P", 1}},
         [](const WorkloadParams& p) {
           return workloads::conv2d_relu(p.at("H"), p.at("W"), p.at("CI"), p.at("CO"), p.at("KS"), p.at("S"),
                                         p.at("P"));
         }});
    add({"grouped_conv2d", "grouped conv2d (GRP)",
         {{"H", 14}, {"W", 14}, {"CI", 16}, {"CO", 16}, {"KS", 3}, {"S", 1}, {"P", 1}, {"G", 4}},
         [](const WorkloadParams& p) {
           return workloads::grouped_conv2d(p.at("H"), p.at("W"), p.at("CI"), p.at("CO"), p.at("KS"), p.at("S"),
                                            p.at("P"), p.at("G"));
         }});
    add({"matrix_norm", "sqrt(sum(A^2)) (NRM)", {{"N", 32}, {"M", 32}},
         [](const WorkloadParams& p) { return workloads::matrix_norm(p.at("N"), p.at("M")); }});
    add({"elementwise_chain", "relu(2A + 1)", {{"N", 64}, {"M", 64}},
         [](const WorkloadParams& p) { return workloads::elementwise_chain(p.at("N"), p.at("M")); }});
  }
  void add(WorkloadEntry e) {
    auto name = e.name;
    entries_.emplace(std::move(name), std::move(e));
  }

  std::map<std::string, WorkloadEntry> entries_;
};

}  // namespace loomtune
