// Copyright 2026 The LoomTune Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <map>
#include <set>

#include "loomtune/evolution.hpp"
#include "loomtune/interpreter.hpp"
#include "loomtune/sketch.hpp"
#include "loomtune/workloads.hpp"

using namespace loomtune;

namespace {

using Derivation = std::vector<int>;

// Rule tree unrolled from the rule table alone, using DAG-level node traits.
// A cache stage makes the node its own fusible consumer.
void rule_tree(const ComputeDAG& dag, int i, bool cached, bool rfactored, Derivation d, std::set<Derivation>& out) {
  if (i == 0) {
    out.insert(d);
    return;
  }
  const auto& node = dag.node(dag.producer_order()[static_cast<size_t>(i - 1)]);
  auto next = [&](int rule, int ni, bool c, bool rf) {
    Derivation e = d;
    e.push_back(rule);
    rule_tree(dag, ni, c, rf, e, out);
  };
  if (node.placeholder) return next(1, i - 1, false, false);
  const NodeTraits t = analyze_node(dag, node.name);
  const bool output = dag.is_output(node.name);
  const bool fusible = cached || t.has_fusible_consumer;
  if (t.strict_inlinable && !output) next(2, i - 1, false, false);
  else next(1, i - 1, false, false);
  if (t.has_data_reuse) next(3, i - 1, false, false);
  if (t.has_data_reuse && fusible) next(4, i - 1, false, false);
  if (t.has_data_reuse && !fusible && !cached) next(5, i, true, rfactored);
  if (t.has_more_reduction_parallel && !rfactored) next(6, i - 1, false, false);
}

std::set<Derivation> oracle_derivations(const DagPtr& dag) {
  std::set<Derivation> out;
  rule_tree(*dag, static_cast<int>(dag->producer_order().size()), false, false, {}, out);
  return out;
}

std::set<Derivation> derivations(const std::vector<Sketch>& sketches) {
  std::set<Derivation> out;
  for (const auto& s : sketches) out.insert(s.derivation);
  return out;
}

DagPtr small_matmul(const std::string& name = "matmul") {
  return WorkloadRegistry::instance().build(name, {{"N", 16}, {"M", 16}, {"K", 16}});
}

const Sketch& sketch_with(const std::vector<Sketch>& sk, const Derivation& d) {
  for (const auto& s : sk)
    if (s.derivation == d) return s;
  throw std::runtime_error("no sketch with the requested derivation");
}

int64_t product_of(const Stage& s, LoopKind kind) {
  int64_t p = 1;
  for (const auto& l : s.loops)
    if (l.kind == kind) p *= l.extent();
  return p;
}

std::vector<Program> samples(const DagPtr& dag, int n, uint64_t seed) {
  const auto sk = generate_sketches(dag);
  Rng rng(seed);
  std::vector<Program> out;
  for (int i = 0; i < n; ++i) out.push_back(sample_program(rng.pick(sk).program, {}, rng));
  return out;
}

}  // namespace

TEST(Sketch, MatmulReluHasTheTilingWithFusionDerivation) {
  const auto sk = generate_sketches(WorkloadRegistry::instance().build("matmul_relu"));
  EXPECT_TRUE(derivations(sk).count({1, 4, 1, 1}));
}

TEST(Sketch, SmallSpaceMatmulHasCacheAndRfactorDerivations) {
  const auto d = derivations(generate_sketches(WorkloadRegistry::instance().build("small_space_matmul")));
  EXPECT_TRUE(d.count({5, 4, 1, 1, 2, 1}));
  EXPECT_TRUE(d.count({6, 1, 1, 2, 1}));
}

TEST(Sketch, ElementwiseChainHasOnlyTheNaiveSketch) {
  DagBuilder b("ew");
  b.placeholder("A", {8, 8});
  b.compute("B", {{"i", 8}, {"j", 8}}, {}, ReduceKind::None,
            [](const auto& v) { return rd("A", {v[0], v[1]}) * make_const(2.0); });
  auto dag = b.build();
  const auto sk = generate_sketches(dag);
  ASSERT_EQ(sk.size(), 1u);
  EXPECT_TRUE(sk[0].program.same_structure(replay(dag, {})));
}

TEST(Sketch, MatmulBiasReluMatchesHandUnrolledTree) {
  // relu: output, skip. bias_add: inline. matmul: skip, tile, tile+fuse.
  // Placeholders: skip.
  const std::set<Derivation> hand = {{1, 2, 1, 1, 1, 1}, {1, 2, 3, 1, 1, 1}, {1, 2, 4, 1, 1, 1}};
  auto dag = WorkloadRegistry::instance().build("matmul_bias_relu");
  const auto sk = generate_sketches(dag);
  EXPECT_EQ(sk.size(), hand.size());
  EXPECT_EQ(derivations(sk), hand);
  EXPECT_EQ(oracle_derivations(dag), hand);
}

TEST(Sketch, RegistryMatchesRuleTreeOracle) {
  for (const auto& name : WorkloadRegistry::instance().names()) {
    auto dag = WorkloadRegistry::instance().build(name);
    const auto sk = generate_sketches(dag);
    EXPECT_EQ(derivations(sk), oracle_derivations(dag)) << name;
    EXPECT_EQ(sk.size(), derivations(sk).size()) << name;
    EXPECT_LE(sk.size(), 10u) << name;
  }
}

TEST(Sketch, DeterministicAndStateCapped) {
  auto dag = WorkloadRegistry::instance().build("small_space_matmul");
  const auto a = generate_sketches(dag), b = generate_sketches(dag);
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].derivation, b[i].derivation);
  SketchOptions tight;
  tight.max_states = 3;
  EXPECT_THROW(generate_sketches(dag, tight), StepError);
}

TEST(MultiLevelTile, MatmulTenLevelNest) {
  auto p = replay(small_matmul(), {});
  p = apply_steps(p, multi_level_tile_steps(p.stage("C"), "SSRSRS"));
  std::vector<std::string> names;
  for (const auto& l : p.stage("C").loops) names.push_back(l.name);
  EXPECT_EQ(names, (std::vector<std::string>{"i.0", "j.0", "i.1", "j.1", "k.0", "i.2", "j.2", "k.1", "i.3", "j.3"}));
  EXPECT_EQ(structure_levels("SSRSRS"), (std::pair<int, int>{4, 2}));
}

TEST(MultiLevelTile, Conv2dHasTwentyTwoLoops) {
  auto dag = WorkloadRegistry::instance().build("conv2d_relu", {{"H", 6}, {"W", 6}, {"CI", 4}, {"CO", 8}});
  auto p = replay(dag, {});
  const Stage& conv = p.stage("conv");
  int space = 0, red = 0;
  for (const auto& l : conv.loops) (l.kind == LoopKind::Space ? space : red)++;
  ASSERT_EQ(space, 4);
  ASSERT_EQ(red, 3);
  p = apply_steps(p, multi_level_tile_steps(conv, "SSRSRS"));
  EXPECT_EQ(p.stage("conv").loops.size(), static_cast<size_t>(4 * 4 + 2 * 3));
}

TEST(RandomFactorization, ProductLaw) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const auto f = random_factorization(12, 3, rng);
    ASSERT_EQ(f.size(), 3u);
    EXPECT_EQ(f[0] * f[1] * f[2], 12);
  }
  EXPECT_EQ(random_factorization(1, 4, rng), (std::vector<int64_t>{1, 1, 1, 1}));
}

TEST(RandomFactorization, SupportOfEightIntoTwo) {
  Rng rng(2);
  std::set<std::vector<int64_t>> seen;
  for (int t = 0; t < 10000; ++t) seen.insert(random_factorization(8, 2, rng));
  // Oracle: every ordered divisor pair.
  std::set<std::vector<int64_t>> pairs;
  for (int64_t d = 1; d <= 8; ++d)
    if (8 % d == 0) pairs.insert({d, 8 / d});
  EXPECT_EQ(seen, pairs);
}

TEST(SampleProgram, DeterministicGivenSeed) {
  auto dag = small_matmul("matmul_bias_relu");
  for (const auto& s : generate_sketches(dag)) {
    Rng a(99), b(99);
    EXPECT_EQ(history_to_json(sample_program(s.program, {}, a).history),
              history_to_json(sample_program(s.program, {}, b).history));
  }
}

TEST(SampleProgram, Matmul512KeepsIteratorProducts) {
  auto dag = WorkloadRegistry::instance().build("matmul", {{"N", 512}, {"M", 512}, {"K", 512}});
  const auto sk = generate_sketches(dag);
  const Sketch& tiled = sketch_with(sk, {3, 1, 1});
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const Program p = sample_program(tiled.program, {}, rng);
    ASSERT_TRUE(validate(p));
    EXPECT_EQ(product_of(p.stage("C"), LoopKind::Space), 512 * 512);
    EXPECT_EQ(product_of(p.stage("C"), LoopKind::Reduction), 512);
  }
}

TEST(SampleProgram, MatmulBiasReluSamplesAreValidAndEquivalent) {
  const auto progs = samples(small_matmul("matmul_bias_relu"), 300, 11);
  for (size_t i = 0; i < progs.size(); ++i) {
    ASSERT_TRUE(validate(progs[i])) << validate(progs[i]).message();
    ASSERT_LE(program_error(progs[i], i), 1e-5) << history_to_json(progs[i].history).dump();
  }
}

// A fused outer loop of extent 1 is dropped by simplify along with its
// annotation, so not every sample keeps a parallel loop.
TEST(SampleProgram, ParallelAndVectorizeAnnotations) {
  int with_parallel = 0;
  const auto progs = samples(small_matmul(), 100, 13);
  for (const auto& p : progs) {
    int total = 0;
    for (const auto& s : p.stages) {
      int parallel = 0;
      for (const auto& l : s.loops) {
        if (l.annotation == Annotation::Parallel) ++parallel;
        if (l.annotation == Annotation::Vectorize) EXPECT_LE(l.extent(), 16);
      }
      EXPECT_LE(parallel, s.is_root() ? 1 : 0) << s.name;
      total += parallel;
    }
    with_parallel += total > 0;
  }
  EXPECT_GE(with_parallel, 75);
}

TEST(ConstantLayout, SampledMatmulStaysEquivalent) {
  int rewritten = 0;
  for (const auto& p : samples(small_matmul(), 60, 17)) {
    const Program q = rewrite_constant_layout(p);
    ASSERT_TRUE(validate(q)) << validate(q).message();
    EXPECT_LE(program_error(q, 4), 1e-5);
    if (!q.layouts.empty()) ++rewritten;
  }
  EXPECT_GT(rewritten, 0);
}

TEST(SelectParent, ProportionalToFitness) {
  Rng rng(3);
  int zero = 0;
  const int n = 100000;
  for (int t = 0; t < n; ++t) zero += select_parent(std::vector<double>{3, 1}, rng) == 0;
  EXPECT_NEAR(zero / double(n), 0.75, 0.02);
  EXPECT_EQ(select_parent(std::vector<double>{0.5}, rng), 0u);
}

TEST(SelectParent, UniformFallbackWhenNothingIsPositive) {
  Rng rng(4);
  int zero = 0;
  const int n = 100000;
  bool fallback = false;
  for (int t = 0; t < n; ++t) zero += select_parent(std::vector<double>{0, 0}, rng, &fallback) == 0;
  EXPECT_TRUE(fallback);
  EXPECT_NEAR(zero / double(n), 0.5, 0.02);
  select_parent(std::vector<double>{0, 2}, rng, &fallback);
  EXPECT_FALSE(fallback);
}

TEST(MutateTileSize, CampaignPreservesProductsAndValidity) {
  auto dag = small_matmul();
  const auto sk = generate_sketches(dag);
  const Sketch& tiled = sketch_with(sk, {3, 1, 1});
  Rng rng(6);
  Program p = sample_program(tiled.program, {}, rng);
  int applied = 0;
  for (int t = 0; t < 2000; ++t) {
    auto child = mutate_tile_size(p, rng);
    if (!child) continue;
    ++applied;
    ASSERT_TRUE(validate(*child));
    ASSERT_EQ(product_of(child->stage("C"), LoopKind::Space), 16 * 16);
    ASSERT_EQ(product_of(child->stage("C"), LoopKind::Reduction), 16);
    p = *child;
  }
  EXPECT_GT(applied, 1900);
  EXPECT_LE(program_error(p, 1), 1e-5);
}

TEST(MutateTileSize, PrimeExtentCanMoveToTheOuterLevel) {
  DagBuilder b("prime");
  b.placeholder("A", {7});
  b.compute("B", {{"i", 7}}, {}, ReduceKind::None, [](const auto& v) { return rd("A", {v[0]}); });
  auto dag = b.build();
  const Program p = replay(dag, {RewriteStep::split("B", 0, {1, 7})});
  ASSERT_EQ(p.stage("B").loops.size(), 3u);
  Rng rng(8);
  std::set<std::vector<int64_t>> seen;
  for (int t = 0; t < 200; ++t)
    if (auto c = mutate_tile_size(p, rng)) seen.insert(c->history.front().factors);
  EXPECT_TRUE(seen.count({1, 1}));  // levels (7, 1, 1)
  EXPECT_TRUE(seen.count({7, 1}));
  EXPECT_FALSE(mutate_tile_size(replay(dag, {}), rng));
}

TEST(MutateParallel, ChildrenStayEquivalent) {
  auto dag = small_matmul("matmul_relu");
  Rng rng(9);
  int applied = 0;
  for (const auto& p : samples(dag, 100, 19)) {
    auto c = mutate_parallel(p, rng);
    if (!c) continue;
    ++applied;
    ASSERT_TRUE(validate(*c));
    EXPECT_LE(program_error(*c, 2), 1e-5);
    int parallel = 0;
    for (const auto& s : c->stages)
      for (const auto& l : s.loops) parallel += l.annotation == Annotation::Parallel;
    EXPECT_GE(parallel, 1);
  }
  EXPECT_GT(applied, 50);
  EXPECT_FALSE(mutate_parallel(replay(dag, {}), rng));
}

TEST(MutatePragma, UniformOverOtherValues) {
  auto dag = small_matmul();
  const auto sk = generate_sketches(dag);
  const Sketch& tiled = sketch_with(sk, {3, 1, 1});
  Rng rng(10);
  const Program p = sample_program(tiled.program, {}, rng);
  ASSERT_EQ(p.stages.size(), 1u);
  const int64_t current = p.stages[0].auto_unroll_max_step;
  const std::vector<int64_t> values{0, 16, 64, 512};
  std::map<int64_t, int> count;
  const int n = 10000;
  for (int t = 0; t < n; ++t) {
    auto c = mutate_pragma(p, values, rng);
    ASSERT_TRUE(c);
    ++count[c->stages[0].auto_unroll_max_step];
  }
  EXPECT_EQ(count.count(current), 0u);
  EXPECT_EQ(count.size(), 3u);
  for (const auto& [v, k] : count) EXPECT_NEAR(k / double(n), 1.0 / 3, 0.02) << v;
  EXPECT_FALSE(mutate_pragma(p, {16}, rng));
}

TEST(MutateComputeLocation, SingleStageIsNotApplicable) {
  Rng rng(11);
  EXPECT_FALSE(mutate_compute_location(replay(small_matmul(), {}), rng));
}

TEST(MutateComputeLocation, CampaignKeepsEquivalence) {
  auto dag = WorkloadRegistry::instance().build("conv2d_relu", {{"H", 6}, {"W", 6}, {"CI", 4}, {"CO", 8}});
  Rng rng(12);
  int applied = 0;
  for (const auto& p : samples(dag, 150, 23)) {
    auto c = mutate_compute_location(p, rng);
    if (!c) continue;
    ++applied;
    ASSERT_TRUE(validate(*c));
    EXPECT_LE(program_error(*c, 3), 1e-5) << history_to_json(c->history).dump();
  }
  EXPECT_GT(applied, 0);
}

TEST(Crossover, IdenticalParentsGiveTheParent) {
  Rng rng(13);
  for (const auto& p : samples(small_matmul("matmul_bias_relu"), 20, 29)) {
    auto c = crossover(p, p, rng);
    ASSERT_TRUE(c);
    EXPECT_TRUE(c->same_structure(p));
  }
}

TEST(Crossover, MostlyFeasibleAndEquivalent) {
  const auto pool = samples(small_matmul("matmul_bias_relu"), 100, 31);
  Rng rng(14);
  int ok = 0;
  const int n = 300;
  for (int t = 0; t < n; ++t) {
    const auto& a = rng.pick(pool);
    const auto& b = rng.pick(pool);
    auto c = crossover(a, b, rng);
    if (!c) continue;
    ++ok;
    ASSERT_TRUE(validate(*c));
    ASSERT_LE(program_error(*c, 5), 1e-5);
  }
  EXPECT_GE(ok, n * 95 / 100);
}

TEST(Crossover, SingleNodeParentsGiveOneOfThem) {
  auto dag = small_matmul();
  const auto sk = generate_sketches(dag);
  const Sketch& tiled = sketch_with(sk, {3, 1, 1});
  Rng rng(15);
  const Program a = sample_program(tiled.program, {}, rng), b = sample_program(tiled.program, {}, rng);
  for (int t = 0; t < 20; ++t) {
    auto c = crossover(a, b, rng);
    ASSERT_TRUE(c);
    EXPECT_TRUE(c->same_structure(a) || c->same_structure(b));
  }
}

TEST(Evolve, DeterministicDistinctAndSorted) {
  auto dag = small_matmul("matmul_relu");
  const auto init = samples(dag, 32, 37);
  const Scorer score = [](const std::vector<Program>& ps) {
    std::vector<double> f;
    for (const auto& p : ps) {
      double x = 0;
      for (const auto& s : p.stages) x += s.loops.size() + 0.001 * s.auto_unroll_max_step;
      f.push_back(1.0 / (1.0 + x));
    }
    return f;
  };
  EvolutionConfig cfg;
  cfg.population = 32;
  cfg.generations = 3;
  cfg.k = 8;
  const auto a = evolve(init, score, cfg, {}, 77), b = evolve(init, score, cfg, {}, 77);
  ASSERT_EQ(a.best.size(), 8u);
  EXPECT_EQ(a.stats.size(), static_cast<size_t>(cfg.generations) + 1);  // generation 0 is the initial population
  std::set<std::string> keys;
  for (size_t i = 0; i < a.best.size(); ++i) {
    EXPECT_EQ(program_key(a.best[i].program), program_key(b.best[i].program));
    keys.insert(program_key(a.best[i].program));
    if (i) EXPECT_GE(a.best[i - 1].fitness, a.best[i].fitness);
  }
  EXPECT_EQ(keys.size(), a.best.size());

  const auto c = evolve(init, score, cfg, {}, 77, keys);
  for (const auto& cand : c.best) EXPECT_FALSE(keys.count(program_key(cand.program)));
}
