#include <gtest/gtest.h>

#include <cmath>

#include "aasist/grad_check.hpp"
#include "aasist/model.hpp"

using namespace aasist;

namespace {

Tensor randn(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = scale * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

HeteroGraph random_hetero(std::size_t batch, std::size_t ns, std::size_t nt, std::size_t d, Rng& rng) {
  return combine_graphs(Graph{randn({batch, ns, d}, rng)}, Graph{randn({batch, nt, d}, rng)});
}

}  // namespace

TEST(Mgo, MergedOutputDominatesEveryBranch) {
  const ModelConfig cfg = ModelConfig::debug();
  const Model m = Model::init(cfg, 3);
  ASSERT_EQ(m.mgo_params.branches.size(), 2u);
  Rng rng(4);
  const MgoResult r = mgo_detailed(random_hetero(2, 5, 7, cfg.gat_dim, rng), m.mgo_params, ForwardContext::probe());
  ASSERT_EQ(r.branch_outputs.size(), 2u);
  const auto& [g0, s0] = r.branch_outputs[0];
  const auto& [g1, s1] = r.branch_outputs[1];
  for (std::size_t i = 0; i < r.graph.nodes.size(); ++i) {
    EXPECT_GE(r.graph.nodes[i], g0.nodes[i]);
    EXPECT_GE(r.graph.nodes[i], g1.nodes[i]);
    EXPECT_TRUE(r.graph.nodes[i] == g0.nodes[i] || r.graph.nodes[i] == g1.nodes[i]);
  }
  for (std::size_t i = 0; i < r.stack.value.size(); ++i) {
    EXPECT_EQ(r.stack.value[i], std::max(s0.value[i], s1.value[i]));
  }
}

TEST(Mgo, NodeTrajectoryHalvesTwice) {
  const ModelConfig cfg = ModelConfig::debug();
  const Model m = Model::init(cfg, 3);
  Rng rng(5);
  const MgoResult r = mgo_detailed(random_hetero(1, 35, 61, cfg.gat_dim, rng), m.mgo_params, ForwardContext::probe());
  EXPECT_EQ(r.graph.count(), 24u);
  EXPECT_EQ(r.graph.dim(), cfg.hs_dim);
  EXPECT_EQ(r.stack.value.shape(), (Shape{1, cfg.hs_dim}));
}

TEST(Mgo, SingleBranchPassesThrough) {
  ModelConfig cfg = ModelConfig::debug();
  cfg.use_mgo = false;
  const Model m = Model::init(cfg, 3);
  Rng rng(6);
  const HeteroGraph hg = random_hetero(2, 4, 4, cfg.gat_dim, rng);
  const ForwardContext ctx = ForwardContext::probe();
  const MgoResult r = mgo_detailed(hg, m.mgo_params, ctx);
  const auto [g, s] = run_branch(hg, m.mgo_params.branches[0], ctx);
  EXPECT_EQ(r.graph.nodes.values(), g.nodes.values());
  EXPECT_EQ(r.stack.value.values(), s.value.values());
}

TEST(Readout, ConcatenatesMaxMeanAndStack) {
  HeteroGraph hg;
  hg.nodes = Tensor({1, 3, 2}, std::vector<double>{1.0, -2.0, 4.0, 0.0, -5.0, 8.0});
  hg.types = {{NodeType::kSpectral, NodeType::kTemporal, NodeType::kTemporal}};
  const StackNode stack{Tensor({1, 2}, std::vector<double>{0.5, 0.25})};
  const Tensor h = readout_hidden(hg, stack, true);
  const std::vector<double> expected{4.0, 8.0, 0.0, 2.0, 0.5, 0.25};
  ASSERT_EQ(h.shape(), (Shape{1, 6}));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(h[i], expected[i]);
  EXPECT_EQ(readout_hidden(hg, stack, false).shape(), (Shape{1, 4}));
}

TEST(Readout, InvariantToNodeOrder) {
  Rng rng(7);
  HeteroGraph hg = random_hetero(2, 3, 3, 4, rng);
  const StackNode stack{randn({2, 4}, rng)};
  const std::vector<std::size_t> perm{5, 2, 0, 4, 1, 3};
  HeteroGraph shuffled = hg;
  shuffled.nodes = gather_rows(hg.nodes, {perm, perm});
  const Tensor a = readout_hidden(hg, stack, true), b = readout_hidden(shuffled, stack, true);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Readout, EmptyGraphThrows) {
  HeteroGraph hg;
  EXPECT_THROW(readout_hidden(hg, StackNode{Tensor({1, 2}, 0.0)}, true), ShapeError);
}

TEST(Model, ParameterCountsPerPreset) {
  const std::size_t full = count_parameters(Model::init(ModelConfig::full(), 1));
  const std::size_t small = count_parameters(Model::init(ModelConfig::small(), 1));
  EXPECT_GE(full, 150000u);
  EXPECT_LE(full, 450000u);
  EXPECT_LT(small, 120000u);
  EXPECT_LT(small, full);
}

TEST(Model, BuffersAreNotCounted) {
  const Model m = Model::init(ModelConfig::debug(), 1);
  std::size_t total = 0, buffers = 0;
  for (const auto& p : m.parameters()) {
    total += p.tensor.size();
    if (!p.trainable) buffers += p.tensor.size();
  }
  EXPECT_GT(buffers, 0u);
  EXPECT_EQ(count_parameters(m), total - buffers);
}

TEST(Model, AblationsChangeStructure) {
  ModelConfig cfg = ModelConfig::debug();
  const Model full = Model::init(cfg, 1);
  EXPECT_EQ(full.mgo_params.branches[0].first.edge_projection_count(), 3u);
  EXPECT_EQ(full.mgo_params.hs_gal_count(), 4u);
  EXPECT_EQ(full.readout_params.output.in_features(), 3 * cfg.hs_dim);

  ModelConfig no_het = cfg;
  no_het.use_hetero_attention = false;
  EXPECT_EQ(Model::init(no_het, 1).mgo_params.branches[0].first.edge_projection_count(), 1u);

  ModelConfig no_mgo = cfg;
  no_mgo.use_mgo = false;
  EXPECT_EQ(Model::init(no_mgo, 1).mgo_params.hs_gal_count(), 2u);

  ModelConfig no_stack = cfg;
  no_stack.use_stack_node = false;
  const Model ns = Model::init(no_stack, 1);
  EXPECT_EQ(ns.readout_params.output.in_features(), 2 * cfg.hs_dim);
  EXPECT_FALSE(ns.mgo_params.branches[0].first.stack_attention.defined());
}

TEST(Model, ZeroWaveformGivesFiniteLogits) {
  const ModelConfig cfg = ModelConfig::debug();
  const Model m = Model::init(cfg, 2);
  const ModelOutput out = m.forward(Tensor({2, cfg.input_length}, 0.0), ForwardContext::train());
  ASSERT_EQ(out.logits.shape(), (Shape{2, 2}));
  for (double v : out.logits.data()) EXPECT_TRUE(std::isfinite(v));
  for (std::size_t b = 0; b < 2; ++b) {
    EXPECT_EQ(out.scores[b], out.logits[b * 2 + kBonafide] - out.logits[b * 2 + kSpoof]);
  }
}

TEST(Model, AllAblationsTogetherStillRun) {
  ModelConfig cfg = ModelConfig::debug();
  cfg.use_hetero_attention = cfg.use_stack_node = cfg.use_mgo = false;
  const Model m = Model::init(cfg, 2);
  Rng rng(3);
  const ModelOutput out = m.forward(randn({2, cfg.input_length}, rng, 0.1), ForwardContext::train());
  for (double v : out.logits.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Model, SameSeedSameWeights) {
  const Model a = Model::init(ModelConfig::debug(), 9), b = Model::init(ModelConfig::debug(), 9);
  const Model c = Model::init(ModelConfig::debug(), 10);
  const ParamList pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_EQ(pa[i].tensor.values(), pb[i].tensor.values());
    differs = differs || pa[i].tensor.values() != pc[i].tensor.values();
  }
  EXPECT_TRUE(differs);
}

TEST(Model, EvalModeIsBatchIndependent) {
  const ModelConfig cfg = ModelConfig::debug();
  const Model m = Model::init(cfg, 4);
  Rng rng(5);
  Tensor x = randn({2, cfg.input_length}, rng, 0.1);
  const ModelOutput both = m.forward(x, ForwardContext::eval());
  Tensor first({1, cfg.input_length}, std::vector<double>(x.data().begin(), x.data().begin() + cfg.input_length));
  const ModelOutput one = m.forward(first, ForwardContext::eval());
  EXPECT_NEAR(one.scores[0], both.scores[0], 1e-9);
}
