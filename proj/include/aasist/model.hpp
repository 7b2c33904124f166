#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aasist/config.hpp"
#include "aasist/encoder.hpp"
#include "aasist/graph.hpp"
#include "aasist/hetero.hpp"
#include "aasist/layers.hpp"
#include "aasist/rng.hpp"

namespace aasist {

/// Two stacked HS-GAL layers, each followed by pooling; the stack node is
/// threaded from the first layer into the second.
struct MgoBranch {
  HsGalParams first;
  PoolParams first_pool;
  HsGalParams second;
  PoolParams second_pool;

  void collect(ParamList& out, const std::string& prefix) const {
    first.collect(out, join_name(prefix, "hsgal0"));
    first_pool.collect(out, join_name(prefix, "pool0"));
    second.collect(out, join_name(prefix, "hsgal1"));
    second_pool.collect(out, join_name(prefix, "pool1"));
  }
};

struct MgoParams {
  std::vector<MgoBranch> branches;  // two with MGO, one without

  bool use_mgo() const { return branches.size() > 1; }
  std::size_t hs_gal_count() const { return 2 * branches.size(); }
  std::size_t pool_count() const { return 2 * branches.size(); }

  void collect(ParamList& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < branches.size(); ++i) branches[i].collect(out, join_name(prefix, "branch" + std::to_string(i)));
  }
};

inline std::pair<HeteroGraph, StackNode> run_branch(const HeteroGraph& hg, const MgoBranch& br,
                                                    const ForwardContext& ctx) {
  auto [g1, s1] = hs_gal(hg, std::nullopt, br.first, ctx);
  HeteroGraph p1 = hetero_pool(g1, br.first_pool);
  auto [g2, s2] = hs_gal(p1, s1, br.second, ctx);
  return {hetero_pool(g2, br.second_pool), s2};
}

struct MgoResult {
  HeteroGraph graph;
  StackNode stack;
  std::vector<std::pair<HeteroGraph, StackNode>> branch_outputs;
};

/// Max graph operation: element-wise maximum over the branches' node tensors
/// and over their stack nodes. The merged graph carries the first branch's
/// type labels.
inline MgoResult mgo_detailed(const HeteroGraph& hg, const MgoParams& p, const ForwardContext& ctx) {
  if (p.branches.empty()) throw std::invalid_argument("mgo: no branches configured");
  MgoResult r;
  for (const MgoBranch& br : p.branches) r.branch_outputs.push_back(run_branch(hg, br, ctx));
  r.graph = r.branch_outputs.front().first;
  r.stack = r.branch_outputs.front().second;
  for (std::size_t i = 1; i < r.branch_outputs.size(); ++i) {
    const auto& [g, s] = r.branch_outputs[i];
    if (g.nodes.shape() != r.graph.nodes.shape() || s.value.shape() != r.stack.value.shape()) {
      throw ShapeError("mgo: branch outputs differ in shape " + shape_str(g.nodes.shape()) + " vs " +
                       shape_str(r.graph.nodes.shape()));
    }
    r.graph.nodes = elementwise_max(r.graph.nodes, g.nodes);
    r.stack.value = elementwise_max(r.stack.value, s.value);
  }
  return r;
}

inline std::pair<HeteroGraph, StackNode> mgo(const HeteroGraph& hg, const MgoParams& p, const ForwardContext& ctx) {
  auto r = mgo_detailed(hg, p, ctx);
  return {std::move(r.graph), std::move(r.stack)};
}

struct ReadoutParams {
  Linear output;  // hidden -> 2 logits (bona-fide, spoof)
  bool use_stack_node = true;

  void collect(ParamList& out, const std::string& prefix) const { output.collect(out, join_name(prefix, "output")); }
};

/// concat(node-wise max, node-wise mean[, stack]) -> (B, 2 or 3 times D).
inline Tensor readout_hidden(const HeteroGraph& hg, const StackNode& stack, bool use_stack_node) {
  if (!hg.uniform() || hg.count() == 0) throw ShapeError("readout: empty graph");
  std::vector<Tensor> parts{reduce_max(hg.nodes, 1), reduce_mean(hg.nodes, 1)};
  if (use_stack_node) parts.push_back(stack.value);
  return concat(parts, 1);
}

inline Tensor readout(const HeteroGraph& hg, const StackNode& stack, const ReadoutParams& p) {
  return p.output(readout_hidden(hg, stack, p.use_stack_node));
}

inline constexpr std::size_t kBonafide = 0;
inline constexpr std::size_t kSpoof = 1;

struct ModelOutput {
  Tensor logits;               // (B, 2)
  std::vector<double> scores;  // logit(bona-fide) - logit(spoof)
};

/// Full detector: encoder, spectral/temporal graph modules, graph
/// combination, MGO and readout.
struct Model {
  ModelConfig config;
  Encoder encoder;
  GraphModule spectral;
  GraphModule temporal;
  MgoParams mgo_params;
  ReadoutParams readout_params;

  static Model init(const ModelConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    plan_shapes(cfg);
    Rng rng(seed);
    Model m;
    m.config = cfg;
    m.encoder = Encoder::init(cfg, rng);
    const std::size_t c = cfg.channels.back();
    m.spectral = {GatParams::init(c, cfg.gat_dim, cfg.bn_momentum, cfg.bn_eps, rng),
                  PoolParams::init(cfg.gat_dim, cfg.pool_spectral, rng)};
    m.temporal = {GatParams::init(c, cfg.gat_dim, cfg.bn_momentum, cfg.bn_eps, rng),
                  PoolParams::init(cfg.gat_dim, cfg.pool_temporal, rng)};
    const std::size_t branches = cfg.use_mgo ? 2 : 1;
    for (std::size_t b = 0; b < branches; ++b) {
      MgoBranch br;
      br.first = HsGalParams::init(cfg.gat_dim, cfg.gat_dim, cfg.hs_dim, cfg.use_hetero_attention, cfg.use_stack_node,
                                   cfg.bn_momentum, cfg.bn_eps, rng);
      br.first_pool = PoolParams::init(cfg.hs_dim, cfg.pool_hetero, rng);
      br.second = HsGalParams::init(cfg.hs_dim, cfg.hs_dim, cfg.hs_dim, cfg.use_hetero_attention, cfg.use_stack_node,
                                    cfg.bn_momentum, cfg.bn_eps, rng);
      br.second_pool = PoolParams::init(cfg.hs_dim, cfg.pool_hetero, rng);
      m.mgo_params.branches.push_back(std::move(br));
    }
    const std::size_t hidden = (cfg.use_stack_node ? 3 : 2) * cfg.hs_dim;
    m.readout_params = {Linear::init(hidden, 2, true, rng), cfg.use_stack_node};
    return m;
  }

  /// Everything up to the MGO input.
  HeteroGraph front_end(const Tensor& waveforms, const ForwardContext& ctx) const {
    FeatureMap f = encoder(waveforms, ctx);
    Graph gs = extract_spectral_graph(f, spectral, ctx);
    Graph gt = extract_temporal_graph(f, temporal, ctx);
    return combine_graphs(gs, gt);
  }

  /// waveforms: (batch, input_length).
  ModelOutput forward(const Tensor& waveforms, const ForwardContext& ctx) const {
    auto [g, stack] = mgo(front_end(waveforms, ctx), mgo_params, ctx);
    ModelOutput out;
    out.logits = readout(g, stack, readout_params);
    const std::size_t batch = out.logits.dim(0);
    out.scores.resize(batch);
    for (std::size_t b = 0; b < batch; ++b) out.scores[b] = out.logits[b * 2 + kBonafide] - out.logits[b * 2 + kSpoof];
    return out;
  }

  ParamList parameters() const {
    ParamList out;
    encoder.collect(out, "encoder");
    spectral.collect(out, "spectral");
    temporal.collect(out, "temporal");
    mgo_params.collect(out, "mgo");
    readout_params.collect(out, "readout");
    return out;
  }

  std::vector<Tensor> trainable() const { return trainable_tensors(parameters()); }
};

inline std::size_t count_parameters(const ParamList& params) { return count_trainable(params); }
inline std::size_t count_parameters(const Model& m) { return count_trainable(m.parameters()); }

}  // namespace aasist
