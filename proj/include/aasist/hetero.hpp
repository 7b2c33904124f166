#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aasist/graph.hpp"

namespace aasist {

enum class NodeType : std::uint8_t { kSpectral, kTemporal };
using TypeLabels = std::vector<std::vector<NodeType>>;  // [batch][node]

/// Spectral and temporal nodes joined into one graph with cross-domain edges.
///
/// `nodes` is (B, N, D) with per-node labels in `types`. A graph that has just
/// been combined also keeps its two constituent blocks, because before
/// projection the two domains may have different node dimensions; in that
/// case `nodes` is undefined until project_to_common runs.
struct HeteroGraph {
  Tensor nodes;
  TypeLabels types;
  Tensor spectral_block;
  Tensor temporal_block;

  bool uniform() const { return nodes.defined(); }
  std::size_t batch() const { return types.size(); }
  std::size_t count() const { return types.empty() ? 0 : types.front().size(); }
  std::size_t dim() const { return nodes.dim(2); }

  std::size_t count_of(std::size_t b, NodeType t) const {
    std::size_t n = 0;
    for (NodeType x : types.at(b)) n += x == t;
    return n;
  }
};

/// Accumulator vector per batch element, (B, D).
struct StackNode {
  Tensor value;
};

/// Concatenates spectral then temporal nodes and labels them.
inline HeteroGraph combine_graphs(const Graph& gs, const Graph& gt) {
  if (gs.nodes.rank() != 3 || gt.nodes.rank() != 3) throw ShapeError("combine_graphs: graphs must be (B, N, D)");
  if (gs.count() == 0 || gt.count() == 0) throw ShapeError("combine_graphs: empty input graph");
  if (gs.batch() != gt.batch()) throw ShapeError("combine_graphs: batch mismatch");
  HeteroGraph hg;
  hg.spectral_block = gs.nodes;
  hg.temporal_block = gt.nodes;
  std::vector<NodeType> labels(gs.count(), NodeType::kSpectral);
  labels.insert(labels.end(), gt.count(), NodeType::kTemporal);
  hg.types.assign(gs.batch(), labels);
  if (gs.dim() == gt.dim()) hg.nodes = concat({gs.nodes, gt.nodes}, 1);
  return hg;
}

namespace detail {

// (B, N, N) indicator of edges whose endpoint types are {a, b} in either order.
inline Tensor edge_type_mask(const TypeLabels& types, NodeType a, NodeType b) {
  const std::size_t batch = types.size(), n = types.empty() ? 0 : types.front().size();
  std::vector<double> m(batch * n * n, 0.0);
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const NodeType ti = types[s][i], tj = types[s][j];
        if ((ti == a && tj == b) || (ti == b && tj == a)) m[(s * n + i) * n + j] = 1.0;
      }
  return Tensor({batch, n, n}, std::move(m));
}

inline Tensor type_rows(const TypeLabels& types, NodeType t) {
  const std::size_t batch = types.size(), n = types.empty() ? 0 : types.front().size();
  std::vector<double> m(batch * n);
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t i = 0; i < n; ++i) m[s * n + i] = types[s][i] == t ? 1.0 : 0.0;
  return Tensor({batch, n}, std::move(m));
}

}  // namespace detail

struct HsGalParams {
  std::size_t dim = 0;  // common node dimension D_st
  std::optional<Linear> proj_spectral;
  std::optional<Linear> proj_temporal;
  Linear transform;
  // Heterogeneous attention uses att_ss / att_st / att_tt; the ablated layer
  // uses att_shared for every edge.
  Tensor att_ss, att_st, att_tt, att_shared;
  Tensor stack_attention;
  BatchNorm bn;
  bool use_hetero_attention = true;
  bool use_stack_node = true;

  /// Input projections are created when either domain's dimension differs
  /// from `dim`.
  static HsGalParams init(std::size_t in_spectral, std::size_t in_temporal, std::size_t dim, bool hetero_attention,
                          bool stack_node, double bn_momentum, double bn_eps, Rng& rng) {
    HsGalParams p;
    p.dim = dim;
    p.use_hetero_attention = hetero_attention;
    p.use_stack_node = stack_node;
    if (in_spectral != dim || in_temporal != dim) {
      p.proj_spectral = Linear::init(in_spectral, dim, true, rng);
      p.proj_temporal = Linear::init(in_temporal, dim, true, rng);
    }
    p.transform = Linear::init(dim, dim, true, rng);
    if (hetero_attention) {
      p.att_ss = kaiming_uniform({dim}, dim, rng);
      p.att_st = kaiming_uniform({dim}, dim, rng);
      p.att_tt = kaiming_uniform({dim}, dim, rng);
    } else {
      p.att_shared = kaiming_uniform({dim}, dim, rng);
    }
    if (stack_node) p.stack_attention = kaiming_uniform({dim, 1}, dim, rng);
    p.bn = BatchNorm::init(dim, bn_momentum, bn_eps);
    return p;
  }

  std::size_t edge_projection_count() const {
    return (att_ss.defined() ? 1 : 0) + (att_st.defined() ? 1 : 0) + (att_tt.defined() ? 1 : 0) +
           (att_shared.defined() ? 1 : 0);
  }

  void collect(ParamList& out, const std::string& prefix) const {
    if (proj_spectral) proj_spectral->collect(out, join_name(prefix, "proj_spectral"));
    if (proj_temporal) proj_temporal->collect(out, join_name(prefix, "proj_temporal"));
    transform.collect(out, join_name(prefix, "transform"));
    if (att_ss.defined()) out.push_back({join_name(prefix, "att_ss"), att_ss, true});
    if (att_st.defined()) out.push_back({join_name(prefix, "att_st"), att_st, true});
    if (att_tt.defined()) out.push_back({join_name(prefix, "att_tt"), att_tt, true});
    if (att_shared.defined()) out.push_back({join_name(prefix, "att_shared"), att_shared, true});
    if (stack_attention.defined()) out.push_back({join_name(prefix, "stack_attention"), stack_attention, true});
    bn.collect(out, join_name(prefix, "bn"));
  }
};

/// Maps spectral nodes through the spectral projection and temporal nodes
/// through the temporal projection, giving every node dimension D_st.
inline HeteroGraph project_to_common(const HeteroGraph& hg, const HsGalParams& p) {
  if (!p.proj_spectral || !p.proj_temporal) {
    if (!hg.uniform() || hg.dim() != p.dim) throw ShapeError("project_to_common: layer has no input projections");
    return HeteroGraph{hg.nodes, hg.types, {}, {}};
  }
  HeteroGraph out;
  out.types = hg.types;
  if (hg.spectral_block.defined() && hg.temporal_block.defined()) {
    if (hg.spectral_block.dim(2) != p.proj_spectral->in_features() ||
        hg.temporal_block.dim(2) != p.proj_temporal->in_features()) {
      throw ShapeError("project_to_common: node dims do not match the projections");
    }
    out.nodes = concat({(*p.proj_spectral)(hg.spectral_block), (*p.proj_temporal)(hg.temporal_block)}, 1);
    return out;
  }
  if (!hg.uniform() || hg.dim() != p.proj_spectral->in_features() || hg.dim() != p.proj_temporal->in_features()) {
    throw ShapeError("project_to_common: node dims do not match the projections");
  }
  Tensor spec = mul_rows((*p.proj_spectral)(hg.nodes), detail::type_rows(hg.types, NodeType::kSpectral));
  Tensor temp = mul_rows((*p.proj_temporal)(hg.nodes), detail::type_rows(hg.types, NodeType::kTemporal));
  out.nodes = add(spec, temp);
  return out;
}

struct HeteroAttention {
  Tensor transformed;  // W n, (B, N, D_st)
  Tensor scores;       // (B, N, N), symmetric
  Tensor weights;      // row-softmax of scores
};

/// Edge-type-aware attention on a projected graph: the score of (i, j) uses
/// att_ss, att_tt or the shared cross-domain att_st depending on the two
/// endpoint types.
inline HeteroAttention hetero_attention(const HeteroGraph& hg, const HsGalParams& p) {
  if (!hg.uniform() || hg.dim() != p.dim) throw ShapeError("hetero_attention: graph is not projected to D_st");
  Tensor h = p.transform(hg.nodes);
  Tensor scores;
  if (p.use_hetero_attention) {
    using enum NodeType;
    Tensor ss = mul(detail::edge_type_mask(hg.types, kSpectral, kSpectral), pairwise_scores(h, p.att_ss));
    Tensor st = mul(detail::edge_type_mask(hg.types, kSpectral, kTemporal), pairwise_scores(h, p.att_st));
    Tensor tt = mul(detail::edge_type_mask(hg.types, kTemporal, kTemporal), pairwise_scores(h, p.att_tt));
    scores = add(add(ss, st), tt);
  } else {
    scores = pairwise_scores(h, p.att_shared);
  }
  Tensor weights = softmax(scores, 2);
  return {h, scores, weights};
}

struct HsGalResult {
  HeteroGraph graph;
  StackNode stack;
  HeteroAttention attention;
};

/// Heterogeneous stacking graph attention layer. Graph nodes are updated from
/// each other only; the stack node reads every updated node (softmax over
/// stack_attention scores) and adds the incoming stack value when present.
inline HsGalResult hs_gal_detailed(const HeteroGraph& input, const std::optional<StackNode>& stack_in,
                                   const HsGalParams& p, const ForwardContext& ctx) {
  HeteroGraph hg = (input.uniform() && input.dim() == p.dim && !p.proj_spectral) ? input : project_to_common(input, p);
  const std::size_t batch = hg.batch(), n = hg.count();
  if (stack_in && (stack_in->value.rank() != 2 || stack_in->value.dim(0) != batch || stack_in->value.dim(1) != p.dim)) {
    throw ShapeError("hs_gal: stack node must be (batch, " + std::to_string(p.dim) + ")");
  }
  HeteroAttention att = hetero_attention(hg, p);
  Tensor updated = attend_and_update(att.transformed, att.weights, p.bn, ctx);

  StackNode stack;
  if (p.use_stack_node) {
    Tensor w = softmax(reshape(matmul(updated, p.stack_attention), {batch, 1, n}), 2);
    Tensor agg = reshape(bmm(w, updated), {batch, p.dim});
    stack.value = stack_in ? add(stack_in->value, agg) : agg;
  } else {
    stack.value = Tensor({batch, p.dim}, 0.0);
  }
  return {HeteroGraph{updated, hg.types, {}, {}}, stack, att};
}

inline std::pair<HeteroGraph, StackNode> hs_gal(const HeteroGraph& input, const std::optional<StackNode>& stack_in,
                                                const HsGalParams& p, const ForwardContext& ctx) {
  auto r = hs_gal_detailed(input, stack_in, p, ctx);
  return {std::move(r.graph), std::move(r.stack)};
}

/// Joint top-k pooling over the combined node set; labels follow their nodes.
inline HeteroGraph hetero_pool(const HeteroGraph& hg, const PoolParams& p) {
  if (!hg.uniform()) throw ShapeError("hetero_pool: graph must be projected first");
  PoolResult r = graph_pool(Graph{hg.nodes}, p);
  HeteroGraph out;
  out.nodes = r.graph.nodes;
  out.types.resize(hg.batch());
  for (std::size_t b = 0; b < hg.batch(); ++b) {
    for (std::size_t i : r.kept[b]) out.types[b].push_back(hg.types[b][i]);
  }
  return out;
}

}  // namespace aasist
