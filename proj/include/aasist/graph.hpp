#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "aasist/encoder.hpp"
#include "aasist/layers.hpp"
#include "aasist/ops.hpp"

namespace aasist {

/// Fully connected graph, batched: nodes is (batch, N, D). Edges are implicit.
struct Graph {
  Tensor nodes;

  std::size_t batch() const { return nodes.dim(0); }
  std::size_t count() const { return nodes.dim(1); }
  std::size_t dim() const { return nodes.dim(2); }
};

using NodeSelection = std::vector<std::vector<std::size_t>>;

/// s_ij = (h_i * h_j) . a for every ordered pair, computed as (h diag(a)) h^T.
inline Tensor pairwise_scores(const Tensor& h, const Tensor& a) {
  return bmm(mul_along(h, a, 2), transpose_last2(h));
}

/// Attention-weighted aggregation with residual: selu(bn(A h) + h).
inline Tensor attend_and_update(const Tensor& h, const Tensor& attention, const BatchNorm& bn,
                                const ForwardContext& ctx) {
  return selu(add(bn(bmm(attention, h), 2, ctx), h));
}

struct GatParams {
  Linear transform;
  Tensor attention;  // (D_out)
  BatchNorm bn;

  static GatParams init(std::size_t in, std::size_t out, double bn_momentum, double bn_eps, Rng& rng) {
    GatParams p;
    p.transform = Linear::init(in, out, true, rng);
    p.attention = kaiming_uniform({out}, out, rng);
    p.bn = BatchNorm::init(out, bn_momentum, bn_eps);
    return p;
  }

  std::size_t in_dim() const { return transform.in_features(); }
  std::size_t out_dim() const { return transform.out_features(); }

  void collect(ParamList& out, const std::string& prefix) const {
    transform.collect(out, join_name(prefix, "transform"));
    out.push_back({join_name(prefix, "attention"), attention, true});
    bn.collect(out, join_name(prefix, "bn"));
  }
};

struct GatResult {
  Graph graph;
  Tensor scores;     // (B, N, N) before softmax
  Tensor attention;  // (B, N, N), rows sum to 1
};

/// Homogeneous graph attention over the complete graph. Pairwise features are
/// the element-wise product of transformed nodes, so scores are symmetric.
inline GatResult gat_layer_detailed(const Graph& g, const GatParams& p, const ForwardContext& ctx) {
  if (g.nodes.rank() != 3 || g.dim() != p.in_dim()) {
    throw ShapeError("gat_layer: node dim " + std::to_string(g.nodes.rank() == 3 ? g.dim() : 0) +
                     " does not match transform input " + std::to_string(p.in_dim()));
  }
  Tensor h = p.transform(g.nodes);
  Tensor scores = pairwise_scores(h, p.attention);
  Tensor attention = softmax(scores, 2);
  return {Graph{attend_and_update(h, attention, p.bn, ctx)}, scores, attention};
}

inline Graph gat_layer(const Graph& g, const GatParams& p, const ForwardContext& ctx) {
  return gat_layer_detailed(g, p, ctx).graph;
}

struct PoolParams {
  Tensor projection;  // (D)
  double keep_ratio = 1.0;

  static PoolParams init(std::size_t dim, double keep_ratio, Rng& rng) {
    if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw std::invalid_argument("keep_ratio must be in (0, 1]");
    PoolParams p;
    p.projection = kaiming_uniform({dim}, dim, rng);
    p.keep_ratio = keep_ratio;
    return p;
  }

  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "projection"), projection, true});
  }
};

struct PoolResult {
  Graph graph;
  NodeSelection kept;  // kept[b] lists surviving original indices, ascending
  Tensor gates;        // (B, N) sigmoid scores
};

/// Indices of the k largest values, ties to the lower index, returned ascending.
inline std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  idx.resize(std::min(k, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Attentive top-k pooling: nodes are gated by sigmoid(nodes . P) and the
/// max(1, floor(k N)) best-scoring gated nodes are kept in original order.
/// P is used unnormalized.
inline PoolResult graph_pool(const Graph& g, const PoolParams& p) {
  if (g.nodes.rank() != 3 || g.dim() != p.projection.size()) {
    throw ShapeError("graph_pool: projection length does not match node dim");
  }
  if (!(p.keep_ratio > 0.0 && p.keep_ratio <= 1.0)) throw std::invalid_argument("keep_ratio must be in (0, 1]");
  const std::size_t batch = g.batch(), n = g.count();
  Tensor proj = reshape(p.projection, {p.projection.size(), 1});
  Tensor gates = sigmoid(reshape(matmul(g.nodes, proj), {batch, n}));
  Tensor gated = mul_rows(g.nodes, gates);
  const std::size_t k = pooled_count(n, p.keep_ratio);
  NodeSelection kept(batch);
  for (std::size_t b = 0; b < batch; ++b) kept[b] = top_k_indices(gates.data().subspan(b * n, n), k);
  return {Graph{gather_rows(gated, kept)}, kept, gates};
}

/// Graph attention followed by pooling: one per domain in the front end.
struct GraphModule {
  GatParams gat;
  PoolParams pool;

  void collect(ParamList& out, const std::string& prefix) const {
    gat.collect(out, join_name(prefix, "gat"));
    pool.collect(out, join_name(prefix, "pool"));
  }
};

/// max_t |F| as S nodes of dimension C.
inline Graph spectral_nodes(const FeatureMap& f) {
  return Graph{transpose_last2(reduce_max(abs(f.value), 3))};
}

/// max_s |F| as T nodes of dimension C.
inline Graph temporal_nodes(const FeatureMap& f) {
  return Graph{transpose_last2(reduce_max(abs(f.value), 2))};
}

inline Graph extract_spectral_graph(const FeatureMap& f, const GraphModule& m, const ForwardContext& ctx) {
  return graph_pool(gat_layer(spectral_nodes(f), m.gat, ctx), m.pool).graph;
}

inline Graph extract_temporal_graph(const FeatureMap& f, const GraphModule& m, const ForwardContext& ctx) {
  return graph_pool(gat_layer(temporal_nodes(f), m.gat, ctx), m.pool).graph;
}

}  // namespace aasist
