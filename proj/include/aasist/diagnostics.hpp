#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "aasist/config.hpp"
#include "aasist/grad_check.hpp"
#include "aasist/model.hpp"
#include "aasist/train.hpp"

namespace aasist {

struct ModuleCheck {
  std::string module;
  GradCheckReport report;
  double seconds = 0.0;
};

namespace detail {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = scale * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

// Fixed random weighting so that every output element influences the loss.
inline Tensor weighted_sum(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

template <typename Fn>
ModuleCheck timed_check(const std::string& name, Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  ModuleCheck m{name, fn(), 0.0};
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

}  // namespace detail

/// Finite-difference checks of every module on small problems, with the
/// end-to-end model check run on `cfg` (normally the debug preset). Large
/// parameter tensors are subsampled with `per_tensor` probes each.
inline std::vector<ModuleCheck> gradcheck_suite(const ModelConfig& cfg, std::uint64_t seed, std::size_t per_tensor = 3) {
  using detail::random_tensor, detail::weighted_sum;
  std::vector<ModuleCheck> out;
  Rng rng(seed);
  const ForwardContext ctx = ForwardContext::probe();
  GradCheckOptions opts;
  opts.seed = derive_seed(seed, 100);
  // The floor absorbs finite-difference roundoff on exactly-zero derivatives
  // of the encoder and model (biases ahead of batch norm). Probes that land
  // beside a max or top-k switch are set aside by the kink test.
  GradCheckOptions large = opts;
  large.abs_floor = 1e-3;
  large.max_per_input = per_tensor;

  out.push_back(detail::timed_check("tensor_autodiff", [&] {
    Tensor x = random_tensor({2, 2, 4, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng, 0.5);
    Tensor bias = random_tensor({3}, rng);
    Tensor gamma = random_tensor({3}, rng), beta = random_tensor({3}, rng);
    Tensor proj = random_tensor({3, 4}, rng);
    Tensor r = random_tensor({2, 4, 4}, rng);
    auto fn = [&] {
      Tensor h = selu(batch_norm_train(conv2d(x, w, bias, 1, 1), gamma, beta, 1, 1e-5));
      Tensor m = reshape(maxpool2d(h, 1, 2), {2, 3, 8});
      Tensor a = softmax(matmul(transpose_last2(m), proj), 2);  // (2, 8, 4)
      Tensor s = sigmoid(bmm(transpose_last2(a), a));            // (2, 4, 4)
      return add(weighted_sum(s, r), mean(reduce_max(abs(m), 2)));
    };
    return grad_check(fn, {x, w, bias, gamma, beta, proj}, opts);
  }));

  const Model model = Model::init(cfg, derive_seed(seed, 1));
  const SynthDataset data = synth_dataset(derive_seed(seed, 2), 1, cfg.input_length, cfg.sample_rate);
  std::vector<std::size_t> labels;
  const std::vector<std::size_t> idx{0, 1};
  Tensor wave = make_batch(data, idx, &labels);

  out.push_back(detail::timed_check("raw_encoder", [&] {
    FeatureMap f0 = model.encoder(wave, ctx);
    // Scaled so the objective stays O(1) however large the feature map is.
    Tensor r = random_tensor(f0.value.shape(), rng, 1.0 / std::sqrt(static_cast<double>(f0.value.size())));
    ParamList params;
    model.encoder.collect(params, "encoder");
    return grad_check([&] { return weighted_sum(model.encoder(wave, ctx).value, r); }, trainable_tensors(params), large);
  }));

  out.push_back(detail::timed_check("graph_attention", [&] {
    Tensor nodes = random_tensor({2, 6, 5}, rng);
    GatParams gat = GatParams::init(5, 4, 0.1, 1e-5, rng);
    PoolParams pool = PoolParams::init(4, 0.5, rng);
    Tensor r = random_tensor({2, 3, 4}, rng);
    ParamList params;
    gat.collect(params, "gat");
    pool.collect(params, "pool");
    std::vector<Tensor> inputs = trainable_tensors(params);
    inputs.push_back(nodes);
    return grad_check([&] { return weighted_sum(graph_pool(gat_layer(Graph{nodes}, gat, ctx), pool).graph.nodes, r); },
                      inputs, opts);
  }));

  out.push_back(detail::timed_check("hetero_graph", [&] {
    Tensor spec = random_tensor({2, 5, 4}, rng), temp = random_tensor({2, 4, 3}, rng);
    Tensor stack_in = random_tensor({2, 6}, rng);
    HsGalParams p = HsGalParams::init(4, 3, 6, true, true, 0.1, 1e-5, rng);
    Tensor rn = random_tensor({2, 9, 6}, rng), rs = random_tensor({2, 6}, rng);
    ParamList params;
    p.collect(params, "hsgal");
    std::vector<Tensor> inputs = trainable_tensors(params);
    inputs.insert(inputs.end(), {spec, temp, stack_in});
    return grad_check(
        [&] {
          auto [g, s] = hs_gal(combine_graphs(Graph{spec}, Graph{temp}), StackNode{stack_in}, p, ctx);
          return add(weighted_sum(g.nodes, rn), weighted_sum(s.value, rs));
        },
        inputs, opts);
  }));

  out.push_back(detail::timed_check("training_harness", [&] {
    Tensor logits = random_tensor({4, 2}, rng, 3.0);
    const std::vector<std::size_t> ys{0, 1, 1, 0};
    return grad_check([&] { return cross_entropy(logits, ys); }, {logits}, opts);
  }));

  out.push_back(detail::timed_check("model", [&] {
    std::vector<Tensor> inputs = model.trainable();
    inputs.push_back(wave);
    return grad_check([&] { return cross_entropy(model.forward(wave, ctx).logits, labels); }, inputs, large);
  }));
  return out;
}

inline void print_gradcheck(const std::vector<ModuleCheck>& checks, double tolerance, std::ostream& os) {
  for (const ModuleCheck& m : checks) {
    const bool ok = m.report.max_rel_error < tolerance && m.report.passed();
    os << m.module << ": max_rel_error=" << m.report.max_rel_error << " checked=" << m.report.checked
       << " kinks=" << m.report.kinks << " time=" << m.seconds << "s " << (ok ? "ok" : "FAIL") << "\n";
  }
}

/// Human-readable architecture report: configuration, shape plan, node
/// trajectory, parameter count and every parameter tensor's shape.
inline void describe_model(const ModelConfig& cfg, std::ostream& os) {
  const ShapePlan plan = plan_shapes(cfg);
  const Model m = Model::init(cfg, 0);
  os << "preset: " << cfg.preset << "\n"
     << "input_length: " << cfg.input_length << "\n"
     << "sample_rate: " << detail::format_double(cfg.sample_rate) << "\n"
     << "sinc_filters: " << cfg.sinc_filters << "\n"
     << "sinc_kernel: " << cfg.sinc_kernel << "\n"
     << "channels: [";
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) os << (i ? ", " : "") << cfg.channels[i];
  os << "]\n"
     << "sinc_frames: " << plan.sinc_frames << "\n"
     << "feature_map: (" << plan.channels << ", " << plan.spectral << ", " << plan.temporal << ")\n"
     << "pool_ratios: spectral=" << detail::format_double(cfg.pool_spectral)
     << " temporal=" << detail::format_double(cfg.pool_temporal)
     << " hetero=" << detail::format_double(cfg.pool_hetero) << "\n"
     << "gat_dim: " << cfg.gat_dim << "\n"
     << "D_st: " << cfg.hs_dim << "\n"
     << "ablations: hetero_attention=" << (cfg.use_hetero_attention ? "on" : "off")
     << " stack_node=" << (cfg.use_stack_node ? "on" : "off") << " mgo=" << (cfg.use_mgo ? "on" : "off") << "\n"
     << "nodes.spectral: " << plan.spectral << " -> " << plan.spectral_kept << "\n"
     << "nodes.temporal: " << plan.temporal << " -> " << plan.temporal_kept << "\n"
     << "nodes.combined: ";
  for (std::size_t i = 0; i < plan.combined.size(); ++i) os << (i ? " -> " : "") << plan.combined[i];
  os << "\n"
     << "parameters: " << count_parameters(m) << "\n"
     << "layers:\n";
  for (const NamedTensor& p : m.parameters()) {
    os << "  " << p.name << " " << shape_str(p.tensor.shape()) << (p.trainable ? "" : " (buffer)") << "\n";
  }
}

}  // namespace aasist
