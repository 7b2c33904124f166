#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "aasist/ops.hpp"
#include "aasist/rng.hpp"
#include "aasist/tensor.hpp"

namespace aasist {

enum class Mode { kTrain, kEval };

struct ForwardContext {
  Mode mode = Mode::kTrain;
  // Running batchnorm statistics are only touched in training mode, and only
  // when this is set (finite-difference probes clear it).
  bool update_stats = true;

  bool training() const { return mode == Mode::kTrain; }
  static ForwardContext train() { return {Mode::kTrain, true}; }
  static ForwardContext probe() { return {Mode::kTrain, false}; }
  static ForwardContext eval() { return {Mode::kEval, false}; }
};

/// A named tensor in a parameter tree. Non-trainable entries are state
/// (running statistics) that is saved but never optimized or counted.
struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};
using ParamList = std::vector<NamedTensor>;

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

inline std::vector<Tensor> trainable_tensors(const ParamList& list) {
  std::vector<Tensor> out;
  for (const auto& p : list) {
    if (p.trainable) out.push_back(p.tensor);
  }
  return out;
}

inline std::size_t count_trainable(const ParamList& list) {
  std::size_t n = 0;
  for (const auto& p : list) {
    if (p.trainable) n += p.tensor.size();
  }
  return n;
}

/// Fan-in uniform initialization with unit gain: U(-sqrt(3/fan_in), sqrt(3/fan_in)).
inline Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::parameter(std::move(shape), std::move(v));
}

inline Tensor zeros_param(Shape shape) { return Tensor::parameter(shape, std::vector<double>(shape_size(shape), 0.0)); }

/// Affine map over the trailing axis; weight is (in, out).
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear init(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
    Linear l;
    l.weight = kaiming_uniform({in, out}, in, rng);
    if (with_bias) l.bias = zeros_param({out});
    return l;
  }

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Tensor operator()(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return bias.defined() ? add_along(y, bias, y.rank() - 1) : y;
  }

  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "weight"), weight, true});
    if (bias.defined()) out.push_back({join_name(prefix, "bias"), bias, true});
  }
};

/// Per-feature normalization along `axis` with statistics over all other axes.
struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNorm init(std::size_t features, double momentum, double eps) {
    BatchNorm bn;
    bn.gamma = Tensor::parameter({features}, std::vector<double>(features, 1.0));
    bn.beta = zeros_param({features});
    bn.running_mean = Tensor({features}, 0.0);
    bn.running_var = Tensor({features}, 1.0);
    bn.momentum = momentum;
    bn.eps = eps;
    return bn;
  }

  std::size_t features() const { return gamma.size(); }

  Tensor operator()(const Tensor& x, std::size_t axis, const ForwardContext& ctx) const {
    if (!ctx.training()) {
      return batch_norm_eval(x, gamma, beta, running_mean.data(), running_var.data(), axis, eps);
    }
    if (!ctx.update_stats) return batch_norm_train(x, gamma, beta, axis, eps);
    std::vector<double> mu, var;
    Tensor y = batch_norm_train(x, gamma, beta, axis, eps, &mu, &var);
    const double count = static_cast<double>(x.size() / features());
    const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
    Tensor rm = running_mean;
    Tensor rv = running_var;
    auto m = rm.mutable_data();
    auto v = rv.mutable_data();
    for (std::size_t c = 0; c < mu.size(); ++c) {
      m[c] = (1.0 - momentum) * m[c] + momentum * mu[c];
      v[c] = (1.0 - momentum) * v[c] + momentum * var[c] * unbias;
    }
    return y;
  }

  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "gamma"), gamma, true});
    out.push_back({join_name(prefix, "beta"), beta, true});
    out.push_back({join_name(prefix, "running_mean"), running_mean, false});
    out.push_back({join_name(prefix, "running_var"), running_var, false});
  }
};

}  // namespace aasist
