#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "aasist/tensor.hpp"

namespace aasist {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment estimates for a fixed list of parameters.
struct AdamState {
  AdamOptions options;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(const std::vector<Tensor>& params, AdamOptions opts) : options(opts) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const Tensor& p : params) {
      m.emplace_back(p.size(), 0.0);
      v.emplace_back(p.size(), 0.0);
    }
  }
};

/// One bias-corrected Adam update of `params` in place, using their current
/// grads and learning rate `lr`.
inline void adam_step(std::vector<Tensor>& params, AdamState& state, double lr) {
  if (params.size() != state.m.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params but state tracks " +
                     std::to_string(state.m.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != state.m[i].size()) {
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " changed shape");
    }
  }
  ++state.step;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i].mutable_data();
    auto grad = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * grad[k];
      v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * grad[k] * grad[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      value[k] -= lr * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
}

inline void adam_step(std::vector<Tensor>& params, AdamState& state) { adam_step(params, state, state.options.lr); }

/// Cosine annealing from lr_max at step 0 to lr_min at step == total_steps.
inline double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr_max, double lr_min) {
  if (total_steps == 0) throw std::invalid_argument("cosine_lr: total_steps must be positive");
  if (step > total_steps) {
    throw std::out_of_range("cosine_lr: step " + std::to_string(step) + " beyond " + std::to_string(total_steps));
  }
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

}  // namespace aasist
