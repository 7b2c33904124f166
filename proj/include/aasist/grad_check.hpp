#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "aasist/rng.hpp"
#include "aasist/tensor.hpp"

namespace aasist {

struct GradCheckOptions {
  double step = 1e-6;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so entries whose true
  // derivative is ~0 are judged by absolute difference instead.
  double abs_floor = 1e-6;
  // 0 checks every element; otherwise a seeded sample of this many per input.
  std::size_t max_per_input = 0;
  std::uint64_t seed = 0;
  // A probe that fails is repeated with step * kink_step_ratio. If the two
  // central differences disagree with each other the stencil straddles a
  // non-differentiable point (a max switching winner, |x| crossing zero), so
  // the probe is counted as a kink instead of scored. Set to 0 to disable.
  double kink_step_ratio = 0.1;
  // The check fails outright when kinks exceed this fraction of probes.
  double max_kink_fraction = 0.05;
};

struct GradCheckEntry {
  std::size_t input = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;
  double max_kink_fraction = 0.05;
  GradCheckEntry worst;
  std::vector<GradCheckEntry> failures;
  bool passed() const {
    return failures.empty() && static_cast<double>(kinks) <= max_kink_fraction * static_cast<double>(checked);
  }
};

inline double grad_rel_error(double analytic, double numeric, double abs_floor) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), abs_floor});
  return std::fabs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients of the scalar `fn` with respect to
/// `inputs` against central finite differences. `fn` is re-evaluated with
/// each checked element shifted by +/- step.
inline GradCheckReport grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> inputs,
                                  const GradCheckOptions& opts = {}) {
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tensor out = fn();
    backward(out);
  }
  std::vector<std::vector<double>> analytic;
  for (const Tensor& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  GradCheckReport report;
  Rng rng(opts.seed);
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<std::size_t> idx(inputs[i].size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opts.max_per_input != 0 && idx.size() > opts.max_per_input) {
      for (std::size_t k = 0; k < opts.max_per_input; ++k) {
        std::swap(idx[k], idx[k + rng.below(idx.size() - k)]);
      }
      idx.resize(opts.max_per_input);
      std::sort(idx.begin(), idx.end());
    }
    auto data = inputs[i].mutable_data();
    auto central = [&](std::size_t k, double h) {
      const double saved = data[k];
      data[k] = saved + h;
      const double up = fn().item();
      data[k] = saved - h;
      const double down = fn().item();
      data[k] = saved;
      return (up - down) / (2.0 * h);
    };
    for (std::size_t k : idx) {
      GradCheckEntry e{i, k, analytic[i][k], central(k, opts.step), 0.0};
      e.rel_error = grad_rel_error(e.analytic, e.numeric, opts.abs_floor);
      ++report.checked;
      if (e.rel_error > opts.tolerance && opts.kink_step_ratio > 0.0) {
        const double fine = central(k, opts.step * opts.kink_step_ratio);
        if (grad_rel_error(fine, e.numeric, opts.abs_floor) > opts.tolerance) {
          ++report.kinks;
          continue;
        }
      }
      if (report.checked - report.kinks == 1 || e.rel_error > report.worst.rel_error) report.worst = e;
      report.max_rel_error = report.worst.rel_error;
      if (e.rel_error > opts.tolerance) report.failures.push_back(e);
    }
  }
  report.max_kink_fraction = opts.max_kink_fraction;
  return report;
}

}  // namespace aasist
