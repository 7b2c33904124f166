#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "aasist/checkpoint.hpp"
#include "aasist/config.hpp"
#include "aasist/model.hpp"
#include "aasist/optim.hpp"
#include "aasist/rng.hpp"

namespace aasist {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mean over the batch of -log softmax(logits[b])[labels[b]], logits (B, C).
/// A rank-1 logits vector is treated as a batch of one.
inline Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 1 && logits.rank() != 2) throw ShapeError("cross_entropy: logits must be (C) or (B, C)");
  const std::size_t batch = logits.rank() == 2 ? logits.dim(0) : 1;
  const std::size_t classes = logits.shape().back();
  if (labels.size() != batch) throw ShapeError("cross_entropy: one label per row required");
  for (std::size_t y : labels) {
    if (y >= classes) throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " out of range");
  }
  const auto& x = logits.values();
  std::vector<double> prob(x.size());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = x.data() + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) prob[b * classes + c] = std::exp(row[c] - lse);
    total += lse - row[labels[b]];
  }
  std::vector<std::size_t> ys(labels.begin(), labels.end());
  return make_op("cross_entropy", {}, {total / static_cast<double>(batch)}, {logits},
                 [prob = std::move(prob), ys = std::move(ys), classes](detail::Node& out) {
                   double* g = input_grad(out, 0);
                   if (!g) return;
                   const double go = out.grad[0] / static_cast<double>(ys.size());
                   for (std::size_t b = 0; b < ys.size(); ++b)
                     for (std::size_t c = 0; c < classes; ++c) {
                       g[b * classes + c] += go * (prob[b * classes + c] - (c == ys[b] ? 1.0 : 0.0));
                     }
                 });
}

inline Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  return cross_entropy(logits, std::span<const std::size_t>(&label, 1));
}

struct SynthSample {
  std::vector<double> waveform;
  std::size_t label = kBonafide;
};

/// Two generative families: bona fide harmonic complexes and the same
/// complexes with quantized amplitudes plus a high band noise burst.
struct SynthDataset {
  std::uint64_t seed = 0;
  std::size_t n_per_class = 0;
  std::vector<SynthSample> samples;  // bona fide first, then spoof

  std::size_t size() const { return samples.size(); }
};

/// Artefact band of the spoof class, as fractions of the sample rate.
inline constexpr double kArtefactLow = 5000.0 / 16000.0;
inline constexpr double kArtefactHigh = 7000.0 / 16000.0;

inline std::vector<double> synth_waveform(std::uint64_t sample_seed, bool spoof, std::size_t length, double sample_rate) {
  Rng rng(sample_seed);
  const double two_pi = 2.0 * std::numbers::pi;
  const double f0 = rng.uniform(100.0, 250.0);
  const double vib_rate = rng.uniform(3.0, 6.0), vib_depth = rng.uniform(0.0, 0.02), vib_phase = rng.uniform(0.0, two_pi);
  const auto harmonics = static_cast<std::size_t>(std::floor(0.25 * sample_rate / f0));
  std::vector<double> amp(harmonics), phase(harmonics);
  for (std::size_t h = 0; h < harmonics; ++h) {
    amp[h] = (1.0 + 0.2 * rng.uniform(-1.0, 1.0)) / static_cast<double>(h + 1);
    phase[h] = rng.uniform(0.0, two_pi);
  }

  std::vector<double> x(length, 0.0);
  double theta = 0.0, peak = 0.0;
  for (std::size_t i = 0; i < length; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    const double f = f0 * (1.0 + vib_depth * std::sin(two_pi * vib_rate * t + vib_phase));
    for (std::size_t h = 0; h < harmonics; ++h) x[i] += amp[h] * std::sin(static_cast<double>(h + 1) * theta + phase[h]);
    theta += two_pi * f / sample_rate;
    peak = std::max(peak, std::abs(x[i]));
  }
  for (double& v : x) v /= peak;

  if (spoof) {
    constexpr double kLevels = 8.0;
    for (double& v : x) v = std::round(v * kLevels) / kLevels;
    constexpr std::size_t kPartials = 24;
    std::vector<double> bf(kPartials), bp(kPartials);
    for (std::size_t k = 0; k < kPartials; ++k) {
      bf[k] = rng.uniform(kArtefactLow, kArtefactHigh) * sample_rate;
      bp[k] = rng.uniform(0.0, two_pi);
    }
    const std::size_t span = std::max<std::size_t>(1, length / 2);
    const std::size_t start = static_cast<std::size_t>(rng.below(length - span + 1));
    const double gain = rng.uniform(0.25, 0.4) * std::sqrt(2.0 / static_cast<double>(kPartials));
    for (std::size_t i = 0; i < span; ++i) {
      const double env = 0.5 - 0.5 * std::cos(two_pi * static_cast<double>(i) / static_cast<double>(span));
      const double t = static_cast<double>(start + i) / sample_rate;
      double burst = 0.0;
      for (std::size_t k = 0; k < kPartials; ++k) burst += std::sin(two_pi * bf[k] * t + bp[k]);
      x[start + i] += gain * env * burst;
    }
  }

  for (double& v : x) v += 0.005 * rng.normal();
  peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  for (double& v : x) v /= peak;
  return x;
}

inline SynthDataset synth_dataset(std::uint64_t seed, std::size_t n_per_class, std::size_t length = 64600,
                                  double sample_rate = 16000.0) {
  if (n_per_class == 0) throw std::invalid_argument("synth_dataset: n_per_class must be at least 1");
  if (length == 0) throw std::invalid_argument("synth_dataset: length must be positive");
  SynthDataset d;
  d.seed = seed;
  d.n_per_class = n_per_class;
  for (std::size_t i = 0; i < 2 * n_per_class; ++i) {
    const bool spoof = i >= n_per_class;
    d.samples.push_back({synth_waveform(derive_seed(seed, i), spoof, length, sample_rate), spoof ? kSpoof : kBonafide});
  }
  return d;
}

/// Stacks the selected samples into a (B, L) tensor.
inline Tensor make_batch(const SynthDataset& d, std::span<const std::size_t> idx, std::vector<std::size_t>* labels) {
  if (idx.empty()) throw std::invalid_argument("make_batch: empty batch");
  const std::size_t len = d.samples.at(idx[0]).waveform.size();
  std::vector<double> x;
  x.reserve(idx.size() * len);
  if (labels) labels->clear();
  for (std::size_t i : idx) {
    const auto& s = d.samples.at(i);
    x.insert(x.end(), s.waveform.begin(), s.waveform.end());
    if (labels) labels->push_back(s.label);
  }
  return Tensor({idx.size(), len}, std::move(x));
}

/// Forward, mean cross-entropy, backward and one Adam update at `lr`.
/// Returns the batch loss before the update.
inline double train_step(Model& model, AdamState& adam, const Tensor& batch, std::span<const std::size_t> labels,
                         double lr) {
  std::vector<Tensor> params = model.trainable();
  for (Tensor& p : params) p.zero_grad();
  double loss_value = 0.0;
  try {
    Tensor loss = cross_entropy(model.forward(batch, ForwardContext::train()).logits, labels);
    loss_value = loss.item();
    backward(loss);
  } catch (const NumericError& e) {
    throw TrainingError(std::string("non-finite value in training step: ") + e.what());
  }
  if (!std::isfinite(loss_value)) throw TrainingError("non-finite loss " + std::to_string(loss_value));
  adam_step(params, adam, lr);
  for (const Tensor& p : params) {
    for (double v : p.data()) {
      if (!std::isfinite(v)) throw TrainingError("non-finite parameter after update at lr " + std::to_string(lr));
    }
  }
  return loss_value;
}

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  bool operator==(const StepRecord&) const = default;
};

struct TrainRecord {
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  double final_accuracy = 0.0;  // eval mode, whole training set
  double final_loss = 0.0;
};

/// Mean loss and accuracy of `model` on the dataset, in inference mode.
struct EvalSummary {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<double> scores;
};

inline EvalSummary evaluate(const Model& model, const SynthDataset& d, std::size_t batch_size) {
  NoGradGuard no_grad;
  EvalSummary r;
  std::size_t correct = 0;
  for (std::size_t at = 0; at < d.size(); at += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, d.size() - at));
    std::iota(idx.begin(), idx.end(), at);
    std::vector<std::size_t> labels;
    Tensor x = make_batch(d, idx, &labels);
    ModelOutput out = model.forward(x, ForwardContext::eval());
    r.loss += cross_entropy(out.logits, labels).item() * static_cast<double>(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const std::size_t pred = out.scores[b] >= 0.0 ? kBonafide : kSpoof;
      correct += pred == labels[b];
      r.scores.push_back(out.scores[b]);
    }
  }
  r.loss /= static_cast<double>(d.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(d.size());
  return r;
}

struct FitResult {
  TrainRecord record;
  Model model;
  Checkpoint checkpoint;
};

/// Sub-seeds of a run's master seed.
inline std::uint64_t model_seed(std::uint64_t master) { return derive_seed(master, 0); }
inline std::uint64_t data_seed(std::uint64_t master) { return derive_seed(master, 1); }
inline std::uint64_t order_seed(std::uint64_t master) { return derive_seed(master, 2); }

/// Trains on the synthetic set for cfg.train.steps steps, reshuffling at every
/// pass over the data. The seed is required.
inline FitResult fit(const RunConfig& cfg) {
  if (!cfg.train.seed) throw ConfigError("seed", "a seed is required for training");
  const std::uint64_t seed = *cfg.train.seed;
  const TrainConfig& tc = cfg.train;
  const SynthDataset data =
      synth_dataset(data_seed(seed), tc.samples_per_class, cfg.model.input_length, cfg.model.sample_rate);

  FitResult r{TrainRecord{}, Model::init(cfg.model, model_seed(seed)), Checkpoint{}};
  r.record.seed = seed;
  AdamState adam(r.model.trainable(), AdamOptions{tc.lr, tc.adam_beta1, tc.adam_beta2, tc.adam_eps});

  Rng order_rng(order_seed(seed));
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  std::vector<std::size_t> labels;
  for (std::size_t step = 0; step < tc.steps; ++step) {
    std::vector<std::size_t> idx;
    while (idx.size() < tc.batch_size) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    const double lr = cosine_lr(step, tc.steps, tc.lr, tc.lr_min);
    Tensor x = make_batch(data, idx, &labels);
    double loss;
    try {
      loss = train_step(r.model, adam, x, labels, lr);
    } catch (const TrainingError& e) {
      throw TrainingError("step " + std::to_string(step) + " (seed " + std::to_string(seed) + "): " + e.what());
    }
    r.record.steps.push_back({step, loss, lr});
  }

  const EvalSummary ev = evaluate(r.model, data, tc.batch_size);
  r.record.final_accuracy = ev.accuracy;
  r.record.final_loss = ev.loss;
  r.checkpoint = make_checkpoint(r.model, cfg);
  return r;
}

/// `step<TAB>loss<TAB>lr` lines with shortest round-trip numbers.
inline std::string format_history(const TrainRecord& rec) {
  std::string out;
  for (const StepRecord& s : rec.steps) {
    out += std::to_string(s.step);
    out += '\t';
    out += detail::format_double(s.loss);
    out += '\t';
    out += detail::format_double(s.lr);
    out += '\n';
  }
  return out;
}

}  // namespace aasist
