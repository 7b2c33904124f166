#include <gtest/gtest.h>

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <cstring>
#include <numbers>

#include "aasist/grad_check.hpp"
#include "aasist/train.hpp"

using namespace aasist;

namespace {

// Fraction of spectral energy inside [lo, hi) Hz, from an FFT of the signal.
double band_energy_ratio(const std::vector<double>& x, double sr, double lo, double hi) {
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, x);
  double in = 0.0, total = 0.0;
  for (std::size_t k = 1; k <= x.size() / 2; ++k) {
    const double f = static_cast<double>(k) * sr / static_cast<double>(x.size());
    const double e = std::norm(spec[k]);
    total += e;
    if (f >= lo && f < hi) in += e;
  }
  return in / total;
}

RunConfig short_run(std::uint64_t seed, std::size_t steps) {
  RunConfig rc;
  rc.model = ModelConfig::debug();
  rc.model.input_length = 1000;
  rc.train.seed = seed;
  rc.train.steps = steps;
  rc.train.samples_per_class = 2;
  rc.train.batch_size = 2;
  return rc;
}

}  // namespace

TEST(CrossEntropy, WorkedValues) {
  EXPECT_NEAR(cross_entropy(Tensor({2}, std::vector<double>{0.0, 0.0}), 0).item(), std::numbers::ln2, 1e-15);
  EXPECT_NEAR(cross_entropy(Tensor({2}, std::vector<double>{0.0, 0.0}), 1).item(), std::numbers::ln2, 1e-15);
  const double small = cross_entropy(Tensor({2}, std::vector<double>{20.0, -20.0}), 0).item();
  EXPECT_GE(small, 0.0);
  EXPECT_LT(small, 1e-15);
  EXPECT_NEAR(cross_entropy(Tensor({2}, std::vector<double>{800.0, -800.0}), 1).item(), 1600.0, 1e-9);
  // Batch mean of ln2 and the 20/-20 case.
  const std::vector<std::size_t> labels{0, 0};
  EXPECT_NEAR(cross_entropy(Tensor({2, 2}, std::vector<double>{0, 0, 20, -20}), labels).item(), std::numbers::ln2 / 2,
              1e-15);
}

TEST(CrossEntropy, RejectsBadLabels) {
  const std::vector<std::size_t> bad{2}, two{0, 1};
  EXPECT_THROW(cross_entropy(Tensor({1, 2}, 0.0), bad), std::invalid_argument);
  EXPECT_THROW(cross_entropy(Tensor({1, 2}, 0.0), two), ShapeError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  std::vector<double> v(10);
  for (double& x : v) x = 3.0 * rng.normal();
  Tensor logits({5, 2}, v);
  const std::vector<std::size_t> labels{0, 1, 1, 0, 1};
  GradCheckOptions o;
  o.step = 1e-6;
  const auto rep = grad_check([&] { return cross_entropy(logits, labels); }, {logits}, o);
  EXPECT_TRUE(rep.passed()) << rep.max_rel_error;
}

TEST(Synth, SameSeedSameBytes) {
  const SynthDataset a = synth_dataset(5, 2), b = synth_dataset(5, 2), c = synth_dataset(6, 2);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a.samples[i].waveform.size(), 64600u);
    EXPECT_EQ(std::memcmp(a.samples[i].waveform.data(), b.samples[i].waveform.data(), 64600 * sizeof(double)), 0);
    EXPECT_NE(a.samples[i].waveform, c.samples[i].waveform);
  }
  EXPECT_EQ(a.samples[0].label, kBonafide);
  EXPECT_EQ(a.samples[3].label, kSpoof);
}

TEST(Synth, UnitPeak) {
  const SynthDataset d = synth_dataset(8, 3);
  for (const auto& s : d.samples) {
    double peak = 0.0;
    for (double v : s.waveform) peak = std::max(peak, std::abs(v));
    EXPECT_NEAR(peak, 1.0, 1e-12);
  }
  EXPECT_THROW(synth_dataset(1, 0), std::invalid_argument);
}

TEST(Synth, SpoofCarriesArtefactBandEnergy) {
  const SynthDataset d = synth_dataset(11, 8);
  double bona = 0.0, spoof = 0.0, max_bona = 0.0, min_spoof = 1.0;
  for (const auto& s : d.samples) {
    const double r = band_energy_ratio(s.waveform, 16000.0, 5000.0, 7000.0);
    if (s.label == kBonafide) {
      bona += r / 8.0;
      max_bona = std::max(max_bona, r);
    } else {
      spoof += r / 8.0;
      min_spoof = std::min(min_spoof, r);
    }
  }
  EXPECT_GT(spoof, 10.0 * bona) << "bona " << bona << " spoof " << spoof;
  EXPECT_GT(min_spoof, max_bona);
}

TEST(TrainStep, ZeroLearningRateLeavesParameters) {
  const RunConfig rc = short_run(1, 1);
  Model m = Model::init(rc.model, 1);
  const SynthDataset d = synth_dataset(2, 2, rc.model.input_length);
  std::vector<std::size_t> labels;
  const std::vector<std::size_t> idx{0, 3};
  const Tensor x = make_batch(d, idx, &labels);
  std::vector<std::vector<double>> before;
  for (const Tensor& t : m.trainable()) before.push_back(t.values());
  AdamState adam(m.trainable(), {});
  train_step(m, adam, x, labels, 0.0);
  const auto after = m.trainable();
  for (std::size_t i = 0; i < after.size(); ++i) EXPECT_EQ(after[i].values(), before[i]);
}

TEST(TrainStep, OneSmallStepReducesBatchLoss) {
  const RunConfig rc = short_run(1, 1);
  Model m = Model::init(rc.model, 4);
  const SynthDataset d = synth_dataset(5, 2, rc.model.input_length);
  std::vector<std::size_t> labels;
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  const Tensor x = make_batch(d, idx, &labels);
  AdamState adam(m.trainable(), {});
  const double before = train_step(m, adam, x, labels, 1e-5);
  NoGradGuard ng;
  // Same mode and batch statistics as the step itself.
  const double after = cross_entropy(m.forward(x, ForwardContext::probe()).logits, labels).item();
  EXPECT_LT(after, before);
}

TEST(TrainStep, FixedBatchLossIsNearlyMonotone) {
  const ModelConfig cfg = ModelConfig::debug();
  Model m = Model::init(cfg, 6);
  const SynthDataset d = synth_dataset(7, 2, cfg.input_length);
  std::vector<std::size_t> labels;
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  const Tensor x = make_batch(d, idx, &labels);
  AdamState adam(m.trainable(), {});
  std::vector<double> losses;
  for (int s = 0; s < 20; ++s) losses.push_back(train_step(m, adam, x, labels, 1e-5));
  int violations = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) violations += losses[i] > losses[i - 1];
  EXPECT_LE(violations, 2);
  EXPECT_LT(losses.back(), losses.front());
}

TEST(Fit, RequiresSeed) {
  RunConfig rc = short_run(1, 1);
  rc.train.seed.reset();
  EXPECT_THROW(fit(rc), ConfigError);
}

TEST(Fit, LearningRatesFollowCosineScheduleExactly) {
  RunConfig rc = short_run(3, 6);
  rc.train.lr = 2e-4;
  rc.train.lr_min = 1e-6;
  const FitResult r = fit(rc);
  ASSERT_EQ(r.record.steps.size(), 6u);
  for (const StepRecord& s : r.record.steps) {
    EXPECT_EQ(s.lr, cosine_lr(s.step, 6, 2e-4, 1e-6));
    EXPECT_TRUE(std::isfinite(s.loss));
  }
}

TEST(Fit, DeterministicPerSeed) {
  const FitResult a = fit(short_run(9, 3)), b = fit(short_run(9, 3)), c = fit(short_run(10, 3));
  EXPECT_EQ(a.record.steps, b.record.steps);
  EXPECT_EQ(serialize_checkpoint(a.checkpoint), serialize_checkpoint(b.checkpoint));
  EXPECT_NE(a.record.steps, c.record.steps);
  EXPECT_EQ(format_history(a.record), format_history(b.record));
}

TEST(Fit, HistoryFormat) {
  TrainRecord rec;
  rec.steps = {{0, 0.5, 1e-4}, {1, 0.25, 5e-5}};
  EXPECT_EQ(format_history(rec), "0\t0.5\t1e-04\n1\t0.25\t5e-05\n");
}

TEST(Fit, EvaluateReportsAccuracyAndScores) {
  const RunConfig rc = short_run(2, 1);
  const Model m = Model::init(rc.model, 1);
  const SynthDataset d = synth_dataset(3, 3, rc.model.input_length);
  const EvalSummary ev = evaluate(m, d, 4);
  EXPECT_EQ(ev.scores.size(), 6u);
  EXPECT_GE(ev.accuracy, 0.0);
  EXPECT_LE(ev.accuracy, 1.0);
  EXPECT_TRUE(std::isfinite(ev.loss));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < 6; ++i) correct += (ev.scores[i] >= 0.0) == (d.samples[i].label == kBonafide);
  EXPECT_DOUBLE_EQ(ev.accuracy, static_cast<double>(correct) / 6.0);
}
