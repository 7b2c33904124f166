#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "aasist/config.hpp"
#include "aasist/layers.hpp"
#include "aasist/ops.hpp"

namespace aasist {

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Learnable band-pass filters parameterized by their cutoff frequencies.
///
/// Each kernel is the difference of two Hamming-windowed sinc low-pass
/// kernels, each scaled to unit DC gain, so every band-pass kernel sums to
/// zero and stays symmetric about its centre tap. Cutoffs are clamped at
/// forward time to min_low_hz <= low, low + min_band_hz <= high < Nyquist.
struct SincFilterBank {
  Tensor low_hz;
  Tensor high_hz;
  std::size_t kernel_length = 129;
  double sample_rate = 16000.0;
  double min_low_hz = 1.0;
  double min_band_hz = 50.0;

  static constexpr double kNyquistGuardHz = 1.0;

  /// Mel-spaced contiguous bands from 30 Hz to 100 Hz below Nyquist.
  static SincFilterBank init_mel(std::size_t filters, std::size_t kernel_length, double sample_rate,
                                 double min_low_hz, double min_band_hz) {
    if (kernel_length % 2 == 0) throw ShapeError("sinc kernel length must be odd");
    SincFilterBank bank;
    bank.kernel_length = kernel_length;
    bank.sample_rate = sample_rate;
    bank.min_low_hz = min_low_hz;
    bank.min_band_hz = min_band_hz;
    const double lo = hz_to_mel(30.0);
    const double hi = hz_to_mel(sample_rate / 2.0 - 100.0);
    std::vector<double> low(filters), high(filters);
    for (std::size_t i = 0; i < filters; ++i) {
      low[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(filters));
      high[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i + 1) / static_cast<double>(filters));
    }
    bank.low_hz = Tensor::parameter({filters}, std::move(low));
    bank.high_hz = Tensor::parameter({filters}, std::move(high));
    return bank;
  }

  static SincFilterBank from_cutoffs(std::vector<double> low, std::vector<double> high, std::size_t kernel_length,
                                     double sample_rate, double min_low_hz = 1.0, double min_band_hz = 50.0) {
    if (kernel_length % 2 == 0) throw ShapeError("sinc kernel length must be odd");
    if (low.size() != high.size()) throw ShapeError("sinc cutoff lists differ in length");
    SincFilterBank bank;
    bank.kernel_length = kernel_length;
    bank.sample_rate = sample_rate;
    bank.min_low_hz = min_low_hz;
    bank.min_band_hz = min_band_hz;
    const std::size_t n = low.size();
    bank.low_hz = Tensor::parameter({n}, std::move(low));
    bank.high_hz = Tensor::parameter({n}, std::move(high));
    return bank;
  }

  std::size_t filters() const { return low_hz.size(); }
  double nyquist() const { return sample_rate / 2.0; }

  /// Cutoffs actually used by filter `f` after clamping.
  std::pair<double, double> effective_cutoffs(std::size_t f) const {
    const double low = std::clamp(low_hz[f], min_low_hz, nyquist() - kNyquistGuardHz - min_band_hz);
    const double high = std::clamp(high_hz[f], low + min_band_hz, nyquist() - kNyquistGuardHz);
    return {low, high};
  }

  /// Kernel matrix (filters, kernel_length), differentiable w.r.t. both cutoffs.
  Tensor kernels() const;

  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "low_hz"), low_hz, true});
    out.push_back({join_name(prefix, "high_hz"), high_hz, true});
  }
};

namespace detail {

// Unit-DC windowed sinc low-pass with cutoff f, and its derivative in f.
inline void unit_lowpass(double f, double fs, const std::vector<double>& window, std::vector<double>& h,
                         std::vector<double>& dh) {
  const std::size_t k = window.size();
  const double half = static_cast<double>(k - 1) / 2.0;
  std::vector<double> u(k), du(k);
  double su = 0.0, sdu = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double n = static_cast<double>(i) - half;
    const double arg = 2.0 * std::numbers::pi * f * n / fs;
    const double g = n == 0.0 ? 2.0 * f / fs : std::sin(arg) / (std::numbers::pi * n);
    const double dg = 2.0 * std::cos(arg) / fs;
    u[i] = window[i] * g;
    du[i] = window[i] * dg;
    su += u[i];
    sdu += du[i];
  }
  h.resize(k);
  dh.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    h[i] = u[i] / su;
    dh[i] = (du[i] - h[i] * sdu) / su;
  }
}

inline std::vector<double> hamming(std::size_t k) {
  std::vector<double> w(k, 1.0);
  if (k == 1) return w;
  for (std::size_t i = 0; i < k; ++i) {
    w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(k - 1));
  }
  return w;
}

}  // namespace detail

inline Tensor SincFilterBank::kernels() const {
  const std::size_t nf = filters(), k = kernel_length;
  const std::vector<double> window = detail::hamming(k);
  std::vector<double> out(nf * k);
  // Per filter: d kernel / d low_eff and d kernel / d high_eff, plus the
  // clamp Jacobian back to the raw parameters.
  std::vector<double> d_low(nf * k), d_high(nf * k);
  std::vector<double> low_pass(nf), high_pass(nf), high_follows_low(nf);
  const double low_max = nyquist() - kNyquistGuardHz - min_band_hz;
  const double high_max = nyquist() - kNyquistGuardHz;
  std::vector<double> hl, dhl, hh, dhh;
  for (std::size_t f = 0; f < nf; ++f) {
    const double lp = low_hz[f], hp = high_hz[f];
    const auto [low, high] = effective_cutoffs(f);
    low_pass[f] = (lp > min_low_hz && lp < low_max) ? 1.0 : 0.0;
    high_pass[f] = (hp > low + min_band_hz && hp < high_max) ? 1.0 : 0.0;
    high_follows_low[f] = hp <= low + min_band_hz ? 1.0 : 0.0;
    detail::unit_lowpass(low, sample_rate, window, hl, dhl);
    detail::unit_lowpass(high, sample_rate, window, hh, dhh);
    for (std::size_t i = 0; i < k; ++i) {
      out[f * k + i] = hh[i] - hl[i];
      d_low[f * k + i] = -dhl[i];
      d_high[f * k + i] = dhh[i];
    }
  }
  return make_op("sinc_kernels", Shape{nf, k}, std::move(out), {low_hz, high_hz},
                 [nf, k, d_low = std::move(d_low), d_high = std::move(d_high), low_pass = std::move(low_pass),
                  high_pass = std::move(high_pass),
                  high_follows_low = std::move(high_follows_low)](detail::Node& self) {
                   double* g_low = input_grad(self, 0);
                   double* g_high = input_grad(self, 1);
                   for (std::size_t f = 0; f < nf; ++f) {
                     double gl = 0.0, gh = 0.0;
                     for (std::size_t i = 0; i < k; ++i) {
                       gl += self.grad[f * k + i] * d_low[f * k + i];
                       gh += self.grad[f * k + i] * d_high[f * k + i];
                     }
                     const double low_total = gl + high_follows_low[f] * gh;
                     if (g_low) g_low[f] += low_pass[f] * low_total;
                     if (g_high) g_high[f] += high_pass[f] * gh;
                   }
                 });
}

/// 2-D convolution with bias, stride 1 and symmetric zero padding.
struct Conv2d {
  Tensor weight;  // (out, in, kh, kw)
  Tensor bias;    // (out)
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;

  static Conv2d init(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw, std::size_t pad_h,
                     std::size_t pad_w, Rng& rng) {
    Conv2d c;
    c.weight = kaiming_uniform({out, in, kh, kw}, in * kh * kw, rng);
    c.bias = zeros_param({out});
    c.pad_h = pad_h;
    c.pad_w = pad_w;
    return c;
  }

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, pad_h, pad_w); }

  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "weight"), weight, true});
    out.push_back({join_name(prefix, "bias"), bias, true});
  }
};

/// Pre-activation residual block:
///   y = maxpool(conv2(selu(bn2(conv1(selu(bn1(x)))))) + shortcut(x))
/// with 3x3 convolutions (padding 1) and a 1x1 shortcut only when the
/// channel count changes. Pooling is over the time axis.
struct ResidualBlock {
  BatchNorm bn1;
  Conv2d conv1;
  BatchNorm bn2;
  Conv2d conv2;
  std::optional<Conv2d> shortcut;
  std::size_t pool_h = 1;
  std::size_t pool_w = 3;

  static ResidualBlock init(std::size_t in, std::size_t out, std::size_t time_pool, double bn_momentum,
                            double bn_eps, Rng& rng) {
    ResidualBlock b;
    b.bn1 = BatchNorm::init(in, bn_momentum, bn_eps);
    b.conv1 = Conv2d::init(in, out, 3, 3, 1, 1, rng);
    b.bn2 = BatchNorm::init(out, bn_momentum, bn_eps);
    b.conv2 = Conv2d::init(out, out, 3, 3, 1, 1, rng);
    if (in != out) b.shortcut = Conv2d::init(in, out, 1, 1, 0, 0, rng);
    b.pool_w = time_pool;
    return b;
  }

  std::size_t in_channels() const { return conv1.in_channels(); }
  std::size_t out_channels() const { return conv2.out_channels(); }

  Tensor operator()(const Tensor& x, const ForwardContext& ctx) const {
    if (x.rank() != 4 || x.dim(1) != in_channels()) {
      throw ShapeError("residual block expects " + std::to_string(in_channels()) + " input channels, got " +
                       shape_str(x.shape()));
    }
    Tensor h = conv1(selu(bn1(x, 1, ctx)));
    h = conv2(selu(bn2(h, 1, ctx)));
    Tensor skip = shortcut ? (*shortcut)(x) : x;
    return maxpool2d(add(h, skip), pool_h, pool_w);
  }

  void collect(ParamList& out, const std::string& prefix) const {
    bn1.collect(out, join_name(prefix, "bn1"));
    conv1.collect(out, join_name(prefix, "conv1"));
    bn2.collect(out, join_name(prefix, "bn2"));
    conv2.collect(out, join_name(prefix, "conv2"));
    if (shortcut) shortcut->collect(out, join_name(prefix, "shortcut"));
  }
};

/// Encoder output F with shape (batch, channels, spectral bins, time frames).
struct FeatureMap {
  Tensor value;

  std::size_t batch() const { return value.dim(0); }
  std::size_t channels() const { return value.dim(1); }
  std::size_t spectral() const { return value.dim(2); }
  std::size_t temporal() const { return value.dim(3); }
};

/// Sinc front end followed by the residual stack. The sinc output (B, F, T')
/// is read as a one-channel image (B, 1, F, T') whose rows are spectral bins.
struct Encoder {
  SincFilterBank sinc;
  std::vector<ResidualBlock> blocks;
  std::size_t input_length = 0;

  static Encoder init(const ModelConfig& cfg, Rng& rng) {
    validate(cfg);
    Encoder e;
    e.input_length = cfg.input_length;
    e.sinc = SincFilterBank::init_mel(cfg.sinc_filters, cfg.sinc_kernel, cfg.sample_rate, cfg.sinc_min_low_hz,
                                      cfg.sinc_min_band_hz);
    std::size_t in = 1;
    for (std::size_t out : cfg.channels) {
      e.blocks.push_back(ResidualBlock::init(in, out, cfg.time_pool, cfg.bn_momentum, cfg.bn_eps, rng));
      in = out;
    }
    return e;
  }

  /// waveforms: (batch, input_length).
  FeatureMap operator()(const Tensor& waveforms, const ForwardContext& ctx) const {
    if (waveforms.rank() != 2 || waveforms.dim(1) != input_length) {
      throw ShapeError("encoder expects (batch, " + std::to_string(input_length) + ") waveforms, got " +
                       shape_str(waveforms.shape()));
    }
    Tensor band = conv1d_bank(waveforms, sinc.kernels());
    Tensor h = reshape(band, {band.dim(0), 1, band.dim(1), band.dim(2)});
    for (const ResidualBlock& b : blocks) h = b(h, ctx);
    return FeatureMap{h};
  }

  void collect(ParamList& out, const std::string& prefix) const {
    sinc.collect(out, join_name(prefix, "sinc"));
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, join_name(prefix, "block" + std::to_string(i)));
  }
};

}  // namespace aasist
