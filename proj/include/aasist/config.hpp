#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace aasist {

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : std::invalid_argument(key.empty() ? what : "config key '" + key + "': " + what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Architecture hyperparameters. Defaults are the full-size model.
struct ModelConfig {
  std::string preset = "default";

  std::size_t input_length = 64600;
  double sample_rate = 16000.0;
  std::size_t sinc_filters = 70;
  std::size_t sinc_kernel = 129;
  double sinc_min_low_hz = 1.0;
  double sinc_min_band_hz = 50.0;

  std::vector<std::size_t> channels = {32, 32, 64, 64, 64, 64};
  std::size_t time_pool = 3;

  std::size_t gat_dim = 64;
  std::size_t hs_dim = 32;
  double pool_spectral = 0.5;
  double pool_temporal = 0.7;
  double pool_hetero = 0.5;

  bool use_hetero_attention = true;
  bool use_stack_node = true;
  bool use_mgo = true;

  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  static ModelConfig full() { return {}; }

  /// Hand-set reduced-width preset (not a tuned lightweight model).
  static ModelConfig small() {
    ModelConfig c;
    c.preset = "small";
    c.channels = {16, 16, 24, 24, 24, 24};
    c.gat_dim = 24;
    c.hs_dim = 16;
    return c;
  }

  /// Small preset on a short input with few sinc filters; fast enough for
  /// finite-difference checks and overfitting runs.
  static ModelConfig debug() {
    ModelConfig c = small();
    c.preset = "debug";
    c.input_length = 2000;
    c.sinc_filters = 8;
    return c;
  }

  static ModelConfig from_preset(const std::string& name) {
    if (name == "default") return full();
    if (name == "small") return small();
    if (name == "debug") return debug();
    throw ConfigError("preset", "unknown preset '" + name + "' (expected default, small or debug)");
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Kept node count after attentive top-k pooling: max(1, floor(ratio * n)).
inline std::size_t pooled_count(std::size_t n, double ratio) {
  // The small slack absorbs representation error in products like 0.7 * 10.
  const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  return k < 1 ? 1 : k;
}

/// Sizes flowing through the model: F is (channels, spectral, temporal).
struct ShapePlan {
  std::size_t sinc_frames = 0;
  std::vector<std::size_t> block_frames;
  std::size_t channels = 0, spectral = 0, temporal = 0;
  std::size_t spectral_kept = 0, temporal_kept = 0;
  std::vector<std::size_t> combined;  // before the first HS-GAL, after each pool
};

inline void validate(const ModelConfig& c) {
  if (c.sinc_kernel % 2 == 0) throw ConfigError("sinc_kernel", "kernel length must be odd");
  if (c.sinc_kernel == 0 || c.sinc_kernel > c.input_length) throw ConfigError("sinc_kernel", "must be in [1, input_length]");
  if (c.sinc_filters == 0) throw ConfigError("sinc_filters", "must be positive");
  if (c.channels.empty()) throw ConfigError("channels", "need at least one residual block");
  for (std::size_t ch : c.channels) {
    if (ch == 0) throw ConfigError("channels", "channel counts must be positive");
  }
  if (c.time_pool == 0) throw ConfigError("time_pool", "must be positive");
  if (c.gat_dim == 0) throw ConfigError("gat_dim", "must be positive");
  if (c.hs_dim == 0) throw ConfigError("hs_dim", "must be positive");
  for (auto [key, r] : {std::pair{"pool_spectral", c.pool_spectral}, std::pair{"pool_temporal", c.pool_temporal},
                        std::pair{"pool_hetero", c.pool_hetero}}) {
    if (!(r > 0.0 && r <= 1.0)) throw ConfigError(key, "keep ratio must be in (0, 1]");
  }
  if (!(c.sample_rate > 0.0)) throw ConfigError("sample_rate", "must be positive");
  const double nyquist = c.sample_rate / 2.0;
  if (!(c.sinc_min_low_hz > 0.0) || !(c.sinc_min_band_hz > 0.0) ||
      c.sinc_min_low_hz + c.sinc_min_band_hz + 1.0 >= nyquist) {
    throw ConfigError("sinc_min_band_hz", "cutoff guards leave no room below Nyquist");
  }
  if (!(c.bn_eps > 0.0)) throw ConfigError("bn_eps", "must be positive");
  if (!(c.bn_momentum >= 0.0 && c.bn_momentum <= 1.0)) throw ConfigError("bn_momentum", "must be in [0, 1]");
}

inline ShapePlan plan_shapes(const ModelConfig& c) {
  validate(c);
  ShapePlan p;
  p.sinc_frames = c.input_length - c.sinc_kernel + 1;
  std::size_t t = p.sinc_frames;
  for (std::size_t i = 0; i < c.channels.size(); ++i) {
    t /= c.time_pool;
    if (t == 0) throw ConfigError("input_length", "input too short for " + std::to_string(c.channels.size()) + " time poolings");
    p.block_frames.push_back(t);
  }
  p.channels = c.channels.back();
  p.spectral = c.sinc_filters;
  p.temporal = t;
  p.spectral_kept = pooled_count(p.spectral, c.pool_spectral);
  p.temporal_kept = pooled_count(p.temporal, c.pool_temporal);
  std::size_t n = p.spectral_kept + p.temporal_kept;
  p.combined.push_back(n);
  for (int i = 0; i < 2; ++i) {
    n = pooled_count(n, c.pool_hetero);
    p.combined.push_back(n);
  }
  return p;
}

/// Optimization and data settings for one training run.
struct TrainConfig {
  std::optional<std::uint64_t> seed;
  double lr = 1e-4;
  double lr_min = 0.0;
  std::size_t steps = 200;
  std::size_t batch_size = 8;
  std::size_t samples_per_class = 16;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  bool operator==(const TrainConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  bool operator==(const RunConfig&) const = default;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true/false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, trim(item)));
  if (out.empty()) throw ConfigError(key, "expected a comma-separated list");
  return out;
}

inline std::string format_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace detail

/// Parses `key = value` lines (with `#` comments). The preset is applied first,
/// then every other key overrides it; unknown or repeated keys are errors.
inline RunConfig parse_config(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("", "line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = detail::trim(std::string_view(t).substr(0, eq));
    std::string value = detail::trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw ConfigError("", "line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second) throw ConfigError(key, "repeated");
  }

  RunConfig rc;
  if (auto it = kv.find("preset"); it != kv.end()) {
    rc.model = ModelConfig::from_preset(it->second);
    kv.erase(it);
  }
  ModelConfig& m = rc.model;
  TrainConfig& tr = rc.train;
  using detail::parse_bool, detail::parse_double, detail::parse_uint;
  for (const auto& [key, v] : kv) {
    if (key == "input_length") m.input_length = parse_uint(key, v);
    else if (key == "sample_rate") m.sample_rate = parse_double(key, v);
    else if (key == "sinc_filters") m.sinc_filters = parse_uint(key, v);
    else if (key == "sinc_kernel") m.sinc_kernel = parse_uint(key, v);
    else if (key == "sinc_min_low_hz") m.sinc_min_low_hz = parse_double(key, v);
    else if (key == "sinc_min_band_hz") m.sinc_min_band_hz = parse_double(key, v);
    else if (key == "channels") m.channels = detail::parse_list(key, v);
    else if (key == "time_pool") m.time_pool = parse_uint(key, v);
    else if (key == "gat_dim") m.gat_dim = parse_uint(key, v);
    else if (key == "hs_dim") m.hs_dim = parse_uint(key, v);
    else if (key == "pool_spectral") m.pool_spectral = parse_double(key, v);
    else if (key == "pool_temporal") m.pool_temporal = parse_double(key, v);
    else if (key == "pool_hetero") m.pool_hetero = parse_double(key, v);
    else if (key == "use_hetero_attention") m.use_hetero_attention = parse_bool(key, v);
    else if (key == "use_stack_node") m.use_stack_node = parse_bool(key, v);
    else if (key == "use_mgo") m.use_mgo = parse_bool(key, v);
    else if (key == "bn_momentum") m.bn_momentum = parse_double(key, v);
    else if (key == "bn_eps") m.bn_eps = parse_double(key, v);
    else if (key == "seed") tr.seed = parse_uint(key, v);
    else if (key == "lr") tr.lr = parse_double(key, v);
    else if (key == "lr_min") tr.lr_min = parse_double(key, v);
    else if (key == "steps") tr.steps = parse_uint(key, v);
    else if (key == "batch_size") tr.batch_size = parse_uint(key, v);
    else if (key == "samples_per_class") tr.samples_per_class = parse_uint(key, v);
    else if (key == "adam_beta1") tr.adam_beta1 = parse_double(key, v);
    else if (key == "adam_beta2") tr.adam_beta2 = parse_double(key, v);
    else if (key == "adam_eps") tr.adam_eps = parse_double(key, v);
    else throw ConfigError(key, "unknown key");
  }
  validate(m);
  if (tr.batch_size == 0) throw ConfigError("batch_size", "must be positive");
  if (tr.samples_per_class == 0) throw ConfigError("samples_per_class", "must be positive");
  if (tr.steps == 0) throw ConfigError("steps", "must be positive");
  return rc;
}

/// Canonical text form; parse_config(format_config(c)) == c.
inline std::string format_config(const RunConfig& rc) {
  const ModelConfig& m = rc.model;
  const TrainConfig& t = rc.train;
  using detail::format_double;
  auto b = [](bool v) { return v ? "true" : "false"; };
  std::ostringstream os;
  os << "preset = " << m.preset << "\n"
     << "input_length = " << m.input_length << "\n"
     << "sample_rate = " << format_double(m.sample_rate) << "\n"
     << "sinc_filters = " << m.sinc_filters << "\n"
     << "sinc_kernel = " << m.sinc_kernel << "\n"
     << "sinc_min_low_hz = " << format_double(m.sinc_min_low_hz) << "\n"
     << "sinc_min_band_hz = " << format_double(m.sinc_min_band_hz) << "\n"
     << "channels = " << detail::format_list(m.channels) << "\n"
     << "time_pool = " << m.time_pool << "\n"
     << "gat_dim = " << m.gat_dim << "\n"
     << "hs_dim = " << m.hs_dim << "\n"
     << "pool_spectral = " << format_double(m.pool_spectral) << "\n"
     << "pool_temporal = " << format_double(m.pool_temporal) << "\n"
     << "pool_hetero = " << format_double(m.pool_hetero) << "\n"
     << "use_hetero_attention = " << b(m.use_hetero_attention) << "\n"
     << "use_stack_node = " << b(m.use_stack_node) << "\n"
     << "use_mgo = " << b(m.use_mgo) << "\n"
     << "bn_momentum = " << format_double(m.bn_momentum) << "\n"
     << "bn_eps = " << format_double(m.bn_eps) << "\n";
  if (t.seed) os << "seed = " << *t.seed << "\n";
  os << "lr = " << format_double(t.lr) << "\n"
     << "lr_min = " << format_double(t.lr_min) << "\n"
     << "steps = " << t.steps << "\n"
     << "batch_size = " << t.batch_size << "\n"
     << "samples_per_class = " << t.samples_per_class << "\n"
     << "adam_beta1 = " << format_double(t.adam_beta1) << "\n"
     << "adam_beta2 = " << format_double(t.adam_beta2) << "\n"
     << "adam_eps = " << format_double(t.adam_eps) << "\n";
  return os.str();
}

}  // namespace aasist
