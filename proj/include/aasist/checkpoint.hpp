#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "aasist/config.hpp"
#include "aasist/model.hpp"

namespace aasist {

enum class CheckpointErrc {
  kIo,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kBadDType,
  kTrailingBytes,
  kConfig,
  kUnknownKey,
  kMissingKey,
  kShapeMismatch,
};

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrc code, const std::string& what) : std::runtime_error("checkpoint: " + what), code_(code) {}
  CheckpointErrc code() const { return code_; }

 private:
  CheckpointErrc code_;
};

enum class DType : std::uint8_t { kF64 = 0, kF32 = 1 };

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  DType dtype = DType::kF64;
  Shape shape;
  std::vector<double> values;  // widened to double when stored as f32
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::vector<CheckpointEntry> entries;
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  }
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(le<std::uint8_t>()); }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void need(std::uint64_t n) const {
    if (n > b_.size() - pos_) throw CheckpointError(CheckpointErrc::kTruncated, "unexpected end of data");
  }
  std::size_t remaining() const { return b_.size() - pos_; }
  std::span<const std::uint8_t> peek(std::size_t n) const { return b_.subspan(pos_, n); }

 private:
  template <typename T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.bytes("AASF");
  w.u32(c.version);
  w.str(c.config_text);
  w.u32(static_cast<std::uint32_t>(c.entries.size()));
  for (const CheckpointEntry& e : c.entries) {
    if (shape_size(e.shape) != e.values.size()) {
      throw CheckpointError(CheckpointErrc::kShapeMismatch, "entry " + e.name + " has inconsistent shape");
    }
    w.str(e.name);
    w.u8(static_cast<std::uint8_t>(e.dtype));
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) w.u64(d);
    for (double v : e.values) {
      if (e.dtype == DType::kF64) w.u64(std::bit_cast<std::uint64_t>(v));
      else w.u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return w.take();
}

inline Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  r.need(4);
  const auto magic = r.peek(4);
  if (!(magic[0] == 'A' && magic[1] == 'A' && magic[2] == 'S' && magic[3] == 'F')) {
    throw CheckpointError(CheckpointErrc::kBadMagic, "missing AASF magic");
  }
  r.u32();
  Checkpoint c;
  c.version = r.u32();
  if (c.version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrc::kVersionMismatch, "format version " + std::to_string(c.version) +
                                                                ", expected " + std::to_string(kCheckpointVersion));
  }
  c.config_text = r.str();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.str();
    const std::uint8_t dt = r.u8();
    if (dt > 1) throw CheckpointError(CheckpointErrc::kBadDType, "entry " + e.name + ": unknown dtype " + std::to_string(dt));
    e.dtype = static_cast<DType>(dt);
    const std::uint32_t ndim = r.u32();
    r.need(static_cast<std::uint64_t>(ndim) * 8);
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const std::uint64_t dim = r.u64();
      e.shape.push_back(static_cast<std::size_t>(dim));
      if (dim != 0 && n > r.remaining() / dim) throw CheckpointError(CheckpointErrc::kTruncated, "entry " + e.name + " too large");
      n *= dim;
    }
    const std::uint64_t width = e.dtype == DType::kF64 ? 8 : 4;
    r.need(n * width);
    e.values.resize(static_cast<std::size_t>(n));
    for (auto& v : e.values) {
      v = e.dtype == DType::kF64 ? std::bit_cast<double>(r.u64()) : static_cast<double>(std::bit_cast<float>(r.u32()));
    }
    c.entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw CheckpointError(CheckpointErrc::kTrailingBytes, "trailing bytes after last entry");
  return c;
}

/// Snapshot of every parameter and batchnorm statistic plus the run config.
inline Checkpoint make_checkpoint(const Model& m, const RunConfig& rc, DType dtype = DType::kF64) {
  Checkpoint c;
  c.config_text = format_config(rc);
  for (const NamedTensor& p : m.parameters()) {
    c.entries.push_back({p.name, dtype, p.tensor.shape(), p.tensor.values()});
  }
  return c;
}

/// Copies checkpoint values into the model's tensors. Every model tensor must
/// be present with the same shape, and no extra names are allowed.
inline void load_parameters(Model& m, const Checkpoint& c) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const CheckpointEntry& e : c.entries) {
    if (!by_name.emplace(e.name, &e).second) throw CheckpointError(CheckpointErrc::kUnknownKey, "duplicate key " + e.name);
  }
  ParamList params = m.parameters();
  for (const NamedTensor& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError(CheckpointErrc::kMissingKey, "missing key " + p.name);
    if (it->second->shape != p.tensor.shape()) {
      throw CheckpointError(CheckpointErrc::kShapeMismatch, "key " + p.name + " has shape " +
                                                                shape_str(it->second->shape) + ", model expects " +
                                                                shape_str(p.tensor.shape()));
    }
  }
  if (by_name.size() != params.size()) {
    for (const auto& [name, e] : by_name) {
      bool known = false;
      for (const NamedTensor& p : params) known = known || p.name == name;
      if (!known) throw CheckpointError(CheckpointErrc::kUnknownKey, "unknown key " + name);
    }
  }
  for (NamedTensor& p : params) {
    const auto& src = by_name.at(p.name)->values;
    std::copy(src.begin(), src.end(), p.tensor.mutable_data().begin());
  }
}

inline RunConfig checkpoint_config(const Checkpoint& c) {
  try {
    return parse_config(c.config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointErrc::kConfig, std::string("stored config is invalid: ") + e.what());
  }
}

/// Rebuilds a model from the stored config and loads its values.
inline Model model_from_checkpoint(const Checkpoint& c) {
  Model m = Model::init(checkpoint_config(c).model, 0);
  load_parameters(m, c);
  return m;
}

inline void save_checkpoint(const Model& m, const RunConfig& rc, const std::filesystem::path& path,
                            DType dtype = DType::kF64) {
  const auto bytes = serialize_checkpoint(make_checkpoint(m, rc, dtype));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(CheckpointErrc::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrc::kIo, "write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrc::kIo, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace aasist
