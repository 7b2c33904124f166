#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace aasist {

enum class WavErrc {
  kIo,
  kTooShort,
  kNotRiff,
  kNotWave,
  kBadChunk,
  kMissingFmt,
  kBadFmt,
  kUnsupportedEncoding,
  kUnsupportedChannels,
  kUnsupportedBitDepth,
  kMissingData,
  kTruncatedData,
};

inline const char* to_string(WavErrc e) {
  switch (e) {
    case WavErrc::kIo: return "io error";
    case WavErrc::kTooShort: return "file too short for a RIFF header";
    case WavErrc::kNotRiff: return "missing RIFF signature";
    case WavErrc::kNotWave: return "RIFF form is not WAVE";
    case WavErrc::kBadChunk: return "chunk extends past end of file";
    case WavErrc::kMissingFmt: return "no fmt chunk";
    case WavErrc::kBadFmt: return "malformed fmt chunk";
    case WavErrc::kUnsupportedEncoding: return "unsupported encoding (PCM only)";
    case WavErrc::kUnsupportedChannels: return "unsupported channel count (mono only)";
    case WavErrc::kUnsupportedBitDepth: return "unsupported bit depth (16-bit only)";
    case WavErrc::kMissingData: return "no data chunk";
    case WavErrc::kTruncatedData: return "data chunk truncated";
  }
  return "unknown wav error";
}

class WavError : public std::runtime_error {
 public:
  WavError(WavErrc code, const std::string& detail = {})
      : std::runtime_error(std::string("wav: ") + to_string(code) + (detail.empty() ? "" : " (" + detail + ")")),
        code_(code) {}
  WavErrc code() const { return code_; }

 private:
  WavErrc code_;
};

/// Mono samples in [-1, 1); int16 value v maps to v / 32768.
struct Waveform {
  std::vector<double> samples;
  std::uint32_t sample_rate = 16000;
};

namespace detail {

inline std::uint16_t le16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

inline std::uint32_t le32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

inline bool tag_is(std::span<const std::uint8_t> b, std::size_t at, const char* tag) {
  return std::equal(tag, tag + 4, b.begin() + static_cast<std::ptrdiff_t>(at),
                    [](char c, std::uint8_t x) { return static_cast<std::uint8_t>(c) == x; });
}

inline void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WavError(WavErrc::kIo, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace detail

/// Decodes a RIFF/WAVE PCM16 mono file held in memory. Chunk bodies are only
/// read within their declared sizes, and those sizes are checked against the
/// bytes actually present.
inline Waveform parse_wav(std::span<const std::uint8_t> bytes) {
  using detail::le16, detail::le32, detail::tag_is;
  if (bytes.size() < 12) throw WavError(WavErrc::kTooShort);
  if (!tag_is(bytes, 0, "RIFF")) throw WavError(WavErrc::kNotRiff);
  if (!tag_is(bytes, 8, "WAVE")) throw WavError(WavErrc::kNotWave);
  const std::uint64_t declared_end = static_cast<std::uint64_t>(le32(bytes, 4)) + 8;
  const std::size_t end = static_cast<std::size_t>(std::min<std::uint64_t>(declared_end, bytes.size()));

  bool have_fmt = false, have_data = false;
  std::uint32_t rate = 0;
  std::size_t data_at = 0, data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= end) {
    const std::size_t body = pos + 8;
    const std::uint32_t size = le32(bytes, pos + 4);
    const bool is_data = tag_is(bytes, pos, "data");
    if (static_cast<std::uint64_t>(size) > end - body) {
      if (is_data) throw WavError(WavErrc::kTruncatedData, std::to_string(size) + " bytes declared, " +
                                                               std::to_string(end - body) + " present");
      throw WavError(WavErrc::kBadChunk);
    }
    if (tag_is(bytes, pos, "fmt ")) {
      if (have_fmt) throw WavError(WavErrc::kBadFmt, "duplicate fmt chunk");
      if (size < 16) throw WavError(WavErrc::kBadFmt, "fmt chunk of " + std::to_string(size) + " bytes");
      std::uint16_t format = le16(bytes, body);
      const std::uint16_t channels = le16(bytes, body + 2);
      rate = le32(bytes, body + 4);
      const std::uint16_t align = le16(bytes, body + 12);
      const std::uint16_t bits = le16(bytes, body + 14);
      if (format == 0xFFFE) {
        if (size < 40) throw WavError(WavErrc::kBadFmt, "short extensible fmt");
        format = le16(bytes, body + 24);  // sub-format GUID starts with the format tag
      }
      if (format != 1) throw WavError(WavErrc::kUnsupportedEncoding, "format tag " + std::to_string(format));
      if (channels != 1) throw WavError(WavErrc::kUnsupportedChannels, std::to_string(channels) + " channels");
      if (bits != 16) throw WavError(WavErrc::kUnsupportedBitDepth, std::to_string(bits) + " bits");
      if (align != 2) throw WavError(WavErrc::kBadFmt, "block align " + std::to_string(align));
      if (rate == 0) throw WavError(WavErrc::kBadFmt, "zero sample rate");
      have_fmt = true;
    } else if (is_data) {
      if (have_data) throw WavError(WavErrc::kBadChunk, "duplicate data chunk");
      if (size % 2 != 0) throw WavError(WavErrc::kTruncatedData, "odd byte count in 16-bit data");
      data_at = body;
      data_len = size;
      have_data = true;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw WavError(WavErrc::kMissingFmt);
  if (!have_data) throw WavError(WavErrc::kMissingData);

  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(data_len / 2);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const auto v = static_cast<std::int16_t>(le16(bytes, data_at + 2 * i));
    w.samples[i] = static_cast<double>(v) / 32768.0;
  }
  return w;
}

inline Waveform read_wav(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  return parse_wav(bytes);
}

/// PCM16 mono encoding; samples are rounded and clipped to the int16 range.
inline std::vector<std::uint8_t> encode_wav(const Waveform& w) {
  std::vector<std::uint8_t> out;
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::put32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put32(out, 16);
  detail::put16(out, 1);
  detail::put16(out, 1);
  detail::put32(out, w.sample_rate);
  detail::put32(out, w.sample_rate * 2);
  detail::put16(out, 2);
  detail::put16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::put32(out, data_bytes);
  for (double s : w.samples) {
    const double q = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    detail::put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out;
}

inline void write_wav(const std::filesystem::path& path, const Waveform& w) {
  const auto bytes = encode_wav(w);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw WavError(WavErrc::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Fixed-length conditioning: longer inputs are cut from the start, shorter
/// ones are repeated end to end and then cut.
inline std::vector<double> crop_or_tile(std::span<const double> samples, std::size_t target = 64600) {
  if (samples.empty()) throw std::invalid_argument("crop_or_tile: empty waveform");
  std::vector<double> out(target);
  for (std::size_t i = 0; i < target; ++i) out[i] = samples[i % samples.size()];
  return out;
}

}  // namespace aasist
