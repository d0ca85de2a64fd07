#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "biosep/error.hpp"

namespace biosep {

/// A mono time-domain recording. Samples are dimensionless amplitudes,
/// nominally in [-1, 1]; values outside that range are kept as-is.
class Signal {
 public:
  Signal() = default;

  Signal(std::vector<double> samples, int sample_rate_hz)
      : samples_(std::move(samples)), sample_rate_hz_(sample_rate_hz) {
    if (sample_rate_hz_ <= 0) {
      throw Error(ErrorCode::InvalidInput, "sample rate must be positive");
    }
    for (double v : samples_) {
      if (!std::isfinite(v)) throw Error(ErrorCode::InvalidInput, "non-finite sample");
    }
  }

  std::span<const double> samples() const noexcept { return samples_; }
  int sample_rate_hz() const noexcept { return sample_rate_hz_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  double duration_s() const noexcept {
    return static_cast<double>(samples_.size()) / sample_rate_hz_;
  }

  friend bool operator==(const Signal&, const Signal&) = default;

 private:
  std::vector<double> samples_;
  int sample_rate_hz_ = 1;
};

namespace detail {

inline std::uint16_t load_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t load_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void store_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

inline void store_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) {
    out.push_back(static_cast<unsigned char>((v >> shift) & 0xFF));
  }
}

inline void store_tag(std::vector<unsigned char>& out, const char (&tag)[5]) {
  out.insert(out.end(), tag, tag + 4);
}

inline bool tag_is(const unsigned char* p, const char (&tag)[5]) {
  return std::memcmp(p, tag, 4) == 0;
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

}  // namespace detail

/// Reads a mono RIFF/WAVE file holding 16-bit PCM or 32-bit IEEE float data.
/// PCM is normalized by 1/32768.
inline Signal read_wav(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw Error(ErrorCode::FileNotFound, path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileNotFound, path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());

  if (bytes.size() < 12 || !detail::tag_is(bytes.data(), "RIFF") ||
      !detail::tag_is(bytes.data() + 8, "WAVE")) {
    throw Error(ErrorCode::UnsupportedFormat, "not a RIFF/WAVE file: " + path.string());
  }

  bool have_fmt = false;
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t block_align = 0;
  std::uint16_t bits = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t size = detail::load_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (size > bytes.size() - body) {
      throw Error(ErrorCode::CorruptHeader, "chunk extends past end of file");
    }
    if (detail::tag_is(chunk, "fmt ")) {
      if (size < 16) throw Error(ErrorCode::CorruptHeader, "fmt chunk too short");
      const unsigned char* f = bytes.data() + body;
      format = detail::load_u16(f);
      channels = detail::load_u16(f + 2);
      sample_rate = detail::load_u32(f + 4);
      block_align = detail::load_u16(f + 12);
      bits = detail::load_u16(f + 14);
      if (format == detail::kFormatExtensible) {
        if (size < 40) throw Error(ErrorCode::CorruptHeader, "extensible fmt chunk too short");
        format = detail::load_u16(f + 24);  // first two bytes of the subformat GUID
      }
      have_fmt = true;
    } else if (detail::tag_is(chunk, "data")) {
      data = bytes.data() + body;
      data_size = size;
      have_data = true;
    }
    pos = body + size + (size & 1U);
  }

  if (!have_fmt || !have_data) {
    throw Error(ErrorCode::CorruptHeader, "missing fmt or data chunk");
  }
  if (channels != 1) {
    throw Error(ErrorCode::UnsupportedFormat,
                "expected 1 channel, found " + std::to_string(channels));
  }
  const bool pcm16 = format == detail::kFormatPcm && bits == 16;
  const bool float32 = format == detail::kFormatFloat && bits == 32;
  if (!pcm16 && !float32) {
    throw Error(ErrorCode::UnsupportedFormat,
                "unsupported codec " + std::to_string(format) + "/" + std::to_string(bits));
  }
  if (sample_rate == 0 || sample_rate > 0x7FFFFFFFU) {
    throw Error(ErrorCode::CorruptHeader, "invalid sample rate");
  }
  const std::size_t width = bits / 8;
  if (block_align != width || data_size % width != 0) {
    throw Error(ErrorCode::CorruptHeader, "data size inconsistent with block alignment");
  }

  std::vector<double> samples(data_size / width);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const unsigned char* p = data + i * width;
    if (pcm16) {
      samples[i] = static_cast<std::int16_t>(detail::load_u16(p)) / 32768.0;
    } else {
      samples[i] = std::bit_cast<float>(detail::load_u32(p));
    }
  }
  return Signal(std::move(samples), static_cast<int>(sample_rate));
}

/// Writes the signal as a 32-bit float mono WAV. No clipping is applied.
inline void write_wav(const std::filesystem::path& path, const Signal& signal) {
  const std::size_t frames = signal.size();
  if (frames > (0xFFFFFFFFU - 36U) / 4U) {
    throw Error(ErrorCode::IoError, "signal too long for a RIFF file");
  }
  const auto data_bytes = static_cast<std::uint32_t>(frames * 4);
  const auto rate = static_cast<std::uint32_t>(signal.sample_rate_hz());

  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  detail::store_tag(out, "RIFF");
  detail::store_u32(out, 36 + data_bytes);
  detail::store_tag(out, "WAVE");
  detail::store_tag(out, "fmt ");
  detail::store_u32(out, 16);
  detail::store_u16(out, detail::kFormatFloat);
  detail::store_u16(out, 1);
  detail::store_u32(out, rate);
  detail::store_u32(out, rate * 4);
  detail::store_u16(out, 4);
  detail::store_u16(out, 32);
  detail::store_tag(out, "data");
  detail::store_u32(out, data_bytes);
  for (double v : signal.samples()) {
    detail::store_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error(ErrorCode::IoError, "cannot open for writing: " + path.string());
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

}  // namespace biosep
