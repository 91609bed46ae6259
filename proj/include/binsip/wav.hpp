// SPDX-License-Identifier: Apache-2.0
//
// RIFF WAV reader/writer: 16-bit PCM and 32-bit IEEE float, little-endian.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "binsip/audio.hpp"
#include "binsip/common.hpp"

namespace binsip {

enum class WavFormat { Int16, Float32 };

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "WAV I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t off) {
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  return v;
}

}  // namespace detail

// Reads a WAV file. If require_rate > 0, rejects files at any other sample
// rate (the pipeline runs at 16 kHz end to end).
inline AudioBuffer read_wav(const std::filesystem::path& path, int require_rate = 0) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("read_wav: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
    throw DataError("read_wav: malformed header in " + path.string());

  std::uint16_t format_tag = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t data_off = 0, data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::uint32_t size = detail::get<std::uint32_t>(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size())
      throw DataError("read_wav: truncated chunk in " + path.string());
    if (id == "fmt ") {
      if (size < 16) throw DataError("read_wav: malformed fmt chunk in " + path.string());
      format_tag = detail::get<std::uint16_t>(bytes, body);
      channels = detail::get<std::uint16_t>(bytes, body + 2);
      rate = detail::get<std::uint32_t>(bytes, body + 4);
      bits = detail::get<std::uint16_t>(bytes, body + 14);
      have_fmt = true;
    } else if (id == "data") {
      data_off = body;
      data_len = size;
    }
    pos = body + size + (size & 1);  // chunks are word-aligned
  }
  if (!have_fmt || data_off == 0)
    throw DataError("read_wav: missing fmt or data chunk in " + path.string());
  if (channels < 1) throw DataError("read_wav: zero channels in " + path.string());
  if (require_rate > 0 && rate != static_cast<std::uint32_t>(require_rate))
    throw DataError("read_wav: unsupported sample rate " + std::to_string(rate) + " in " +
                    path.string() + " (pipeline requires " + std::to_string(require_rate) + ")");

  const bool pcm16 = format_tag == 1 && bits == 16;
  const bool f32 = format_tag == 3 && bits == 32;
  if (!pcm16 && !f32)
    throw DataError("read_wav: unsupported encoding (format " + std::to_string(format_tag) +
                    ", " + std::to_string(bits) + " bit) in " + path.string());

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t n_values = data_len / bytes_per_sample;
  const std::size_t n_frames = n_values / channels;
  if (n_frames == 0) throw DataError("read_wav: empty data chunk in " + path.string());

  AudioBuffer buf(channels, static_cast<std::int64_t>(n_frames), static_cast<int>(rate));
  for (std::size_t i = 0; i < n_frames; ++i) {
    for (std::uint16_t c = 0; c < channels; ++c) {
      const std::size_t off = data_off + (i * channels + c) * bytes_per_sample;
      double v;
      if (pcm16) {
        v = static_cast<double>(detail::get<std::int16_t>(bytes, off)) / 32767.0;
      } else {
        v = static_cast<double>(detail::get<float>(bytes, off));
      }
      buf.at(c, static_cast<std::int64_t>(i)) = v;
    }
  }
  buf.check_finite("read_wav(" + path.string() + ")");
  return buf;
}

inline void write_wav(const std::filesystem::path& path, const AudioBuffer& buffer,
                      WavFormat format = WavFormat::Float32) {
  const int channels = buffer.channels();
  const std::size_t n_frames = static_cast<std::size_t>(buffer.length());
  const std::uint16_t bits = format == WavFormat::Int16 ? 16 : 32;
  const std::uint16_t tag = format == WavFormat::Int16 ? 1 : 3;
  const std::uint32_t byte_rate =
      static_cast<std::uint32_t>(buffer.sample_rate()) * channels * bits / 8;
  const std::uint32_t data_size =
      static_cast<std::uint32_t>(n_frames * channels * (bits / 8));

  std::string out;
  out.reserve(44 + data_size);
  out.append("RIFF");
  detail::put<std::uint32_t>(out, 36 + data_size);
  out.append("WAVE");
  out.append("fmt ");
  detail::put<std::uint32_t>(out, 16);
  detail::put<std::uint16_t>(out, tag);
  detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(channels));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(buffer.sample_rate()));
  detail::put<std::uint32_t>(out, byte_rate);
  detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(channels * bits / 8));
  detail::put<std::uint16_t>(out, bits);
  out.append("data");
  detail::put<std::uint32_t>(out, data_size);

  for (std::size_t i = 0; i < n_frames; ++i) {
    for (int c = 0; c < channels; ++c) {
      const double v = buffer.at(c, static_cast<std::int64_t>(i));
      if (format == WavFormat::Int16) {
        const double clamped = std::max(-1.0, std::min(1.0, v));
        detail::put<std::int16_t>(out, static_cast<std::int16_t>(std::lround(clamped * 32767.0)));
      } else {
        detail::put<float>(out, static_cast<float>(v));
      }
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("write_wav: cannot open " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write_wav: write failed for " + path.string());
}

}  // namespace binsip
