// SPDX-License-Identifier: Apache-2.0
//
// Core audio containers, framing and convolution.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "binsip/common.hpp"
#include "binsip/fft.hpp"

namespace binsip {

// Multi-channel sampled signal. Samples are stored channel-major, unitless
// amplitude nominally in [-1, 1].
class AudioBuffer {
 public:
  AudioBuffer() = default;
  AudioBuffer(int channels, std::int64_t length, int sample_rate)
      : channels_(channels), length_(length), sample_rate_(sample_rate),
        samples_(static_cast<std::size_t>(channels) * static_cast<std::size_t>(length), 0.0) {
    if (channels < 1) throw std::invalid_argument("AudioBuffer: channels must be >= 1");
    if (length < 1) throw std::invalid_argument("AudioBuffer: length must be >= 1");
    if (sample_rate < 1) throw std::invalid_argument("AudioBuffer: sample_rate must be >= 1");
  }

  int channels() const { return channels_; }
  std::int64_t length() const { return length_; }
  int sample_rate() const { return sample_rate_; }

  double& at(int c, std::int64_t n) {
    return samples_[static_cast<std::size_t>(c) * static_cast<std::size_t>(length_) +
                    static_cast<std::size_t>(n)];
  }
  double at(int c, std::int64_t n) const {
    return samples_[static_cast<std::size_t>(c) * static_cast<std::size_t>(length_) +
                    static_cast<std::size_t>(n)];
  }

  std::span<double> channel(int c) {
    return {samples_.data() + static_cast<std::size_t>(c) * static_cast<std::size_t>(length_),
            static_cast<std::size_t>(length_)};
  }
  std::span<const double> channel(int c) const {
    return {samples_.data() + static_cast<std::size_t>(c) * static_cast<std::size_t>(length_),
            static_cast<std::size_t>(length_)};
  }

  std::vector<double>& raw() { return samples_; }
  const std::vector<double>& raw() const { return samples_; }

  // Throws NumericError on non-finite samples. Called at ingestion points.
  void check_finite(const std::string& what) const {
    for (double v : samples_) {
      if (!std::isfinite(v)) throw NumericError(what + ": non-finite sample");
    }
  }

  AudioBuffer mono(int c) const {
    AudioBuffer out(1, length_, sample_rate_);
    auto src = channel(c);
    std::copy(src.begin(), src.end(), out.channel(0).begin());
    return out;
  }

 private:
  int channels_ = 0;
  std::int64_t length_ = 0;
  int sample_rate_ = 0;
  std::vector<double> samples_;
};

// Time-ordered stacked-channel frame vectors. Frame l covers samples
// [l*hop, l*hop + frame_length) of every channel; channel 0 occupies
// positions [0, L), channel 1 [L, 2L), and so on.
struct FrameSequence {
  std::int64_t n_frames = 0;
  std::int64_t frame_length = 0;  // L, per channel
  std::int64_t hop = 0;           // R
  int channels = 0;
  std::vector<double> frames;     // [n_frames x channels*frame_length]

  std::int64_t width() const { return static_cast<std::int64_t>(channels) * frame_length; }
  double* frame(std::int64_t l) { return frames.data() + l * width(); }
  const double* frame(std::int64_t l) const { return frames.data() + l * width(); }
};

// Splits the buffer into N = ceil(Ns/R) overlapping frames of length L,
// zero-padding past the end of the signal.
inline FrameSequence frame_signal(const AudioBuffer& buffer, std::int64_t frame_length,
                                  std::int64_t hop) {
  if (buffer.length() < 1) throw std::invalid_argument("frame_signal: empty buffer");
  if (hop < 1 || frame_length < hop)
    throw std::invalid_argument("frame_signal: requires L >= R >= 1");
  FrameSequence seq;
  seq.frame_length = frame_length;
  seq.hop = hop;
  seq.channels = buffer.channels();
  seq.n_frames = (buffer.length() + hop - 1) / hop;
  seq.frames.assign(static_cast<std::size_t>(seq.n_frames * seq.width()), 0.0);
  const std::int64_t ns = buffer.length();
  for (std::int64_t l = 0; l < seq.n_frames; ++l) {
    double* dst = seq.frame(l);
    for (int c = 0; c < seq.channels; ++c) {
      auto src = buffer.channel(c);
      const std::int64_t start = l * hop;
      const std::int64_t avail = std::max<std::int64_t>(0, std::min(frame_length, ns - start));
      for (std::int64_t j = 0; j < avail; ++j) {
        dst[c * frame_length + j] = src[static_cast<std::size_t>(start + j)];
      }
    }
  }
  return seq;
}

// Linear convolution via FFT, full length na + nb - 1.
inline std::vector<double> convolve_full(std::span<const double> a, std::span<const double> b) {
  const std::size_t out_len = a.size() + b.size() - 1;
  const std::size_t n = next_power_of_two(out_len);
  std::vector<std::complex<double>> fa(n), fb(n);
  for (std::size_t i = 0; i < a.size(); ++i) fa[i] = {a[i], 0.0};
  for (std::size_t i = 0; i < b.size(); ++i) fb[i] = {b[i], 0.0};
  fft_inplace(fa, false);
  fft_inplace(fb, false);
  for (std::size_t i = 0; i < n; ++i) fa[i] *= fb[i];
  fft_inplace(fa, true);
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = fa[i].real();
  return out;
}

// Convolves single-channel speech with a multi-channel RIR. Output channel c
// is speech * rir_c truncated to the speech length, so references and
// mixtures stay aligned sample-for-sample.
inline AudioBuffer convolve_rir(const AudioBuffer& speech, const AudioBuffer& rir) {
  if (speech.channels() != 1)
    throw std::invalid_argument("convolve_rir: speech must be single-channel");
  if (speech.sample_rate() != rir.sample_rate())
    throw std::invalid_argument("convolve_rir: sample-rate mismatch");
  if (rir.length() < 1) throw std::invalid_argument("convolve_rir: empty RIR");
  AudioBuffer out(rir.channels(), speech.length(), speech.sample_rate());
  for (int c = 0; c < rir.channels(); ++c) {
    auto full = convolve_full(speech.channel(0), rir.channel(c));
    auto dst = out.channel(c);
    std::copy(full.begin(), full.begin() + speech.length(), dst.begin());
  }
  return out;
}

inline double rms_level_db(std::span<const double> x) {
  double p = 0.0;
  for (double v : x) p += v * v;
  p /= static_cast<double>(x.size());
  return db_from_power(p);
}

}  // namespace binsip
