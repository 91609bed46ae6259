// SPDX-License-Identifier: Apache-2.0
//
// STFT, mel filterbank and log-mel benchmark features with deltas.

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "binsip/audio.hpp"
#include "binsip/common.hpp"
#include "binsip/fft.hpp"

namespace binsip {

enum class MelMode { Single, Concat };

struct MelFeatures {
  std::int64_t n_frames = 0;
  std::int64_t n_coeffs = 0;
  std::vector<double> features;  // [n_frames x n_coeffs]

  double* frame(std::int64_t l) { return features.data() + l * n_coeffs; }
  const double* frame(std::int64_t l) const { return features.data() + l * n_coeffs; }
};

// Periodic Hann window (exact COLA at 50% overlap).
inline std::vector<double> hann_window(std::int64_t n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    w[static_cast<std::size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                             static_cast<double>(n));
  }
  return w;
}

// Magnitude STFT over complete frames only: frames that would run past the
// end of the signal are dropped, so a constant signal yields identical
// columns. Returns [n_frames x (fft_size/2 + 1)].
struct Spectrogram {
  std::int64_t n_frames = 0;
  std::int64_t n_bins = 0;
  std::vector<double> mag;  // [n_frames x n_bins]

  double* frame(std::int64_t l) { return mag.data() + l * n_bins; }
  const double* frame(std::int64_t l) const { return mag.data() + l * n_bins; }
};

inline Spectrogram stft_magnitude(std::span<const double> x, std::int64_t win_length,
                                  std::int64_t hop, std::int64_t fft_size) {
  if (static_cast<std::int64_t>(x.size()) < win_length)
    throw std::invalid_argument("stft_magnitude: signal shorter than one window");
  if (fft_size < win_length)
    throw std::invalid_argument("stft_magnitude: fft_size < window length");
  Spectrogram spec;
  spec.n_frames = (static_cast<std::int64_t>(x.size()) - win_length) / hop + 1;
  spec.n_bins = fft_size / 2 + 1;
  spec.mag.assign(static_cast<std::size_t>(spec.n_frames * spec.n_bins), 0.0);
  const auto window = hann_window(win_length);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(fft_size));
  for (std::int64_t l = 0; l < spec.n_frames; ++l) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    const std::int64_t start = l * hop;
    for (std::int64_t j = 0; j < win_length; ++j) {
      buf[static_cast<std::size_t>(j)] = {
          x[static_cast<std::size_t>(start + j)] * window[static_cast<std::size_t>(j)], 0.0};
    }
    fft_inplace(buf, false);
    double* out = spec.frame(l);
    for (std::int64_t k = 0; k < spec.n_bins; ++k)
      out[k] = std::abs(buf[static_cast<std::size_t>(k)]);
  }
  return spec;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular mel filterbank, rows [n_mels x n_bins].
inline std::vector<double> mel_filterbank(int n_mels, std::int64_t fft_size, int sample_rate,
                                          double f_lo, double f_hi) {
  const std::int64_t n_bins = fft_size / 2 + 1;
  std::vector<double> fb(static_cast<std::size_t>(n_mels) * static_cast<std::size_t>(n_bins), 0.0);
  const double m_lo = hz_to_mel(f_lo);
  const double m_hi = hz_to_mel(f_hi);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[static_cast<std::size_t>(i)] =
        mel_to_hz(m_lo + (m_hi - m_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  for (int m = 0; m < n_mels; ++m) {
    const double f0 = edges[static_cast<std::size_t>(m)];
    const double f1 = edges[static_cast<std::size_t>(m) + 1];
    const double f2 = edges[static_cast<std::size_t>(m) + 2];
    for (std::int64_t k = 0; k < n_bins; ++k) {
      const double fk = static_cast<double>(k) * sample_rate / static_cast<double>(fft_size);
      double w = 0.0;
      if (fk > f0 && fk < f1) {
        w = (fk - f0) / (f1 - f0);
      } else if (fk >= f1 && fk < f2) {
        w = (f2 - fk) / (f2 - f1);
      }
      fb[static_cast<std::size_t>(m) * static_cast<std::size_t>(n_bins) +
         static_cast<std::size_t>(k)] = w;
    }
  }
  return fb;
}

namespace detail {

// Regression deltas over +/- width frames with edge replication, the usual
// d_t = sum_n n (c_{t+n} - c_{t-n}) / (2 sum_n n^2).
inline std::vector<double> deltas(const std::vector<double>& x, std::int64_t n_frames,
                                  std::int64_t n_coeffs, int width) {
  std::vector<double> out(x.size(), 0.0);
  double denom = 0.0;
  for (int n = 1; n <= width; ++n) denom += 2.0 * n * n;
  auto clamp_frame = [n_frames](std::int64_t t) {
    return std::max<std::int64_t>(0, std::min(n_frames - 1, t));
  };
  for (std::int64_t t = 0; t < n_frames; ++t) {
    for (std::int64_t j = 0; j < n_coeffs; ++j) {
      double acc = 0.0;
      for (int n = 1; n <= width; ++n) {
        const double fwd = x[static_cast<std::size_t>(clamp_frame(t + n) * n_coeffs + j)];
        const double bwd = x[static_cast<std::size_t>(clamp_frame(t - n) * n_coeffs + j)];
        acc += n * (fwd - bwd);
      }
      out[static_cast<std::size_t>(t * n_coeffs + j)] = acc / denom;
    }
  }
  return out;
}

inline std::vector<double> log_mel_channel(std::span<const double> x, int sample_rate,
                                           std::int64_t& n_frames_out) {
  constexpr int kMels = 40;
  constexpr std::int64_t kFft = 512;
  const std::int64_t win = sample_rate * 25 / 1000;  // 25 ms
  const std::int64_t hop = sample_rate * 10 / 1000;  // 10 ms
  const auto spec = stft_magnitude(x, win, hop, kFft);
  const auto fb = mel_filterbank(kMels, kFft, sample_rate, 0.0, sample_rate / 2.0);
  std::vector<double> mel(static_cast<std::size_t>(spec.n_frames) * kMels, 0.0);
  for (std::int64_t l = 0; l < spec.n_frames; ++l) {
    const double* s = spec.frame(l);
    for (int m = 0; m < kMels; ++m) {
      double acc = 0.0;
      const double* row = fb.data() + static_cast<std::size_t>(m) * static_cast<std::size_t>(spec.n_bins);
      for (std::int64_t k = 0; k < spec.n_bins; ++k) acc += row[k] * s[k];
      mel[static_cast<std::size_t>(l * kMels + m)] = std::log(acc + 1e-10);
    }
  }
  n_frames_out = spec.n_frames;
  return mel;
}

}  // namespace detail

// Log-mel benchmark features: 40 mels, FFT 512, 25 ms / 10 ms, plus delta and
// double-delta (regression window +/-2). Single uses channel 0 (120 coeffs per
// frame); Concat stacks both channels of a binaural buffer (240 coeffs).
inline MelFeatures mel_features(const AudioBuffer& buffer, MelMode mode) {
  if (buffer.sample_rate() != kPipelineSampleRate)
    throw DataError("mel_features: requires 16 kHz input");
  if (mode == MelMode::Concat && buffer.channels() != 2)
    throw std::invalid_argument("mel_features: concat mode requires 2 channels");

  const int n_channels = mode == MelMode::Concat ? 2 : 1;
  constexpr std::int64_t kMels = 40;
  MelFeatures out;
  out.n_coeffs = 3 * kMels * n_channels;

  std::vector<std::vector<double>> per_channel(static_cast<std::size_t>(n_channels));
  std::int64_t n_frames = 0;
  for (int c = 0; c < n_channels; ++c) {
    std::vector<double> mel = detail::log_mel_channel(buffer.channel(c), buffer.sample_rate(), n_frames);
    const auto d1 = detail::deltas(mel, n_frames, kMels, 2);
    const auto d2 = detail::deltas(d1, n_frames, kMels, 2);
    std::vector<double> full(static_cast<std::size_t>(n_frames) * 3 * kMels);
    for (std::int64_t l = 0; l < n_frames; ++l) {
      for (std::int64_t m = 0; m < kMels; ++m) {
        full[static_cast<std::size_t>(l * 3 * kMels + m)] = mel[static_cast<std::size_t>(l * kMels + m)];
        full[static_cast<std::size_t>(l * 3 * kMels + kMels + m)] = d1[static_cast<std::size_t>(l * kMels + m)];
        full[static_cast<std::size_t>(l * 3 * kMels + 2 * kMels + m)] = d2[static_cast<std::size_t>(l * kMels + m)];
      }
    }
    per_channel[static_cast<std::size_t>(c)] = std::move(full);
  }

  out.n_frames = n_frames;
  out.features.assign(static_cast<std::size_t>(n_frames * out.n_coeffs), 0.0);
  const std::int64_t per = 3 * kMels;
  for (std::int64_t l = 0; l < n_frames; ++l) {
    for (int c = 0; c < n_channels; ++c) {
      const double* src = per_channel[static_cast<std::size_t>(c)].data() + l * per;
      double* dst = out.frame(l) + c * per;
      std::copy(src, src + per, dst);
    }
  }
  return out;
}

}  // namespace binsip
