// SPDX-License-Identifier: Apache-2.0
//
// Spherically isotropic two-channel noise synthesis: per-frequency Cholesky
// mixing of two independent sources toward the coherence target
// Gamma(f) = sinc(2 pi f d / c), realized with Hann overlap-add.

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "binsip/audio.hpp"
#include "binsip/common.hpp"
#include "binsip/fft.hpp"
#include "binsip/mel.hpp"

namespace binsip {

struct NoiseFieldSpec {
  double mic_distance = 0.17;     // m
  double speed_of_sound = 343.0;  // m/s
  std::int64_t fft_size = 1024;   // mixing frame, power of two

  void validate() const {
    if (!(mic_distance > 0.0))
      throw std::invalid_argument("NoiseFieldSpec: mic_distance must be > 0");
    if (!(speed_of_sound > 0.0))
      throw std::invalid_argument("NoiseFieldSpec: speed_of_sound must be > 0");
    if (!is_power_of_two(static_cast<std::size_t>(fft_size)))
      throw std::invalid_argument("NoiseFieldSpec: fft_size must be a power of two");
  }
};

// Target inter-channel coherence of a spherically isotropic field,
// sinc x = sin x / x.
inline double isotropic_coherence(double freq_hz, const NoiseFieldSpec& spec) {
  const double x = 2.0 * std::numbers::pi * freq_hz * spec.mic_distance / spec.speed_of_sound;
  if (x == 0.0) return 1.0;
  return std::sin(x) / x;
}

// Mixes two equal-length mono sources into a 2-channel buffer whose
// inter-channel coherence approximates the isotropic target. Channel 0 keeps
// source 0; channel 1 blends both with unit-norm rows, preserving per-channel
// long-term spectra of equal-spectrum sources.
inline AudioBuffer gen_isotropic_noise(const AudioBuffer& src0, const AudioBuffer& src1,
                                       const NoiseFieldSpec& spec) {
  spec.validate();
  if (src0.channels() != 1 || src1.channels() != 1)
    throw std::invalid_argument("gen_isotropic_noise: sources must be mono");
  if (src0.length() != src1.length())
    throw std::invalid_argument("gen_isotropic_noise: source length mismatch");
  if (src0.sample_rate() != src1.sample_rate())
    throw std::invalid_argument("gen_isotropic_noise: sample-rate mismatch");

  const std::int64_t n = src0.length();
  const std::int64_t fft = spec.fft_size;
  const std::int64_t hop = fft / 2;
  const double fs = static_cast<double>(src0.sample_rate());
  const auto window = hann_window(fft);

  // Cholesky factor of [[1, g], [g, 1]]: row0 = [1, 0], row1 = [g, sqrt(1-g^2)].
  const std::int64_t n_bins = fft / 2 + 1;
  std::vector<double> coh(static_cast<std::size_t>(n_bins));
  for (std::int64_t k = 0; k < n_bins; ++k) {
    const double f = static_cast<double>(k) * fs / static_cast<double>(fft);
    const double g = isotropic_coherence(f, spec);
    if (std::abs(g) > 1.0 + 1e-12)
      throw NumericError("gen_isotropic_noise: coherence magnitude exceeds 1");
    coh[static_cast<std::size_t>(k)] = std::min(1.0, std::max(-1.0, g));
  }

  // Pad one hop each side so the Hann overlap-add sums to unity over the
  // whole output range.
  const std::int64_t padded = n + 2 * hop;
  const std::int64_t n_frames = (padded - fft + hop - 1) / hop + 1;
  AudioBuffer out(2, n, src0.sample_rate());

  std::vector<std::complex<double>> s0(static_cast<std::size_t>(fft));
  std::vector<std::complex<double>> s1(static_cast<std::size_t>(fft));
  std::vector<double> acc1(static_cast<std::size_t>((n_frames - 1) * hop + fft), 0.0);
  auto in0 = src0.channel(0);
  auto in1 = src1.channel(0);
  auto sample_at = [&](std::span<const double> s, std::int64_t idx) -> double {
    const std::int64_t i = idx - hop;  // remove leading pad
    if (i < 0 || i >= n) return 0.0;
    return s[static_cast<std::size_t>(i)];
  };

  for (std::int64_t l = 0; l < n_frames; ++l) {
    const std::int64_t start = l * hop;
    for (std::int64_t j = 0; j < fft; ++j) {
      const double w = window[static_cast<std::size_t>(j)];
      s0[static_cast<std::size_t>(j)] = {sample_at(in0, start + j) * w, 0.0};
      s1[static_cast<std::size_t>(j)] = {sample_at(in1, start + j) * w, 0.0};
    }
    fft_inplace(s0, false);
    fft_inplace(s1, false);
    // Mix channel 1 per bin; respect conjugate symmetry so the inverse
    // transform stays real.
    for (std::int64_t k = 0; k < n_bins; ++k) {
      const double g = coh[static_cast<std::size_t>(k)];
      const double h = std::sqrt(std::max(0.0, 1.0 - g * g));
      const std::complex<double> mixed =
          g * s0[static_cast<std::size_t>(k)] + h * s1[static_cast<std::size_t>(k)];
      s1[static_cast<std::size_t>(k)] = mixed;
      if (k > 0 && k < fft - k) s1[static_cast<std::size_t>(fft - k)] = std::conj(mixed);
    }
    fft_inplace(s1, true);
    for (std::int64_t j = 0; j < fft; ++j) {
      acc1[static_cast<std::size_t>(start + j)] += s1[static_cast<std::size_t>(j)].real();
    }
  }

  // Channel 0 is source 0 untouched (mixing row [1, 0]); channel 1 comes from
  // the overlap-add of the mixed frames.
  for (std::int64_t i = 0; i < n; ++i) {
    out.at(0, i) = in0[static_cast<std::size_t>(i)];
    out.at(1, i) = acc1[static_cast<std::size_t>(i + hop)];
  }
  return out;
}

}  // namespace binsip
