// SPDX-License-Identifier: Apache-2.0
//
// Active speech level, ITU-T P.56 method B: smoothed envelope, activity
// counting across geometric thresholds with hangover, active level at the
// 15.9 dB margin crossing.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "binsip/audio.hpp"
#include "binsip/common.hpp"

namespace binsip {

struct SpeechLevelResult {
  double active_level_db = 0.0;  // dB re unit amplitude
  double long_term_level_db = 0.0;
  double activity_factor = 0.0;  // active samples / total samples
};

inline SpeechLevelResult active_speech_level(const AudioBuffer& buffer, int channel) {
  constexpr double kTimeConstant = 0.03;  // s, envelope smoothing
  constexpr double kHangover = 0.2;       // s
  constexpr double kMarginDb = 15.9;
  constexpr int kThresholds = 15;         // 2^-15 .. 2^-1 of full scale

  auto x = buffer.channel(channel);
  const std::int64_t n = static_cast<std::int64_t>(x.size());
  const double fs = static_cast<double>(buffer.sample_rate());
  const double g = std::exp(-1.0 / (fs * kTimeConstant));
  const std::int64_t hang_samples = static_cast<std::int64_t>(std::ceil(fs * kHangover));

  std::array<double, kThresholds> thr{};
  for (int j = 0; j < kThresholds; ++j) thr[static_cast<std::size_t>(j)] = std::ldexp(1.0, j - kThresholds);

  std::array<std::int64_t, kThresholds> activity{};
  std::array<std::int64_t, kThresholds> hang{};
  hang.fill(hang_samples);

  double sq = 0.0;
  double p = 0.0, q = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double v = x[static_cast<std::size_t>(i)];
    sq += v * v;
    p = g * p + (1.0 - g) * std::abs(v);
    q = g * q + (1.0 - g) * p;
    for (int j = 0; j < kThresholds; ++j) {
      if (q >= thr[static_cast<std::size_t>(j)]) {
        ++activity[static_cast<std::size_t>(j)];
        hang[static_cast<std::size_t>(j)] = 0;
      } else if (hang[static_cast<std::size_t>(j)] < hang_samples) {
        ++activity[static_cast<std::size_t>(j)];
        ++hang[static_cast<std::size_t>(j)];
      } else {
        break;  // thresholds are increasing, the rest are inactive too
      }
    }
  }

  if (sq <= 0.0 || activity[0] == 0)
    throw DataError("active_speech_level: no activity in signal");

  const double long_term_db = db_from_power(sq / static_cast<double>(n));

  // Margin between candidate active level and threshold level decreases as
  // the threshold rises; the active level sits at the 15.9 dB crossing.
  double prev_delta = 0.0, prev_a = 0.0;
  bool have_prev = false;
  SpeechLevelResult res;
  res.long_term_level_db = long_term_db;
  for (int j = 0; j < kThresholds; ++j) {
    if (activity[static_cast<std::size_t>(j)] == 0) break;
    const double a_db = db_from_power(sq / static_cast<double>(activity[static_cast<std::size_t>(j)]));
    const double c_db = db_from_amplitude(thr[static_cast<std::size_t>(j)]);
    const double delta = a_db - c_db;
    if (delta <= kMarginDb) {
      if (!have_prev) throw DataError("active_speech_level: margin never reached");
      // Linear interpolation in dB between the bracketing thresholds.
      const double t = (prev_delta - kMarginDb) / (prev_delta - delta);
      res.active_level_db = prev_a + t * (a_db - prev_a);
      res.activity_factor = power_from_db(long_term_db - res.active_level_db);
      return res;
    }
    prev_delta = delta;
    prev_a = a_db;
    have_prev = true;
  }
  // Margin still above 15.9 dB at the highest threshold: everything active.
  res.active_level_db = prev_a;
  res.activity_factor = power_from_db(long_term_db - res.active_level_db);
  return res;
}

inline double active_speech_level_db(const AudioBuffer& buffer, int channel) {
  return active_speech_level(buffer, channel).active_level_db;
}

}  // namespace binsip
