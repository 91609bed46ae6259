// SPDX-License-Identifier: Apache-2.0
//
// Intrusive short-time objective intelligibility scoring and the better-ear
// binaural label oracle, plus ingestion of externally computed labels.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "binsip/audio.hpp"
#include "binsip/common.hpp"
#include "binsip/mel.hpp"

namespace binsip {

struct StoiConfig {
  int band_count = 15;                 // one-third-octave bands
  double first_center_hz = 150.0;
  double analysis_window_s = 0.0256;   // 50% overlap
  std::int64_t fft_size = 512;
  int segment_frames = 30;             // ~384 ms
  double sdr_clip_db = -15.0;
  double vad_threshold_db = 40.0;      // below max clean frame energy

  void validate() const {
    if (band_count < 1 || first_center_hz <= 0.0 || analysis_window_s <= 0.0 ||
        fft_size < 2 || segment_frames < 2 || vad_threshold_db <= 0.0)
      throw std::invalid_argument("StoiConfig: all fields must be positive, segment >= 2");
  }
};

namespace detail {

// One-third-octave band edges mapped onto the FFT bin grid. Bands whose edge
// interval contains no bin are dropped.
inline std::vector<std::pair<std::int64_t, std::int64_t>> third_octave_bins(
    const StoiConfig& cfg, int sample_rate, std::vector<int>* dropped = nullptr) {
  const std::int64_t n_bins = cfg.fft_size / 2 + 1;
  std::vector<std::pair<std::int64_t, std::int64_t>> bands;
  for (int j = 0; j < cfg.band_count; ++j) {
    const double center = cfg.first_center_hz * std::pow(2.0, static_cast<double>(j) / 3.0);
    const double lo = center / std::pow(2.0, 1.0 / 6.0);
    const double hi = center * std::pow(2.0, 1.0 / 6.0);
    std::int64_t k_lo = static_cast<std::int64_t>(
        std::ceil(lo * static_cast<double>(cfg.fft_size) / sample_rate));
    std::int64_t k_hi = static_cast<std::int64_t>(
        std::ceil(hi * static_cast<double>(cfg.fft_size) / sample_rate));  // exclusive
    k_lo = std::max<std::int64_t>(k_lo, 0);
    k_hi = std::min(k_hi, n_bins);
    if (k_lo >= k_hi) {
      if (dropped) dropped->push_back(j);
      continue;
    }
    bands.emplace_back(k_lo, k_hi);
  }
  return bands;
}

inline double pearson(const double* x, const double* y, int n) {
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (int i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  const double denom = std::sqrt(sxx * syy);
  if (denom == 0.0) return 0.0;
  return sxy / denom;
}

}  // namespace detail

// Intrusive STOI on a clean/degraded pair. Silent regions are removed by an
// energy VAD on the clean signal; band envelopes are compared per 30-frame
// segment after normalization and -15 dB SDR clipping of the degraded
// envelope; the score is the mean correlation clamped to [0, 1].
inline double stoi_intrusive(const AudioBuffer& clean, const AudioBuffer& degraded,
                             const StoiConfig& cfg = {}) {
  cfg.validate();
  if (clean.channels() != 1 || degraded.channels() != 1)
    throw std::invalid_argument("stoi_intrusive: inputs must be single-channel");
  if (clean.length() != degraded.length())
    throw std::invalid_argument("stoi_intrusive: length mismatch");
  if (clean.sample_rate() != degraded.sample_rate())
    throw std::invalid_argument("stoi_intrusive: sample-rate mismatch");

  const int fs = clean.sample_rate();
  const std::int64_t win = static_cast<std::int64_t>(std::lround(cfg.analysis_window_s * fs));
  const std::int64_t hop = win / 2;
  if (clean.length() < win + hop * (cfg.segment_frames - 1))
    throw DataError("stoi_intrusive: signal shorter than one segment");

  const auto spec_x = stft_magnitude(clean.channel(0), win, hop, cfg.fft_size);
  const auto spec_y = stft_magnitude(degraded.channel(0), win, hop, cfg.fft_size);

  // Energy VAD on the clean signal's windowed frames.
  std::vector<double> frame_energy(static_cast<std::size_t>(spec_x.n_frames), 0.0);
  double max_energy = 0.0;
  for (std::int64_t l = 0; l < spec_x.n_frames; ++l) {
    double e = 0.0;
    const double* row = spec_x.frame(l);
    for (std::int64_t k = 0; k < spec_x.n_bins; ++k) e += row[k] * row[k];
    frame_energy[static_cast<std::size_t>(l)] = e;
    max_energy = std::max(max_energy, e);
  }
  if (max_energy <= 0.0) throw DataError("stoi_intrusive: all-silent clean signal");
  const double threshold = max_energy * power_from_db(-cfg.vad_threshold_db);
  std::vector<std::int64_t> kept;
  for (std::int64_t l = 0; l < spec_x.n_frames; ++l) {
    if (frame_energy[static_cast<std::size_t>(l)] >= threshold) kept.push_back(l);
  }
  if (static_cast<int>(kept.size()) < cfg.segment_frames)
    throw DataError("stoi_intrusive: signal shorter than one segment after VAD");

  const auto bands = detail::third_octave_bins(cfg, fs);
  const std::size_t n_bands = bands.size();
  const std::size_t n_kept = kept.size();

  // Band envelopes over kept frames: sqrt of summed bin energies.
  std::vector<double> env_x(n_bands * n_kept), env_y(n_bands * n_kept);
  for (std::size_t m = 0; m < n_kept; ++m) {
    const double* rx = spec_x.frame(kept[m]);
    const double* ry = spec_y.frame(kept[m]);
    for (std::size_t j = 0; j < n_bands; ++j) {
      double ex = 0.0, ey = 0.0;
      for (std::int64_t k = bands[j].first; k < bands[j].second; ++k) {
        ex += rx[k] * rx[k];
        ey += ry[k] * ry[k];
      }
      env_x[j * n_kept + m] = std::sqrt(ex);
      env_y[j * n_kept + m] = std::sqrt(ey);
    }
  }

  const int seg = cfg.segment_frames;
  const double clip_factor = 1.0 + std::pow(10.0, -cfg.sdr_clip_db / 20.0);
  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> yn(static_cast<std::size_t>(seg));
  for (std::size_t j = 0; j < n_bands; ++j) {
    const double* bx = env_x.data() + j * n_kept;
    const double* by = env_y.data() + j * n_kept;
    for (std::size_t m = static_cast<std::size_t>(seg) - 1; m < n_kept; ++m) {
      const double* xs = bx + (m + 1 - static_cast<std::size_t>(seg));
      const double* ys = by + (m + 1 - static_cast<std::size_t>(seg));
      double sx = 0.0, sy = 0.0;
      for (int i = 0; i < seg; ++i) {
        sx += xs[i] * xs[i];
        sy += ys[i] * ys[i];
      }
      const double alpha = sy > 0.0 ? std::sqrt(sx / sy) : 0.0;
      for (int i = 0; i < seg; ++i) {
        yn[static_cast<std::size_t>(i)] = std::min(alpha * ys[i], xs[i] * clip_factor);
      }
      total += detail::pearson(xs, yn.data(), seg);
      ++count;
    }
  }
  if (count == 0) throw DataError("stoi_intrusive: no segments");
  const double score = total / static_cast<double>(count);
  return std::max(0.0, std::min(1.0, score));
}

// Better-ear binaural label: max over channels of per-channel intrusive STOI.
inline double better_ear_label(const AudioBuffer& clean, const AudioBuffer& degraded,
                               const StoiConfig& cfg = {}) {
  if (clean.channels() != degraded.channels())
    throw std::invalid_argument("better_ear_label: channel mismatch");
  double best = 0.0;
  for (int c = 0; c < clean.channels(); ++c) {
    best = std::max(best, stoi_intrusive(clean.mono(c), degraded.mono(c), cfg));
  }
  return best;
}

// Reads a JSON-lines label file {utterance_id, score}. Scores must be in
// [0, 1]; duplicate ids and malformed lines are reported with line numbers.
inline std::map<std::string, double> ingest_labels(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("ingest_labels: cannot open " + path.string());
  std::map<std::string, double> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("ingest_labels: malformed line " + std::to_string(line_no) + ": " +
                      e.what());
    }
    if (!j.contains("utterance_id") || !j.contains("score"))
      throw DataError("ingest_labels: line " + std::to_string(line_no) +
                      " missing utterance_id or score");
    const std::string id = j.at("utterance_id").get<std::string>();
    const double score = j.at("score").get<double>();
    if (!(score >= 0.0 && score <= 1.0))
      throw DataError("ingest_labels: line " + std::to_string(line_no) + ": score " +
                      std::to_string(score) + " out of [0,1]");
    if (labels.contains(id))
      throw DataError("ingest_labels: duplicate utterance_id '" + id + "' at line " +
                      std::to_string(line_no));
    labels.emplace(id, score);
  }
  return labels;
}

}  // namespace binsip
