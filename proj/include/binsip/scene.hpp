// SPDX-License-Identifier: Apache-2.0
//
// Binaural noisy-reverberant scene generation: SNR-calibrated mixing,
// training-time augmentation and the labeled dataset builder.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "binsip/audio.hpp"
#include "binsip/common.hpp"
#include "binsip/level.hpp"
#include "binsip/noise.hpp"
#include "binsip/rng.hpp"
#include "binsip/wav.hpp"

namespace binsip {

using ordered_json = nlohmann::ordered_json;

// One generated mixture. The seed fully determines the mixture given the
// asset paths; label is absent until the labeling stage fills it in.
struct SceneRecord {
  std::string utterance_id;
  std::string speech_path;
  std::string rir_path;
  std::array<std::string, 2> noise_paths;
  double snr_db = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> label;

  ordered_json to_json() const {
    ordered_json j;
    j["utterance_id"] = utterance_id;
    j["speech_path"] = speech_path;
    j["rir_path"] = rir_path;
    j["noise_paths"] = noise_paths;
    j["snr_db"] = snr_db;
    j["seed"] = seed;
    if (label) j["label"] = *label;
    j["version"] = kVersion;
    return j;
  }

  static SceneRecord from_json(const ordered_json& j) {
    SceneRecord r;
    r.utterance_id = j.at("utterance_id").get<std::string>();
    r.speech_path = j.at("speech_path").get<std::string>();
    r.rir_path = j.at("rir_path").get<std::string>();
    const auto& np = j.at("noise_paths");
    r.noise_paths[0] = np.at(0).get<std::string>();
    r.noise_paths[1] = np.at(1).get<std::string>();
    r.snr_db = j.at("snr_db").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("label")) r.label = j.at("label").get<double>();
    return r;
  }
};

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<SceneRecord>& records) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("write_manifest: cannot open " + path.string());
  for (const auto& r : records) f << r.to_json().dump() << "\n";
}

inline std::vector<SceneRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("read_manifest: cannot open " + path.string());
  std::vector<SceneRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(SceneRecord::from_json(ordered_json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("read_manifest: malformed line " + std::to_string(line_no) + " in " +
                      path.string() + ": " + e.what());
    }
  }
  return records;
}

struct MixResult {
  AudioBuffer mixture;     // reverberant + gain * noise
  double noise_gain = 0.0; // scalar applied to both noise channels
};

// Scales the noise so that P.56 active speech level minus noise RMS level on
// channel 0 equals snr_db, then adds it to the reverberant signal. One scalar
// gain is applied to both channels, preserving the noise field's spatial
// structure.
inline MixResult mix_at_snr(const AudioBuffer& reverberant, const AudioBuffer& noise,
                            double snr_db) {
  if (!std::isfinite(snr_db)) throw std::invalid_argument("mix_at_snr: non-finite SNR");
  if (reverberant.length() != noise.length())
    throw std::invalid_argument("mix_at_snr: length mismatch");
  if (reverberant.channels() != noise.channels())
    throw std::invalid_argument("mix_at_snr: channel mismatch");

  const double speech_db = active_speech_level_db(reverberant, 0);
  double noise_power = 0.0;
  for (double v : noise.channel(0)) noise_power += v * v;
  if (noise_power <= 0.0) throw std::invalid_argument("mix_at_snr: zero-power noise");
  const double noise_db = db_from_power(noise_power / static_cast<double>(noise.length()));

  const double gain = amplitude_from_db(speech_db - noise_db - snr_db);
  MixResult res{AudioBuffer(reverberant.channels(), reverberant.length(),
                            reverberant.sample_rate()),
                gain};
  for (int c = 0; c < reverberant.channels(); ++c) {
    auto r = reverberant.channel(c);
    auto v = noise.channel(c);
    auto o = res.mixture.channel(c);
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = r[i] + gain * v[i];
  }
  return res;
}

// The four augmentation stages; each is applied independently with
// probability 0.5. Magnitudes are seeded along with the decisions.
struct AugmentDraw {
  bool swap_channels = false;
  bool flip_polarity = false;
  bool add_noise = false;
  double noise_snr_db = 30.0;  // 20..40 dB re signal RMS
  std::uint64_t noise_seed = 0;
  bool apply_gain = false;
  double gain_db = 0.0;  // -6..+6 dB
};

inline AugmentDraw sample_augment_draw(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "augment-draw"));
  AugmentDraw d;
  d.swap_channels = rng.bernoulli(0.5);
  d.flip_polarity = rng.bernoulli(0.5);
  d.add_noise = rng.bernoulli(0.5);
  d.noise_snr_db = rng.uniform(20.0, 40.0);
  d.noise_seed = rng.next_u64();
  d.apply_gain = rng.bernoulli(0.5);
  d.gain_db = rng.uniform(-6.0, 6.0);
  return d;
}

inline AudioBuffer apply_augment(const AudioBuffer& x, const AugmentDraw& d) {
  if (x.channels() != 2) throw std::invalid_argument("augment: requires 2-channel input");
  AudioBuffer out(2, x.length(), x.sample_rate());
  for (int c = 0; c < 2; ++c) {
    const int src = d.swap_channels ? 1 - c : c;
    auto in = x.channel(src);
    auto o = out.channel(c);
    std::copy(in.begin(), in.end(), o.begin());
  }
  if (d.flip_polarity) {
    for (auto& v : out.raw()) v = -v;
  }
  if (d.add_noise) {
    double power = 0.0;
    for (double v : out.raw()) power += v * v;
    power /= static_cast<double>(out.raw().size());
    const double sigma = std::sqrt(power * power_from_db(-d.noise_snr_db));
    Rng rng(d.noise_seed);
    for (auto& v : out.raw()) v += sigma * rng.normal();
  }
  if (d.apply_gain) {
    const double g = amplitude_from_db(d.gain_db);
    for (auto& v : out.raw()) v *= g;
  }
  return out;
}

inline AudioBuffer augment(const AudioBuffer& x, std::uint64_t seed) {
  return apply_augment(x, sample_augment_draw(seed));
}

// Frame-sequence variant: channel blocks within each stacked frame vector are
// swapped/scaled in place of raw channels.
inline FrameSequence apply_augment(const FrameSequence& x, const AugmentDraw& d) {
  if (x.channels != 2) throw std::invalid_argument("augment: requires 2-channel input");
  FrameSequence out = x;
  if (d.swap_channels) {
    for (std::int64_t l = 0; l < out.n_frames; ++l) {
      double* f = out.frame(l);
      for (std::int64_t j = 0; j < out.frame_length; ++j)
        std::swap(f[j], f[out.frame_length + j]);
    }
  }
  if (d.flip_polarity) {
    for (auto& v : out.frames) v = -v;
  }
  if (d.add_noise) {
    double power = 0.0;
    for (double v : out.frames) power += v * v;
    power /= static_cast<double>(out.frames.size());
    const double sigma = std::sqrt(power * power_from_db(-d.noise_snr_db));
    Rng rng(d.noise_seed);
    for (auto& v : out.frames) v += sigma * rng.normal();
  }
  if (d.apply_gain) {
    const double g = amplitude_from_db(d.gain_db);
    for (auto& v : out.frames) v *= g;
  }
  return out;
}

inline FrameSequence augment(const FrameSequence& x, std::uint64_t seed) {
  return apply_augment(x, sample_augment_draw(seed));
}

struct DatasetParams {
  std::filesystem::path speech_dir;
  std::filesystem::path rir_dir;
  std::filesystem::path noise_dir;
  std::filesystem::path out_dir;
  int mixtures_per_utterance = 3;
  double snr_min_db = -10.0;
  double snr_max_db = 30.0;
  NoiseFieldSpec noise_field;
  unsigned workers = 1;
};

struct DatasetStats {
  std::size_t n_records = 0;
  std::size_t n_skipped = 0;
  std::vector<std::string> skipped;  // "<utterance_id>: <reason>"
};

struct DatasetResult {
  std::vector<SceneRecord> records;
  DatasetStats stats;
};

inline std::vector<std::filesystem::path> list_wavs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw DataError("list_wavs: not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("list_wavs: no .wav files in " + dir.string());
  return files;
}

inline std::filesystem::path mixture_wav_path(const std::filesystem::path& out_dir,
                                              const std::string& utterance_id) {
  return out_dir / "wav" / (utterance_id + ".mix.wav");
}

inline std::filesystem::path reference_wav_path(const std::filesystem::path& out_dir,
                                                const std::string& utterance_id) {
  return out_dir / "wav" / (utterance_id + ".ref.wav");
}

namespace detail {

struct SceneOutput {
  SceneRecord record;
  AudioBuffer mixture{1, 1, kPipelineSampleRate};
  AudioBuffer reference{1, 1, kPipelineSampleRate};
  bool skipped = false;
  std::string skip_reason;
};

// Generates one record; a pure function of the asset set and the record seed.
inline SceneOutput generate_scene(const std::filesystem::path& speech_path,
                                  const std::string& utterance_id,
                                  const std::vector<std::filesystem::path>& rirs,
                                  const std::vector<std::filesystem::path>& noises,
                                  const DatasetParams& params, std::uint64_t record_seed) {
  SceneOutput out;
  out.record.utterance_id = utterance_id;
  out.record.speech_path = speech_path.string();
  out.record.seed = record_seed;

  Rng rng(derive_seed(record_seed, "scene"));
  const auto& rir_path = rirs[static_cast<std::size_t>(rng.uniform_int(rirs.size()))];
  const std::size_t noise_a = static_cast<std::size_t>(rng.uniform_int(noises.size()));
  std::size_t noise_b = static_cast<std::size_t>(rng.uniform_int(noises.size() - 1));
  if (noise_b >= noise_a) ++noise_b;  // two distinct noise files
  const double snr = rng.uniform(params.snr_min_db, params.snr_max_db);

  out.record.rir_path = rir_path.string();
  out.record.noise_paths = {noises[noise_a].string(), noises[noise_b].string()};
  out.record.snr_db = snr;

  const AudioBuffer speech = read_wav(speech_path, kPipelineSampleRate);
  if (speech.channels() != 1) {
    out.skipped = true;
    out.skip_reason = "speech not mono";
    return out;
  }
  const AudioBuffer rir = read_wav(rir_path, kPipelineSampleRate);
  if (rir.channels() != 2) {
    out.skipped = true;
    out.skip_reason = "RIR not 2-channel";
    return out;
  }

  const std::int64_t ns = speech.length();
  AudioBuffer segments[2]{AudioBuffer(1, ns, kPipelineSampleRate),
                          AudioBuffer(1, ns, kPipelineSampleRate)};
  const std::size_t idx[2] = {noise_a, noise_b};
  for (int k = 0; k < 2; ++k) {
    const AudioBuffer noise = read_wav(noises[idx[k]], kPipelineSampleRate);
    if (noise.length() < ns) {
      out.skipped = true;
      out.skip_reason = "noise file shorter than utterance: " + noises[idx[k]].string();
      return out;
    }
    const std::int64_t offset =
        static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(noise.length() - ns + 1)));
    auto src = noise.channel(0);
    auto dst = segments[k].channel(0);
    std::copy(src.begin() + offset, src.begin() + offset + ns, dst.begin());
  }

  const AudioBuffer iso = gen_isotropic_noise(segments[0], segments[1], params.noise_field);
  out.reference = convolve_rir(speech, rir);
  out.mixture = mix_at_snr(out.reference, iso, snr).mixture;
  return out;
}

}  // namespace detail

// Builds the labeled-scene dataset: for each utterance and repetition, sample
// an RIR, two noise segments from distinct files, an SNR in the configured
// range, synthesize the isotropic noise, mix, and write mixture + clean
// reverberant reference WAVs. Fully reproducible from the seed.
inline DatasetResult build_dataset(const DatasetParams& params, std::uint64_t seed) {
  const auto speech_files = list_wavs(params.speech_dir);
  const auto rir_files = list_wavs(params.rir_dir);
  const auto noise_files = list_wavs(params.noise_dir);
  if (noise_files.size() < 2)
    throw DataError("build_dataset: need at least two noise files");
  if (params.mixtures_per_utterance < 1)
    throw std::invalid_argument("build_dataset: mixtures_per_utterance must be >= 1");

  std::filesystem::create_directories(params.out_dir / "wav");

  struct Job {
    std::filesystem::path speech;
    std::string utterance_id;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t u = 0; u < speech_files.size(); ++u) {
    const std::string stem = speech_files[u].stem().string();
    for (int rep = 0; rep < params.mixtures_per_utterance; ++rep) {
      Job j;
      j.speech = speech_files[u];
      j.utterance_id = stem + "_r" + std::to_string(rep);
      j.seed = derive_seed(seed, "record", u * 1000003ULL + static_cast<std::uint64_t>(rep));
      jobs.push_back(std::move(j));
    }
  }

  std::vector<detail::SceneOutput> outputs(jobs.size());
  parallel_for(jobs.size(), params.workers, [&](std::size_t i) {
    outputs[i] = detail::generate_scene(jobs[i].speech, jobs[i].utterance_id, rir_files,
                                        noise_files, params, jobs[i].seed);
  });

  DatasetResult result;
  for (auto& o : outputs) {
    if (o.skipped) {
      ++result.stats.n_skipped;
      result.stats.skipped.push_back(o.record.utterance_id + ": " + o.skip_reason);
      continue;
    }
    write_wav(mixture_wav_path(params.out_dir, o.record.utterance_id), o.mixture);
    write_wav(reference_wav_path(params.out_dir, o.record.utterance_id), o.reference);
    result.records.push_back(std::move(o.record));
  }
  result.stats.n_records = result.records.size();

  write_manifest(params.out_dir / "manifest.jsonl", result.records);
  ordered_json stats;
  stats["n_records"] = result.stats.n_records;
  stats["n_skipped"] = result.stats.n_skipped;
  stats["skipped"] = result.stats.skipped;
  std::ofstream sf(params.out_dir / "stats.json", std::ios::trunc);
  sf << stats.dump(2) << "\n";
  return result;
}

}  // namespace binsip
