// Copyright 2026 The sdiar Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sdiar/annotation.hpp"
#include "sdiar/array_model.hpp"
#include "sdiar/dmsnet.hpp"
#include "sdiar/errors.hpp"
#include "sdiar/rng.hpp"
#include "sdiar/wav.hpp"

namespace sdiar {

enum class SourceKind { kHarmonicVoice, kBandNoise };

struct SimSpeaker {
  std::string id;
  double direction = 0.0;  // radians
  SourceKind kind = SourceKind::kHarmonicVoice;
  double f0 = 150.0;       // harmonic voices
  double band_lo = 500.0;  // band-noise sources
  double band_hi = 2000.0;
};

struct SimTurn {
  int speaker = 0;  // index into MeetingScript::speakers
  double start = 0.0;
  double end = 0.0;
};

/// Free-field meeting description. Speakers stay at fixed directions for
/// the whole recording.
struct MeetingScript {
  std::vector<SimSpeaker> speakers;
  std::vector<SimTurn> turns;
  double snr_db = 20.0;  // diffuse-noise SNR; infinity disables noise
  std::uint64_t seed = 0;
  double min_separation = 2.0 * M_PI / 120.0;
};

struct RenderResult {
  MultichannelAudio audio;
  Annotation annotation;
  OverlapLabels overlap_labels;  // 10 ms frames
  Timeline overlap_timeline;
  // Populated only when render() is asked to keep the components.
  MultichannelAudio speech_only;
  MultichannelAudio noise_only;
};

namespace simdetail {

constexpr int kDelayTaps = 63;
constexpr int kDelayCenter = kDelayTaps / 2;
constexpr int kNoisePlaneWaves = 64;

/// Windowed-sinc fractional delay of `delay_samples` (may be negative)
/// around a fixed kDelayCenter group delay.
inline std::vector<double> fractional_delay_taps(double delay_samples) {
  std::vector<double> taps(kDelayTaps);
  const double d = kDelayCenter + delay_samples;
  for (int k = 0; k < kDelayTaps; ++k) {
    const double x = static_cast<double>(k) - d;
    const double sinc = (std::fabs(x) < 1e-12) ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
    const double w = 0.42 - 0.5 * std::cos(2.0 * M_PI * k / (kDelayTaps - 1)) +
                     0.08 * std::cos(4.0 * M_PI * k / (kDelayTaps - 1));
    taps[k] = sinc * w;
  }
  return taps;
}

/// y[t] += sum_k taps[k] * x[t - k] restricted to x support [lo, hi).
inline void delay_accumulate(const std::vector<double>& taps, const std::vector<double>& x,
                             std::size_t lo, std::size_t hi, std::vector<double>& y) {
  const auto len = static_cast<long long>(y.size());
  const auto k_taps = static_cast<long long>(taps.size());
  const long long t_lo = static_cast<long long>(lo);
  const long long t_hi = std::min(static_cast<long long>(hi) + k_taps - 1, len);
  for (long long t = t_lo; t < t_hi; ++t) {
    double acc = 0.0;
    const long long kmin = std::max(0LL, t - static_cast<long long>(hi) + 1);
    const long long kmax = std::min(k_taps - 1, t - t_lo);
    for (long long k = kmin; k <= kmax; ++k) acc += taps[k] * x[t - k];
    y[t] += acc;
  }
}

inline std::vector<double> bandpass_taps(double lo_hz, double hi_hz, double fs, int n = 101) {
  std::vector<double> taps(n);
  const int half = n / 2;
  for (int k = 0; k < n; ++k) {
    const double t = static_cast<double>(k - half) / fs;
    auto term = [&](double f) {
      return (std::fabs(t) < 1e-15) ? 2.0 * f : std::sin(2.0 * M_PI * f * t) / (M_PI * t);
    };
    const double w = 0.54 - 0.46 * std::cos(2.0 * M_PI * k / (n - 1));
    taps[k] = (term(hi_hz) - term(lo_hz)) * w;
  }
  return taps;
}

}  // namespace simdetail

/// Renders the script into C-channel far-field audio with ground truth.
/// Sources are spatialized with 63-tap windowed-sinc fractional delays;
/// diffuse noise is a sum of 64 plane waves from seeded random directions
/// scaled to the requested SNR over speech regions.
inline RenderResult render(const MeetingScript& script, const ArrayGeometry& geom,
                           double duration, bool keep_components = false) {
  using namespace simdetail;
  const double fs = geom.sample_rate;
  const auto len = static_cast<std::size_t>(std::llround(duration * fs));
  const int channels = geom.mic_count;

  for (std::size_t i = 0; i < script.speakers.size(); ++i)
    for (std::size_t j = i + 1; j < script.speakers.size(); ++j) {
      double diff = std::fabs(script.speakers[i].direction - script.speakers[j].direction);
      diff = std::fmod(diff, 2.0 * M_PI);
      diff = std::min(diff, 2.0 * M_PI - diff);
      if (diff < script.min_separation)
        throw DirectionCollision("speakers " + script.speakers[i].id + " and " +
                                 script.speakers[j].id + " are closer than the minimum " +
                                 "angular separation");
    }
  for (const auto& turn : script.turns) {
    if (turn.start < 0.0 || turn.end > duration + 1e-9 || turn.end <= turn.start)
      throw InvalidConfig("turn outside [0, duration]");
    if (turn.speaker < 0 || turn.speaker >= static_cast<int>(script.speakers.size()))
      throw InvalidConfig("turn references unknown speaker");
  }

  std::vector<std::vector<double>> speech(channels, std::vector<double>(len, 0.0));
  Rng rng(script.seed);

  // Per-speaker mono source over its turns, then spatialization.
  for (std::size_t s = 0; s < script.speakers.size(); ++s) {
    const auto& spk = script.speakers[s];
    std::vector<double> mono(len, 0.0);
    std::size_t lo = len, hi = 0;

    const double harmonic_phase0 = rng.uniform(0.0, 2.0 * M_PI);
    const double env_phase = rng.uniform(0.0, 2.0 * M_PI);
    std::vector<double> harm_phases(8);
    for (auto& p : harm_phases) p = rng.uniform(0.0, 2.0 * M_PI);
    const std::vector<double> bp = bandpass_taps(spk.band_lo, spk.band_hi, fs);
    Rng noise_rng(script.seed ^ (0x9e3779b97f4a7c15ULL * (s + 1)));

    for (const auto& turn : script.turns) {
      if (turn.speaker != static_cast<int>(s)) continue;
      const auto t0 = static_cast<std::size_t>(std::llround(turn.start * fs));
      const auto t1 = std::min(len, static_cast<std::size_t>(std::llround(turn.end * fs)));
      lo = std::min(lo, t0);
      hi = std::max(hi, t1);
      const double ramp = 0.010;  // seconds
      if (spk.kind == SourceKind::kHarmonicVoice) {
        for (std::size_t t = t0; t < t1; ++t) {
          const double time = static_cast<double>(t) / fs;
          // Vibrato integrates to a closed-form phase.
          const double phase =
              2.0 * M_PI * spk.f0 *
                  (time + 0.02 * (1.0 - std::cos(2.0 * M_PI * 6.0 * time)) /
                              (2.0 * M_PI * 6.0)) +
              harmonic_phase0;
          double v = 0.0;
          for (int h = 1; h <= 8; ++h)
            v += std::sin(h * phase + harm_phases[h - 1]) / h;
          const double env = 0.6 + 0.4 * std::sin(2.0 * M_PI * 4.0 * time + env_phase);
          const double into = (static_cast<double>(t) / fs) - turn.start;
          const double outof = turn.end - (static_cast<double>(t) / fs);
          double gate = 1.0;
          if (into < ramp) gate *= 0.5 - 0.5 * std::cos(M_PI * into / ramp);
          if (outof < ramp) gate *= 0.5 - 0.5 * std::cos(M_PI * outof / ramp);
          mono[t] += v * env * gate;
        }
      } else {
        // Filtered white noise; the filter warmup reuses pre-turn zeros.
        std::vector<double> white(t1 - t0);
        for (auto& w : white) w = noise_rng.normal();
        for (std::size_t t = t0; t < t1; ++t) {
          double acc = 0.0;
          for (std::size_t k = 0; k < bp.size(); ++k) {
            const long long idx = static_cast<long long>(t - t0) - static_cast<long long>(k);
            if (idx < 0) break;
            acc += bp[k] * white[idx];
          }
          const double into = (static_cast<double>(t) / fs) - turn.start;
          const double outof = turn.end - (static_cast<double>(t) / fs);
          double gate = 1.0;
          if (into < ramp) gate *= 0.5 - 0.5 * std::cos(M_PI * into / ramp);
          if (outof < ramp) gate *= 0.5 - 0.5 * std::cos(M_PI * outof / ramp);
          mono[t] += acc * gate;
        }
      }
    }
    if (hi <= lo) continue;

    // Normalize the source to a fixed active RMS.
    double power = 0.0;
    std::size_t active = 0;
    for (std::size_t t = lo; t < hi; ++t) {
      power += mono[t] * mono[t];
      ++active;
    }
    if (power > 0.0) {
      const double scale = 0.1 / std::sqrt(power / static_cast<double>(active));
      for (std::size_t t = lo; t < hi; ++t) mono[t] *= scale;
    }

    for (int c = 0; c < channels; ++c) {
      const double delay = geom.delay(c, spk.direction) * fs;
      const auto taps = fractional_delay_taps(delay);
      delay_accumulate(taps, mono, lo, hi, speech[c]);
    }
  }

  // Diffuse noise: 64 independent plane waves from uniform directions.
  std::vector<std::vector<double>> noise(channels, std::vector<double>(len, 0.0));
  const bool want_noise = std::isfinite(script.snr_db);
  if (want_noise && len > 0) {
    Rng noise_rng(script.seed ^ 0xD1FF05EULL);
    for (int w = 0; w < kNoisePlaneWaves; ++w) {
      const double direction = noise_rng.uniform(0.0, 2.0 * M_PI);
      std::vector<double> wave(len);
      for (auto& v : wave) v = noise_rng.normal();
      for (int c = 0; c < channels; ++c) {
        const double delay = geom.delay(c, direction) * fs;
        const auto taps = fractional_delay_taps(delay);
        delay_accumulate(taps, wave, 0, len, noise[c]);
      }
    }

    // Scale to the requested SNR measured over speech regions.
    Timeline speech_tl;
    for (const auto& turn : script.turns) speech_tl.add({turn.start, turn.end});
    double p_speech = 0.0, p_noise = 0.0;
    std::size_t n_active = 0;
    for (const auto& seg : speech_tl.segments()) {
      const auto a = static_cast<std::size_t>(std::llround(seg.start * fs));
      const auto b = std::min(len, static_cast<std::size_t>(std::llround(seg.end * fs)));
      for (std::size_t t = a; t < b; ++t) {
        for (int c = 0; c < channels; ++c) {
          p_speech += speech[c][t] * speech[c][t];
          p_noise += noise[c][t] * noise[c][t];
        }
        ++n_active;
      }
    }
    double scale;
    if (n_active == 0 || p_speech <= 0.0) {
      // Pure-noise rendering: fix the per-channel RMS at 0.05.
      double p = 0.0;
      for (int c = 0; c < channels; ++c)
        for (std::size_t t = 0; t < len; ++t) p += noise[c][t] * noise[c][t];
      scale = 0.05 / std::sqrt(p / static_cast<double>(len * channels));
    } else {
      scale = std::sqrt(p_speech / (p_noise * std::pow(10.0, script.snr_db / 10.0)));
    }
    for (int c = 0; c < channels; ++c)
      for (std::size_t t = 0; t < len; ++t) noise[c][t] *= scale;
  }

  RenderResult result;
  result.audio.sample_rate = fs;
  result.audio.samples.assign(channels, std::vector<double>(len, 0.0));
  double peak = 0.0;
  for (int c = 0; c < channels; ++c)
    for (std::size_t t = 0; t < len; ++t) {
      result.audio.samples[c][t] = speech[c][t] + noise[c][t];
      peak = std::max(peak, std::fabs(result.audio.samples[c][t]));
    }
  if (peak > 0.99) {
    const double g = 0.99 / peak;
    for (auto& ch : result.audio.samples)
      for (auto& v : ch) v *= g;
    for (auto& ch : speech)
      for (auto& v : ch) v *= g;
    for (auto& ch : noise)
      for (auto& v : ch) v *= g;
  }

  result.annotation.file_id = "sim";
  for (const auto& turn : script.turns)
    result.annotation.turns.push_back(
        Turn{script.speakers[turn.speaker].id, Segment{turn.start, turn.end}, false});
  result.annotation.sort_turns();

  // 10 ms ground-truth overlap labels: >= 2 distinct speakers at the frame
  // center (integer-millisecond grid, matching the scorers).
  const auto n_frames = static_cast<std::size_t>(std::llround(std::ceil(duration * 100.0)));
  result.overlap_labels.frames.assign(n_frames, 0);
  result.overlap_labels.frame_rate = 100.0;
  for (std::size_t f = 0; f < n_frames; ++f) {
    const long long center_ms = static_cast<long long>(f) * 10 + 5;
    std::vector<int> active;
    for (const auto& turn : script.turns) {
      const long long a = std::llround(turn.start * 1000.0);
      const long long b = std::llround(turn.end * 1000.0);
      if (center_ms >= a && center_ms < b &&
          std::find(active.begin(), active.end(), turn.speaker) == active.end())
        active.push_back(turn.speaker);
    }
    if (active.size() >= 2) result.overlap_labels.frames[f] = 1;
  }
  result.overlap_timeline = result.annotation.overlap_timeline();

  if (keep_components) {
    result.speech_only.sample_rate = fs;
    result.speech_only.samples = std::move(speech);
    result.noise_only.sample_rate = fs;
    result.noise_only.samples = std::move(noise);
  }
  return result;
}

/// Script file format, one item per line:
///   duration=<s>  snr_db=<dB>  seed=<n>  min_separation_deg=<deg>
///   speaker <id> <direction_deg> harmonic <f0_hz>
///   speaker <id> <direction_deg> bandnoise <lo_hz> <hi_hz>
///   turn <speaker_id> <start_s> <end_s>
struct ScriptFile {
  MeetingScript script;
  double duration = 10.0;
};

inline ScriptFile parse_meeting_script(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open: " + path);
  ScriptFile out;
  std::map<std::string, int> speaker_index;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto comment = line.find('#');
    if (comment != std::string::npos) line.erase(comment);
    std::istringstream ss(line);
    std::string head;
    if (!(ss >> head)) continue;
    const std::string at = " at line " + std::to_string(lineno);
    if (head == "speaker") {
      SimSpeaker spk;
      std::string kind;
      double dir_deg = 0.0;
      if (!(ss >> spk.id >> dir_deg >> kind))
        throw ParseError("bad speaker row" + at);
      spk.direction = dir_deg * M_PI / 180.0;
      if (kind == "harmonic") {
        spk.kind = SourceKind::kHarmonicVoice;
        if (!(ss >> spk.f0)) throw ParseError("harmonic speaker needs f0" + at);
      } else if (kind == "bandnoise") {
        spk.kind = SourceKind::kBandNoise;
        if (!(ss >> spk.band_lo >> spk.band_hi))
          throw ParseError("bandnoise speaker needs lo hi" + at);
      } else {
        throw ParseError("unknown source kind '" + kind + "'" + at);
      }
      speaker_index[spk.id] = static_cast<int>(out.script.speakers.size());
      out.script.speakers.push_back(spk);
    } else if (head == "turn") {
      std::string id;
      SimTurn turn;
      if (!(ss >> id >> turn.start >> turn.end)) throw ParseError("bad turn row" + at);
      const auto it = speaker_index.find(id);
      if (it == speaker_index.end()) throw ParseError("turn names unknown speaker '" + id + "'" + at);
      turn.speaker = it->second;
      out.script.turns.push_back(turn);
    } else {
      const auto eq = head.find('=');
      if (eq == std::string::npos) throw ParseError("unknown row '" + head + "'" + at);
      const std::string key = head.substr(0, eq);
      const double value = std::stod(head.substr(eq + 1));
      if (key == "duration") out.duration = value;
      else if (key == "snr_db") out.script.snr_db = value;
      else if (key == "seed") out.script.seed = static_cast<std::uint64_t>(value);
      else if (key == "min_separation_deg") out.script.min_separation = value * M_PI / 180.0;
      else throw ParseError("unknown key '" + key + "'" + at);
    }
  }
  return out;
}

/// Seeded meeting generator: harmonic voices at well-separated directions,
/// sequential turns with a controllable probability of overlapping the
/// previous turn's tail.
inline MeetingScript make_meeting_script(std::uint64_t seed, int n_speakers, double duration,
                                         double overlap_prob = 0.5, double snr_db = 20.0) {
  MeetingScript script;
  script.seed = seed;
  script.snr_db = snr_db;
  Rng rng(seed ^ 0xABCDEFULL);
  for (int s = 0; s < n_speakers; ++s) {
    SimSpeaker spk;
    spk.id = "spk" + std::string(1, static_cast<char>('A' + s));
    spk.direction = 2.0 * M_PI * (s + 0.15 + 0.7 * rng.uniform()) / n_speakers;
    spk.kind = SourceKind::kHarmonicVoice;
    spk.f0 = rng.uniform(110.0, 280.0);
    script.speakers.push_back(spk);
  }

  // Rotate through a reshuffled speaker order so nobody is starved of
  // speech; consecutive turns never share a speaker.
  std::vector<int> order(n_speakers);
  for (int s = 0; s < n_speakers; ++s) order[s] = s;
  rng.shuffle(order);
  std::size_t next = 0;

  double t = rng.uniform(0.2, 0.5);
  int prev = -1;
  double prev_end = 0.0;
  while (t < duration - 1.5) {
    if (next == order.size()) {
      rng.shuffle(order);
      if (order[0] == prev && n_speakers > 1) std::swap(order[0], order[1]);
      next = 0;
    }
    const int s = order[next++];
    if (s == prev) continue;
    double start;
    if (prev >= 0 && rng.uniform() < overlap_prob) {
      start = std::max(0.0, prev_end - rng.uniform(0.5, 1.4));
    } else {
      start = t + rng.uniform(0.05, 0.3);
    }
    const double end = std::min(start + rng.uniform(1.5, 4.0), duration - 0.05);
    if (end <= start + 0.3) break;
    script.turns.push_back({s, start, end});
    prev = s;
    prev_end = end;
    t = end;
  }
  return script;
}

/// Chunked OSD training data: 2 s chunks at a 1 s hop with frame labels at
/// the model frame rate (majority vote over the 10 ms ground truth), with
/// negatives subsampled so that at least 30% of chunks contain overlap.
inline std::vector<OsdChunk> make_osd_dataset(int n_meetings, const ArrayGeometry& geom,
                                              const DmsNetConfig& cfg, std::uint64_t seed,
                                              double meeting_duration = 20.0,
                                              double overlap_prob = 0.55,
                                              double snr_db = 15.0) {
  if (n_meetings < 1) throw InvalidConfig("need at least one meeting");
  std::vector<OsdChunk> positives, negatives;
  const int chunk_samples = cfg.chunk_samples();
  const auto fs = geom.sample_rate;

  for (int m = 0; m < n_meetings; ++m) {
    const MeetingScript script = make_meeting_script(
        seed + 7919ULL * static_cast<std::uint64_t>(m), 2 + (m % 2), meeting_duration,
        overlap_prob, snr_db);
    const RenderResult rendered = render(script, geom, meeting_duration);
    const int frames = dmsnet_frames(cfg, chunk_samples);

    const int max_start = static_cast<int>(meeting_duration - cfg.chunk_len);
    for (int start_s = 0; start_s <= max_start; ++start_s) {
      const auto start = static_cast<std::size_t>(std::llround(start_s * fs));
      OsdChunk chunk;
      chunk.audio.sample_rate = fs;
      chunk.audio.samples.assign(geom.mic_count, std::vector<double>(chunk_samples, 0.0));
      for (int c = 0; c < geom.mic_count; ++c)
        for (int i = 0; i < chunk_samples; ++i)
          chunk.audio.samples[c][i] = rendered.audio.samples[c][start + i];

      chunk.labels.resize(frames);
      double positive_frames = 0.0;
      for (int f = 0; f < frames; ++f) {
        const auto span = dmsnet_frame_span(cfg, f);
        const double t0 = (static_cast<double>(start) + span.first) / fs;
        const double t1 = (static_cast<double>(start) + span.second) / fs;
        const auto b0 = static_cast<std::size_t>(t0 * 100.0);
        const auto b1 = std::min(rendered.overlap_labels.frames.size(),
                                 static_cast<std::size_t>(std::ceil(t1 * 100.0)));
        int ones = 0, total = 0;
        for (std::size_t b = b0; b < b1; ++b) {
          ones += rendered.overlap_labels.frames[b];
          ++total;
        }
        chunk.labels[f] = (total > 0 && 2 * ones >= total) ? 1.0 : 0.0;
        positive_frames += chunk.labels[f];
      }
      const bool positive = positive_frames > 0.1 * frames;
      (positive ? positives : negatives).push_back(std::move(chunk));
    }
  }

  // >= 30% positives: keep all positives, cap negatives at 7/3 of them.
  const std::size_t max_neg =
      positives.empty() ? negatives.size() : (positives.size() * 7) / 3;
  if (negatives.size() > max_neg) negatives.resize(max_neg);

  std::vector<OsdChunk> dataset;
  dataset.reserve(positives.size() + negatives.size());
  // Deterministic interleave keeps classes mixed without an extra shuffle.
  std::size_t pi = 0, ni = 0;
  while (pi < positives.size() || ni < negatives.size()) {
    if (pi < positives.size()) dataset.push_back(std::move(positives[pi++]));
    if (ni < negatives.size()) dataset.push_back(std::move(negatives[ni++]));
    if (ni < negatives.size()) dataset.push_back(std::move(negatives[ni++]));
  }
  return dataset;
}

}  // namespace sdiar
