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
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sdiar/errors.hpp"
#include "sdiar/fft.hpp"

namespace sdiar {

enum class EmbeddingSource { kExternal, kLightweight };

struct SegmentEmbedding {
  std::vector<double> vector;
  double window_start = 0.0;
  double window_len = 0.0;
  EmbeddingSource source = EmbeddingSource::kLightweight;
};

namespace embdetail {

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// 81 triangular filters, 0 Hz to min(8 kHz, Nyquist), HTK mel scale.
inline std::vector<std::vector<double>> mel_filterbank(int n_mels, std::size_t n_fft,
                                                       double sample_rate) {
  const double f_max = std::min(8000.0, sample_rate / 2.0);
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(f_max);
  std::vector<double> centers(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    centers[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));

  const std::size_t n_bins = n_fft / 2 + 1;
  std::vector<std::vector<double>> fb(n_mels, std::vector<double>(n_bins, 0.0));
  for (int m = 0; m < n_mels; ++m) {
    const double lo = centers[m], mid = centers[m + 1], hi = centers[m + 2];
    for (std::size_t b = 0; b < n_bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate / static_cast<double>(n_fft);
      if (f <= lo || f >= hi) continue;
      fb[m][b] = (f <= mid) ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  return fb;
}

}  // namespace embdetail

/// Log-mel filterbank frames: 25 ms window, 10 ms shift, Hamming window,
/// `n_mels` bins, log floored at 1e-10. Returns frames[t][bin].
inline std::vector<std::vector<double>> log_mel_frames(const std::vector<double>& audio,
                                                       double sample_rate, int n_mels = 81) {
  const auto frame_len = static_cast<std::size_t>(std::llround(0.025 * sample_rate));
  const auto frame_shift = static_cast<std::size_t>(std::llround(0.010 * sample_rate));
  if (audio.size() < frame_len)
    throw AudioTooShort("need at least " + std::to_string(frame_len) + " samples, got " +
                        std::to_string(audio.size()));
  const std::size_t n_fft = next_pow2(frame_len);
  const auto fb = embdetail::mel_filterbank(n_mels, n_fft, sample_rate);

  std::vector<double> window(frame_len);
  for (std::size_t i = 0; i < frame_len; ++i)
    window[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (frame_len - 1));

  std::vector<std::vector<double>> frames;
  std::vector<cdouble> buf(n_fft);
  for (std::size_t start = 0; start + frame_len <= audio.size(); start += frame_shift) {
    std::fill(buf.begin(), buf.end(), cdouble(0.0, 0.0));
    for (std::size_t i = 0; i < frame_len; ++i)
      buf[i] = cdouble(audio[start + i] * window[i], 0.0);
    fft_inplace(buf);

    std::vector<double> mel(n_mels, 0.0);
    for (int m = 0; m < n_mels; ++m) {
      double acc = 0.0;
      for (std::size_t b = 0; b <= n_fft / 2; ++b) {
        const double w = fb[m][b];
        if (w == 0.0) continue;
        acc += w * std::norm(buf[b]);
      }
      mel[m] = std::log(std::max(acc, 1e-10));
    }
    frames.push_back(std::move(mel));
  }
  return frames;
}

/// Deterministic segment embedding: per-bin mean and standard deviation of
/// the log-mel frames, each half centered on its own mean. Dimension is
/// 2 * n_mels (162 for the default 81 bins). Centering the mean half makes
/// the embedding invariant to input gain, which shifts every log-mel bin by
/// the same constant.
inline std::vector<double> lightweight_embed(const std::vector<double>& audio_mono,
                                             double sample_rate, int n_mels = 81) {
  const auto frames = log_mel_frames(audio_mono, sample_rate, n_mels);
  const std::size_t n_frames = frames.size();
  std::vector<double> mean(n_mels, 0.0), stddev(n_mels, 0.0);
  for (const auto& f : frames)
    for (int m = 0; m < n_mels; ++m) mean[m] += f[m];
  for (auto& v : mean) v /= static_cast<double>(n_frames);
  for (const auto& f : frames)
    for (int m = 0; m < n_mels; ++m) stddev[m] += (f[m] - mean[m]) * (f[m] - mean[m]);
  for (auto& v : stddev) v = std::sqrt(v / static_cast<double>(n_frames));

  double mean_of_means = 0.0, mean_of_stds = 0.0;
  for (int m = 0; m < n_mels; ++m) {
    mean_of_means += mean[m];
    mean_of_stds += stddev[m];
  }
  mean_of_means /= n_mels;
  mean_of_stds /= n_mels;

  std::vector<double> out(2 * n_mels);
  for (int m = 0; m < n_mels; ++m) {
    out[m] = mean[m] - mean_of_means;
    out[n_mels + m] = stddev[m] - mean_of_stds;
  }
  return out;
}

/// Reads one embedding per line: `start end v_1 ... v_D`. All rows must
/// share the same dimension.
inline std::vector<SegmentEmbedding> load_embeddings(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open: " + path);
  std::vector<SegmentEmbedding> out;
  std::string line;
  int lineno = 0;
  std::size_t dim = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double start = 0.0, end = 0.0;
    if (!(ss >> start >> end))
      throw ParseError("embeddings line " + std::to_string(lineno) +
                       ": expected 'start end v...'");
    SegmentEmbedding e;
    e.window_start = start;
    e.window_len = end - start;
    e.source = EmbeddingSource::kExternal;
    double v;
    while (ss >> v) e.vector.push_back(v);
    if (e.vector.empty())
      throw ParseError("embeddings line " + std::to_string(lineno) + ": no vector components");
    if (dim == 0) {
      dim = e.vector.size();
    } else if (e.vector.size() != dim) {
      throw DimensionMismatch("embeddings line " + std::to_string(lineno) + ": dimension " +
                              std::to_string(e.vector.size()) + " differs from " +
                              std::to_string(dim));
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace sdiar
