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
#include <vector>

#include "sdiar/annotation.hpp"
#include "sdiar/errors.hpp"
#include "sdiar/fft.hpp"
#include "sdiar/sdb_designer.hpp"
#include "sdiar/wav.hpp"

namespace sdiar {

/// Normalized direction-energy spatial embedding of one analysis window.
struct SVector {
  std::vector<double> energies;  // length N, nonnegative, sums to 1
  double window_start = 0.0;     // seconds
  double window_len = 0.0;       // seconds
};

/// Time-domain FIR application of bank direction n:
/// y[t] = sum_c sum_k taps[n][c][k] * x_c[t-k], zero-padded edges.
inline std::vector<double> beamform(const BeamformerBank& bank, const MultichannelAudio& audio,
                                    int n) {
  if (audio.channels() != bank.geom.mic_count)
    throw ChannelMismatch("audio has " + std::to_string(audio.channels()) +
                          " channels, bank expects " + std::to_string(bank.geom.mic_count));
  const int k_taps = bank.taps_per_channel;
  const std::size_t len = audio.length();
  std::vector<double> y(len, 0.0);
  for (int c = 0; c < bank.geom.mic_count; ++c) {
    const auto& x = audio.samples[c];
    const double* taps =
        &bank.taps[(static_cast<std::size_t>(n) * bank.geom.mic_count + c) * k_taps];
    for (std::size_t t = 0; t < len; ++t) {
      double acc = 0.0;
      const int kmax = static_cast<int>(std::min<std::size_t>(k_taps - 1, t));
      for (int k = 0; k <= kmax; ++k) acc += taps[k] * x[t - k];
      y[t] += acc;
    }
  }
  return y;
}

/// Per-window beamformed energies for all N directions, computed by
/// overlap-save FFT convolution. Produces the exact linear convolution, so
/// it matches the time-domain beamform() path to roundoff.
class BeamEnergyExtractor {
 public:
  explicit BeamEnergyExtractor(const BeamformerBank& bank) : bank_(bank) {
    const int k_taps = bank.taps_per_channel;
    fft_size_ = std::max<std::size_t>(2048, next_pow2(static_cast<std::size_t>(2 * k_taps)));
    block_ = fft_size_ - k_taps + 1;
    const int c_ch = bank.geom.mic_count;
    tap_spectra_.assign(static_cast<std::size_t>(bank.directions) * c_ch,
                        std::vector<cdouble>(fft_size_, cdouble(0, 0)));
    for (int n = 0; n < bank.directions; ++n) {
      for (int c = 0; c < c_ch; ++c) {
        auto& spec = tap_spectra_[static_cast<std::size_t>(n) * c_ch + c];
        for (int k = 0; k < k_taps; ++k) spec[k] = cdouble(bank.tap(n, c, k), 0.0);
        fft_inplace(spec);
      }
    }
  }

  /// energies[w][n] = sum of y_n(t)^2 over window w's sample range.
  std::vector<std::vector<double>> window_energies(const MultichannelAudio& audio,
                                                   const std::vector<Window>& windows) const {
    if (audio.channels() != bank_.geom.mic_count)
      throw ChannelMismatch("audio has " + std::to_string(audio.channels()) +
                            " channels, bank expects " + std::to_string(bank_.geom.mic_count));
    const int c_ch = bank_.geom.mic_count;
    const int k_taps = bank_.taps_per_channel;
    const double fs = audio.sample_rate;
    const std::size_t len = audio.length();

    struct SampleRange {
      std::size_t begin, end;
    };
    std::vector<SampleRange> ranges(windows.size());
    std::size_t lo = len, hi = 0;
    for (std::size_t w = 0; w < windows.size(); ++w) {
      const auto b = static_cast<std::size_t>(std::llround(windows[w].start * fs));
      auto e = b + static_cast<std::size_t>(std::llround(windows[w].length * fs));
      e = std::min(e, len);
      ranges[w] = {std::min(b, len), e};
      lo = std::min(lo, ranges[w].begin);
      hi = std::max(hi, ranges[w].end);
    }
    std::vector<std::vector<double>> energies(windows.size(),
                                              std::vector<double>(bank_.directions, 0.0));
    if (windows.empty() || lo >= hi) return energies;

    std::vector<std::vector<cdouble>> xs(c_ch, std::vector<cdouble>(fft_size_));
    std::vector<cdouble> acc(fft_size_);

    for (std::size_t b0 = lo; b0 < hi; b0 += block_) {
      const std::size_t bend = std::min(b0 + block_, hi);
      // Input segment [b0 - K + 1, b0 + block): the leading K-1 samples
      // provide the convolution history; indices < 0 are zero.
      for (int c = 0; c < c_ch; ++c) {
        auto& x = xs[c];
        const auto& src = audio.samples[c];
        for (std::size_t i = 0; i < fft_size_; ++i) {
          const long long t = static_cast<long long>(b0) - (k_taps - 1) + static_cast<long long>(i);
          x[i] = (t >= 0 && t < static_cast<long long>(len)) ? cdouble(src[t], 0.0)
                                                             : cdouble(0.0, 0.0);
        }
        fft_inplace(x);
      }
      for (int n = 0; n < bank_.directions; ++n) {
        std::fill(acc.begin(), acc.end(), cdouble(0.0, 0.0));
        for (int c = 0; c < c_ch; ++c) {
          const auto& spec = tap_spectra_[static_cast<std::size_t>(n) * c_ch + c];
          const auto& x = xs[c];
          for (std::size_t i = 0; i < fft_size_; ++i) acc[i] += spec[i] * x[i];
        }
        fft_inplace(acc, /*inverse=*/true);
        // Valid linear-convolution outputs sit at [K-1, fft_size); output
        // index K-1+i corresponds to sample b0+i.
        for (std::size_t w = 0; w < windows.size(); ++w) {
          const std::size_t s = std::max(ranges[w].begin, b0);
          const std::size_t e = std::min(ranges[w].end, bend);
          if (s >= e) continue;
          double sum = 0.0;
          for (std::size_t t = s; t < e; ++t) {
            const double v = std::real(acc[t - b0 + k_taps - 1]);
            sum += v * v;
          }
          energies[w][n] += sum;
        }
      }
    }
    return energies;
  }

 private:
  const BeamformerBank& bank_;
  std::size_t fft_size_ = 0;
  std::size_t block_ = 0;
  std::vector<std::vector<cdouble>> tap_spectra_;
};

/// Window tiling over [0, duration): full windows while they fit, then one
/// zero-padded partial window if the remainder exceeds half a window.
inline std::vector<Window> tile_windows(double duration, double window_len,
                                        double window_shift) {
  std::vector<Window> windows;
  double start = 0.0;
  while (start + window_len <= duration + 1e-9) {
    windows.push_back({start, window_len});
    start += window_shift;
  }
  if (duration - start > 0.5 * window_len + 1e-9) windows.push_back({start, window_len});
  return windows;
}

inline std::vector<double> normalize_energies(const std::vector<double>& raw) {
  double total = 0.0;
  for (double e : raw) total += e;
  std::vector<double> out(raw.size());
  if (total < 1e-12) {
    // All-silence window carries no direction information.
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(raw.size()));
  } else {
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] / total;
  }
  return out;
}

/// Sliding-window s-vector extraction over the whole recording.
inline std::vector<SVector> extract_svectors(const BeamformerBank& bank,
                                             const MultichannelAudio& audio,
                                             double window_len = 1.0,
                                             double window_shift = 0.5) {
  if (audio.duration() + 1e-9 < window_len)
    throw AudioTooShort("audio of " + std::to_string(audio.duration()) +
                        " s is shorter than the " + std::to_string(window_len) + " s window");
  const std::vector<Window> windows = tile_windows(audio.duration(), window_len, window_shift);
  const BeamEnergyExtractor extractor(bank);
  const auto energies = extractor.window_energies(audio, windows);

  std::vector<SVector> out(windows.size());
  for (std::size_t w = 0; w < windows.size(); ++w) {
    out[w].window_start = windows[w].start;
    out[w].window_len = window_len;
    out[w].energies = normalize_energies(energies[w]);
  }
  return out;
}

}  // namespace sdiar
