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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sdiar/errors.hpp"

namespace sdiar {

/// Interleaved-free multichannel audio: samples[c][t] in [-1, 1].
struct MultichannelAudio {
  std::vector<std::vector<double>> samples;  // [C][L]
  double sample_rate = 16000.0;

  int channels() const { return static_cast<int>(samples.size()); }
  std::size_t length() const { return samples.empty() ? 0 : samples[0].size(); }
  double duration() const { return static_cast<double>(length()) / sample_rate; }

  /// Channel mean, used where a mono view of the array is needed.
  std::vector<double> mono() const {
    std::vector<double> m(length(), 0.0);
    if (samples.empty()) return m;
    for (const auto& ch : samples)
      for (std::size_t t = 0; t < m.size(); ++t) m[t] += ch[t];
    const double inv = 1.0 / channels();
    for (auto& v : m) v *= inv;
    return m;
  }
};

enum class WavFormat { kPcm16, kFloat32 };

namespace wavdetail {
template <typename T>
T read_le(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CorruptHeader("wav: unexpected end of file");
  return v;
}
template <typename T>
void write_le(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
}  // namespace wavdetail

/// Reads RIFF/WAVE, PCM 16-bit or IEEE float 32-bit, any channel count.
/// PCM samples map as s / 32768, so -32768 becomes exactly -1.0.
inline MultichannelAudio read_wav(const std::string& path) {
  using namespace wavdetail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open: " + path);

  char tag[4];
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "RIFF", 4) != 0) throw CorruptHeader("wav: missing RIFF");
  (void)read_le<std::uint32_t>(is);
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "WAVE", 4) != 0) throw CorruptHeader("wav: missing WAVE");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  bool have_fmt = false;
  std::vector<char> data;

  while (is) {
    is.read(tag, 4);
    if (!is) break;
    const auto size = read_le<std::uint32_t>(is);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      format = read_le<std::uint16_t>(is);
      channels = read_le<std::uint16_t>(is);
      sample_rate = read_le<std::uint32_t>(is);
      (void)read_le<std::uint32_t>(is);  // byte rate
      (void)read_le<std::uint16_t>(is);  // block align
      bits = read_le<std::uint16_t>(is);
      if (size > 16) is.ignore(size - 16);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data.resize(size);
      is.read(data.data(), size);
      if (!is) throw CorruptHeader("wav: truncated data chunk");
    } else {
      is.ignore(size + (size & 1u));
    }
  }
  if (!have_fmt) throw CorruptHeader("wav: missing fmt chunk");
  if (channels == 0) throw CorruptHeader("wav: zero channels");

  const bool pcm16 = (format == 1 && bits == 16);
  const bool f32 = (format == 3 && bits == 32);
  if (!pcm16 && !f32)
    throw UnsupportedFormat("wav: only PCM16 and IEEE float32 supported (format=" +
                            std::to_string(format) + ", bits=" + std::to_string(bits) + ")");

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frames = data.size() / (bytes_per_sample * channels);

  MultichannelAudio audio;
  audio.sample_rate = sample_rate;
  audio.samples.assign(channels, std::vector<double>(frames, 0.0));
  const char* p = data.data();
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::uint16_t c = 0; c < channels; ++c) {
      if (pcm16) {
        std::int16_t s;
        std::memcpy(&s, p, 2);
        p += 2;
        audio.samples[c][t] = static_cast<double>(s) / 32768.0;
      } else {
        float s;
        std::memcpy(&s, p, 4);
        p += 4;
        audio.samples[c][t] = static_cast<double>(s);
      }
    }
  }
  return audio;
}

inline void write_wav(const std::string& path, const MultichannelAudio& audio,
                      WavFormat fmt = WavFormat::kPcm16) {
  using namespace wavdetail;
  const int channels = audio.channels();
  if (channels == 0) throw Error("wav: nothing to write");
  const std::size_t frames = audio.length();
  const std::uint16_t bits = (fmt == WavFormat::kPcm16) ? 16 : 32;
  const std::uint32_t byte_rate =
      static_cast<std::uint32_t>(audio.sample_rate) * channels * (bits / 8);
  const std::uint32_t data_size = static_cast<std::uint32_t>(frames * channels * (bits / 8));

  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path);
  os.write("RIFF", 4);
  write_le<std::uint32_t>(os, 36 + data_size);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  write_le<std::uint32_t>(os, 16);
  write_le<std::uint16_t>(os, fmt == WavFormat::kPcm16 ? 1 : 3);
  write_le<std::uint16_t>(os, static_cast<std::uint16_t>(channels));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(audio.sample_rate));
  write_le<std::uint32_t>(os, byte_rate);
  write_le<std::uint16_t>(os, static_cast<std::uint16_t>(channels * (bits / 8)));
  write_le<std::uint16_t>(os, bits);
  os.write("data", 4);
  write_le<std::uint32_t>(os, data_size);

  for (std::size_t t = 0; t < frames; ++t) {
    for (int c = 0; c < channels; ++c) {
      const double v = audio.samples[c][t];
      if (fmt == WavFormat::kPcm16) {
        const double scaled = std::round(v * 32768.0);
        const auto s = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
        write_le<std::int16_t>(os, s);
      } else {
        write_le<float>(os, static_cast<float>(v));
      }
    }
  }
  if (!os) throw Error("write failed: " + path);
}

}  // namespace sdiar
