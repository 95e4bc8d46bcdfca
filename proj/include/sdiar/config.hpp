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

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "sdiar/array_model.hpp"
#include "sdiar/errors.hpp"

namespace sdiar {

/// Flat key=value configuration with [section] headers. Dependency-free so
/// any pipeline stage in any language can read the same file.
class KeyValueConfig {
 public:
  static KeyValueConfig from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return from_text(buf.str());
  }

  static KeyValueConfig from_text(const std::string& text) {
    KeyValueConfig cfg;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto comment = line.find('#');
      if (comment != std::string::npos) line.erase(comment);
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return (a == std::string::npos) ? std::string() : s.substr(a, b - a + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ParseError("config line " + std::to_string(lineno) + ": unterminated section");
        section = line.substr(1, line.size() - 2);
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ParseError("config line " + std::to_string(lineno) + ": expected key=value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      cfg.values_[section.empty() ? key : section + "." + key] = value;
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }
  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stod(it->second);
  }
  int get_int(const std::string& key, int fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stoi(it->second);
  }

 private:
  std::map<std::string, std::string> values_;
};

/// All pipeline knobs, with the defaults used throughout the test suite.
struct PipelineConfig {
  // [geometry]
  int mic_count = 8;
  double radius_m = 0.05;
  double sample_rate_hz = 16000.0;
  double sound_speed_mps = 343.0;
  // [bank]
  int directions = 120;  // N
  int taps = 128;        // K
  double loading = 1e-3;
  // [windows]
  double window_len_s = 1.0;
  double window_shift_s = 0.5;
  // [fusion]
  double fusion_a = 0.95;
  // [clustering]
  int max_speakers = 4;
  std::uint64_t seed = 0;
  // [osd]
  std::string osd_model_path;
  double osd_threshold = 0.5;

  ArrayGeometry geometry() const {
    return ArrayGeometry::uniform_circular(mic_count, radius_m, sample_rate_hz,
                                           sound_speed_mps);
  }

  void validate() const {
    if (mic_count < 2) throw InvalidConfig("geometry.mic_count must be >= 2");
    if (radius_m <= 0.0) throw InvalidConfig("geometry.radius_m must be > 0");
    if (sample_rate_hz <= 0.0) throw InvalidConfig("geometry.sample_rate_hz must be > 0");
    if (directions < 1) throw InvalidConfig("bank.directions must be >= 1");
    if (taps < 8 || taps % 2 != 0) throw InvalidConfig("bank.taps must be even and >= 8");
    if (loading < 0.0) throw InvalidConfig("bank.loading must be >= 0");
    if (window_len_s <= 0.0 || window_shift_s <= 0.0 || window_shift_s > window_len_s)
      throw InvalidConfig("invalid window grid");
    if (fusion_a < 0.0 || fusion_a > 1.0) throw InvalidConfig("fusion.a must be in [0,1]");
    if (max_speakers < 1) throw InvalidConfig("clustering.max_speakers must be >= 1");
    if (osd_threshold < 0.0 || osd_threshold > 1.0)
      throw InvalidConfig("osd.threshold must be in [0,1]");
  }

  static PipelineConfig from_file(const std::string& path) {
    const KeyValueConfig kv = KeyValueConfig::from_file(path);
    PipelineConfig cfg;
    cfg.mic_count = kv.get_int("geometry.mic_count", cfg.mic_count);
    cfg.radius_m = kv.get_double("geometry.radius_m", cfg.radius_m);
    cfg.sample_rate_hz = kv.get_double("geometry.sample_rate_hz", cfg.sample_rate_hz);
    cfg.sound_speed_mps = kv.get_double("geometry.sound_speed_mps", cfg.sound_speed_mps);
    cfg.directions = kv.get_int("bank.directions", cfg.directions);
    cfg.taps = kv.get_int("bank.taps", cfg.taps);
    cfg.loading = kv.get_double("bank.loading", cfg.loading);
    cfg.window_len_s = kv.get_double("windows.length_s", cfg.window_len_s);
    cfg.window_shift_s = kv.get_double("windows.shift_s", cfg.window_shift_s);
    cfg.fusion_a = kv.get_double("fusion.a", cfg.fusion_a);
    cfg.max_speakers = kv.get_int("clustering.max_speakers", cfg.max_speakers);
    cfg.seed = static_cast<std::uint64_t>(kv.get_int("clustering.seed", 0));
    cfg.osd_model_path = kv.get_string("osd.model", cfg.osd_model_path);
    cfg.osd_threshold = kv.get_double("osd.threshold", cfg.osd_threshold);
    cfg.validate();
    return cfg;
  }
};

}  // namespace sdiar
