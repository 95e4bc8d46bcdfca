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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sdiar/annotation.hpp"
#include "sdiar/errors.hpp"

namespace sdiar {

/// Parses SPEAKER rows of an RTTM file. "SPKR-INFO" rows and blank lines are
/// skipped. Rows must have 10 fields and a positive duration.
inline Annotation parse_rttm(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open: " + path);

  Annotation ann;
  bool file_id_set = false;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::vector<std::string> fields;
    std::string f;
    while (ss >> f) fields.push_back(f);
    if (fields.empty()) continue;
    if (fields[0] == "SPKR-INFO") continue;
    if (fields[0] != "SPEAKER")
      throw ParseError("rttm line " + std::to_string(lineno) + ": unknown row type '" +
                       fields[0] + "'");
    if (fields.size() != 10)
      throw ParseError("rttm line " + std::to_string(lineno) + ": expected 10 fields, got " +
                       std::to_string(fields.size()));
    double onset = 0.0, dur = 0.0;
    try {
      onset = std::stod(fields[3]);
      dur = std::stod(fields[4]);
    } catch (const std::exception&) {
      throw ParseError("rttm line " + std::to_string(lineno) + ": bad onset/duration field");
    }
    if (onset < 0.0)
      throw ParseError("rttm line " + std::to_string(lineno) + ": negative onset");
    if (dur <= 0.0)
      throw ParseError("rttm line " + std::to_string(lineno) + ": non-positive duration");
    if (!file_id_set) {
      ann.file_id = fields[1];
      file_id_set = true;
    }
    ann.turns.push_back(Turn{fields[7], Segment{onset, onset + dur}, false});
  }
  ann.sort_turns();
  return ann;
}

inline std::string serialize_rttm(const Annotation& ann) {
  Annotation sorted = ann;
  sorted.sort_turns();
  std::string out;
  char buf[256];
  for (const auto& t : sorted.turns) {
    std::snprintf(buf, sizeof(buf), "SPEAKER %s 1 %.3f %.3f <NA> <NA> %s <NA> <NA>\n",
                  sorted.file_id.c_str(), t.seg.start, t.seg.duration(), t.speaker.c_str());
    out += buf;
  }
  return out;
}

/// Atomic text write: temp file in the same directory, then rename.
inline void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.parent_path().empty()
                           ? fs::path(target.string() + ".tmp")
                           : target.parent_path() / (target.filename().string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open for writing: " + tmp.string());
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

/// Oracle VAD input: RTTM (speech = union of all speaker rows) or a plain
/// two-column "start end" text file.
inline Timeline parse_vad(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open: " + path);
  std::string first;
  std::getline(is, first);
  is.close();

  std::istringstream probe(first);
  std::string tok;
  probe >> tok;
  if (tok == "SPEAKER" || tok == "SPKR-INFO") {
    return parse_rttm(path).speech_timeline();
  }

  Timeline tl;
  std::ifstream is2(path);
  std::string line;
  int lineno = 0;
  while (std::getline(is2, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double start = 0.0, end = 0.0;
    if (!(ss >> start >> end))
      throw ParseError("vad line " + std::to_string(lineno) + ": expected 'start end'");
    if (end <= start)
      throw ParseError("vad line " + std::to_string(lineno) + ": end must exceed start");
    tl.add({start, end});
  }
  return tl;
}

}  // namespace sdiar
