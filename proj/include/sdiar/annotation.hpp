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
#include <set>
#include <string>
#include <vector>

namespace sdiar {

struct Segment {
  double start = 0.0;
  double end = 0.0;

  double duration() const { return end - start; }
  bool contains(double t) const { return t >= start && t < end; }
  bool intersects(const Segment& o) const { return start < o.end && o.start < end; }
  Segment intersection(const Segment& o) const {
    return {std::max(start, o.start), std::min(end, o.end)};
  }
};

/// Sorted, coalesced set of non-overlapping segments.
class Timeline {
 public:
  Timeline() = default;
  explicit Timeline(std::vector<Segment> segs) {
    for (const auto& s : segs) add(s);
  }

  void add(const Segment& s) {
    if (s.end <= s.start) return;
    segments_.push_back(s);
    coalesce();
  }

  const std::vector<Segment>& segments() const { return segments_; }
  bool empty() const { return segments_.empty(); }
  std::size_t size() const { return segments_.size(); }

  double total_duration() const {
    double d = 0.0;
    for (const auto& s : segments_) d += s.duration();
    return d;
  }

  double span_end() const { return segments_.empty() ? 0.0 : segments_.back().end; }

  bool covers(double t) const {
    for (const auto& s : segments_)
      if (s.contains(t)) return true;
    return false;
  }

  Timeline intersect(const Timeline& other) const {
    Timeline out;
    for (const auto& a : segments_)
      for (const auto& b : other.segments())
        if (a.intersects(b)) out.add(a.intersection(b));
    return out;
  }

 private:
  void coalesce() {
    std::sort(segments_.begin(), segments_.end(),
              [](const Segment& a, const Segment& b) { return a.start < b.start; });
    std::vector<Segment> merged;
    for (const auto& s : segments_) {
      if (!merged.empty() && s.start <= merged.back().end + 1e-9)
        merged.back().end = std::max(merged.back().end, s.end);
      else
        merged.push_back(s);
    }
    segments_ = std::move(merged);
  }

  std::vector<Segment> segments_;
};

/// One labeled speech turn. `secondary` marks turns added by the overlap
/// assignment stage; primary turns always carry false.
struct Turn {
  std::string speaker;
  Segment seg;
  bool secondary = false;
};

/// RTTM-backed speaker segmentation of one recording.
struct Annotation {
  std::string file_id = "rec";
  std::vector<Turn> turns;

  std::vector<std::string> speakers() const {
    std::set<std::string> s;
    for (const auto& t : turns) s.insert(t.speaker);
    return {s.begin(), s.end()};
  }

  Timeline speech_timeline() const {
    Timeline tl;
    for (const auto& t : turns) tl.add(t.seg);
    return tl;
  }

  double span_end() const {
    double e = 0.0;
    for (const auto& t : turns) e = std::max(e, t.seg.end);
    return e;
  }

  /// Active speaker set at time t (a speaker counts once even with nested turns).
  std::vector<std::string> active_at(double t) const {
    std::set<std::string> s;
    for (const auto& turn : turns)
      if (turn.seg.contains(t)) s.insert(turn.speaker);
    return {s.begin(), s.end()};
  }

  void sort_turns() {
    std::sort(turns.begin(), turns.end(), [](const Turn& a, const Turn& b) {
      if (a.seg.start != b.seg.start) return a.seg.start < b.seg.start;
      return a.speaker < b.speaker;
    });
  }

  /// Regions where at least two distinct speakers are simultaneously active.
  Timeline overlap_timeline() const {
    // Sweep over turn boundaries; between consecutive boundaries the active
    // set is constant.
    std::vector<double> bounds;
    for (const auto& t : turns) {
      bounds.push_back(t.seg.start);
      bounds.push_back(t.seg.end);
    }
    std::sort(bounds.begin(), bounds.end());
    bounds.erase(std::unique(bounds.begin(), bounds.end()), bounds.end());
    Timeline tl;
    for (std::size_t i = 0; i + 1 < bounds.size(); ++i) {
      const double mid = 0.5 * (bounds[i] + bounds[i + 1]);
      if (active_at(mid).size() >= 2) tl.add({bounds[i], bounds[i + 1]});
    }
    return tl;
  }
};

/// Analysis window on the shared 1 s / 0.5 s grid.
struct Window {
  double start = 0.0;
  double length = 0.0;
};

/// Per-frame binary overlap sequence: frames[t] = 1 when at least two
/// speakers are active at frame t.
struct OverlapLabels {
  std::vector<int> frames;
  double frame_rate = 100.0;  // Hz
};

}  // namespace sdiar
