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
#include <string>
#include <vector>

#include "sdiar/annotation.hpp"
#include "sdiar/errors.hpp"
#include "sdiar/fusion_cluster.hpp"

namespace sdiar {

/// Second OSD stage: inside each detected overlap region, add the
/// second-most-similar cluster as a secondary speaker; primary turns pass
/// through untouched and no secondary labels appear outside the overlaps.
///
/// Per window, a cluster's score is its centroid coordinate for that
/// window, i.e. the mean fused similarity between the window and the
/// cluster's members. Exact ties fall back to the speaker of the
/// nearest-in-time segment with a different label. Secondary turns carry
/// the Turn::secondary flag, which makes the operation idempotent.
inline Annotation assign_secondary(const Annotation& diar, const Timeline& overlaps,
                                   const SimilarityMatrix& fused,
                                   const std::vector<Window>& windows,
                                   const std::vector<int>& labels,
                                   const std::string& speaker_prefix = "spk") {
  if (windows.size() != labels.size())
    throw ShapeMismatch("assign_secondary: one label per window required");
  if (fused.size != static_cast<int>(windows.size()))
    throw ShapeMismatch("assign_secondary: similarity size mismatch");

  Annotation out;
  out.file_id = diar.file_id;
  for (const auto& turn : diar.turns)
    if (!turn.secondary) out.turns.push_back(turn);

  const int k = labels.empty() ? 0 : 1 + *std::max_element(labels.begin(), labels.end());
  if (k <= 1 || overlaps.empty()) {
    out.sort_turns();
    return out;  // single cluster: no secondary speaker exists
  }

  std::vector<std::vector<int>> members(k);
  for (std::size_t w = 0; w < windows.size(); ++w) members[labels[w]].push_back(static_cast<int>(w));

  // Mean fused similarity between window w and cluster c's members.
  auto cluster_score = [&](int w, int c) {
    double acc = 0.0;
    for (int j : members[c]) acc += fused.at(w, j);
    return acc / static_cast<double>(members[c].size());
  };

  // Window w owns [bound(w-1), bound(w)): midpoints between neighboring
  // window centers, clipped at the grid edges (the assign_labels convention).
  auto owned = [&](std::size_t w) {
    const auto center = [&](std::size_t i) { return windows[i].start + 0.5 * windows[i].length; };
    double lo = windows[w].start;
    if (w > 0 && windows[w].start < windows[w - 1].start + windows[w - 1].length + 1e-9)
      lo = 0.5 * (center(w - 1) + center(w));
    double hi = windows[w].start + windows[w].length;
    if (w + 1 < windows.size() &&
        windows[w + 1].start < windows[w].start + windows[w].length + 1e-9)
      hi = 0.5 * (center(w) + center(w + 1));
    return Segment{lo, hi};
  };

  auto nearest_other_speaker = [&](double time, int primary) -> int {
    double best_dist = std::numeric_limits<double>::infinity();
    int best = -1;
    for (std::size_t w = 0; w < windows.size(); ++w) {
      if (labels[w] == primary) continue;
      const double center = windows[w].start + 0.5 * windows[w].length;
      const double dist = std::fabs(center - time);
      if (dist < best_dist) {
        best_dist = dist;
        best = labels[w];
      }
    }
    return best;
  };

  std::vector<Turn> secondary;
  for (const auto& region : overlaps.segments()) {
    for (std::size_t w = 0; w < windows.size(); ++w) {
      const Segment own = owned(w);
      if (!own.intersects(region)) continue;
      const int primary = labels[w];
      int second = -1;
      double best = -std::numeric_limits<double>::infinity();
      bool tie = false;
      for (int c = 0; c < k; ++c) {
        if (c == primary || members[c].empty()) continue;
        const double score = cluster_score(static_cast<int>(w), c);
        if (score > best) {
          best = score;
          second = c;
          tie = false;
        } else if (score == best) {
          tie = true;
        }
      }
      if (second < 0) continue;
      if (tie) {
        const int fallback = nearest_other_speaker(own.start, primary);
        if (fallback >= 0) second = fallback;
      }
      const Segment clip = own.intersection(region);
      if (clip.duration() <= 1e-9) continue;
      secondary.push_back(
          Turn{speaker_prefix + std::to_string(second), clip, /*secondary=*/true});
    }
  }

  // Merge adjacent same-speaker secondary pieces.
  std::sort(secondary.begin(), secondary.end(), [](const Turn& a, const Turn& b) {
    if (a.speaker != b.speaker) return a.speaker < b.speaker;
    return a.seg.start < b.seg.start;
  });
  std::vector<Turn> merged;
  for (const auto& t : secondary) {
    if (!merged.empty() && merged.back().speaker == t.speaker &&
        t.seg.start <= merged.back().seg.end + 1e-9) {
      merged.back().seg.end = std::max(merged.back().seg.end, t.seg.end);
    } else {
      merged.push_back(t);
    }
  }
  for (auto& t : merged) out.turns.push_back(std::move(t));
  out.sort_turns();
  return out;
}

}  // namespace sdiar
