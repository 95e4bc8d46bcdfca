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
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sdiar/annotation.hpp"
#include "sdiar/linalg.hpp"

namespace sdiar {

struct DerReport {
  double miss = 0.0;    // percent of scored reference speaker-time
  double fa = 0.0;
  double spkerr = 0.0;
  double der = 0.0;
  double scored_time = 0.0;  // scored reference speaker-time, seconds
  std::vector<std::pair<std::string, std::string>> mapping;  // reference -> hypothesis
};

struct OsdReport {
  std::optional<double> deter;  // absent when the reference has no overlap
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// Scoring runs on 10 ms frames over an integer-millisecond grid; RTTM times
// carry three decimals, so the conversion is lossless. A frame covers
// [10f, 10f+10) ms and is evaluated at its center 10f+5 ms: a speaker is
// active when start_ms <= center < end_ms, and the collar excludes frames
// with |center - boundary| < collar_ms.
namespace scoredetail {

constexpr long long kFrameMs = 10;

inline long long to_ms(double seconds) { return std::llround(seconds * 1000.0); }

struct FrameView {
  std::vector<std::vector<int>> active;  // frame -> active speaker indices
};

inline FrameView frame_view(const Annotation& ann, const std::vector<std::string>& speakers,
                            std::size_t n_frames) {
  std::map<std::string, int> index;
  for (std::size_t s = 0; s < speakers.size(); ++s) index[speakers[s]] = static_cast<int>(s);
  FrameView view;
  view.active.resize(n_frames);
  for (const auto& turn : ann.turns) {
    const int spk = index.at(turn.speaker);
    const long long start = to_ms(turn.seg.start);
    const long long end = to_ms(turn.seg.end);
    for (std::size_t f = 0; f < n_frames; ++f) {
      const long long center = static_cast<long long>(f) * kFrameMs + kFrameMs / 2;
      if (center < start || center >= end) continue;
      auto& set = view.active[f];
      if (std::find(set.begin(), set.end(), spk) == set.end()) set.push_back(spk);
    }
  }
  return view;
}

inline std::vector<char> collar_mask(const Annotation& reference, std::size_t n_frames,
                                     long long collar_ms) {
  std::vector<char> excluded(n_frames, 0);
  if (collar_ms <= 0) return excluded;
  std::vector<long long> bounds;
  for (const auto& turn : reference.turns) {
    bounds.push_back(to_ms(turn.seg.start));
    bounds.push_back(to_ms(turn.seg.end));
  }
  for (std::size_t f = 0; f < n_frames; ++f) {
    const long long center = static_cast<long long>(f) * kFrameMs + kFrameMs / 2;
    for (long long b : bounds) {
      if (std::llabs(center - b) < collar_ms) {
        excluded[f] = 1;
        break;
      }
    }
  }
  return excluded;
}

}  // namespace scoredetail

/// Frame-based DER with a reference-boundary collar and optional exclusion
/// of overlapped reference frames. The speaker mapping maximizes matched
/// speaker-time via Hungarian assignment; per frame,
/// miss = max(0, Nref-Nhyp), fa = max(0, Nhyp-Nref),
/// spkerr = min(Nref, Nhyp) - Ncorrect.
inline DerReport score_der(const Annotation& reference, const Annotation& hypothesis,
                           double collar = 0.25, bool score_overlap = true) {
  using namespace scoredetail;
  DerReport report;
  if (reference.turns.empty()) return report;  // scored_time 0, metrics 0

  const long long span_ms =
      std::max(to_ms(reference.span_end()), to_ms(hypothesis.span_end()));
  const auto n_frames = static_cast<std::size_t>((span_ms + kFrameMs - 1) / kFrameMs);
  const auto ref_speakers = reference.speakers();
  const auto hyp_speakers = hypothesis.speakers();
  const auto ref_view = frame_view(reference, ref_speakers, n_frames);
  const auto hyp_view = frame_view(hypothesis, hyp_speakers, n_frames);
  const auto excluded = collar_mask(reference, n_frames, to_ms(collar));

  std::vector<char> scored(n_frames, 0);
  for (std::size_t f = 0; f < n_frames; ++f) {
    if (excluded[f]) continue;
    if (!score_overlap && ref_view.active[f].size() >= 2) continue;
    scored[f] = 1;
  }

  // Matched speaker-time matrix on scored frames.
  const int nr = static_cast<int>(ref_speakers.size());
  const int nh = static_cast<int>(hyp_speakers.size());
  std::vector<double> overlap(static_cast<std::size_t>(nr) * std::max(nh, 1), 0.0);
  for (std::size_t f = 0; f < n_frames; ++f) {
    if (!scored[f]) continue;
    for (int r : ref_view.active[f])
      for (int h : hyp_view.active[f]) overlap[static_cast<std::size_t>(r) * nh + h] += 1.0;
  }
  std::vector<int> match(nr, -1);
  if (nh > 0) match = hungarian_max(overlap, nr, nh);
  for (int r = 0; r < nr; ++r)
    if (match[r] >= 0) report.mapping.emplace_back(ref_speakers[r], hyp_speakers[match[r]]);

  long long miss = 0, fa = 0, err = 0, ref_frames = 0;
  for (std::size_t f = 0; f < n_frames; ++f) {
    if (!scored[f]) continue;
    const auto& ra = ref_view.active[f];
    const auto& ha = hyp_view.active[f];
    const auto n_ref = static_cast<long long>(ra.size());
    const auto n_hyp = static_cast<long long>(ha.size());
    long long correct = 0;
    for (int r : ra) {
      if (match[r] < 0) continue;
      if (std::find(ha.begin(), ha.end(), match[r]) != ha.end()) ++correct;
    }
    ref_frames += n_ref;
    miss += std::max(0LL, n_ref - n_hyp);
    fa += std::max(0LL, n_hyp - n_ref);
    err += std::min(n_ref, n_hyp) - correct;
  }

  report.scored_time = static_cast<double>(ref_frames) / 100.0;  // 10 ms frames
  if (ref_frames > 0) {
    report.miss = 100.0 * static_cast<double>(miss) / static_cast<double>(ref_frames);
    report.fa = 100.0 * static_cast<double>(fa) / static_cast<double>(ref_frames);
    report.spkerr = 100.0 * static_cast<double>(err) / static_cast<double>(ref_frames);
    report.der = report.miss + report.fa + report.spkerr;
  }
  return report;
}

/// Overlap-detection scoring on 10 ms frames over [0, duration).
/// DetER = (FP + FN) / reference overlap; accuracy over all frames.
inline OsdReport score_osd(const Timeline& reference, const Timeline& hypothesis,
                           double duration = 0.0) {
  using namespace scoredetail;
  const long long span_ms = std::max(
      {to_ms(duration), to_ms(reference.span_end()), to_ms(hypothesis.span_end())});
  const auto n_frames = static_cast<std::size_t>((span_ms + kFrameMs - 1) / kFrameMs);

  auto covers_ms = [](const Timeline& tl, long long center) {
    for (const auto& s : tl.segments())
      if (center >= to_ms(s.start) && center < to_ms(s.end)) return true;
    return false;
  };

  long long tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t f = 0; f < n_frames; ++f) {
    const long long center = static_cast<long long>(f) * kFrameMs + kFrameMs / 2;
    const bool r = covers_ms(reference, center);
    const bool h = covers_ms(hypothesis, center);
    if (r && h)
      ++tp;
    else if (!r && h)
      ++fp;
    else if (r && !h)
      ++fn;
    else
      ++tn;
  }
  OsdReport report;
  const long long total = tp + fp + fn + tn;
  const long long ref_overlap = tp + fn;
  if (ref_overlap > 0)
    report.deter = 100.0 * static_cast<double>(fp + fn) / static_cast<double>(ref_overlap);
  if (total > 0)
    report.accuracy = 100.0 * static_cast<double>(tp + tn) / static_cast<double>(total);
  if (tp + fp > 0)
    report.precision = 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0)
    report.recall = 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn);
  return report;
}

}  // namespace sdiar
