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

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "sdiar/annotation.hpp"
#include "sdiar/beam_runtime.hpp"
#include "sdiar/config.hpp"
#include "sdiar/dmsnet.hpp"
#include "sdiar/embedding.hpp"
#include "sdiar/errors.hpp"
#include "sdiar/fusion_cluster.hpp"
#include "sdiar/overlap_assign.hpp"
#include "sdiar/sdb_designer.hpp"
#include "sdiar/wav.hpp"

namespace sdiar {

enum class PipelineMode { kClusterOnly, kWithOsd };

struct StageReport {
  std::string name;
  double wall_ms = 0.0;
  std::size_t out_count = 0;
};

struct RunReport {
  std::string file_id;
  std::string mode;
  std::size_t windows = 0;
  int k = 0;
  int chosen_p = 0;
  std::vector<StageReport> stages;

  std::string to_json() const {
    std::string out = "{\n";
    out += "  \"file_id\": \"" + file_id + "\",\n";
    out += "  \"mode\": \"" + mode + "\",\n";
    out += "  \"windows\": " + std::to_string(windows) + ",\n";
    out += "  \"k\": " + std::to_string(k) + ",\n";
    out += "  \"chosen_p\": " + std::to_string(chosen_p) + ",\n";
    out += "  \"stages\": [\n";
    for (std::size_t i = 0; i < stages.size(); ++i) {
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "    {\"name\": \"%s\", \"wall_ms\": %.3f, \"out_count\": %zu}%s\n",
                    stages[i].name.c_str(), stages[i].wall_ms, stages[i].out_count,
                    i + 1 < stages.size() ? "," : "");
      out += buf;
    }
    out += "  ]\n}\n";
    return out;
  }
};

struct PipelineResult {
  Annotation hypothesis;
  RunReport report;
  std::vector<Window> windows;
  std::vector<int> labels;
};

/// Windows restricted to VAD regions: standard tiling inside each region
/// with a right-aligned final window so the region is covered exactly;
/// regions shorter than one window get a single clipped window. Regions
/// shorter than 0.1 s carry too little signal to analyze and are skipped.
inline std::vector<Window> vad_windows(const Timeline& vad, double window_len,
                                       double window_shift) {
  std::vector<Window> windows;
  for (const auto& region : vad.segments()) {
    if (region.duration() < 0.1) continue;
    if (region.duration() <= window_len + 1e-9) {
      windows.push_back({region.start, region.duration()});
      continue;
    }
    double start = region.start;
    double last_end = region.start;
    while (start + window_len <= region.end + 1e-9) {
      windows.push_back({start, window_len});
      last_end = start + window_len;
      start += window_shift;
    }
    if (last_end < region.end - 1e-9)
      windows.push_back({region.end - window_len, window_len});
  }
  return windows;
}

namespace pipedetail {

class StageTimer {
 public:
  explicit StageTimer(RunReport& report) : report_(report) {}
  template <typename Fn>
  auto run(const std::string& name, std::size_t* count_out, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    auto result = fn();
    const auto t1 = std::chrono::steady_clock::now();
    StageReport stage;
    stage.name = name;
    stage.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    stage.out_count = count_out ? *count_out : 0;
    report_.stages.push_back(stage);
    return result;
  }

 private:
  RunReport& report_;
};

}  // namespace pipedetail

/// Full diarization flow: VAD windows -> s-vectors + embeddings on the
/// shared grid -> late fusion -> NME-SC -> (optional) overlap detection and
/// secondary assignment.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, const MultichannelAudio& audio,
                                   const std::string& file_id, const Timeline& vad,
                                   PipelineMode mode,
                                   const std::vector<SegmentEmbedding>* external = nullptr,
                                   const BeamformerBank* prebuilt_bank = nullptr,
                                   const DmsNet* prebuilt_osd = nullptr) {
  cfg.validate();
  PipelineResult result;
  result.report.file_id = file_id;
  result.report.mode = (mode == PipelineMode::kWithOsd) ? "with_osd" : "cluster_only";
  pipedetail::StageTimer timer(result.report);

  if (audio.channels() != cfg.mic_count)
    throw ChannelMismatch("pipeline: wav has " + std::to_string(audio.channels()) +
                          " channels, config expects " + std::to_string(cfg.mic_count));

  const std::vector<Window> windows = vad_windows(vad, cfg.window_len_s, cfg.window_shift_s);
  result.windows = windows;
  result.report.windows = windows.size();
  if (windows.size() < 2) {
    // Degenerate input: label everything as one speaker inside VAD.
    for (const auto& seg : vad.segments())
      result.hypothesis.turns.push_back(Turn{"spk0", seg, false});
    result.hypothesis.file_id = file_id;
    result.labels.assign(windows.size(), 0);
    result.report.k = vad.empty() ? 0 : 1;
    result.report.chosen_p = 0;
    return result;
  }

  // Beamformer bank.
  BeamformerBank local_bank;
  const BeamformerBank* bank = prebuilt_bank;
  if (!bank) {
    std::size_t count = 1;
    local_bank = timer.run("design_bank", &count, [&] {
      return build_bank(cfg.geometry(), cfg.directions, cfg.taps, cfg.loading);
    });
    bank = &local_bank;
  }

  // Spatial embeddings (s-vectors) on the VAD window grid.
  std::size_t n_windows = windows.size();
  const auto svectors = timer.run("svector", &n_windows, [&] {
    const BeamEnergyExtractor extractor(*bank);
    const auto energies = extractor.window_energies(audio, windows);
    std::vector<std::vector<double>> sv(windows.size());
    for (std::size_t w = 0; w < windows.size(); ++w) sv[w] = normalize_energies(energies[w]);
    return sv;
  });

  // Speaker embeddings: external file or the lightweight spectral embedder.
  // Embeddings are centered per recording before cosine scoring; removing
  // the recording-level component keeps cross-speaker similarities from
  // saturating, which the binarized affinity needs to resolve clusters.
  const auto embeddings = timer.run("embedding", &n_windows, [&] {
    std::vector<std::vector<double>> em(windows.size());
    if (external) {
      if (external->size() != windows.size())
        throw DimensionMismatch("external embeddings: " + std::to_string(external->size()) +
                                " rows for " + std::to_string(windows.size()) + " windows");
      for (std::size_t w = 0; w < windows.size(); ++w) {
        if (std::fabs((*external)[w].window_start - windows[w].start) > 0.02)
          throw DimensionMismatch("external embedding window " + std::to_string(w) +
                                  " is not aligned with the VAD grid");
        em[w] = (*external)[w].vector;
      }
    } else {
      const auto min_samples = static_cast<std::size_t>(std::llround(0.025 * audio.sample_rate));
      for (std::size_t w = 0; w < windows.size(); ++w) {
        const auto begin =
            static_cast<std::size_t>(std::llround(windows[w].start * audio.sample_rate));
        auto end =
            begin + static_cast<std::size_t>(std::llround(windows[w].length * audio.sample_rate));
        end = std::min(end, audio.length());
        std::vector<double> mono(std::max(end - begin, min_samples), 0.0);
        for (int c = 0; c < audio.channels(); ++c)
          for (std::size_t t = begin; t < end; ++t) mono[t - begin] += audio.samples[c][t];
        const double inv = 1.0 / audio.channels();
        for (auto& v : mono) v *= inv;
        try {
          em[w] = lightweight_embed(mono, audio.sample_rate);
        } catch (const AudioTooShort& e) {
          throw AudioTooShort("embedding: window " + std::to_string(w) + ": " + e.what());
        }
      }
    }
    std::vector<std::vector<double>> centered = em;
    std::vector<double> mean(em[0].size(), 0.0);
    for (const auto& e : em)
      for (std::size_t d = 0; d < e.size(); ++d) mean[d] += e[d];
    for (auto& v : mean) v /= static_cast<double>(em.size());
    bool degenerate = false;
    for (auto& e : centered) {
      double norm = 0.0;
      for (std::size_t d = 0; d < e.size(); ++d) {
        e[d] -= mean[d];
        norm += e[d] * e[d];
      }
      if (norm < 1e-20) degenerate = true;
    }
    return degenerate ? em : centered;
  });

  // Late fusion of the two cosine matrices.
  const SimilarityMatrix fused = timer.run("fusion", &n_windows, [&] {
    const SimilarityMatrix a_x = cosine_matrix(embeddings, SimilarityKind::kSpeaker);
    const SimilarityMatrix a_s = cosine_matrix(svectors, SimilarityKind::kSpatial);
    return fuse(a_x, a_s, FusionWeight{cfg.fusion_a});
  });

  const ClusterResult clusters = timer.run("nme_sc", &n_windows, [&] {
    return nme_sc(fused, std::min<int>(cfg.max_speakers, fused.size), cfg.seed);
  });
  result.report.k = clusters.k;
  result.report.chosen_p = clusters.chosen_p;
  result.labels = clusters.labels;

  Annotation hypothesis = timer.run("assign_labels", &n_windows, [&] {
    return assign_labels(clusters, windows, file_id);
  });

  if (mode == PipelineMode::kWithOsd) {
    DmsNet local_model = [&] {
      if (prebuilt_osd) return *prebuilt_osd;
      if (cfg.osd_model_path.empty())
        throw InvalidConfig("with_osd mode requires osd.model in the config");
      return DmsNet::load(cfg.osd_model_path);
    }();
    std::size_t n_regions = 0;
    const Timeline overlaps = timer.run("detect_overlap", &n_regions, [&] {
      Timeline raw = local_model.detect_overlap(audio, cfg.osd_threshold);
      Timeline clipped = raw.intersect(vad);
      n_regions = clipped.size();
      return clipped;
    });
    hypothesis = timer.run("assign_secondary", &n_regions, [&] {
      return assign_secondary(hypothesis, overlaps, fused, windows, clusters.labels);
    });
  }

  result.hypothesis = std::move(hypothesis);
  result.hypothesis.file_id = file_id;
  return result;
}

/// One line per window: `start end e_1 ... e_N`.
inline std::string serialize_svectors(const std::vector<SVector>& svectors) {
  std::string out;
  char buf[64];
  for (const auto& sv : svectors) {
    std::snprintf(buf, sizeof(buf), "%.3f %.3f", sv.window_start,
                  sv.window_start + sv.window_len);
    out += buf;
    for (double e : sv.energies) {
      std::snprintf(buf, sizeof(buf), " %.9g", e);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace sdiar
