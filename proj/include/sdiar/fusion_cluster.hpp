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
#include <numeric>
#include <string>
#include <vector>

#include "sdiar/annotation.hpp"
#include "sdiar/errors.hpp"
#include "sdiar/linalg.hpp"
#include "sdiar/rng.hpp"

namespace sdiar {

enum class SimilarityKind { kSpeaker, kSpatial, kFused };

/// Symmetric cosine-similarity matrix with unit diagonal.
struct SimilarityMatrix {
  std::vector<double> values;  // M*M row-major
  int size = 0;
  SimilarityKind kind = SimilarityKind::kSpeaker;

  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * size + j]; }
  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * size + j]; }
};

struct FusionWeight {
  double a = 0.95;
};

struct ClusterResult {
  std::vector<int> labels;       // in [0, k)
  int k = 1;
  int chosen_p = 1;
  std::vector<double> eigengaps;  // gaps at the chosen p
};

/// Pairwise cosine similarity of row vectors; diagonal forced to exactly 1.
inline SimilarityMatrix cosine_matrix(const std::vector<std::vector<double>>& vectors,
                                      SimilarityKind kind = SimilarityKind::kSpeaker) {
  const int m = static_cast<int>(vectors.size());
  if (m < 1) throw InvalidConfig("cosine_matrix needs at least one vector");
  std::vector<double> norms(m);
  for (int i = 0; i < m; ++i) {
    norms[i] = norm2(vectors[i]);
    if (norms[i] < 1e-300) throw ZeroVector("all-zero vector at row " + std::to_string(i));
  }
  SimilarityMatrix sim;
  sim.size = m;
  sim.kind = kind;
  sim.values.assign(static_cast<std::size_t>(m) * m, 0.0);
  for (int i = 0; i < m; ++i) {
    sim.at(i, i) = 1.0;
    for (int j = i + 1; j < m; ++j) {
      const double v =
          std::clamp(dot(vectors[i], vectors[j]) / (norms[i] * norms[j]), -1.0, 1.0);
      sim.at(i, j) = v;
      sim.at(j, i) = v;
    }
  }
  return sim;
}

/// Late fusion A_sx = a * A_x + (1 - a) * A_s. The endpoints reproduce the
/// inputs bitwise.
inline SimilarityMatrix fuse(const SimilarityMatrix& a_x, const SimilarityMatrix& a_s,
                             FusionWeight weight) {
  if (a_x.size != a_s.size)
    throw ShapeMismatch("similarity sizes differ: " + std::to_string(a_x.size) + " vs " +
                        std::to_string(a_s.size));
  if (weight.a < 0.0 || weight.a > 1.0) throw InvalidConfig("fusion weight a must be in [0,1]");
  SimilarityMatrix out;
  out.size = a_x.size;
  out.kind = SimilarityKind::kFused;
  if (weight.a == 1.0) {
    out.values = a_x.values;
  } else if (weight.a == 0.0) {
    out.values = a_s.values;
  } else {
    out.values.resize(a_x.values.size());
    for (std::size_t i = 0; i < out.values.size(); ++i)
      out.values[i] = weight.a * a_x.values[i] + (1.0 - weight.a) * a_s.values[i];
  }
  return out;
}

namespace clusterdetail {

/// k-means++ seeding, Lloyd iterations; deterministic for a given seed.
/// Returns inertia; labels written in place.
inline double kmeans_once(const std::vector<std::vector<double>>& points, int k, Rng& rng,
                          std::vector<int>& labels, int max_iters) {
  const int m = static_cast<int>(points.size());
  const std::size_t dim = points[0].size();

  auto dist2 = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) {
      const double diff = a[d] - b[d];
      s += diff * diff;
    }
    return s;
  };

  // k-means++ seeding.
  std::vector<std::vector<double>> centers;
  centers.push_back(points[rng.below(m)]);
  std::vector<double> mind2(m, 0.0);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < m; ++i) {
      double best = dist2(points[i], centers[0]);
      for (std::size_t c = 1; c < centers.size(); ++c)
        best = std::min(best, dist2(points[i], centers[c]));
      mind2[i] = best;
      total += best;
    }
    int chosen = 0;
    if (total <= 0.0) {
      chosen = static_cast<int>(rng.below(m));
    } else {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (int i = 0; i < m; ++i) {
        acc += mind2[i];
        if (acc >= target) {
          chosen = i;
          break;
        }
        chosen = i;
      }
    }
    centers.push_back(points[chosen]);
  }

  labels.assign(m, 0);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (int i = 0; i < m; ++i) {
      int best = 0;
      double bestd = dist2(points[i], centers[0]);
      for (int c = 1; c < k; ++c) {
        const double d = dist2(points[i], centers[c]);
        if (d < bestd) {
          bestd = d;
          best = c;
        }
      }
      if (best != labels[i]) {
        labels[i] = best;
        changed = true;
      }
    }
    // Recompute centers; an emptied cluster grabs the point farthest from
    // its current center (lowest index on ties).
    std::vector<int> counts(k, 0);
    for (int i = 0; i < m; ++i) ++counts[labels[i]];
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      int far_i = -1;
      double far_d = -1.0;
      for (int i = 0; i < m; ++i) {
        if (counts[labels[i]] <= 1) continue;
        const double d = dist2(points[i], centers[labels[i]]);
        if (d > far_d) {
          far_d = d;
          far_i = i;
        }
      }
      if (far_i < 0) continue;
      --counts[labels[far_i]];
      labels[far_i] = c;
      counts[c] = 1;
      changed = true;
    }
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    for (int i = 0; i < m; ++i)
      for (std::size_t d = 0; d < dim; ++d) sums[labels[i]][d] += points[i][d];
    for (int c = 0; c < k; ++c)
      if (counts[c] > 0)
        for (std::size_t d = 0; d < dim; ++d) centers[c][d] = sums[c][d] / counts[c];
    if (!changed && iter > 0) break;
  }

  double inertia = 0.0;
  for (int i = 0; i < m; ++i) inertia += dist2(points[i], centers[labels[i]]);
  return inertia;
}

inline std::vector<int> kmeans(const std::vector<std::vector<double>>& points, int k,
                               std::uint64_t seed, int restarts = 50, int max_iters = 300) {
  std::vector<int> best_labels, labels;
  double best_inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    Rng rng(seed + static_cast<std::uint64_t>(r) * 0x9e3779b97f4a7c15ULL);
    const double inertia = kmeans_once(points, k, rng, labels, max_iters);
    if (inertia < best_inertia) {  // strict: ties keep the earliest restart
      best_inertia = inertia;
      best_labels = labels;
    }
  }
  return best_labels;
}

/// Canonical relabeling by order of first appearance.
inline void relabel_first_appearance(std::vector<int>& labels, int k) {
  std::vector<int> remap(k, -1);
  int next = 0;
  for (int& l : labels) {
    if (remap[l] == -1) remap[l] = next++;
    l = remap[l];
  }
}

/// Row-wise top-p binarization (diagonal kept, negatives clipped to zero),
/// average symmetrization, unnormalized Laplacian L = D - A_bar.
inline std::vector<double> nme_laplacian(const SimilarityMatrix& a, int p) {
  const int m = a.size;
  std::vector<double> bin(static_cast<std::size_t>(m) * m, 0.0);
  std::vector<int> order(m);
  for (int i = 0; i < m; ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int x, int y) {
      const double vx = std::max(a.at(i, x), 0.0);
      const double vy = std::max(a.at(i, y), 0.0);
      if (vx != vy) return vx > vy;
      return x < y;
    });
    for (int r = 0; r < p && r < m; ++r) bin[static_cast<std::size_t>(i) * m + order[r]] = 1.0;
    bin[static_cast<std::size_t>(i) * m + i] = 1.0;
  }
  std::vector<double> lap(static_cast<std::size_t>(m) * m, 0.0);
  for (int i = 0; i < m; ++i) {
    double degree = 0.0;
    for (int j = 0; j < m; ++j) {
      const double w = 0.5 * (bin[static_cast<std::size_t>(i) * m + j] +
                              bin[static_cast<std::size_t>(j) * m + i]);
      lap[static_cast<std::size_t>(i) * m + j] = -w;
      if (j != i) degree += w;
    }
    lap[static_cast<std::size_t>(i) * m + i] = degree;
  }
  return lap;
}

struct PSweepEntry {
  int p = 0;
  double rho = 0.0;
  int best_k = 1;
  std::vector<double> eigengaps;
};

/// NME statistics of one p: eigengaps e_k = lambda_{k+1} - lambda_k for
/// k in 1..max_speakers, g_p = max gap / lambda_max, rho = p / (M g_p).
inline PSweepEntry nme_p_entry(const SimilarityMatrix& a, int p, int max_speakers,
                               const std::vector<double>& eigenvalues) {
  const int m = a.size;
  PSweepEntry entry;
  entry.p = p;
  const int max_k = std::min(max_speakers, m - 1);
  entry.eigengaps.resize(max_k);
  double best_gap = -1.0;
  for (int k = 1; k <= max_k; ++k) {
    entry.eigengaps[k - 1] = eigenvalues[k] - eigenvalues[k - 1];
    if (entry.eigengaps[k - 1] > best_gap) {
      best_gap = entry.eigengaps[k - 1];
      entry.best_k = k;
    }
  }
  const double lambda_max = eigenvalues[m - 1];
  const double g_p = best_gap / (lambda_max + 1e-10);
  entry.rho = (g_p <= 0.0) ? std::numeric_limits<double>::infinity()
                           : static_cast<double>(p) / (m * g_p);
  return entry;
}

}  // namespace clusterdetail

/// Normalized-maximum-eigengap spectral clustering with automatic tuning of
/// the binarization parameter p and the cluster count k. Dense symmetric
/// eigensolver; O(M^3) per p, M at most a few thousand windows.
inline ClusterResult nme_sc(const SimilarityMatrix& a, int max_speakers,
                            std::uint64_t seed = 0) {
  const int m = a.size;
  if (m < 2) throw InvalidConfig("nme_sc needs at least 2 segments");
  if (max_speakers < 1 || max_speakers > m)
    throw InvalidConfig("max_speakers must be in [1, M]");

  // Numerically all-ones affinity: a single cluster, by convention.
  bool degenerate = true;
  for (double v : a.values) {
    if (std::fabs(v - 1.0) > 1e-9) {
      degenerate = false;
      break;
    }
  }
  if (degenerate) {
    ClusterResult res;
    res.labels.assign(m, 0);
    res.k = 1;
    res.chosen_p = 1;
    return res;
  }

  const int p_max = (m + 1) / 2;
  clusterdetail::PSweepEntry best;
  best.rho = std::numeric_limits<double>::infinity();
  for (int p = 1; p <= p_max; ++p) {
    const std::vector<double> lap = clusterdetail::nme_laplacian(a, p);
    auto entry = clusterdetail::nme_p_entry(a, p, max_speakers, sym_eig(lap, m).values);
    if (entry.rho < best.rho) best = std::move(entry);  // ties keep smaller p
  }

  ClusterResult res;
  if (!std::isfinite(best.rho)) {
    // Every considered eigengap was zero: the binarized graph is fully
    // disconnected (zero Laplacian). Fall back to one cluster per
    // connected component, capped at max_speakers.
    best.p = 1;
    const auto values = sym_eig(clusterdetail::nme_laplacian(a, 1), m).values;
    int components = 0;
    for (double v : values)
      if (v < 1e-9) ++components;
    best.best_k = std::min(std::max(components, 1), max_speakers);
    best.eigengaps.assign(std::min(max_speakers, m - 1), 0.0);
  }
  res.chosen_p = best.p;
  res.k = best.best_k;
  res.eigengaps = best.eigengaps;
  if (res.k == 1) {
    res.labels.assign(m, 0);
    return res;
  }

  // Re-derive the chosen Laplacian's eigenvectors for the spectral embedding.
  const SymEigResult eig = sym_eig(clusterdetail::nme_laplacian(a, best.p), m);

  std::vector<std::vector<double>> rows(m, std::vector<double>(res.k, 0.0));
  for (int i = 0; i < m; ++i) {
    double norm = 0.0;
    for (int j = 0; j < res.k; ++j) {
      rows[i][j] = eig.vectors[static_cast<std::size_t>(i) * m + j];
      norm += rows[i][j] * rows[i][j];
    }
    norm = std::sqrt(norm);
    if (norm > 1e-12)
      for (auto& v : rows[i]) v /= norm;
  }

  res.labels = clusterdetail::kmeans(rows, res.k, seed);
  clusterdetail::relabel_first_appearance(res.labels, res.k);
  res.k = 1 + *std::max_element(res.labels.begin(), res.labels.end());
  return res;
}

/// Converts per-window labels into merged speaker segments. Boundaries
/// between windows with different labels sit halfway between the window
/// centers; gaps in the window grid split segments.
inline Annotation assign_labels(const ClusterResult& clusters, const std::vector<Window>& windows,
                                const std::string& file_id = "rec",
                                const std::string& speaker_prefix = "spk") {
  if (clusters.labels.size() != windows.size())
    throw ShapeMismatch("one label per window required");
  Annotation ann;
  ann.file_id = file_id;
  if (windows.empty()) return ann;

  const auto center = [&](std::size_t i) { return windows[i].start + 0.5 * windows[i].length; };

  std::size_t run_start = 0;
  double seg_start = windows[0].start;
  for (std::size_t i = 1; i <= windows.size(); ++i) {
    const bool gap = i < windows.size() &&
                     windows[i].start > windows[i - 1].start + windows[i - 1].length + 1e-9;
    const bool label_change =
        i < windows.size() && clusters.labels[i] != clusters.labels[run_start];
    if (i == windows.size() || gap || label_change) {
      const double seg_end = (i == windows.size() || gap)
                                 ? windows[i - 1].start + windows[i - 1].length
                                 : 0.5 * (center(i - 1) + center(i));
      ann.turns.push_back(Turn{speaker_prefix + std::to_string(clusters.labels[run_start]),
                               Segment{seg_start, seg_end}, false});
      run_start = i;
      seg_start = (i < windows.size() && (gap || label_change))
                      ? (gap ? windows[i].start : seg_end)
                      : seg_end;
    }
  }
  ann.sort_turns();
  return ann;
}

}  // namespace sdiar
