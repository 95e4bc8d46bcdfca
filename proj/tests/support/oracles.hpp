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

// Test-only reference implementations, kept deliberately independent of the
// library code paths they check: a cyclic Jacobi eigensolver (the library
// uses tridiagonal QL), plain Gaussian elimination (the library uses LU with
// a condition estimate), an exhaustive-mapping frame counter for DER, an
// exhaustive NME p-sweep, and a finite-difference gradient checker.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "sdiar/annotation.hpp"
#include "sdiar/dmsnet.hpp"
#include "sdiar/fusion_cluster.hpp"
#include "sdiar/rng.hpp"

namespace oracles {

// ---------------------------------------------------------------------------
// Cyclic Jacobi eigenvalues for dense symmetric matrices.
// ---------------------------------------------------------------------------

inline std::vector<double> jacobi_eigenvalues(std::vector<double> a, int n) {
  for (int sweep = 0; sweep < 200; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::fabs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[k * n + p];
          const double akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[p * n + k];
          const double aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> values(n);
  for (int i = 0; i < n; ++i) values[i] = a[i * n + i];
  std::sort(values.begin(), values.end());
  return values;
}

// ---------------------------------------------------------------------------
// Gaussian elimination with partial pivoting (complex), no shortcuts.
// ---------------------------------------------------------------------------

inline std::vector<std::complex<double>> gauss_solve(std::vector<std::complex<double>> a,
                                                     std::vector<std::complex<double>> b,
                                                     int n) {
  for (int col = 0; col < n; ++col) {
    int pivot_row = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[pivot_row * n + col])) pivot_row = r;
    if (pivot_row != col) {
      for (int j = 0; j < n; ++j) std::swap(a[col * n + j], a[pivot_row * n + j]);
      std::swap(b[col], b[pivot_row]);
    }
    for (int r = col + 1; r < n; ++r) {
      const std::complex<double> f = a[r * n + col] / a[col * n + col];
      for (int j = col; j < n; ++j) a[r * n + j] -= f * a[col * n + j];
      b[r] -= f * b[col];
    }
  }
  std::vector<std::complex<double>> x(n);
  for (int i = n - 1; i >= 0; --i) {
    std::complex<double> acc = b[i];
    for (int j = i + 1; j < n; ++j) acc -= a[i * n + j] * x[j];
    x[i] = acc / a[i * n + i];
  }
  return x;
}

// ---------------------------------------------------------------------------
// Brute-force DER: every 10 ms frame enumerated, every injective speaker
// mapping tried. Times go through the same integer-millisecond convention
// the scorers document: frame center 10f+5 ms, active iff start <= c < end,
// collar excludes |c - boundary| < collar.
// ---------------------------------------------------------------------------

struct BruteDer {
  double miss = 0.0, fa = 0.0, spkerr = 0.0, der = 0.0, scored_time = 0.0;
};

inline BruteDer brute_force_der(const sdiar::Annotation& ref, const sdiar::Annotation& hyp,
                                double collar, bool score_overlap) {
  BruteDer out;
  if (ref.turns.empty()) return out;
  auto ms = [](double s) { return static_cast<long long>(std::llround(s * 1000.0)); };

  const auto ref_speakers = ref.speakers();
  const auto hyp_speakers = hyp.speakers();
  const int nr = static_cast<int>(ref_speakers.size());
  const int nh = static_cast<int>(hyp_speakers.size());
  std::map<std::string, int> ref_idx, hyp_idx;
  for (int i = 0; i < nr; ++i) ref_idx[ref_speakers[i]] = i;
  for (int i = 0; i < nh; ++i) hyp_idx[hyp_speakers[i]] = i;

  long long span = 0;
  for (const auto& t : ref.turns) span = std::max(span, ms(t.seg.end));
  for (const auto& t : hyp.turns) span = std::max(span, ms(t.seg.end));
  const long long n_frames = (span + 9) / 10;
  const long long collar_ms = ms(collar);

  struct Frame {
    std::vector<int> ref, hyp;
  };
  std::vector<Frame> frames;
  for (long long f = 0; f < n_frames; ++f) {
    const long long center = f * 10 + 5;
    bool excluded = false;
    for (const auto& t : ref.turns) {
      if (std::llabs(center - ms(t.seg.start)) < collar_ms ||
          std::llabs(center - ms(t.seg.end)) < collar_ms) {
        excluded = true;
        break;
      }
    }
    if (excluded) continue;
    Frame frame;
    for (const auto& t : ref.turns)
      if (center >= ms(t.seg.start) && center < ms(t.seg.end)) {
        const int s = ref_idx[t.speaker];
        if (std::find(frame.ref.begin(), frame.ref.end(), s) == frame.ref.end())
          frame.ref.push_back(s);
      }
    if (!score_overlap && frame.ref.size() >= 2) continue;
    for (const auto& t : hyp.turns)
      if (center >= ms(t.seg.start) && center < ms(t.seg.end)) {
        const int s = hyp_idx[t.speaker];
        if (std::find(frame.hyp.begin(), frame.hyp.end(), s) == frame.hyp.end())
          frame.hyp.push_back(s);
      }
    frames.push_back(std::move(frame));
  }

  // Exhaustive injective mappings ref -> hyp (or unmapped).
  std::vector<int> mapping(nr, -1), best_mapping(nr, -1);
  std::vector<char> used(nh, 0);
  long long best_correct = -1;
  auto correct_for = [&](const std::vector<int>& map_) {
    long long correct = 0;
    for (const auto& f : frames)
      for (int r : f.ref) {
        if (map_[r] < 0) continue;
        if (std::find(f.hyp.begin(), f.hyp.end(), map_[r]) != f.hyp.end()) ++correct;
      }
    return correct;
  };
  std::function<void(int)> rec = [&](int r) {
    if (r == nr) {
      const long long c = correct_for(mapping);
      if (c > best_correct) {
        best_correct = c;
        best_mapping = mapping;
      }
      return;
    }
    mapping[r] = -1;
    rec(r + 1);
    for (int h = 0; h < nh; ++h) {
      if (used[h]) continue;
      used[h] = 1;
      mapping[r] = h;
      rec(r + 1);
      used[h] = 0;
      mapping[r] = -1;
    }
  };
  rec(0);

  long long miss = 0, fa = 0, err = 0, ref_frames = 0;
  for (const auto& f : frames) {
    const auto n_ref = static_cast<long long>(f.ref.size());
    const auto n_hyp = static_cast<long long>(f.hyp.size());
    long long correct = 0;
    for (int r : f.ref)
      if (best_mapping[r] >= 0 &&
          std::find(f.hyp.begin(), f.hyp.end(), best_mapping[r]) != f.hyp.end())
        ++correct;
    ref_frames += n_ref;
    miss += std::max(0LL, n_ref - n_hyp);
    fa += std::max(0LL, n_hyp - n_ref);
    err += std::min(n_ref, n_hyp) - correct;
  }
  out.scored_time = static_cast<double>(ref_frames) / 100.0;
  if (ref_frames > 0) {
    out.miss = 100.0 * static_cast<double>(miss) / static_cast<double>(ref_frames);
    out.fa = 100.0 * static_cast<double>(fa) / static_cast<double>(ref_frames);
    out.spkerr = 100.0 * static_cast<double>(err) / static_cast<double>(ref_frames);
    out.der = out.miss + out.fa + out.spkerr;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Exhaustive NME p-sweep with the Jacobi eigensolver.
// ---------------------------------------------------------------------------

struct NmeOracleResult {
  int p = 0;
  int k = 1;
};

inline NmeOracleResult nme_oracle(const sdiar::SimilarityMatrix& a, int max_speakers) {
  const int m = a.size;
  NmeOracleResult best;
  double best_rho = std::numeric_limits<double>::infinity();
  for (int p = 1; p <= (m + 1) / 2; ++p) {
    // Independent binarization: value-sorted row entries, diagonal kept.
    std::vector<double> bin(static_cast<std::size_t>(m) * m, 0.0);
    for (int i = 0; i < m; ++i) {
      std::vector<std::pair<double, int>> row(m);
      for (int j = 0; j < m; ++j) row[j] = {std::max(a.at(i, j), 0.0), j};
      std::stable_sort(row.begin(), row.end(), [](const auto& x, const auto& y) {
        if (x.first != y.first) return x.first > y.first;
        return x.second < y.second;
      });
      for (int r = 0; r < p; ++r) bin[static_cast<std::size_t>(i) * m + row[r].second] = 1.0;
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
    const auto values = jacobi_eigenvalues(lap, m);
    const int max_k = std::min(max_speakers, m - 1);
    double best_gap = -1.0;
    int best_k = 1;
    for (int k = 1; k <= max_k; ++k) {
      const double gap = values[k] - values[k - 1];
      if (gap > best_gap) {
        best_gap = gap;
        best_k = k;
      }
    }
    const double g_p = best_gap / (values[m - 1] + 1e-10);
    const double rho = (g_p <= 0.0) ? std::numeric_limits<double>::infinity()
                                    : static_cast<double>(p) / (m * g_p);
    if (rho < best_rho) {
      best_rho = rho;
      best.p = p;
      best.k = best_k;
    }
  }
  return best;
}

/// Seeded perturbed block-diagonal similarity matrix.
struct BlockCase {
  sdiar::SimilarityMatrix matrix;
  std::vector<int> truth;
  int k = 0;
};

inline BlockCase make_block_case(std::uint64_t seed, int k, int m) {
  sdiar::Rng rng(seed);
  BlockCase out;
  out.k = k;
  std::vector<int> sizes(k, m / k);
  for (int i = 0; i < m % k; ++i) ++sizes[i];
  for (int b = 0; b < k; ++b)
    for (int i = 0; i < sizes[b]; ++i) out.truth.push_back(b);
  out.matrix.size = m;
  out.matrix.values.assign(static_cast<std::size_t>(m) * m, 0.0);
  for (int i = 0; i < m; ++i) {
    out.matrix.at(i, i) = 1.0;
    for (int j = i + 1; j < m; ++j) {
      const double base = (out.truth[i] == out.truth[j]) ? 0.9 : 0.1;
      const double v = base + 0.05 * (2.0 * rng.uniform() - 1.0);
      out.matrix.at(i, j) = v;
      out.matrix.at(j, i) = v;
    }
  }
  return out;
}

/// Labels equal up to a renaming of cluster ids.
inline bool labels_match_up_to_permutation(const std::vector<int>& a,
                                           const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> fwd, bwd;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto f = fwd.find(a[i]);
    const auto g = bwd.find(b[i]);
    if (f == fwd.end() && g == bwd.end()) {
      fwd[a[i]] = b[i];
      bwd[b[i]] = a[i];
    } else if (f == fwd.end() || g == bwd.end() || f->second != b[i] || g->second != a[i]) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check for DMSNet.
// ---------------------------------------------------------------------------

struct GradCheckResult {
  int checked = 0;
  double worst_rel = 0.0;
  std::string worst_name;
};

inline GradCheckResult fd_gradcheck(sdiar::DmsNet& model, const sdiar::MultichannelAudio& chunk,
                                    const std::vector<double>& labels, int n_coords,
                                    std::uint64_t seed, double step = 1e-5) {
  const auto [loss, grads] = model.backward(chunk, labels);
  (void)loss;
  sdiar::Rng rng(seed);
  GradCheckResult result;
  const auto& items = grads.items();
  std::size_t total = 0;
  for (const auto& [name, g] : items) total += g.data.size();

  for (int i = 0; i < n_coords; ++i) {
    std::size_t flat = rng.below(total);
    std::size_t tensor_idx = 0;
    while (flat >= items[tensor_idx].second.data.size()) {
      flat -= items[tensor_idx].second.data.size();
      ++tensor_idx;
    }
    const std::string& name = items[tensor_idx].first;
    auto& tensor = model.params().at(name);
    const double orig = tensor.data[flat];
    tensor.data[flat] = orig + step;
    const double lp = model.loss(chunk, labels);
    tensor.data[flat] = orig - step;
    const double lm = model.loss(chunk, labels);
    tensor.data[flat] = orig;
    const double fd = (lp - lm) / (2.0 * step);
    const double an = items[tensor_idx].second.data[flat];
    const double rel = std::fabs(fd - an) / std::max({1e-6, std::fabs(fd), std::fabs(an)});
    if (rel > result.worst_rel) {
      result.worst_rel = rel;
      result.worst_name = name + "[" + std::to_string(flat) + "]";
    }
    ++result.checked;
  }
  return result;
}

/// Shape-propagation oracle for the DMSNet frame count, written as the
/// plain composition of the layer arithmetic.
inline int shape_oracle_frames(int samples, int kernel, int stride,
                               const std::vector<int>& pools) {
  int t = (samples - kernel) / stride + 1;
  for (int p : pools) t = t / p;
  return t;
}

}  // namespace oracles
