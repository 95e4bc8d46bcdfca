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
#include <complex>
#include <limits>
#include <vector>

#include "sdiar/errors.hpp"
#include "sdiar/fft.hpp"

namespace sdiar {

// Row-major dense matrices; sizes are small everywhere (channel counts of a
// few, window counts of a few hundred), so no blocking or pivgrowth tricks.

/// Solves A x = b for complex square A by LU with partial pivoting.
/// Returns an estimate of the condition via pivot magnitude ratio in
/// `cond_est` (max|U_ii| / min|U_ii|), which is cheap and adequate to flag
/// near-singular diffuse covariances.
inline std::vector<cdouble> solve_complex(std::vector<cdouble> a, std::vector<cdouble> b,
                                          int n, double* cond_est = nullptr) {
  std::vector<int> piv(n);
  for (int i = 0; i < n; ++i) piv[i] = i;

  for (int col = 0; col < n; ++col) {
    int best = col;
    double best_mag = std::abs(a[col * n + col]);
    for (int r = col + 1; r < n; ++r) {
      const double m = std::abs(a[r * n + col]);
      if (m > best_mag) {
        best_mag = m;
        best = r;
      }
    }
    if (best != col) {
      for (int j = 0; j < n; ++j) std::swap(a[col * n + j], a[best * n + j]);
      std::swap(b[col], b[best]);
    }
    const cdouble pivot = a[col * n + col];
    if (std::abs(pivot) == 0.0) {
      if (cond_est) *cond_est = std::numeric_limits<double>::infinity();
      throw SingularCovariance("exact zero pivot in complex solve");
    }
    for (int r = col + 1; r < n; ++r) {
      const cdouble f = a[r * n + col] / pivot;
      if (f == cdouble(0.0, 0.0)) continue;
      a[r * n + col] = f;
      for (int j = col + 1; j < n; ++j) a[r * n + j] -= f * a[col * n + j];
      b[r] -= f * b[col];
    }
  }

  if (cond_est) {
    double mx = 0.0, mn = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      const double m = std::abs(a[i * n + i]);
      mx = std::max(mx, m);
      mn = std::min(mn, m);
    }
    *cond_est = (mn == 0.0) ? std::numeric_limits<double>::infinity() : mx / mn;
  }

  std::vector<cdouble> x(n);
  for (int i = n - 1; i >= 0; --i) {
    cdouble acc = b[i];
    for (int j = i + 1; j < n; ++j) acc -= a[i * n + j] * x[j];
    x[i] = acc / a[i * n + i];
  }
  return x;
}

struct SymEigResult {
  std::vector<double> values;   // ascending
  std::vector<double> vectors;  // column j of (n x n) row-major = eigenvector j
};

/// Dense symmetric eigendecomposition: Householder tridiagonalization
/// followed by QL with implicit shifts. O(n^3); n here is at most a few
/// thousand similarity-matrix windows.
inline SymEigResult sym_eig(std::vector<double> a, int n) {
  std::vector<double> d(n, 0.0), e(n, 0.0);
  std::vector<double>& z = a;  // transforms accumulate in place

  // Householder reduction (tred2).
  for (int i = n - 1; i > 0; --i) {
    const int l = i - 1;
    double h = 0.0, scale = 0.0;
    if (l > 0) {
      for (int k = 0; k <= l; ++k) scale += std::fabs(z[i * n + k]);
      if (scale == 0.0) {
        e[i] = z[i * n + l];
      } else {
        for (int k = 0; k <= l; ++k) {
          z[i * n + k] /= scale;
          h += z[i * n + k] * z[i * n + k];
        }
        double f = z[i * n + l];
        double g = (f >= 0.0) ? -std::sqrt(h) : std::sqrt(h);
        e[i] = scale * g;
        h -= f * g;
        z[i * n + l] = f - g;
        f = 0.0;
        for (int j = 0; j <= l; ++j) {
          z[j * n + i] = z[i * n + j] / h;
          g = 0.0;
          for (int k = 0; k <= j; ++k) g += z[j * n + k] * z[i * n + k];
          for (int k = j + 1; k <= l; ++k) g += z[k * n + j] * z[i * n + k];
          e[j] = g / h;
          f += e[j] * z[i * n + j];
        }
        const double hh = f / (h + h);
        for (int j = 0; j <= l; ++j) {
          f = z[i * n + j];
          e[j] = g = e[j] - hh * f;
          for (int k = 0; k <= j; ++k)
            z[j * n + k] -= f * e[k] + g * z[i * n + k];
        }
      }
    } else {
      e[i] = z[i * n + l];
    }
    d[i] = h;
  }
  d[0] = 0.0;
  e[0] = 0.0;
  for (int i = 0; i < n; ++i) {
    const int l = i - 1;
    if (d[i] != 0.0) {
      for (int j = 0; j <= l; ++j) {
        double g = 0.0;
        for (int k = 0; k <= l; ++k) g += z[i * n + k] * z[k * n + j];
        for (int k = 0; k <= l; ++k) z[k * n + j] -= g * z[k * n + i];
      }
    }
    d[i] = z[i * n + i];
    z[i * n + i] = 1.0;
    for (int j = 0; j <= l; ++j) {
      z[j * n + i] = 0.0;
      z[i * n + j] = 0.0;
    }
  }

  // QL with implicit shifts (tql2).
  for (int i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;
  for (int l = 0; l < n; ++l) {
    int iter = 0;
    int m;
    do {
      for (m = l; m < n - 1; ++m) {
        const double dd = std::fabs(d[m]) + std::fabs(d[m + 1]);
        if (std::fabs(e[m]) <= 1e-300 || std::fabs(e[m]) <= 2.3e-16 * dd) break;
      }
      if (m != l) {
        if (iter++ == 60) break;  // accept current accuracy
        double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
        double r = std::hypot(g, 1.0);
        g = d[m] - d[l] + e[l] / (g + (g >= 0.0 ? std::fabs(r) : -std::fabs(r)));
        double s = 1.0, c = 1.0, p = 0.0;
        bool underflow = false;
        for (int i = m - 1; i >= l; --i) {
          double f = s * e[i];
          const double b = c * e[i];
          r = std::hypot(f, g);
          e[i + 1] = r;
          if (r == 0.0) {
            d[i + 1] -= p;
            e[m] = 0.0;
            underflow = true;
            break;
          }
          s = f / r;
          c = g / r;
          g = d[i + 1] - p;
          r = (d[i] - g) * s + 2.0 * c * b;
          p = s * r;
          d[i + 1] = g + p;
          g = c * r - b;
          for (int k = 0; k < n; ++k) {
            f = z[k * n + i + 1];
            z[k * n + i + 1] = s * z[k * n + i] + c * f;
            z[k * n + i] = c * z[k * n + i] - s * f;
          }
        }
        if (underflow) continue;
        d[l] -= p;
        e[l] = g;
        e[m] = 0.0;
      }
    } while (m != l);
  }

  // Sort ascending, carrying eigenvectors.
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int x, int y) {
    if (d[x] != d[y]) return d[x] < d[y];
    return x < y;
  });

  SymEigResult res;
  res.values.resize(n);
  res.vectors.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int j = 0; j < n; ++j) {
    res.values[j] = d[order[j]];
    for (int i = 0; i < n; ++i) res.vectors[i * n + j] = z[i * n + order[j]];
  }
  return res;
}

/// Max-weight one-to-one assignment (Hungarian / Kuhn-Munkres with
/// potentials). `weight` is rows x cols row-major; unassigned rows/cols are
/// allowed when the matrix is not square. Returns `match[row] = col or -1`.
inline std::vector<int> hungarian_max(const std::vector<double>& weight, int rows, int cols) {
  const int n = std::max(rows, cols);
  const double kInf = std::numeric_limits<double>::infinity();
  // Pad to square and convert to min-cost.
  double wmax = 0.0;
  for (double w : weight) wmax = std::max(wmax, w);
  std::vector<double> cost(static_cast<std::size_t>(n) * n, wmax);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) cost[r * n + c] = wmax - weight[r * cols + c];

  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> match(rows, -1);
  for (int j = 1; j <= n; ++j) {
    const int r = p[j] - 1;
    const int c = j - 1;
    if (r < rows && c < cols && weight[r * cols + c] > 0.0) match[r] = c;
  }
  return match;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

}  // namespace sdiar
