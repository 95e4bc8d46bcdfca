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

#include <complex>
#include <cstddef>
#include <vector>

namespace sdiar {

using cdouble = std::complex<double>;

/// In-place iterative radix-2 Cooley-Tukey FFT. Size must be a power of two.
inline void fft_inplace(std::vector<cdouble>& x, bool inverse = false) {
  const std::size_t n = x.size();
  if (n <= 1) return;

  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }

  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
    const cdouble wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cdouble w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        cdouble u = x[i + k];
        cdouble v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& v : x) v *= inv;
  }
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Direct O(K^2) DFT for sizes that need not be a power of two.
/// X[m] = sum_k x[k] exp(-j 2 pi m k / K)   (forward)
inline std::vector<cdouble> dft(const std::vector<cdouble>& x, bool inverse = false) {
  const std::size_t k_pts = x.size();
  std::vector<cdouble> out(k_pts, cdouble(0.0, 0.0));
  const double sign = inverse ? 2.0 : -2.0;
  for (std::size_t m = 0; m < k_pts; ++m) {
    cdouble acc(0.0, 0.0);
    for (std::size_t k = 0; k < k_pts; ++k) {
      const double ang = sign * M_PI * static_cast<double>(m) * static_cast<double>(k) /
                         static_cast<double>(k_pts);
      acc += x[k] * cdouble(std::cos(ang), std::sin(ang));
    }
    out[m] = inverse ? acc / static_cast<double>(k_pts) : acc;
  }
  return out;
}

}  // namespace sdiar
