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

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sdiar/array_model.hpp"
#include "sdiar/errors.hpp"
#include "sdiar/fft.hpp"
#include "sdiar/linalg.hpp"

namespace sdiar {

/// Narrowband superdirective weights h for one (omega, look-direction) pair:
/// h = R~^-1 d / (d^H R~^-1 d) with R~ = R_NN + loading * I. The weights
/// satisfy the distortionless constraint h^H d = 1 by construction.
struct NarrowbandWeights {
  double omega = 0.0;
  double theta0 = 0.0;
  std::vector<cdouble> h;
};

/// N-direction x C-channel x K-tap FIR realization of the weight bank.
/// Tap layout is taps[n][c][k] flattened in (n, c, k) order. Each channel
/// filter realizes conj(h_c(omega)) with a uniform K/2-sample causality
/// delay, so that summing the filtered channels reproduces Y = H^H X.
struct BeamformerBank {
  ArrayGeometry geom;
  int directions = 0;  // N
  int taps_per_channel = 0;  // K
  std::vector<double> look_directions;  // radians, 2*pi*n/N
  std::vector<double> taps;  // N*C*K

  double tap(int n, int c, int k) const {
    return taps[(static_cast<std::size_t>(n) * geom.mic_count + c) * taps_per_channel + k];
  }
};

struct Beampattern {
  double omega = 0.0;
  std::vector<double> grid;      // radians
  std::vector<cdouble> response;
};

inline NarrowbandWeights design_narrowband(const ArrayGeometry& geom, double omega,
                                           double theta0, double loading) {
  const int n = geom.mic_count;
  const NoiseCovariance cov = diffuse_noise_covariance(geom, omega);
  std::vector<cdouble> a(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      a[i * n + j] = cdouble(cov.matrix[i * n + j] + (i == j ? loading : 0.0), 0.0);

  const SteeringVector d = steering_vector(geom, omega, theta0);
  double cond = 0.0;
  std::vector<cdouble> x = solve_complex(a, d.values, n, &cond);
  if (cond > 1e12)
    throw SingularCovariance("diffuse covariance condition estimate " + std::to_string(cond) +
                             " at omega=" + std::to_string(omega) + "; increase loading");

  cdouble denom(0.0, 0.0);
  for (int c = 0; c < n; ++c) denom += std::conj(d.values[c]) * x[c];

  NarrowbandWeights w;
  w.omega = omega;
  w.theta0 = theta0;
  w.h.resize(n);
  for (int c = 0; c < n; ++c) w.h[c] = x[c] / denom;
  return w;
}

/// B(omega, theta) = h^H d(omega, theta) over a direction grid.
inline Beampattern beampattern(const NarrowbandWeights& weights, const ArrayGeometry& geom,
                               const std::vector<double>& grid) {
  Beampattern bp;
  bp.omega = weights.omega;
  bp.grid = grid;
  bp.response.resize(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const SteeringVector d = steering_vector(geom, weights.omega, grid[g]);
    cdouble acc(0.0, 0.0);
    for (int c = 0; c < geom.mic_count; ++c) acc += std::conj(weights.h[c]) * d.values[c];
    bp.response[g] = acc;
  }
  return bp;
}

/// Frequency-sampled FIR realization of the look-direction theta0 design:
/// narrowband weights on the K-point DFT grid, conjugate symmetry, inverse
/// DFT per channel, circular shift of K/2 samples. Bins 0 and Nyquist use
/// delay-and-sum weights restricted to their real part (a complex design is
/// degenerate where the response must be real).
inline std::vector<double> realize_fir(const ArrayGeometry& geom, double theta0, int k_taps,
                                       double loading) {
  if (k_taps < 8 || k_taps % 2 != 0) throw InvalidConfig("FIR order K must be even and >= 8");
  const int c_ch = geom.mic_count;
  const int half = k_taps / 2;
  const double fs = geom.sample_rate;

  // Applied per-channel response G_c(omega) = conj(h_c(omega)).
  std::vector<std::vector<cdouble>> spectrum(c_ch, std::vector<cdouble>(k_taps, cdouble(0, 0)));
  for (int m = 0; m <= half; ++m) {
    const double omega = 2.0 * M_PI * (static_cast<double>(m) * fs / k_taps);
    if (m == 0 || m == half) {
      const SteeringVector d = steering_vector(geom, omega, theta0);
      for (int c = 0; c < c_ch; ++c)
        spectrum[c][m] = cdouble(std::real(std::conj(d.values[c])) / c_ch, 0.0);
    } else {
      const NarrowbandWeights w = design_narrowband(geom, omega, theta0, loading);
      for (int c = 0; c < c_ch; ++c) spectrum[c][m] = std::conj(w.h[c]);
    }
  }
  for (int c = 0; c < c_ch; ++c)
    for (int m = 1; m < half; ++m) spectrum[c][k_taps - m] = std::conj(spectrum[c][m]);

  std::vector<double> taps(static_cast<std::size_t>(c_ch) * k_taps, 0.0);
  for (int c = 0; c < c_ch; ++c) {
    const std::vector<cdouble> g = dft(spectrum[c], /*inverse=*/true);
    for (int k = 0; k < k_taps; ++k)
      taps[static_cast<std::size_t>(c) * k_taps + k] = std::real(g[(k + half) % k_taps]);
  }
  return taps;
}

/// Builds the full bank: look_directions[n] = 2*pi*n/N.
inline BeamformerBank build_bank(const ArrayGeometry& geom, int directions, int k_taps,
                                 double loading) {
  if (directions < 1) throw InvalidConfig("bank needs at least one direction");
  BeamformerBank bank;
  bank.geom = geom;
  bank.directions = directions;
  bank.taps_per_channel = k_taps;
  bank.look_directions.resize(directions);
  bank.taps.resize(static_cast<std::size_t>(directions) * geom.mic_count * k_taps);
  for (int n = 0; n < directions; ++n) {
    const double theta = 2.0 * M_PI * n / directions;
    bank.look_directions[n] = theta;
    const std::vector<double> t = realize_fir(geom, theta, k_taps, loading);
    std::copy(t.begin(), t.end(),
              bank.taps.begin() + static_cast<std::size_t>(n) * geom.mic_count * k_taps);
  }
  return bank;
}

/// Realized beampattern of bank direction n at angular frequency omega,
/// with the uniform K/2-sample causality delay compensated so that the
/// distortionless look direction reads 1.
inline cdouble bank_response(const BeamformerBank& bank, int n, double omega, double theta) {
  const ArrayGeometry& geom = bank.geom;
  const int k_taps = bank.taps_per_channel;
  const SteeringVector d = steering_vector(geom, omega, theta);
  cdouble acc(0.0, 0.0);
  for (int c = 0; c < geom.mic_count; ++c) {
    cdouble t(0.0, 0.0);
    for (int k = 0; k < k_taps; ++k) {
      const double ang = -omega * k / geom.sample_rate;
      t += bank.tap(n, c, k) * cdouble(std::cos(ang), std::sin(ang));
    }
    acc += t * d.values[c];
  }
  const double comp = omega * (k_taps / 2) / geom.sample_rate;
  return acc * cdouble(std::cos(comp), std::sin(comp));
}

// ---------------------------------------------------------------------------
// Bank file format: "SDBK" magic, u32 version, u32 N, u32 C, u32 K,
// f64 sample_rate, f64 radius, then N*C*K little-endian f64 taps.
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "bank serialization assumes a little-endian host");

namespace detail {
template <typename T>
void write_raw(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_raw(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CorruptHeader("unexpected end of file");
  return v;
}
}  // namespace detail

inline void save_bank(const BeamformerBank& bank, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path);
  os.write("SDBK", 4);
  detail::write_raw<std::uint32_t>(os, 1u);
  detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(bank.directions));
  detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(bank.geom.mic_count));
  detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(bank.taps_per_channel));
  detail::write_raw<double>(os, bank.geom.sample_rate);
  detail::write_raw<double>(os, bank.geom.radius);
  for (double t : bank.taps) detail::write_raw<double>(os, t);
  if (!os) throw Error("write failed: " + path);
}

inline BeamformerBank load_bank(const std::string& path, double sound_speed = 343.0) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SDBK", 4) != 0)
    throw CorruptHeader("not a beamformer bank file: " + path);
  const auto version = detail::read_raw<std::uint32_t>(is);
  if (version != 1u) throw UnsupportedFormat("unknown bank version " + std::to_string(version));
  const auto n = detail::read_raw<std::uint32_t>(is);
  const auto c = detail::read_raw<std::uint32_t>(is);
  const auto k = detail::read_raw<std::uint32_t>(is);
  const double fs = detail::read_raw<double>(is);
  const double radius = detail::read_raw<double>(is);

  BeamformerBank bank;
  bank.geom = ArrayGeometry::uniform_circular(static_cast<int>(c), radius, fs, sound_speed);
  bank.directions = static_cast<int>(n);
  bank.taps_per_channel = static_cast<int>(k);
  bank.look_directions.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) bank.look_directions[i] = 2.0 * M_PI * i / n;
  bank.taps.resize(static_cast<std::size_t>(n) * c * k);
  for (auto& t : bank.taps) t = detail::read_raw<double>(is);
  return bank;
}

}  // namespace sdiar
