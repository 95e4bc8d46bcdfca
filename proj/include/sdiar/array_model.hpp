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

#include <cmath>
#include <vector>

#include "sdiar/errors.hpp"
#include "sdiar/fft.hpp"

namespace sdiar {

/// Uniform circular microphone array under the far-field plane-wave model.
/// Delays are referenced to the array center; a wave from direction theta
/// arrives first at the microphone facing theta.
struct ArrayGeometry {
  int mic_count = 8;
  double radius = 0.05;          // meters
  double sample_rate = 16000.0;  // Hz
  double sound_speed = 343.0;    // m/s
  std::vector<double> mic_angles;  // radians, strictly increasing in [0, 2pi)

  static ArrayGeometry uniform_circular(int mic_count, double radius,
                                        double sample_rate = 16000.0,
                                        double sound_speed = 343.0) {
    if (mic_count < 2) throw InvalidConfig("mic_count must be >= 2");
    if (radius <= 0.0) throw InvalidConfig("radius must be > 0");
    if (sample_rate <= 0.0) throw InvalidConfig("sample_rate must be > 0");
    ArrayGeometry g;
    g.mic_count = mic_count;
    g.radius = radius;
    g.sample_rate = sample_rate;
    g.sound_speed = sound_speed;
    g.mic_angles.resize(mic_count);
    for (int c = 0; c < mic_count; ++c)
      g.mic_angles[c] = 2.0 * M_PI * c / mic_count;
    return g;
  }

  /// Arrival delay of mic c relative to the array center for a plane wave
  /// from direction theta. Negative for mics facing the source (they lead).
  double delay(int c, double theta) const {
    return -(radius / sound_speed) * std::cos(theta - mic_angles[c]);
  }

  double mic_distance(int i, int j) const {
    const double xi = radius * std::cos(mic_angles[i]);
    const double yi = radius * std::sin(mic_angles[i]);
    const double xj = radius * std::cos(mic_angles[j]);
    const double yj = radius * std::sin(mic_angles[j]);
    return std::hypot(xi - xj, yi - yj);
  }
};

struct SteeringVector {
  double omega = 0.0;  // rad/s
  double theta = 0.0;  // radians
  std::vector<cdouble> values;  // unit modulus per entry
};

struct NoiseCovariance {
  double omega = 0.0;
  std::vector<double> matrix;  // mic_count x mic_count, row-major, real symmetric
  int dim = 0;
};

/// d(omega, theta): values[c] = exp(-j omega tau_c(theta)).
inline SteeringVector steering_vector(const ArrayGeometry& geom, double omega, double theta) {
  SteeringVector d;
  d.omega = omega;
  d.theta = theta;
  d.values.resize(geom.mic_count);
  for (int c = 0; c < geom.mic_count; ++c) {
    const double phase = -omega * geom.delay(c, theta);
    d.values[c] = cdouble(std::cos(phase), std::sin(phase));
  }
  return d;
}

/// Spherically isotropic (diffuse) noise coherence: sinc(omega d_ij / c).
inline NoiseCovariance diffuse_noise_covariance(const ArrayGeometry& geom, double omega) {
  const int n = geom.mic_count;
  NoiseCovariance r;
  r.omega = omega;
  r.dim = n;
  r.matrix.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    r.matrix[i * n + i] = 1.0;
    for (int j = i + 1; j < n; ++j) {
      const double x = omega * geom.mic_distance(i, j) / geom.sound_speed;
      const double v = (std::fabs(x) < 1e-12) ? 1.0 : std::sin(x) / x;
      r.matrix[i * n + j] = v;
      r.matrix[j * n + i] = v;
    }
  }
  return r;
}

}  // namespace sdiar
