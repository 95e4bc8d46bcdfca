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

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "sdiar/rng.hpp"
#include "sdiar/sdb_designer.hpp"
#include "support/oracles.hpp"

using namespace sdiar;

namespace {
const ArrayGeometry kGeom = ArrayGeometry::uniform_circular(8, 0.05);
}

TEST_CASE("huge loading reduces to delay-and-sum weights") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const double omega = 2.0 * M_PI * rng.uniform(100.0, 7000.0);
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    const auto w = design_narrowband(kGeom, omega, theta, 1e6);
    const auto d = steering_vector(kGeom, omega, theta);
    double err = 0.0;
    for (int c = 0; c < 8; ++c) err += std::norm(w.h[c] - d.values[c] / 8.0);
    CHECK(std::sqrt(err) <= 1e-6);
  }
}

TEST_CASE("distortionless constraint holds by construction") {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const double omega = 2.0 * M_PI * rng.uniform(50.0, 7900.0);
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    const auto w = design_narrowband(kGeom, omega, theta, 1e-3);
    const auto d = steering_vector(kGeom, omega, theta);
    cdouble b(0.0, 0.0);
    for (int c = 0; c < 8; ++c) b += std::conj(w.h[c]) * d.values[c];
    CHECK(std::abs(b - cdouble(1.0, 0.0)) <= 1e-8);
  }
}

TEST_CASE("narrowband design matches an independent Gaussian solver") {
  const double omega = 2.0 * M_PI * 2000.0;
  const auto w = design_narrowband(kGeom, omega, 0.0, 1e-3);

  const auto cov = diffuse_noise_covariance(kGeom, omega);
  std::vector<cdouble> a(64);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      a[i * 8 + j] = cdouble(cov.matrix[i * 8 + j] + (i == j ? 1e-3 : 0.0), 0.0);
  const auto d = steering_vector(kGeom, omega, 0.0);
  const auto x = oracles::gauss_solve(a, d.values, 8);
  cdouble denom(0.0, 0.0);
  for (int c = 0; c < 8; ++c) denom += std::conj(d.values[c]) * x[c];
  for (int c = 0; c < 8; ++c) CHECK(std::abs(w.h[c] - x[c] / denom) <= 1e-9);
}

TEST_CASE("loading zero at DC is singular") {
  CHECK_THROWS_AS(design_narrowband(kGeom, 0.0, 0.0, 0.0), SingularCovariance);
}

TEST_CASE("delay-and-sum FIR peaks at the aligned delay") {
  // Huge loading forces delay-and-sum; each channel approximates a pure
  // fractional delay of -tau_c with the K/2 causality offset.
  const int k_taps = 128;
  const auto taps = realize_fir(kGeom, 0.0, k_taps, 1e6);
  for (int c = 0; c < 8; ++c) {
    int argmax = 0;
    double best = 0.0;
    for (int k = 0; k < k_taps; ++k) {
      const double mag = std::fabs(taps[static_cast<std::size_t>(c) * k_taps + k]);
      if (mag > best) {
        best = mag;
        argmax = k;
      }
    }
    const double tau = kGeom.delay(c, 0.0);
    const double expected = k_taps / 2.0 - tau * kGeom.sample_rate;
    CHECK(std::fabs(argmax - expected) <= 1.0);
  }
}

TEST_CASE("FIR taps reproduce the designed response on the DFT grid") {
  const int k_taps = 64;
  const double loading = 1e-3;
  const auto taps = realize_fir(kGeom, 0.7, k_taps, loading);
  for (int m = 1; m < k_taps / 2; m += 7) {
    const double omega = 2.0 * M_PI * m * kGeom.sample_rate / k_taps;
    const auto w = design_narrowband(kGeom, omega, 0.7, loading);
    for (int c = 0; c < 8; ++c) {
      cdouble dft(0.0, 0.0);
      for (int k = 0; k < k_taps; ++k) {
        const double ang = -omega * k / kGeom.sample_rate;
        dft += taps[static_cast<std::size_t>(c) * k_taps + k] *
               cdouble(std::cos(ang), std::sin(ang));
      }
      const double shift = -omega * (k_taps / 2) / kGeom.sample_rate;
      const cdouble expected = std::conj(w.h[c]) * cdouble(std::cos(shift), std::sin(shift));
      CHECK(std::abs(dft - expected) <= 1e-9);
    }
  }
}

TEST_CASE("FIR realization keeps the distortionless constraint at interior bins") {
  const int k_taps = 64;
  const auto bank = build_bank(kGeom, 4, k_taps, 1e-3);
  for (int n = 0; n < bank.directions; ++n) {
    for (int m = 1; m < k_taps / 2; ++m) {
      const double omega = 2.0 * M_PI * m * kGeom.sample_rate / k_taps;
      const cdouble b = bank_response(bank, n, omega, bank.look_directions[n]);
      CHECK(std::abs(b - cdouble(1.0, 0.0)) <= 1e-6);
    }
  }
}

TEST_CASE("paper configuration produces the documented shapes") {
  const auto taps = realize_fir(kGeom, 0.0, 128, 1e-3);
  CHECK(taps.size() == 8u * 128u);

  const auto bank = build_bank(kGeom, 6, 128, 1e-3);
  CHECK(bank.taps.size() == 6u * 8u * 128u);
  CHECK(bank.look_directions[1] == Catch::Approx(2.0 * M_PI / 6.0));
}

TEST_CASE("single-direction bank equals realize_fir at broadside") {
  const auto bank = build_bank(kGeom, 1, 64, 1e-3);
  const auto taps = realize_fir(kGeom, 0.0, 64, 1e-3);
  REQUIRE(bank.taps.size() == taps.size());
  for (std::size_t i = 0; i < taps.size(); ++i) CHECK(bank.taps[i] == taps[i]);
}

TEST_CASE("bank is rotationally symmetric when C divides N") {
  // Rotating the look direction by one mic spacing relabels the channels.
  const int n_dirs = 8;
  const auto geom = ArrayGeometry::uniform_circular(4, 0.05);
  const auto bank = build_bank(geom, n_dirs, 32, 1e-3);
  const int shift = n_dirs / 4;  // one mic spacing in direction indices
  for (int c = 0; c < 4; ++c)
    for (int k = 0; k < 32; ++k)
      CHECK(bank.tap(shift, c, k) ==
            Catch::Approx(bank.tap(0, (c + 3) % 4, k)).margin(1e-9));
}

TEST_CASE("beampattern magnitude at the look direction is one") {
  const double omega = 2.0 * M_PI * 1500.0;
  const auto w = design_narrowband(kGeom, omega, 1.1, 1e-3);
  std::vector<double> grid;
  for (int g = 0; g < 360; ++g) grid.push_back(2.0 * M_PI * g / 360.0);
  grid.push_back(1.1);
  const auto bp = beampattern(w, kGeom, grid);
  CHECK(std::abs(bp.response.back() - cdouble(1.0, 0.0)) <= 1e-8);
}

TEST_CASE("delay-and-sum pattern is bounded by one") {
  const double omega = 2.0 * M_PI * 3000.0;
  const auto w = design_narrowband(kGeom, omega, 0.3, 1e6);
  std::vector<double> grid;
  for (int g = 0; g < 360; ++g) grid.push_back(2.0 * M_PI * g / 360.0);
  const auto bp = beampattern(w, kGeom, grid);
  for (const auto& r : bp.response) CHECK(std::abs(r) <= 1.0 + 1e-9);
}

TEST_CASE("superdirective design beats delay-and-sum off look direction") {
  const double omega = 2.0 * M_PI * 500.0;
  const auto sdb = design_narrowband(kGeom, omega, 0.0, 1e-3);
  const auto das = design_narrowband(kGeom, omega, 0.0, 1e6);
  std::vector<double> grid;
  for (int g = 0; g < 360; ++g) grid.push_back(2.0 * M_PI * g / 360.0);
  const auto bp_sdb = beampattern(sdb, kGeom, grid);
  const auto bp_das = beampattern(das, kGeom, grid);
  double ms_sdb = 0.0, ms_das = 0.0;
  int count = 0;
  for (int g = 0; g < 360; ++g) {
    const double off = std::fabs(std::remainder(grid[g], 2.0 * M_PI));
    if (off < M_PI / 8.0) continue;  // exclude the main lobe
    ms_sdb += std::norm(bp_sdb.response[g]);
    ms_das += std::norm(bp_das.response[g]);
    ++count;
  }
  CHECK(count > 0);
  CHECK(ms_sdb / count < ms_das / count);
}

TEST_CASE("superdirective solution minimizes the loaded diffuse quadratic form") {
  Rng rng(5);
  for (int m = 1; m < 32; m += 5) {
    const double omega = 2.0 * M_PI * m * kGeom.sample_rate / 64.0;
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    const double loading = 1e-3;
    const auto sdb = design_narrowband(kGeom, omega, theta, loading);
    const auto das = steering_vector(kGeom, omega, theta);
    const auto cov = diffuse_noise_covariance(kGeom, omega);
    auto quad = [&](const std::vector<cdouble>& h) {
      cdouble acc(0.0, 0.0);
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
          acc += std::conj(h[i]) *
                 cdouble(cov.matrix[i * 8 + j] + (i == j ? loading : 0.0), 0.0) * h[j];
      return std::real(acc);
    };
    std::vector<cdouble> das_w(8);
    for (int c = 0; c < 8; ++c) das_w[c] = das.values[c] / 8.0;
    CHECK(quad(sdb.h) <= quad(das_w) + 1e-12);
  }
}

TEST_CASE("FIR taps are real with conjugate-symmetric spectrum") {
  const int k_taps = 64;
  const auto taps = realize_fir(kGeom, 2.0, k_taps, 1e-3);
  for (int c = 0; c < 8; ++c) {
    std::vector<cdouble> buf(k_taps);
    for (int k = 0; k < k_taps; ++k)
      buf[k] = cdouble(taps[static_cast<std::size_t>(c) * k_taps + k], 0.0);
    const auto spec = dft(buf);
    for (int m = 1; m < k_taps / 2; ++m)
      CHECK(std::abs(spec[k_taps - m] - std::conj(spec[m])) <= 1e-9);
  }
}

TEST_CASE("invalid FIR order is rejected") {
  CHECK_THROWS_AS(realize_fir(kGeom, 0.0, 7, 1e-3), InvalidConfig);
  CHECK_THROWS_AS(realize_fir(kGeom, 0.0, 33, 1e-3), InvalidConfig);
}

TEST_CASE("bank file round trip") {
  namespace fs = std::filesystem;
  const auto bank = build_bank(kGeom, 3, 32, 1e-3);
  const auto path = (fs::temp_directory_path() / "sdiar_test_bank.sdbk").string();
  save_bank(bank, path);
  const auto loaded = load_bank(path);
  CHECK(loaded.directions == bank.directions);
  CHECK(loaded.taps_per_channel == bank.taps_per_channel);
  CHECK(loaded.geom.mic_count == bank.geom.mic_count);
  CHECK(loaded.geom.radius == bank.geom.radius);
  CHECK(loaded.geom.sample_rate == bank.geom.sample_rate);
  REQUIRE(loaded.taps.size() == bank.taps.size());
  for (std::size_t i = 0; i < bank.taps.size(); ++i) CHECK(loaded.taps[i] == bank.taps[i]);
  fs::remove(path);

  CHECK_THROWS_AS(load_bank("/nonexistent/bank.sdbk"), Error);
}
