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

#include <filesystem>

#include "sdiar/array_model.hpp"
#include "sdiar/dmsnet.hpp"
#include "sdiar/sim.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

using namespace sdiar;
using testutil::random_chunk;
using testutil::random_labels;
using testutil::tiny_config;

TEST_CASE("frame count matches the shape-propagation oracle") {
  SECTION("paper-default configuration, frozen regression value") {
    DmsNetConfig cfg;  // defaults: L=32000, kernel 251, stride 10, pool {3}
    const int frames = dmsnet_frames(cfg, cfg.chunk_samples());
    CHECK(frames ==
          oracles::shape_oracle_frames(32000, cfg.sinc_kernel, cfg.sinc_stride, cfg.pools));
    CHECK(frames == 1058);
  }
  SECTION("oracle agreement across configurations") {
    for (const auto& pools : {std::vector<int>{3}, std::vector<int>{3, 3}, std::vector<int>{2}}) {
      DmsNetConfig cfg = tiny_config(ExtractionKind::kAsdb, EncoderKind::kConformer);
      cfg.pools = pools;
      CHECK(dmsnet_frames(cfg, cfg.chunk_samples()) ==
            oracles::shape_oracle_frames(cfg.chunk_samples(), cfg.sinc_kernel,
                                         cfg.sinc_stride, pools));
    }
  }
}

TEST_CASE("forward output is a valid posterior") {
  for (auto extraction : {ExtractionKind::kAsdb, ExtractionKind::kSdbSincnet}) {
    for (auto encoder : {EncoderKind::kConformer, EncoderKind::kBilstm}) {
      const auto cfg = tiny_config(extraction, encoder);
      const DmsNet model(cfg);
      const auto post = model.forward(random_chunk(cfg, 3));
      CHECK(static_cast<int>(post.probs.size()) == model.frames_per_chunk());
      for (double p : post.probs) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
        CHECK(std::isfinite(p));
      }
    }
  }
}

TEST_CASE("all-zero audio reduces the SE excitation to its bias path") {
  const auto cfg = tiny_config(ExtractionKind::kAsdb, EncoderKind::kConformer);
  const DmsNet model(cfg);
  MultichannelAudio chunk;
  chunk.sample_rate = cfg.sample_rate;
  chunk.samples.assign(cfg.channels, std::vector<double>(cfg.chunk_samples(), 0.0));

  // Zero input zeroes every squeeze, so the excitation is
  // sigmoid(relu(b1) W2 + b2), recomputed here by hand.
  const auto w = model.se_excitation(chunk);
  const auto& b1 = model.params().at("se.fc1.b");
  const auto& w2 = model.params().at("se.fc2.w");
  const auto& b2 = model.params().at("se.fc2.b");
  REQUIRE(static_cast<int>(w.size()) == cfg.channels);
  for (int c = 0; c < cfg.channels; ++c) {
    double z = b2.data[c];
    for (int r = 0; r < w2.rows; ++r)
      z += std::max(b1.data[r], 0.0) * w2.data[r * w2.cols + c];
    CHECK(w[c] == Catch::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-12));
  }
  const auto post = model.forward(chunk);
  for (double p : post.probs) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
}

TEST_CASE("SE excitation is strictly inside (0, 1)") {
  const auto cfg = tiny_config(ExtractionKind::kAsdb, EncoderKind::kBilstm);
  const DmsNet model(cfg);
  const auto w = model.se_excitation(random_chunk(cfg, 6));
  for (double v : w) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("duplicated channels keep the contract") {
  const auto cfg = tiny_config(ExtractionKind::kAsdb, EncoderKind::kBilstm);
  const DmsNet model(cfg);
  auto chunk = random_chunk(cfg, 4);
  chunk.samples[1] = chunk.samples[0];  // duplicate a channel
  const auto post = model.forward(chunk);
  for (double p : post.probs) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    CHECK(std::isfinite(p));
  }
}

TEST_CASE("wrong chunk shape is rejected") {
  const auto cfg = tiny_config(ExtractionKind::kAsdb, EncoderKind::kConformer);
  const DmsNet model(cfg);
  auto chunk = random_chunk(cfg, 5);
  chunk.samples.pop_back();
  CHECK_THROWS_AS(model.forward(chunk), ShapeMismatch);
  auto chunk2 = random_chunk(cfg, 5);
  for (auto& ch : chunk2.samples) ch.resize(cfg.chunk_samples() / 2);
  CHECK_THROWS_AS(model.forward(chunk2), ShapeMismatch);
}

TEST_CASE("bce_loss worked examples") {
  OverlapPosterior p;
  p.probs = {1.0, 0.0};
  CHECK(bce_loss(p, {1.0, 0.0}) <= 1e-6);
  p.probs = {0.5, 0.5, 0.5};
  CHECK(bce_loss(p, {1.0, 0.0, 1.0}) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
  p.probs = {0.9, 0.1};
  CHECK(bce_loss(p, {1.0, 0.0}) == Catch::Approx(0.105360516).epsilon(1e-6));
  CHECK_THROWS_AS(bce_loss(p, {1.0}), LengthMismatch);
}

TEST_CASE("gradients match finite differences on every variant") {
  const struct {
    ExtractionKind extraction;
    EncoderKind encoder;
  } variants[] = {
      {ExtractionKind::kSdbSincnet, EncoderKind::kBilstm},    // M1
      {ExtractionKind::kSdbSincnet, EncoderKind::kConformer}, // M2
      {ExtractionKind::kAsdb, EncoderKind::kBilstm},          // M3
      {ExtractionKind::kAsdb, EncoderKind::kConformer},       // M4
  };
  int variant_index = 0;
  for (const auto& v : variants) {
    const auto cfg = tiny_config(v.extraction, v.encoder, 11 + variant_index);
    DmsNet model(cfg);
    const auto chunk = random_chunk(cfg, 21 + variant_index);
    const auto labels = random_labels(model.frames_per_chunk(), 31 + variant_index);
    const auto result = oracles::fd_gradcheck(model, chunk, labels, 40, 41 + variant_index);
    INFO("variant " << variant_index << " worst at " << result.worst_name);
    CHECK(result.worst_rel <= 1e-4);
    ++variant_index;
  }
}

TEST_CASE("saturated head has vanishing head gradients") {
  const auto cfg = tiny_config(ExtractionKind::kAsdb, EncoderKind::kBilstm);
  DmsNet model(cfg);
  // Force p ~ 0 for every frame; with labels 0 the clamped BCE is flat.
  model.params().at("fc2.b").data = {30.0, -30.0};
  auto& fc2w = model.params().at("fc2.w").data;
  std::fill(fc2w.begin(), fc2w.end(), 0.0);
  const auto chunk = random_chunk(cfg, 8);
  const std::vector<double> labels(model.frames_per_chunk(), 0.0);
  const auto [loss, grads] = model.backward(chunk, labels);
  CHECK(loss <= 1e-6);
  for (double g : grads.at("fc2.w").data) CHECK(std::fabs(g) <= 1e-6);
  for (double g : grads.at("fc2.b").data) CHECK(std::fabs(g) <= 1e-6);
}

TEST_CASE("non-participating branch tensors get exactly zero gradients") {
  // SDB-SincNet extraction never touches the SE/combine tensors.
  const auto cfg = tiny_config(ExtractionKind::kSdbSincnet, EncoderKind::kBilstm);
  DmsNet model(cfg);
  const auto chunk = random_chunk(cfg, 9);
  const auto labels = random_labels(model.frames_per_chunk(), 10);
  const auto [loss, grads] = model.backward(chunk, labels);
  (void)loss;
  for (const auto* name : {"se.fc1.w", "se.fc1.b", "se.fc2.w", "se.fc2.b", "combine.w",
                           "combine.b"}) {
    for (double g : grads.at(name).data) CHECK(g == 0.0);
  }
}

TEST_CASE("zeroed combine weight and SE row remove a channel's influence") {
  const auto cfg = tiny_config(ExtractionKind::kAsdb, EncoderKind::kConformer);
  DmsNet model(cfg);
  const int dead = 2;
  auto& combine = model.params().at("combine.w").data;
  combine[dead] = 0.0;
  auto& fc1 = model.params().at("se.fc1.w");
  for (int j = 0; j < fc1.cols; ++j) fc1.data[dead * fc1.cols + j] = 0.0;

  auto chunk = random_chunk(cfg, 12);
  const auto base = model.forward(chunk);
  Rng rng(55);
  for (auto& v : chunk.samples[dead]) v = 0.3 * rng.normal();
  const auto perturbed = model.forward(chunk);
  REQUIRE(base.probs.size() == perturbed.probs.size());
  for (std::size_t i = 0; i < base.probs.size(); ++i)
    CHECK(base.probs[i] == perturbed.probs[i]);
}

TEST_CASE("channel permutation with permuted weights is bitwise identical") {
  const auto cfg = tiny_config(ExtractionKind::kAsdb, EncoderKind::kConformer);
  DmsNet model(cfg);
  const auto chunk = random_chunk(cfg, 14);
  const auto base = model.forward(chunk);

  const std::vector<int> perm{2, 0, 3, 1};
  DmsNet permuted_model(cfg);
  permuted_model.params() = model.params();
  auto& p = permuted_model.params();
  const auto orig_fc1 = model.params().at("se.fc1.w");
  const auto orig_fc2 = model.params().at("se.fc2.w");
  const auto orig_fc2b = model.params().at("se.fc2.b");
  const auto orig_comb = model.params().at("combine.w");
  for (int c = 0; c < cfg.channels; ++c) {
    for (int j = 0; j < orig_fc1.cols; ++j)
      p.at("se.fc1.w").data[c * orig_fc1.cols + j] =
          orig_fc1.data[perm[c] * orig_fc1.cols + j];
    for (int r = 0; r < orig_fc2.rows; ++r)
      p.at("se.fc2.w").data[r * orig_fc2.cols + c] =
          orig_fc2.data[r * orig_fc2.cols + perm[c]];
    p.at("se.fc2.b").data[c] = orig_fc2b.data[perm[c]];
    p.at("combine.w").data[c] = orig_comb.data[perm[c]];
  }
  MultichannelAudio permuted_chunk;
  permuted_chunk.sample_rate = chunk.sample_rate;
  permuted_chunk.samples.resize(cfg.channels);
  for (int c = 0; c < cfg.channels; ++c) permuted_chunk.samples[c] = chunk.samples[perm[c]];

  const auto out = permuted_model.forward(permuted_chunk);
  REQUIRE(base.probs.size() == out.probs.size());
  for (std::size_t i = 0; i < base.probs.size(); ++i) CHECK(base.probs[i] == out.probs[i]);
}

TEST_CASE("zero learning rate leaves parameters bitwise unchanged") {
  const auto cfg = tiny_config(ExtractionKind::kAsdb, EncoderKind::kBilstm);
  DmsNet model(cfg);
  const auto before = model.params();
  std::vector<OsdChunk> data{{random_chunk(cfg, 16), random_labels(model.frames_per_chunk(), 17)}};
  train(model, data, 2, 0.0);
  for (std::size_t i = 0; i < before.items().size(); ++i) {
    const auto& a = before.items()[i].second.data;
    const auto& b = model.params().items()[i].second.data;
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
  }
}

TEST_CASE("a single sample can be overfit") {
  const auto cfg = tiny_config(ExtractionKind::kAsdb, EncoderKind::kBilstm, 3);
  DmsNet model(cfg);
  const auto chunk = random_chunk(cfg, 18);
  auto labels = random_labels(model.frames_per_chunk(), 19);
  std::vector<OsdChunk> data{{chunk, labels}};
  const auto result = train(model, data, 200, 5e-3);
  CHECK(result.epoch_loss.back() < 0.1);
  CHECK(result.epoch_loss.size() == 200u);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto cfg = tiny_config(ExtractionKind::kAsdb, EncoderKind::kConformer, 5);
  std::vector<OsdChunk> data;
  for (int i = 0; i < 3; ++i) {
    DmsNet probe(cfg);
    data.push_back({random_chunk(cfg, 100 + i), random_labels(probe.frames_per_chunk(), 200 + i)});
  }
  DmsNet a(cfg), b(cfg);
  train(a, data, 3, 1e-3, 77);
  train(b, data, 3, 1e-3, 77);
  for (std::size_t i = 0; i < a.params().items().size(); ++i) {
    const auto& ta = a.params().items()[i].second.data;
    const auto& tb = b.params().items()[i].second.data;
    for (std::size_t j = 0; j < ta.size(); ++j) CHECK(ta[j] == tb[j]);
  }
}

TEST_CASE("training loss trace decreases on the synthetic task") {
  auto cfg = tiny_config(ExtractionKind::kAsdb, EncoderKind::kBilstm, 9);
  const auto geom = ArrayGeometry::uniform_circular(cfg.channels, 0.05);
  const auto dataset = make_osd_dataset(1, geom, cfg, 321, 12.0, 0.6, 15.0);
  REQUIRE(dataset.size() >= 4u);
  DmsNet model(cfg);
  const auto result = train(model, dataset, 25, 3e-3, 99);
  REQUIRE(result.epoch_loss.size() == 25u);
  // Smoothed over 10-epoch windows, the trace never increases.
  auto window_mean = [&](std::size_t i) {
    double acc = 0.0;
    for (std::size_t e = i; e < i + 10; ++e) acc += result.epoch_loss[e];
    return acc / 10.0;
  };
  for (std::size_t i = 0; i + 11 <= result.epoch_loss.size(); ++i)
    CHECK(window_mean(i + 1) <= window_mean(i) + 1e-9);
}

TEST_CASE("NaN input aborts training with NonFiniteLoss") {
  const auto cfg = tiny_config(ExtractionKind::kAsdb, EncoderKind::kBilstm);
  DmsNet model(cfg);
  auto chunk = random_chunk(cfg, 22);
  chunk.samples[0][10] = std::numeric_limits<double>::quiet_NaN();
  std::vector<OsdChunk> data{{chunk, random_labels(model.frames_per_chunk(), 23)}};
  CHECK_THROWS_AS(train(model, data, 1, 1e-3), NonFiniteLoss);
}

TEST_CASE("empty dataset is rejected") {
  const auto cfg = tiny_config(ExtractionKind::kAsdb, EncoderKind::kBilstm);
  DmsNet model(cfg);
  CHECK_THROWS_AS(train(model, {}, 1, 1e-3), InvalidConfig);
}

TEST_CASE("detect_overlap thresholds and morphology") {
  const auto cfg = tiny_config(ExtractionKind::kAsdb, EncoderKind::kBilstm);
  DmsNet model(cfg);
  MultichannelAudio audio;
  audio.sample_rate = cfg.sample_rate;
  audio.samples.assign(cfg.channels, std::vector<double>(4 * 16000, 0.01));

  SECTION("threshold 1.0 detects nothing (probabilities stay below 1)") {
    CHECK(model.detect_overlap(audio, 1.0).empty());
  }

  SECTION("a saturated-positive head marks the whole recording") {
    model.params().at("fc2.b").data = {-30.0, 30.0};
    auto& fc2w = model.params().at("fc2.w").data;
    std::fill(fc2w.begin(), fc2w.end(), 0.0);
    const auto tl = model.detect_overlap(audio, 0.5);
    REQUIRE(tl.size() == 1u);
    CHECK(tl.segments()[0].start <= 0.05);
    CHECK(tl.segments()[0].end >= 3.9);
  }
}

TEST_CASE("checkpoint round trip preserves config and tensors") {
  namespace fs = std::filesystem;
  const auto cfg = tiny_config(ExtractionKind::kSdbSincnet, EncoderKind::kConformer, 123);
  DmsNet model(cfg);
  const auto path = (fs::temp_directory_path() / "sdiar_test_model.dmsn").string();
  model.save(path);
  const DmsNet loaded = DmsNet::load(path);
  CHECK(loaded.config().extraction == cfg.extraction);
  CHECK(loaded.config().encoder == cfg.encoder);
  CHECK(loaded.config().sinc_filters == cfg.sinc_filters);
  CHECK(loaded.config().pools == cfg.pools);
  REQUIRE(loaded.params().items().size() == model.params().items().size());
  for (std::size_t i = 0; i < model.params().items().size(); ++i) {
    CHECK(loaded.params().items()[i].first == model.params().items()[i].first);
    const auto& a = model.params().items()[i].second.data;
    const auto& b = loaded.params().items()[i].second.data;
    REQUIRE(a.size() == b.size());
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
  }
  // Same chunk, same posterior through the loaded model.
  const auto chunk = random_chunk(cfg, 30);
  const auto p1 = model.forward(chunk);
  const auto p2 = loaded.forward(chunk);
  for (std::size_t i = 0; i < p1.probs.size(); ++i) CHECK(p1.probs[i] == p2.probs[i]);
  fs::remove(path);

  CHECK_THROWS_AS(DmsNet::load("/nonexistent/model.dmsn"), Error);
}

TEST_CASE("sinc band edges stay inside (0, Nyquist)") {
  const auto cfg = tiny_config(ExtractionKind::kAsdb, EncoderKind::kBilstm);
  DmsNet model(cfg);
  // Band-edge invariants hold for any raw parameter values.
  auto& low = model.params().at("sinc.low").data;
  auto& band = model.params().at("sinc.band").data;
  Rng rng(60);
  for (auto& v : low) v = rng.uniform(-2e4, 2e4);
  for (auto& v : band) v = rng.uniform(-2e4, 2e4);
  for (std::size_t f = 0; f < low.size(); ++f) {
    const double f1 = std::min(50.0 + std::fabs(low[f]), 0.45 * cfg.sample_rate);
    const double f2 = std::min(f1 + 50.0 + std::fabs(band[f]), 0.49 * cfg.sample_rate);
    CHECK(f1 > 0.0);
    CHECK(f2 > f1);
    CHECK(f2 < cfg.sample_rate / 2.0);
  }
  // And the model still produces a valid posterior with those parameters.
  const auto post = model.forward(random_chunk(cfg, 31));
  for (double p : post.probs) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
}
