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
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sdiar/annotation.hpp"
#include "sdiar/autodiff.hpp"
#include "sdiar/errors.hpp"
#include "sdiar/rng.hpp"
#include "sdiar/sdb_designer.hpp"
#include "sdiar/wav.hpp"

namespace sdiar {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class ExtractionKind { kAsdb, kSdbSincnet };
enum class EncoderKind { kConformer, kBilstm };

struct ConformerSpec {
  int layers = 2;
  int d_model = 64;
  int heads = 4;
  int ff_dim = 128;
  int conv_kernel = 15;
};

struct BilstmSpec {
  int layers = 2;
  int hidden = 128;
};

/// Sequence-labeling model over raw multichannel waveforms: per-channel
/// SincNet features, channel attention (SE + 1x1 combine) or a fixed SDB
/// front end, then a Conformer or Bi-LSTM encoder and a two-class
/// frame-wise softmax head.
struct DmsNetConfig {
  int channels = 8;
  double sample_rate = 16000.0;
  double chunk_len = 2.0;      // seconds
  int sinc_filters = 60;       // F; feature dimension D equals F
  int sinc_kernel = 251;
  int sinc_stride = 10;
  std::vector<int> pools = {3};
  int se_reduction = 4;
  ExtractionKind extraction = ExtractionKind::kAsdb;
  EncoderKind encoder = EncoderKind::kConformer;
  ConformerSpec conformer;
  BilstmSpec bilstm;
  int fc1_dim = 128;
  std::uint64_t seed = 0;
  // Geometry of the fixed SDB preprocessing used by the SDB-SincNet variant.
  double array_radius = 0.05;
  double sound_speed = 343.0;
  int sdb_taps = 128;
  double sdb_loading = 1e-3;

  int chunk_samples() const {
    return static_cast<int>(std::llround(chunk_len * sample_rate));
  }
  int se_bottleneck() const { return std::max(1, channels / se_reduction); }
  int pool_product() const {
    int p = 1;
    for (int v : pools) p *= v;
    return p;
  }
  int encoder_out_dim() const {
    return encoder == EncoderKind::kConformer ? conformer.d_model : 2 * bilstm.hidden;
  }
};

inline std::string serialize_config(const DmsNetConfig& c) {
  std::ostringstream os;
  os << "channels=" << c.channels << "\n";
  os << "sample_rate=" << c.sample_rate << "\n";
  os << "chunk_len=" << c.chunk_len << "\n";
  os << "sinc_filters=" << c.sinc_filters << "\n";
  os << "sinc_kernel=" << c.sinc_kernel << "\n";
  os << "sinc_stride=" << c.sinc_stride << "\n";
  os << "pools=";
  for (std::size_t i = 0; i < c.pools.size(); ++i) os << (i ? "," : "") << c.pools[i];
  os << "\n";
  os << "se_reduction=" << c.se_reduction << "\n";
  os << "extraction=" << (c.extraction == ExtractionKind::kAsdb ? "asdb" : "sdb_sincnet") << "\n";
  os << "encoder=" << (c.encoder == EncoderKind::kConformer ? "conformer" : "bilstm") << "\n";
  os << "conformer_layers=" << c.conformer.layers << "\n";
  os << "conformer_d_model=" << c.conformer.d_model << "\n";
  os << "conformer_heads=" << c.conformer.heads << "\n";
  os << "conformer_ff_dim=" << c.conformer.ff_dim << "\n";
  os << "conformer_conv_kernel=" << c.conformer.conv_kernel << "\n";
  os << "bilstm_layers=" << c.bilstm.layers << "\n";
  os << "bilstm_hidden=" << c.bilstm.hidden << "\n";
  os << "fc1_dim=" << c.fc1_dim << "\n";
  os << "seed=" << c.seed << "\n";
  os << "array_radius=" << c.array_radius << "\n";
  os << "sound_speed=" << c.sound_speed << "\n";
  os << "sdb_taps=" << c.sdb_taps << "\n";
  os << "sdb_loading=" << c.sdb_loading << "\n";
  return os.str();
}

inline DmsNetConfig parse_config_text(const std::string& text) {
  DmsNetConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "channels") c.channels = std::stoi(value);
    else if (key == "sample_rate") c.sample_rate = std::stod(value);
    else if (key == "chunk_len") c.chunk_len = std::stod(value);
    else if (key == "sinc_filters") c.sinc_filters = std::stoi(value);
    else if (key == "sinc_kernel") c.sinc_kernel = std::stoi(value);
    else if (key == "sinc_stride") c.sinc_stride = std::stoi(value);
    else if (key == "pools") {
      c.pools.clear();
      std::istringstream ps(value);
      std::string tok;
      while (std::getline(ps, tok, ',')) c.pools.push_back(std::stoi(tok));
    } else if (key == "se_reduction") c.se_reduction = std::stoi(value);
    else if (key == "extraction")
      c.extraction = (value == "asdb") ? ExtractionKind::kAsdb : ExtractionKind::kSdbSincnet;
    else if (key == "encoder")
      c.encoder = (value == "conformer") ? EncoderKind::kConformer : EncoderKind::kBilstm;
    else if (key == "conformer_layers") c.conformer.layers = std::stoi(value);
    else if (key == "conformer_d_model") c.conformer.d_model = std::stoi(value);
    else if (key == "conformer_heads") c.conformer.heads = std::stoi(value);
    else if (key == "conformer_ff_dim") c.conformer.ff_dim = std::stoi(value);
    else if (key == "conformer_conv_kernel") c.conformer.conv_kernel = std::stoi(value);
    else if (key == "bilstm_layers") c.bilstm.layers = std::stoi(value);
    else if (key == "bilstm_hidden") c.bilstm.hidden = std::stoi(value);
    else if (key == "fc1_dim") c.fc1_dim = std::stoi(value);
    else if (key == "seed") c.seed = std::stoull(value);
    else if (key == "array_radius") c.array_radius = std::stod(value);
    else if (key == "sound_speed") c.sound_speed = std::stod(value);
    else if (key == "sdb_taps") c.sdb_taps = std::stoi(value);
    else if (key == "sdb_loading") c.sdb_loading = std::stod(value);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Shape propagation
// ---------------------------------------------------------------------------

/// Frames out of the sinc convolution for an input of L samples.
inline int dmsnet_conv_frames(const DmsNetConfig& c, int samples) {
  return (samples - c.sinc_kernel) / c.sinc_stride + 1;
}

/// Frames after pooling: T as a pure function of (L, stride, pools).
inline int dmsnet_frames(const DmsNetConfig& c, int samples) {
  int t = dmsnet_conv_frames(c, samples);
  for (int p : c.pools) t /= p;
  return t;
}

/// Sample span [begin, end) covered by pooled frame i.
inline std::pair<int, int> dmsnet_frame_span(const DmsNetConfig& c, int frame) {
  const int p = c.pool_product();
  const int first_conv = frame * p;
  const int last_conv = (frame + 1) * p - 1;
  return {first_conv * c.sinc_stride, last_conv * c.sinc_stride + c.sinc_kernel};
}

inline double dmsnet_frame_rate(const DmsNetConfig& c) {
  return c.sample_rate / (static_cast<double>(c.sinc_stride) * c.pool_product());
}

// ---------------------------------------------------------------------------
// Parameter table
// ---------------------------------------------------------------------------

struct Tensor {
  int rows = 1;
  int cols = 1;
  std::vector<double> data;
  int size() const { return rows * cols; }
};

/// Ordered name -> tensor map; ordering fixes checkpoint layout and the
/// optimizer's update sequence.
class ParamTable {
 public:
  void add(const std::string& name, int rows, int cols, std::vector<double> data) {
    if (static_cast<int>(data.size()) != rows * cols)
      throw ShapeMismatch("tensor size mismatch for " + name);
    index_[name] = items_.size();
    items_.push_back({name, Tensor{rows, cols, std::move(data)}});
  }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("no tensor named " + name);
    return items_[it->second].second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("no tensor named " + name);
    return items_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.data.size();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::map<std::string, std::size_t> index_;
};

using DmsNetParams = ParamTable;

struct OverlapPosterior {
  std::vector<double> probs;  // in [0, 1]
  double frame_rate = 0.0;    // Hz
};

/// One training example: a fixed-length chunk plus frame labels at the
/// model frame rate.
struct OsdChunk {
  MultichannelAudio audio;
  std::vector<double> labels;
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

class DmsNet {
 public:
  explicit DmsNet(const DmsNetConfig& config) : cfg_(config) {
    init_params();
    init_sdb();
  }

  DmsNet(const DmsNetConfig& config, ParamTable params)
      : cfg_(config), params_(std::move(params)) {
    init_sdb();
  }

  const DmsNetConfig& config() const { return cfg_; }
  ParamTable& params() { return params_; }
  const ParamTable& params() const { return params_; }

  int frames_per_chunk() const { return dmsnet_frames(cfg_, cfg_.chunk_samples()); }

  OverlapPosterior forward(const MultichannelAudio& chunk) const {
    check_chunk(chunk);
    ad::Tape tape;
    std::map<std::string, int> leaves;
    const int p = build_graph(tape, leaves, chunk);
    OverlapPosterior out;
    out.probs = tape.val(p);
    out.frame_rate = dmsnet_frame_rate(cfg_);
    return out;
  }

  /// SE channel weights for one chunk; diagnostic (ASDB extraction only).
  std::vector<double> se_excitation(const MultichannelAudio& chunk) const {
    if (cfg_.extraction != ExtractionKind::kAsdb)
      throw InvalidConfig("se_excitation requires the ASDB extraction block");
    check_chunk(chunk);
    ad::Tape tape;
    std::map<std::string, int> leaves;
    int se_node = -1;
    build_graph(tape, leaves, chunk, &se_node);
    return tape.val(se_node);
  }

  double loss(const MultichannelAudio& chunk, const std::vector<double>& labels) const {
    check_chunk(chunk);
    ad::Tape tape;
    std::map<std::string, int> leaves;
    const int p = build_graph(tape, leaves, chunk);
    const int l = tape.bce(p, labels);
    return tape.val(l)[0];
  }

  /// Exact reverse-mode gradients of bce(forward(chunk)) for every tensor.
  std::pair<double, ParamTable> backward(const MultichannelAudio& chunk,
                                         const std::vector<double>& labels) const {
    check_chunk(chunk);
    ad::Tape tape;
    std::map<std::string, int> leaves;
    const int p = build_graph(tape, leaves, chunk);
    const int l = tape.bce(p, labels);
    tape.backward(l);
    ParamTable grads;
    for (const auto& [name, tensor] : params_.items())
      grads.add(name, tensor.rows, tensor.cols, tape.grad(leaves.at(name)));
    return {tape.val(l)[0], std::move(grads)};
  }

  /// Chunked inference with 50% chunk overlap; posteriors are averaged on a
  /// 10 ms grid, thresholded, and cleaned with 0.1 s morphology.
  Timeline detect_overlap(const MultichannelAudio& audio, double threshold = 0.5) const {
    if (audio.channels() != cfg_.channels)
      throw ShapeMismatch("detect_overlap: expected " + std::to_string(cfg_.channels) +
                          " channels");
    const int chunk_samples = cfg_.chunk_samples();
    const int hop = chunk_samples / 2;
    const auto len = static_cast<long long>(audio.length());

    const auto n_bins = static_cast<std::size_t>(
        std::llround(std::ceil(audio.duration() * 100.0)));
    std::vector<double> sums(n_bins, 0.0);
    std::vector<int> counts(n_bins, 0);

    for (long long start = 0; start == 0 || start < len; start += hop) {
      MultichannelAudio chunk;
      chunk.sample_rate = audio.sample_rate;
      chunk.samples.assign(cfg_.channels, std::vector<double>(chunk_samples, 0.0));
      for (int c = 0; c < cfg_.channels; ++c) {
        const auto& src = audio.samples[c];
        for (int i = 0; i < chunk_samples; ++i) {
          const long long t = start + i;
          if (t < len) chunk.samples[c][i] = src[t];
        }
      }
      const OverlapPosterior post = forward(chunk);
      for (std::size_t f = 0; f < post.probs.size(); ++f) {
        const auto span = dmsnet_frame_span(cfg_, static_cast<int>(f));
        const double center =
            (static_cast<double>(start) + 0.5 * (span.first + span.second)) /
            audio.sample_rate;
        if (center >= audio.duration()) continue;
        const auto bin = static_cast<std::size_t>(center * 100.0);
        if (bin >= n_bins) continue;
        sums[bin] += post.probs[f];
        ++counts[bin];
      }
      if (start + chunk_samples >= len) break;
    }

    std::vector<char> mask(n_bins, 0);
    for (std::size_t b = 0; b < n_bins; ++b)
      if (counts[b] > 0 && sums[b] / counts[b] >= threshold) mask[b] = 1;

    morph_close_open(mask, 10);  // 0.1 s at the 10 ms grid

    Timeline tl;
    std::size_t b = 0;
    while (b < n_bins) {
      if (!mask[b]) {
        ++b;
        continue;
      }
      std::size_t e = b;
      while (e < n_bins && mask[e]) ++e;
      tl.add({static_cast<double>(b) * 0.01, static_cast<double>(e) * 0.01});
      b = e;
    }
    return tl;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open for writing: " + path);
    os.write("DMSN", 4);
    detail::write_raw<std::uint32_t>(os, 1u);
    const std::string cfg = serialize_config(cfg_);
    detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(params_.items().size()));
    for (const auto& [name, t] : params_.items()) {
      detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(t.rows));
      detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(t.cols));
      for (double v : t.data) detail::write_raw<double>(os, v);
    }
    if (!os) throw Error("write failed: " + path);
  }

  static DmsNet load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DMSN", 4) != 0)
      throw CorruptHeader("not a DMSNet checkpoint: " + path);
    const auto version = detail::read_raw<std::uint32_t>(is);
    if (version != 1u)
      throw UnsupportedFormat("unknown checkpoint version " + std::to_string(version));
    const auto cfg_len = detail::read_raw<std::uint32_t>(is);
    std::string cfg_text(cfg_len, '\0');
    is.read(cfg_text.data(), cfg_len);
    if (!is) throw CorruptHeader("truncated checkpoint config");
    const DmsNetConfig cfg = parse_config_text(cfg_text);

    ParamTable params;
    const auto count = detail::read_raw<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto name_len = detail::read_raw<std::uint32_t>(is);
      std::string name(name_len, '\0');
      is.read(name.data(), name_len);
      const auto rows = detail::read_raw<std::uint32_t>(is);
      const auto cols = detail::read_raw<std::uint32_t>(is);
      std::vector<double> data(static_cast<std::size_t>(rows) * cols);
      for (auto& v : data) v = detail::read_raw<double>(is);
      params.add(name, static_cast<int>(rows), static_cast<int>(cols), std::move(data));
    }
    return DmsNet(cfg, std::move(params));
  }

 private:
  static void morph_close_open(std::vector<char>& mask, int min_run) {
    const auto n = mask.size();
    // Close: fill zero-gaps shorter than min_run between positive runs.
    std::size_t i = 0;
    while (i < n) {
      if (mask[i]) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < n && !mask[j]) ++j;
      const bool interior = i > 0 && j < n;
      if (interior && j - i < static_cast<std::size_t>(min_run))
        for (std::size_t k = i; k < j; ++k) mask[k] = 1;
      i = j;
    }
    // Open: drop positive runs shorter than min_run.
    i = 0;
    while (i < n) {
      if (!mask[i]) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < n && mask[j]) ++j;
      if (j - i < static_cast<std::size_t>(min_run))
        for (std::size_t k = i; k < j; ++k) mask[k] = 0;
      i = j;
    }
  }

  void check_chunk(const MultichannelAudio& chunk) const {
    if (chunk.channels() != cfg_.channels)
      throw ShapeMismatch("chunk has " + std::to_string(chunk.channels()) +
                          " channels, config expects " + std::to_string(cfg_.channels));
    if (static_cast<int>(chunk.length()) != cfg_.chunk_samples())
      throw ShapeMismatch("chunk has " + std::to_string(chunk.length()) +
                          " samples, config expects " + std::to_string(cfg_.chunk_samples()));
  }

  // ---- initialization ----------------------------------------------------

  void xavier(Rng& rng, std::vector<double>& data, int fan_in, int fan_out) {
    const double lim = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : data) v = rng.uniform(-lim, lim);
  }

  void add_linear(Rng& rng, const std::string& name, int in, int out) {
    std::vector<double> w(static_cast<std::size_t>(in) * out);
    xavier(rng, w, in, out);
    params_.add(name + ".w", in, out, std::move(w));
    params_.add(name + ".b", 1, out, std::vector<double>(out, 0.0));
  }

  void add_layernorm(const std::string& name, int dim) {
    params_.add(name + ".g", 1, dim, std::vector<double>(dim, 1.0));
    params_.add(name + ".b", 1, dim, std::vector<double>(dim, 0.0));
  }

  void init_params() {
    Rng rng(cfg_.seed ^ 0x5d1ce5u);
    const int F = cfg_.sinc_filters;

    // Sinc band edges, mel-spaced between 30 Hz and 0.4 * fs.
    {
      std::vector<double> low(F), band(F);
      const double mel_lo = 2595.0 * std::log10(1.0 + 30.0 / 700.0);
      const double mel_hi = 2595.0 * std::log10(1.0 + 0.4 * cfg_.sample_rate / 700.0);
      std::vector<double> edges(F + 1);
      for (int f = 0; f <= F; ++f) {
        const double mel = mel_lo + (mel_hi - mel_lo) * f / F;
        edges[f] = 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
      }
      for (int f = 0; f < F; ++f) {
        low[f] = std::max(edges[f] - kMinLowHz, 0.0);
        band[f] = std::max(edges[f + 1] - edges[f] - kMinBandHz, 0.0);
      }
      params_.add("sinc.low", 1, F, std::move(low));
      params_.add("sinc.band", 1, F, std::move(band));
    }

    // ASDB tensors exist for every variant so that the checkpoint layout is
    // uniform; the SDB-SincNet path simply never touches them.
    {
      const int C = cfg_.channels;
      const int Cr = cfg_.se_bottleneck();
      add_linear(rng, "se.fc1", C, Cr);
      add_linear(rng, "se.fc2", Cr, C);
      params_.add("combine.w", 1, C, std::vector<double>(C, 1.0 / C));
      params_.add("combine.b", 1, 1, std::vector<double>(1, 0.0));
    }

    if (cfg_.encoder == EncoderKind::kConformer) {
      const auto& cs = cfg_.conformer;
      add_linear(rng, "enc.in", F, cs.d_model);
      for (int l = 0; l < cs.layers; ++l) {
        const std::string p = "conf" + std::to_string(l);
        add_layernorm(p + ".ff1.ln", cs.d_model);
        add_linear(rng, p + ".ff1.lin1", cs.d_model, cs.ff_dim);
        add_linear(rng, p + ".ff1.lin2", cs.ff_dim, cs.d_model);
        add_layernorm(p + ".attn.ln", cs.d_model);
        add_linear(rng, p + ".attn.q", cs.d_model, cs.d_model);
        add_linear(rng, p + ".attn.k", cs.d_model, cs.d_model);
        add_linear(rng, p + ".attn.v", cs.d_model, cs.d_model);
        add_linear(rng, p + ".attn.o", cs.d_model, cs.d_model);
        add_layernorm(p + ".conv.ln", cs.d_model);
        add_linear(rng, p + ".conv.pw1", cs.d_model, 2 * cs.d_model);
        {
          std::vector<double> dw(static_cast<std::size_t>(cs.d_model) * cs.conv_kernel);
          xavier(rng, dw, cs.conv_kernel, cs.conv_kernel);
          params_.add(p + ".conv.dw", cs.d_model, cs.conv_kernel, std::move(dw));
          params_.add(p + ".conv.dwb", 1, cs.d_model, std::vector<double>(cs.d_model, 0.0));
        }
        add_layernorm(p + ".conv.norm", cs.d_model);
        add_linear(rng, p + ".conv.pw2", cs.d_model, cs.d_model);
        add_layernorm(p + ".ff2.ln", cs.d_model);
        add_linear(rng, p + ".ff2.lin1", cs.d_model, cs.ff_dim);
        add_linear(rng, p + ".ff2.lin2", cs.ff_dim, cs.d_model);
        add_layernorm(p + ".final.ln", cs.d_model);
      }
    } else {
      const auto& bs = cfg_.bilstm;
      int in_dim = F;
      for (int l = 0; l < bs.layers; ++l) {
        for (const char* dir : {"f", "b"}) {
          const std::string p = "lstm" + std::to_string(l) + "." + dir;
          std::vector<double> wx(static_cast<std::size_t>(in_dim) * 4 * bs.hidden);
          std::vector<double> wh(static_cast<std::size_t>(bs.hidden) * 4 * bs.hidden);
          xavier(rng, wx, in_dim, 4 * bs.hidden);
          xavier(rng, wh, bs.hidden, 4 * bs.hidden);
          params_.add(p + ".wx", in_dim, 4 * bs.hidden, std::move(wx));
          params_.add(p + ".wh", bs.hidden, 4 * bs.hidden, std::move(wh));
          std::vector<double> bias(4 * bs.hidden, 0.0);
          for (int i = bs.hidden; i < 2 * bs.hidden; ++i) bias[i] = 1.0;  // forget gate
          params_.add(p + ".bias", 1, 4 * bs.hidden, std::move(bias));
        }
        in_dim = 2 * bs.hidden;
      }
    }

    add_linear(rng, "fc1", cfg_.encoder_out_dim(), cfg_.fc1_dim);
    add_linear(rng, "fc2", cfg_.fc1_dim, 2);
  }

  void init_sdb() {
    if (cfg_.extraction != ExtractionKind::kSdbSincnet) return;
    const ArrayGeometry geom = ArrayGeometry::uniform_circular(
        cfg_.channels, cfg_.array_radius, cfg_.sample_rate, cfg_.sound_speed);
    sdb_taps_ = realize_fir(geom, 0.0, cfg_.sdb_taps, cfg_.sdb_loading);
  }

  // ---- graph construction -------------------------------------------------

  int leaf(ad::Tape& tape, std::map<std::string, int>& leaves, const std::string& name) const {
    const auto it = leaves.find(name);
    if (it != leaves.end()) return it->second;
    const Tensor& t = params_.at(name);
    const int id = tape.leaf({t.rows, t.cols}, t.data);
    leaves[name] = id;
    return id;
  }

  int linear(ad::Tape& t, std::map<std::string, int>& lv, int x, const std::string& name) const {
    return t.add_rowvec(t.matmul(x, leaf(t, lv, name + ".w")), leaf(t, lv, name + ".b"));
  }

  int layernorm(ad::Tape& t, std::map<std::string, int>& lv, int x,
                const std::string& name) const {
    return t.layernorm_rows(x, leaf(t, lv, name + ".g"), leaf(t, lv, name + ".b"));
  }

  /// Mel-windowed sinc filter bank [F x K] assembled on the tape so that
  /// gradients flow into the band-edge parameters.
  int sinc_kernels(ad::Tape& t, std::map<std::string, int>& lv) const {
    const int F = cfg_.sinc_filters;
    const int K = cfg_.sinc_kernel;
    std::vector<double> toffs(K), window(K);
    for (int k = 0; k < K; ++k) {
      toffs[k] = (k - (K - 1) / 2.0) / cfg_.sample_rate;
      window[k] = 0.54 - 0.46 * std::cos(2.0 * M_PI * k / (K - 1));
    }
    const int low = leaf(t, lv, "sinc.low");
    const int band = leaf(t, lv, "sinc.band");
    std::vector<int> rows(F);
    for (int f = 0; f < F; ++f) {
      // f1 = min(kMinLowHz + |low|, 0.45 fs); f2 = min(f1 + kMinBandHz + |band|, 0.49 fs).
      const int f1 = t.min_const(
          t.affine_const(t.abs_t(t.slice_scalar(low, f)), 1.0, kMinLowHz),
          0.45 * cfg_.sample_rate);
      const int f2 = t.min_const(
          t.add(f1, t.affine_const(t.abs_t(t.slice_scalar(band, f)), 1.0, kMinBandHz)),
          0.49 * cfg_.sample_rate);
      rows[f] = t.mul_const(t.sub(t.sinc_band(f2, toffs), t.sinc_band(f1, toffs)), window);
    }
    return t.stack_rows(rows);
  }

  /// sinc-conv -> abs -> max-pool -> instance-norm: [1 x L] -> [T x F].
  int sincnet_branch(ad::Tape& t, int kernels, const std::vector<double>& samples) const {
    const int x = t.constant({1, static_cast<int>(samples.size())}, samples);
    int y = t.conv_bank(x, kernels, cfg_.sinc_stride);
    y = t.abs_t(y);
    for (int p : cfg_.pools) y = t.maxpool_time(y, p);
    return t.instnorm_cols(y);
  }

  int extraction_block(ad::Tape& t, std::map<std::string, int>& lv,
                       const MultichannelAudio& chunk, int* se_node = nullptr) const {
    const int kernels = sinc_kernels(t, lv);
    if (cfg_.extraction == ExtractionKind::kSdbSincnet) {
      // Fixed broadside SDB front end; not learnable.
      std::vector<double> mono(chunk.length(), 0.0);
      const int K = cfg_.sdb_taps;
      for (int c = 0; c < cfg_.channels; ++c) {
        const double* taps = &sdb_taps_[static_cast<std::size_t>(c) * K];
        const auto& x = chunk.samples[c];
        for (std::size_t s = 0; s < mono.size(); ++s) {
          double acc = 0.0;
          const int kmax = static_cast<int>(std::min<std::size_t>(K - 1, s));
          for (int k = 0; k <= kmax; ++k) acc += taps[k] * x[s - k];
          mono[s] += acc;
        }
      }
      return sincnet_branch(t, kernels, mono);
    }

    // ASDB: shared SincNet per channel, SE channel attention, 1x1 combine.
    std::vector<int> branches(cfg_.channels);
    std::vector<int> squeezes(cfg_.channels);
    for (int c = 0; c < cfg_.channels; ++c) {
      branches[c] = sincnet_branch(t, kernels, chunk.samples[c]);
      squeezes[c] = t.mean_all(branches[c]);
    }
    const int s = t.stack_scalars(squeezes);  // [1 x C]
    const int z1 = t.relu(t.add(t.rowvec_matmul_sorted(s, leaf(t, lv, "se.fc1.w")),
                                leaf(t, lv, "se.fc1.b")));
    const int w_se = t.sigmoid(
        t.add(t.matmul(z1, leaf(t, lv, "se.fc2.w")), leaf(t, lv, "se.fc2.b")));  // [1 x C]
    if (se_node) *se_node = w_se;
    std::vector<int> scaled(cfg_.channels);
    for (int c = 0; c < cfg_.channels; ++c)
      scaled[c] = t.mul_scalar(branches[c], t.slice_scalar(w_se, c));
    return t.combine_channels(scaled, leaf(t, lv, "combine.w"), leaf(t, lv, "combine.b"));
  }

  int feed_forward(ad::Tape& t, std::map<std::string, int>& lv, int x,
                   const std::string& p) const {
    const int h = t.swish(linear(t, lv, x, p + ".lin1"));
    return linear(t, lv, h, p + ".lin2");
  }

  int attention(ad::Tape& t, std::map<std::string, int>& lv, int x,
                const std::string& p) const {
    const auto& cs = cfg_.conformer;
    const int dk = cs.d_model / cs.heads;
    const int q = linear(t, lv, x, p + ".q");
    const int k = linear(t, lv, x, p + ".k");
    const int v = linear(t, lv, x, p + ".v");
    int ctx = -1;
    for (int h = 0; h < cs.heads; ++h) {
      const int qh = t.slice_cols(q, h * dk, (h + 1) * dk);
      const int kh = t.slice_cols(k, h * dk, (h + 1) * dk);
      const int vh = t.slice_cols(v, h * dk, (h + 1) * dk);
      const int scores = t.scale_const(t.matmul_nt(qh, kh), 1.0 / std::sqrt(dk));
      const int probs = t.softmax_rows(scores);
      const int ch = t.matmul(probs, vh);
      ctx = (ctx < 0) ? ch : t.concat_cols(ctx, ch);
    }
    return linear(t, lv, ctx, p + ".o");
  }

  int conv_module(ad::Tape& t, std::map<std::string, int>& lv, int x,
                  const std::string& p) const {
    int z = layernorm(t, lv, x, p + ".ln");
    z = linear(t, lv, z, p + ".pw1");
    z = t.glu_cols(z);
    z = t.add_rowvec(t.dwconv_time(z, leaf(t, lv, p + ".dw")), leaf(t, lv, p + ".dwb"));
    z = layernorm(t, lv, z, p + ".norm");
    z = t.swish(z);
    return linear(t, lv, z, p + ".pw2");
  }

  int conformer_layer(ad::Tape& t, std::map<std::string, int>& lv, int x, int l) const {
    const std::string p = "conf" + std::to_string(l);
    x = t.add(x, t.scale_const(feed_forward(t, lv, layernorm(t, lv, x, p + ".ff1.ln"),
                                            p + ".ff1"), 0.5));
    x = t.add(x, attention(t, lv, layernorm(t, lv, x, p + ".attn.ln"), p + ".attn"));
    x = t.add(x, conv_module(t, lv, x, p + ".conv"));
    x = t.add(x, t.scale_const(feed_forward(t, lv, layernorm(t, lv, x, p + ".ff2.ln"),
                                            p + ".ff2"), 0.5));
    return layernorm(t, lv, x, p + ".final.ln");
  }

  int lstm_direction(ad::Tape& t, std::map<std::string, int>& lv, int x, int frames,
                     const std::string& p, bool reverse) const {
    const int hidden = cfg_.bilstm.hidden;
    const int wx = leaf(t, lv, p + ".wx");
    const int wh = leaf(t, lv, p + ".wh");
    const int bias = leaf(t, lv, p + ".bias");
    int h = t.constant({1, hidden}, std::vector<double>(hidden, 0.0));
    int c = t.constant({1, hidden}, std::vector<double>(hidden, 0.0));
    std::vector<int> outputs(frames);
    for (int step = 0; step < frames; ++step) {
      const int ti = reverse ? frames - 1 - step : step;
      const int xt = t.slice_rows(x, ti, ti + 1);
      const int gates = t.add(t.add(t.matmul(xt, wx), t.matmul(h, wh)), bias);
      const int i_g = t.sigmoid(t.slice_cols(gates, 0, hidden));
      const int f_g = t.sigmoid(t.slice_cols(gates, hidden, 2 * hidden));
      const int g_g = t.tanh_t(t.slice_cols(gates, 2 * hidden, 3 * hidden));
      const int o_g = t.sigmoid(t.slice_cols(gates, 3 * hidden, 4 * hidden));
      c = t.add(t.mul(f_g, c), t.mul(i_g, g_g));
      h = t.mul(o_g, t.tanh_t(c));
      outputs[ti] = h;
    }
    return t.stack_rows(outputs);
  }

  int encoder_block(ad::Tape& t, std::map<std::string, int>& lv, int feat, int frames) const {
    if (cfg_.encoder == EncoderKind::kConformer) {
      const auto& cs = cfg_.conformer;
      int x = linear(t, lv, feat, "enc.in");
      // Absolute sinusoidal positional encoding.
      std::vector<double> pe(static_cast<std::size_t>(frames) * cs.d_model);
      for (int pos = 0; pos < frames; ++pos)
        for (int i = 0; i < cs.d_model; ++i) {
          const double rate = std::pow(10000.0, -2.0 * (i / 2) / cs.d_model);
          pe[static_cast<std::size_t>(pos) * cs.d_model + i] =
              (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
        }
      x = t.add(x, t.constant({frames, cs.d_model}, std::move(pe)));
      for (int l = 0; l < cs.layers; ++l) x = conformer_layer(t, lv, x, l);
      return x;
    }
    int x = feat;
    for (int l = 0; l < cfg_.bilstm.layers; ++l) {
      const std::string p = "lstm" + std::to_string(l);
      const int fwd = lstm_direction(t, lv, x, frames, p + ".f", false);
      const int bwd = lstm_direction(t, lv, x, frames, p + ".b", true);
      x = t.concat_cols(fwd, bwd);
    }
    return x;
  }

  /// Returns the node id of the frame-wise overlap probabilities [T x 1].
  int build_graph(ad::Tape& t, std::map<std::string, int>& lv,
                  const MultichannelAudio& chunk, int* se_node = nullptr) const {
    // Every tensor becomes a leaf up front so unused (frozen) branches
    // report exact-zero gradients.
    for (const auto& [name, tensor] : params_.items()) leaf(t, lv, name);

    const int feat = extraction_block(t, lv, chunk, se_node);  // [T x F]
    const int frames = t.shape(feat).rows;
    const int enc = encoder_block(t, lv, feat, frames);
    const int h1 = t.relu(linear(t, lv, enc, "fc1"));
    const int logits = linear(t, lv, h1, "fc2");
    const int probs2 = t.softmax_rows(logits);
    return t.slice_cols(probs2, 1, 2);  // class-1 column
  }

  static constexpr double kMinLowHz = 50.0;
  static constexpr double kMinBandHz = 50.0;

  DmsNetConfig cfg_;
  ParamTable params_;
  std::vector<double> sdb_taps_;  // C x sdb_taps, SDB-SincNet variant only

  friend struct DmsNetTestAccess;
};

/// Standalone BCE for reports and tests:
/// -(1/T) sum [y log p + (1-y) log(1-p)], probabilities clamped to
/// [1e-7, 1-1e-7].
inline double bce_loss(const OverlapPosterior& posterior, const std::vector<double>& labels) {
  if (posterior.probs.size() != labels.size())
    throw LengthMismatch("bce_loss: posterior length " +
                         std::to_string(posterior.probs.size()) + " vs labels " +
                         std::to_string(labels.size()));
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(posterior.probs[i], 1e-7, 1.0 - 1e-7);
    loss -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  return loss / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainResult {
  std::vector<double> epoch_loss;
};

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8) over per-chunk gradients with a
/// seed-fixed shuffle; bitwise deterministic in this single-threaded build.
inline TrainResult train(DmsNet& model, const std::vector<OsdChunk>& dataset, int epochs,
                         double lr, std::uint64_t shuffle_seed = 1) {
  if (dataset.empty()) throw InvalidConfig("train: empty dataset");
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  auto& params = model.params();
  std::vector<std::vector<double>> m(params.items().size()), v(params.items().size());
  for (std::size_t i = 0; i < params.items().size(); ++i) {
    m[i].assign(params.items()[i].second.data.size(), 0.0);
    v[i].assign(params.items()[i].second.data.size(), 0.0);
  }

  Rng rng(shuffle_seed);
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  long long step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t s = 0; s < order.size(); ++s) {
      const auto& sample = dataset[order[s]];
      auto [loss, grads] = model.backward(sample.audio, sample.labels);
      if (!std::isfinite(loss))
        throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                            std::to_string(s));
      epoch_loss += loss;
      ++step;
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (std::size_t i = 0; i < params.items().size(); ++i) {
        auto& theta = params.items()[i].second.data;
        const auto& g = grads.items()[i].second.data;
        for (std::size_t j = 0; j < theta.size(); ++j) {
          m[i][j] = kBeta1 * m[i][j] + (1.0 - kBeta1) * g[j];
          v[i][j] = kBeta2 * v[i][j] + (1.0 - kBeta2) * g[j] * g[j];
          theta[j] -= lr * (m[i][j] / bc1) / (std::sqrt(v[i][j] / bc2) + kEps);
        }
      }
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(dataset.size()));
  }
  return result;
}

}  // namespace sdiar
