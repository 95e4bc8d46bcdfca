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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sdiar/sdiar.hpp"

namespace fs = std::filesystem;
using namespace sdiar;

namespace {

PipelineConfig load_pipeline_config(const std::string& path) {
  if (path.empty()) return PipelineConfig{};
  return PipelineConfig::from_file(path);
}

std::string wav_stem(const std::string& path) { return fs::path(path).stem().string(); }

Timeline annotation_to_overlap_timeline(const Annotation& ann) {
  Timeline tl;
  for (const auto& t : ann.turns) tl.add(t.seg);
  return tl;
}

Annotation timeline_to_annotation(const Timeline& tl, const std::string& file_id,
                                  const std::string& speaker) {
  Annotation ann;
  ann.file_id = file_id;
  for (const auto& seg : tl.segments()) ann.turns.push_back(Turn{speaker, seg, false});
  return ann;
}

int run_design(const std::string& config_path, const std::string& out,
               std::optional<int> directions, std::optional<int> taps,
               std::optional<double> loading) {
  PipelineConfig cfg = load_pipeline_config(config_path);
  if (directions) cfg.directions = *directions;
  if (taps) cfg.taps = *taps;
  if (loading) cfg.loading = *loading;
  cfg.validate();
  const BeamformerBank bank = build_bank(cfg.geometry(), cfg.directions, cfg.taps, cfg.loading);
  save_bank(bank, out);
  std::printf("wrote %s (N=%d C=%d K=%d)\n", out.c_str(), bank.directions,
              bank.geom.mic_count, bank.taps_per_channel);
  return 0;
}

int run_simulate(const std::string& script_path, const std::string& out_dir,
                 const std::string& config_path, const std::string& name) {
  const PipelineConfig cfg = load_pipeline_config(config_path);
  const ScriptFile sf = parse_meeting_script(script_path);
  const RenderResult r = render(sf.script, cfg.geometry(), sf.duration);

  fs::create_directories(out_dir);
  const fs::path base = fs::path(out_dir);
  write_wav((base / (name + ".wav")).string(), r.audio, WavFormat::kPcm16);

  Annotation ref = r.annotation;
  ref.file_id = name;
  write_file_atomic((base / (name + ".ref.rttm")).string(), serialize_rttm(ref));
  write_file_atomic((base / (name + ".overlap.rttm")).string(),
                    serialize_rttm(timeline_to_annotation(r.overlap_timeline, name, "overlap")));
  std::printf("wrote %s.{wav,ref.rttm,overlap.rttm} under %s\n", name.c_str(),
              out_dir.c_str());
  return 0;
}

int run_svector(const std::string& wav_path, const std::string& bank_path,
                const std::string& config_path, const std::string& out) {
  const PipelineConfig cfg = load_pipeline_config(config_path);
  const MultichannelAudio audio = read_wav(wav_path);
  BeamformerBank bank;
  if (!bank_path.empty()) {
    bank = load_bank(bank_path, cfg.sound_speed_mps);
  } else {
    bank = build_bank(cfg.geometry(), cfg.directions, cfg.taps, cfg.loading);
  }
  const auto svectors = extract_svectors(bank, audio, cfg.window_len_s, cfg.window_shift_s);
  const std::string text = serialize_svectors(svectors);
  if (out.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    write_file_atomic(out, text);
    std::printf("wrote %zu windows to %s\n", svectors.size(), out.c_str());
  }
  return 0;
}

DmsNetConfig model_config_from_file(const std::string& path) {
  if (path.empty()) {
    // Desk-scale default: ASDB + small Conformer, sized for CPU training.
    DmsNetConfig c;
    c.channels = 8;
    c.sinc_filters = 16;
    c.sinc_kernel = 101;
    c.sinc_stride = 40;
    c.pools = {3, 3};
    c.conformer = {2, 32, 4, 64, 9};
    c.bilstm = {2, 32};
    return c;
  }
  std::ifstream is(path);
  if (!is) throw Error("cannot open: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

int run_osd_train(const std::string& out, const std::string& model_config,
                  const std::string& extraction, const std::string& encoder, int meetings,
                  int epochs, double lr, std::uint64_t seed) {
  DmsNetConfig cfg = model_config_from_file(model_config);
  if (extraction == "asdb") cfg.extraction = ExtractionKind::kAsdb;
  else if (extraction == "sdb") cfg.extraction = ExtractionKind::kSdbSincnet;
  else if (!extraction.empty()) throw InvalidConfig("extraction must be asdb or sdb");
  if (encoder == "conformer") cfg.encoder = EncoderKind::kConformer;
  else if (encoder == "bilstm") cfg.encoder = EncoderKind::kBilstm;
  else if (!encoder.empty()) throw InvalidConfig("encoder must be conformer or bilstm");
  cfg.seed = seed;

  const ArrayGeometry geom = ArrayGeometry::uniform_circular(
      cfg.channels, cfg.array_radius, cfg.sample_rate, cfg.sound_speed);
  std::printf("building dataset: %d meetings...\n", meetings);
  const auto dataset = make_osd_dataset(meetings, geom, cfg, seed);
  std::printf("training on %zu chunks (%d frames each), %d epochs, lr=%g\n", dataset.size(),
              dmsnet_frames(cfg, cfg.chunk_samples()), epochs, lr);
  DmsNet model(cfg);
  const TrainResult tr = train(model, dataset, epochs, lr, seed);
  for (std::size_t e = 0; e < tr.epoch_loss.size(); ++e)
    std::printf("epoch %zu: loss %.6f\n", e, tr.epoch_loss[e]);
  model.save(out);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int run_osd_detect(const std::string& model_path, const std::string& wav_path,
                   const std::string& out, double threshold) {
  const DmsNet model = DmsNet::load(model_path);
  const MultichannelAudio audio = read_wav(wav_path);
  const Timeline overlaps = model.detect_overlap(audio, threshold);
  const std::string file_id = wav_stem(wav_path);
  write_file_atomic(out, serialize_rttm(timeline_to_annotation(overlaps, file_id, "overlap")));
  std::printf("wrote %zu overlap regions to %s\n", overlaps.size(), out.c_str());
  return 0;
}

int run_diarize(const std::string& config_path, const std::string& wav_path,
                const std::string& vad_path, const std::string& embeddings_path,
                const std::string& bank_path, bool with_osd, const std::string& out,
                const std::string& report_path, std::optional<std::uint64_t> seed) {
  PipelineConfig cfg = load_pipeline_config(config_path);
  if (seed) cfg.seed = *seed;
  const MultichannelAudio audio = read_wav(wav_path);
  const Timeline vad = parse_vad(vad_path);

  std::optional<std::vector<SegmentEmbedding>> external;
  if (!embeddings_path.empty()) external = load_embeddings(embeddings_path);

  std::optional<BeamformerBank> bank;
  if (!bank_path.empty()) bank = load_bank(bank_path, cfg.sound_speed_mps);

  const PipelineResult result = run_pipeline(
      cfg, audio, wav_stem(wav_path), vad,
      with_osd ? PipelineMode::kWithOsd : PipelineMode::kClusterOnly,
      external ? &*external : nullptr, bank ? &*bank : nullptr);

  write_file_atomic(out, serialize_rttm(result.hypothesis));
  if (!report_path.empty()) write_file_atomic(report_path, result.report.to_json());
  std::printf("k=%d chosen_p=%d windows=%zu -> %s\n", result.report.k, result.report.chosen_p,
              result.report.windows, out.c_str());
  return 0;
}

int run_score_der(const std::string& ref_path, const std::string& hyp_path, double collar,
                  bool ignore_overlap) {
  const Annotation ref = parse_rttm(ref_path);
  const Annotation hyp = parse_rttm(hyp_path);
  const DerReport r = score_der(ref, hyp, collar, !ignore_overlap);
  std::printf("MISS=%.2f\nFA=%.2f\nSPKERR=%.2f\nDER=%.2f\nSCORED_TIME=%.2f\n", r.miss, r.fa,
              r.spkerr, r.der, r.scored_time);
  return 0;
}

int run_score_osd(const std::string& ref_path, const std::string& hyp_path, double duration) {
  const Timeline ref = annotation_to_overlap_timeline(parse_rttm(ref_path));
  const Timeline hyp = annotation_to_overlap_timeline(parse_rttm(hyp_path));
  const OsdReport r = score_osd(ref, hyp, duration);
  if (r.deter)
    std::printf("DETER=%.2f\n", *r.deter);
  else
    std::printf("DETER=NA\n");
  std::printf("ACCURACY=%.2f\nPRECISION=%.2f\nRECALL=%.2f\n", r.accuracy, r.precision,
              r.recall);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sdiar: spatial-aware multichannel speaker diarization toolkit"};
  app.require_subcommand(1);

  std::string config_path, out, wav_path, bank_path, script_path, vad_path;
  std::string embeddings_path, report_path, model_path, model_config, name = "sim";
  std::string extraction, encoder, ref_path, hyp_path;
  std::optional<int> directions, taps;
  std::optional<double> loading;
  std::optional<std::uint64_t> seed_opt;
  double threshold = 0.5, collar = 0.25, duration = 0.0, lr = 2e-3;
  int meetings = 12, epochs = 12;
  std::uint64_t seed = 0;
  bool with_osd = false, ignore_overlap = false;

  auto* design = app.add_subcommand("design", "design a superdirective FIR bank");
  design->add_option("--config", config_path);
  design->add_option("--out", out)->required();
  design->add_option("--directions", directions, "number of look directions N");
  design->add_option("--taps", taps, "FIR order K");
  design->add_option("--loading", loading, "diagonal loading");

  auto* simulate = app.add_subcommand("simulate", "render a synthetic far-field meeting");
  simulate->add_option("--script", script_path)->required();
  simulate->add_option("--out", out)->required();
  simulate->add_option("--config", config_path);
  simulate->add_option("--name", name, "output file stem");

  auto* svector = app.add_subcommand("svector", "extract spatial embeddings");
  svector->add_option("--wav", wav_path)->required();
  svector->add_option("--bank", bank_path);
  svector->add_option("--config", config_path);
  svector->add_option("--out", out);

  auto* osd_train = app.add_subcommand("osd-train", "train an overlap detector on simulated data");
  osd_train->add_option("--out", out)->required();
  osd_train->add_option("--model-config", model_config, "DMSNet config file (key=value)");
  osd_train->add_option("--extraction", extraction, "asdb | sdb");
  osd_train->add_option("--encoder", encoder, "conformer | bilstm");
  osd_train->add_option("--meetings", meetings);
  osd_train->add_option("--epochs", epochs);
  osd_train->add_option("--lr", lr);
  osd_train->add_option("--seed", seed);

  auto* osd_detect = app.add_subcommand("osd-detect", "detect overlapped speech");
  osd_detect->add_option("--model", model_path)->required();
  osd_detect->add_option("--wav", wav_path)->required();
  osd_detect->add_option("--out", out)->required();
  osd_detect->add_option("--threshold", threshold);

  auto* diarize = app.add_subcommand("diarize", "full diarization pipeline");
  diarize->add_option("--config", config_path);
  diarize->add_option("--wav", wav_path)->required();
  diarize->add_option("--vad", vad_path, "oracle VAD (RTTM or 'start end' rows)")->required();
  diarize->add_option("--embeddings", embeddings_path, "external speaker embeddings");
  diarize->add_option("--bank", bank_path, "precomputed SDBK bank");
  diarize->add_flag("--osd", with_osd, "run overlap detection + secondary assignment");
  diarize->add_option("--out", out)->required();
  diarize->add_option("--report", report_path, "machine-readable run report (JSON)");
  diarize->add_option("--seed", seed_opt);

  auto* score_der_cmd = app.add_subcommand("score-der", "diarization error rate");
  score_der_cmd->add_option("ref", ref_path)->required();
  score_der_cmd->add_option("hyp", hyp_path)->required();
  score_der_cmd->add_option("--collar", collar);
  score_der_cmd->add_flag("--ignore-overlap", ignore_overlap);

  auto* score_osd_cmd = app.add_subcommand("score-osd", "overlap detection metrics");
  score_osd_cmd->add_option("ref", ref_path)->required();
  score_osd_cmd->add_option("hyp", hyp_path)->required();
  score_osd_cmd->add_option("--duration", duration, "recording span in seconds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // usage error
  }

  try {
    if (design->parsed()) return run_design(config_path, out, directions, taps, loading);
    if (simulate->parsed()) return run_simulate(script_path, out, config_path, name);
    if (svector->parsed()) return run_svector(wav_path, bank_path, config_path, out);
    if (osd_train->parsed())
      return run_osd_train(out, model_config, extraction, encoder, meetings, epochs, lr, seed);
    if (osd_detect->parsed()) return run_osd_detect(model_path, wav_path, out, threshold);
    if (diarize->parsed())
      return run_diarize(config_path, wav_path, vad_path, embeddings_path, bank_path, with_osd,
                         out, report_path, seed_opt);
    if (score_der_cmd->parsed()) return run_score_der(ref_path, hyp_path, collar, ignore_overlap);
    if (score_osd_cmd->parsed()) return run_score_osd(ref_path, hyp_path, duration);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
