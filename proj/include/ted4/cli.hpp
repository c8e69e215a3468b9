#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ted4/checkpoint.hpp"
#include "ted4/container.hpp"
#include "ted4/scene.hpp"
#include "ted4/training.hpp"

namespace ted4::cli {

namespace fs = std::filesystem;

/// Seed from TED4_SEED when set (decimal), else `fallback`.
inline std::uint64_t seed_from_env(std::uint64_t fallback) {
  const char* v = std::getenv("TED4_SEED");
  if (!v || !*v) return fallback;
  char* end = nullptr;
  const unsigned long long s = std::strtoull(v, &end, 10);
  if (*end != '\0') fail(ErrorKind::usage, std::string("TED4_SEED is not a decimal integer: ") + v);
  return s;
}

inline bool is_container(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 4 && std::equal(kMagic.begin(), kMagic.end(), bytes.begin());
}

/// A model file: a .ted4 container (decoded) or a training checkpoint.
inline Model load_model(const fs::path& path) {
  const auto bytes = read_file(path);
  return is_container(bytes) ? read_container(bytes) : load_checkpoint(bytes);
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) fail(ErrorKind::io, "failed writing " + path.string());
}

inline TrainConfig load_train_config(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::usage, "config " + path + " is not valid JSON: " + e.what());
  }
  return train_config_from_json(j);
}

inline nlohmann::json histogram_json(const DurationHistogram& h) {
  return {{"short_le_0.2", h.counts[0]}, {"mid", h.counts[1]}, {"long_ge_0.8", h.counts[2]}};
}

/// Per-section accounting: every byte after the header (alignment padding
/// included) is attributed to the section it precedes the end of.
inline nlohmann::json section_stats(std::span<const std::uint8_t> bytes, const ContainerHeader& h) {
  nlohmann::json out = nlohmann::json::object();
  const std::size_t header_bytes = h.sections.front().offset;
  out["header_bits"] = 8 * header_bytes;
  for (std::size_t s = 0; s < h.sections.size(); ++s) {
    const std::size_t end = s + 1 < h.sections.size() ? h.sections[s + 1].offset : bytes.size();
    out[std::string(section_name(h.sections[s].id)) + "_bits"] = 8 * (end - h.sections[s].offset);
  }
  out["total_bits"] = 8 * bytes.size();
  return out;
}

struct Options {
  // shared
  std::string scene_dir, out, in, config, log;
  std::optional<std::uint64_t> seed;
  // synth
  std::string scene_name;
  int width = 48, height = 48, frames = 20;
  // train / rd-sweep
  std::optional<int> iterations;
  std::optional<double> lambda;
  bool no_temporal = false;
  std::vector<double> lambdas;
  std::string container_dir;
  // render
  int camera = 0, frame = 0;
  // stats
  std::string csv, json;
};

inline TrainConfig resolve_config(const Options& o) {
  TrainConfig cfg = load_train_config(o.config);
  cfg.seed = o.seed ? *o.seed : seed_from_env(cfg.seed);
  if (o.iterations) cfg.iterations = *o.iterations;
  if (o.lambda) cfg.weights.rate = *o.lambda;
  if (o.no_temporal) cfg.model.temporal_activation = false;
  require(cfg.iterations >= 0, "iterations must be non-negative");
  return cfg;
}

inline void cmd_synth(const Options& o, std::ostream& out) {
  SynthOptions so;
  so.width = o.width;
  so.height = o.height;
  so.frames = o.frames;
  so.seed = o.seed ? *o.seed : seed_from_env(0);
  const ToyScene scene = synthesize(o.scene_name, so);
  save_scene(scene, o.out, so.seed);
  out << "wrote " << o.scene_name << " (" << scene.cameras.size() << " cameras, " << scene.frame_count()
      << " frames, " << scene.points.size() << " points) to " << o.out << "\n";
}

inline void cmd_train(const Options& o, std::ostream& out) {
  const ToyScene scene = load_scene(o.scene_dir);
  const TrainConfig cfg = resolve_config(o);
  std::ofstream log;
  if (!o.log.empty()) {
    log.open(o.log, std::ios::binary);
    if (!log) fail(ErrorKind::io, "cannot open " + o.log + " for writing");
  }
  const TrainResult r = train(scene, cfg, [&](const nlohmann::json& rec) {
    if (log) log << rec.dump() << "\n";
  });
  write_file(o.out, save_checkpoint(r.model, cfg.weights.rate));
  out << "trained " << cfg.iterations << " iterations, " << r.model.size() << " anchors (" << r.pruned
      << " pruned), checkpoint " << o.out << "\n";
}

inline void cmd_encode(const Options& o, std::ostream& out) {
  double lambda = 0.0;
  const Model m = load_checkpoint(read_file(o.in), &lambda);
  if (o.lambda) lambda = *o.lambda;
  const auto bytes = write_container(quantize_model(m), lambda);
  write_file(o.out, bytes);
  out << "wrote " << bytes.size() << " bytes to " << o.out << "\n";
}

inline void cmd_decode(const Options& o, std::ostream& out) {
  ContainerHeader h;
  const Model m = read_container(read_file(o.in), &h);
  write_file(o.out, save_checkpoint(m, h.lambda_rate));
  out << "decoded " << m.size() << " anchors to " << o.out << "\n";
}

inline void cmd_render(const Options& o, std::ostream& out) {
  const Model m = load_model(o.in);
  const ToyScene scene = load_scene(o.scene_dir);
  require(m.config.frame_count == scene.frame_count(), "model frame count does not match the scene", ErrorKind::format);
  require(o.camera >= 0 && o.camera < static_cast<int>(scene.cameras.size()), "camera index out of range");
  require(o.frame >= 0 && o.frame < scene.frame_count(), "frame index out of range");
  const Image img = render_model(m, scene.cameras[o.camera], scene.timestamps[o.frame]).color;
  write_ppm(img, o.out);
  out << "rendered camera " << o.camera << " frame " << o.frame << " (PSNR "
      << psnr(img, scene.frames[o.camera][o.frame]) << " dB) to " << o.out << "\n";
}

inline nlohmann::json eval_json(const fs::path& container, const fs::path& scene_dir) {
  const auto bytes = read_file(container);
  const Model m = read_container(bytes);
  const ToyScene scene = load_scene(scene_dir);
  const EvalResult e = evaluate(m, scene);
  return {{"psnr", e.psnr},
          {"ssim", e.ssim},
          {"bytes", bytes.size()},
          {"anchors", m.size()},
          {"duration_histogram", histogram_json(model_duration_histogram(m))}};
}

inline void cmd_eval(const Options& o, std::ostream& out) {
  const std::string text = eval_json(o.in, o.scene_dir).dump(2) + "\n";
  if (!o.out.empty()) write_text(o.out, text);
  out << text;
}

inline void cmd_rd_sweep(const Options& o, std::ostream& out) {
  const ToyScene scene = load_scene(o.scene_dir);
  TrainConfig cfg = resolve_config(o);
  const std::vector<double> lambdas = o.lambdas.empty() ? cfg.lambdas : o.lambdas;
  require(!lambdas.empty(), "no lambda values");
  std::ostringstream csv;
  csv.precision(17);
  csv << "lambda_rate,bytes,psnr,ssim\n";
  for (double lambda : lambdas) {
    require(lambda >= 0.0, "lambda values must be non-negative");
    TrainConfig c = cfg;
    c.weights.rate = lambda;
    const EncodedRun run = train_and_encode(scene, c);
    if (!o.container_dir.empty()) {
      fs::create_directories(o.container_dir);
      std::ostringstream name;
      name << "lambda_" << lambda << ".ted4";
      write_file(fs::path(o.container_dir) / name.str(), run.container);
    }
    const EvalResult e = evaluate(read_container(run.container), scene);
    csv << lambda << "," << run.container.size() << "," << e.psnr << "," << e.ssim << "\n";
  }
  if (!o.out.empty()) write_text(o.out, csv.str());
  out << csv.str();
}

inline void cmd_stats(const Options& o, std::ostream& out) {
  const auto bytes = read_file(o.in);
  ContainerHeader h;
  const Model m = read_container(bytes, &h);
  const DurationHistogram hist = model_duration_histogram(m);
  nlohmann::json j = section_stats(bytes, h);
  j["anchors"] = m.size();
  j["temporal_activation"] = m.config.temporal_activation;
  j["duration_histogram"] = histogram_json(hist);
  j["attribute_bits_per_anchor"] = m.size() ? 8.0 * h.sections[3].length / static_cast<double>(m.size()) : 0.0;
  std::ostringstream csv;
  csv << "item,value\n";
  for (const char* k : {"header_bits", "positions_bits", "weights_bits", "masks_bits", "attributes_bits", "total_bits"})
    csv << k << "," << j[k].get<std::size_t>() << "\n";
  csv << "anchors," << m.size() << "\n";
  csv << "duration_le_0.2," << hist.counts[0] << "\n";
  csv << "duration_mid," << hist.counts[1] << "\n";
  csv << "duration_ge_0.8," << hist.counts[2] << "\n";
  if (!o.csv.empty()) write_text(o.csv, csv.str());
  if (!o.json.empty()) write_text(o.json, j.dump(2) + "\n");
  out << csv.str();
}

/// Parses and runs one command; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"ted4: compact dynamic Gaussian scenes with temporal activation windows"};
  app.footer("Environment: TED4_SEED overrides the configured seed when --seed is not given.\n"
             "Exit codes: 0 ok, 2 usage, 3 I/O, 4 format, 5 numerical divergence.");
  app.require_subcommand(1);
  Options o;
  const auto seed_opt = [&](CLI::App* c) {
    c->add_option("--seed", o.seed, "Random seed");
  };
  const auto train_opts = [&](CLI::App* c) {
    c->add_option("--config", o.config, "Training configuration (JSON)")->check(CLI::ExistingFile);
    c->add_option("--iterations", o.iterations, "Override the iteration count");
    c->add_flag("--no-temporal", o.no_temporal, "Train without temporal activation windows");
    seed_opt(c);
  };

  auto* synth = app.add_subcommand("synth", "Render a shipped toy scene to a directory");
  synth->add_option("--scene", o.scene_name, "static-room | slider | occluder")->required();
  synth->add_option("--out", o.out, "Output directory")->required();
  synth->add_option("--width", o.width, "Frame width")->check(CLI::Range(16, 256));
  synth->add_option("--height", o.height, "Frame height")->check(CLI::Range(16, 256));
  synth->add_option("--frames", o.frames, "Frame count (even)")->check(CLI::Range(2, 1000));
  seed_opt(synth);

  auto* tr = app.add_subcommand("train", "Train a model on a scene directory");
  tr->add_option("--scene", o.scene_dir, "Scene directory")->required();
  tr->add_option("--out", o.out, "Checkpoint to write")->required();
  tr->add_option("--lambda", o.lambda, "Rate weight lambda_rate")->check(CLI::NonNegativeNumber);
  tr->add_option("--log", o.log, "Training log (JSON lines)");
  train_opts(tr);

  auto* enc = app.add_subcommand("encode", "Quantize and entropy-code a checkpoint into a .ted4 container");
  enc->add_option("--in", o.in, "Checkpoint")->required();
  enc->add_option("--out", o.out, ".ted4 container to write")->required();
  enc->add_option("--lambda", o.lambda, "lambda_rate tag stored in the header")->check(CLI::NonNegativeNumber);

  auto* dec = app.add_subcommand("decode", "Decode a .ted4 container into a checkpoint");
  dec->add_option("--in", o.in, ".ted4 container")->required();
  dec->add_option("--out", o.out, "Checkpoint to write")->required();

  auto* ren = app.add_subcommand("render", "Render one camera/frame of a model to PPM");
  ren->add_option("--in", o.in, ".ted4 container or checkpoint")->required();
  ren->add_option("--scene", o.scene_dir, "Scene directory (cameras and timestamps)")->required();
  ren->add_option("--camera", o.camera, "Camera index");
  ren->add_option("--frame", o.frame, "Frame index");
  ren->add_option("--out", o.out, "PPM to write")->required();

  auto* ev = app.add_subcommand("eval", "Decode, render every camera/frame, report metrics as JSON");
  ev->add_option("--in", o.in, ".ted4 container")->required();
  ev->add_option("--scene", o.scene_dir, "Scene directory")->required();
  ev->add_option("--out", o.out, "Also write the JSON here");

  auto* rd = app.add_subcommand("rd-sweep", "Train and encode once per lambda_rate; CSV of size and quality");
  rd->add_option("--scene", o.scene_dir, "Scene directory")->required();
  rd->add_option("--lambdas", o.lambdas, "lambda_rate values (default: config list)")->delimiter(',');
  rd->add_option("--out", o.out, "CSV to write");
  rd->add_option("--containers", o.container_dir, "Directory for the per-lambda containers");
  train_opts(rd);

  auto* st = app.add_subcommand("stats", "Per-section bits and window-duration histogram of a container");
  st->add_option("--in", o.in, ".ted4 container")->required();
  st->add_option("--csv", o.csv, "CSV to write");
  st->add_option("--json", o.json, "JSON to write");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // help requests exit 0; every other parse failure is a usage error
    return app.exit(e, out, err) == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  try {
    if (*synth) cmd_synth(o, out);
    else if (*tr) cmd_train(o, out);
    else if (*enc) cmd_encode(o, out);
    else if (*dec) cmd_decode(o, out);
    else if (*ren) cmd_render(o, out);
    else if (*ev) cmd_eval(o, out);
    else if (*rd) cmd_rd_sweep(o, out);
    else if (*st) cmd_stats(o, out);
  } catch (const Error& e) {
    err << "ted4: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "ted4: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::io);
  }
  return 0;
}

}  // namespace ted4::cli
