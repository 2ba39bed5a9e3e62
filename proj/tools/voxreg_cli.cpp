// Command-line front end: stereo -> fuse -> regularize -> extract -> eval.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "voxreg/io.hpp"
#include "voxreg/pipeline.hpp"
#include "voxreg/regularizer.hpp"
#include "voxreg/synthetic.hpp"

namespace fs = std::filesystem;
using namespace voxreg;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kResource = 3 };

struct Overrides {
  std::string config;
  std::optional<double> voxel_size;
  std::optional<int> iters_3d, iters_2d;
  std::optional<double> min_weight, max_range;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "key=value config file");
  app->add_option("--voxel-size", o.voxel_size, "voxel edge length in meters");
  app->add_option("--iters-3d", o.iters_3d, "volumetric regularizer iterations");
  app->add_option("--iters-2d", o.iters_2d, "stereo outer iterations");
  app->add_option("--min-weight", o.min_weight, "minimum voxel weight for extraction");
  app->add_option("--max-range", o.max_range, "ignore depths beyond this, meters");
  app->add_option("--seed", o.seed, "random seed");
  app->add_option("--threads", o.threads, "worker threads (0 = default)");
  app->add_option("--set", o.sets, "extra key=value config overrides");
}

// Explicit --config wins; otherwise a config.txt inside the data directory.
Config load_config(const Overrides& o, const std::optional<fs::path>& data_dir) {
  Config cfg;
  if (!o.config.empty()) cfg = Config::load(o.config);
  else if (data_dir && fs::exists(*data_dir / "config.txt")) cfg = Config::load(*data_dir / "config.txt");
  for (const std::string& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.voxel_size) cfg.voxel_size = *o.voxel_size;
  if (o.iters_3d) cfg.iters_3d = *o.iters_3d;
  if (o.iters_2d) cfg.iters_2d = *o.iters_2d;
  if (o.min_weight) cfg.min_weight = *o.min_weight;
  if (o.max_range) cfg.max_range = *o.max_range;
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  cfg.validate();
  set_thread_count(cfg.threads);
  return cfg;
}

void report(const Json& stats, const std::string& stats_path) {
  if (!stats_path.empty()) write_json(stats, stats_path);
  std::cout << stats.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse volumetric reconstruction with observed-domain TV regularization"};
  app.require_subcommand(1);
  Overrides o;
  std::string data, out, in, stats_path, reference, histogram, preset = "corridor", scene_file;
  std::string scans, poses_file, calib;
  int stride = 1;
  std::optional<int> frames;
  std::optional<double> noise;
  bool stereo = false;

  auto* gen = app.add_subcommand("gen", "render a synthetic dataset");
  gen->add_option("--preset", preset, "corridor | long-corridor | sphere | plane")
      ->check(CLI::IsMember({"corridor", "long-corridor", "sphere", "plane"}));
  gen->add_option("--scene", scene_file, "scene description file (overrides --preset)")
      ->check(CLI::ExistingFile);
  gen->add_option("--frames", frames, "number of frames");
  gen->add_option("--noise", noise, "depth noise std. dev., meters");
  gen->add_flag("--stereo", stereo, "also render textured stereo pairs");
  gen->add_option("--out", out, "output directory")->required();

  auto* st = app.add_subcommand("stereo", "stereo pairs to depth maps");
  st->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  st->add_option("--out", out, "output directory")->required();

  auto* fuse = app.add_subcommand("fuse", "depth maps and poses to a voxel snapshot");
  fuse->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  fuse->add_option("--out", out, "snapshot file")->required();

  auto* reg = app.add_subcommand("regularize", "TV-regularize a snapshot on its observed domain");
  reg->add_option("--in", in, "input snapshot")->required()->check(CLI::ExistingFile);
  reg->add_option("--out", out, "output snapshot")->required();

  auto* ext = app.add_subcommand("extract", "snapshot to PLY mesh");
  ext->add_option("--in", in, "input snapshot")->required()->check(CLI::ExistingFile);
  ext->add_option("--out", out, "output PLY")->required();

  auto* ev = app.add_subcommand("eval", "mesh against a reference point cloud");
  ev->add_option("--mesh", in, "mesh PLY")->required()->check(CLI::ExistingFile);
  ev->add_option("--reference", reference, "reference xyz cloud")->required()->check(CLI::ExistingFile);
  ev->add_option("--histogram", histogram, "write the error histogram as CSV");

  auto* info = app.add_subcommand("info", "storage report of a snapshot");
  info->add_option("--in", in, "snapshot")->required()->check(CLI::ExistingFile);

  auto* pipe = app.add_subcommand("pipeline", "all stages on one dataset");
  pipe->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  pipe->add_option("--out", out, "output directory")->required();
  pipe->add_flag("--stereo", stereo, "compute depth from the stereo pairs");

  auto* cons = app.add_subcommand("consolidate", "KITTI laser scans to a reference cloud");
  cons->add_option("--scans", scans, "directory of .bin scans")->required()->check(CLI::ExistingDirectory);
  cons->add_option("--poses", poses_file, "camera poses")->required()->check(CLI::ExistingFile);
  cons->add_option("--calib", calib, "calib.txt with a Tr entry")->required()->check(CLI::ExistingFile);
  cons->add_option("--stride", stride, "keep every n-th point");
  cons->add_option("--out", out, "output xyz")->required();

  for (auto* sub : {gen, st, fuse, reg, ext, ev, info, pipe, cons}) {
    add_common(sub, o);
    sub->add_option("--stats", stats_path, "write stage statistics as JSON");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    const std::optional<fs::path> data_dir = data.empty() ? std::nullopt : std::optional<fs::path>(data);
    if (gen->parsed()) {
      const Config cfg = load_config(o, std::nullopt);
      SceneSpec spec;
      if (!scene_file.empty()) spec = SceneSpec::load(scene_file);
      else if (preset == "corridor") spec = corridor_preset();
      else if (preset == "long-corridor") spec = long_corridor_preset();
      else if (preset == "sphere") spec = sphere_preset();
      else spec = plane_preset();
      if (frames) spec.trajectory.frames = *frames;
      if (noise) spec.depth_noise = *noise;
      if (o.seed) spec.seed = *o.seed;
      if (stereo) spec.stereo = true;
      report(stage_gen(spec, cfg, out), stats_path.empty() ? (fs::path(out) / "gen.json").string() : stats_path);
    } else if (st->parsed()) {
      report(stage_stereo(load_config(o, data_dir), data, out),
             stats_path.empty() ? (fs::path(out) / "stereo.json").string() : stats_path);
    } else if (fuse->parsed()) {
      report(stage_fuse(load_config(o, data_dir), data, out), stats_path.empty() ? out + ".json" : stats_path);
    } else if (reg->parsed()) {
      report(stage_regularize(load_config(o, std::nullopt), in, out),
             stats_path.empty() ? out + ".json" : stats_path);
    } else if (ext->parsed()) {
      report(stage_extract(load_config(o, std::nullopt), in, out), stats_path.empty() ? out + ".json" : stats_path);
    } else if (ev->parsed()) {
      std::optional<fs::path> hist;
      if (!histogram.empty()) hist = histogram;
      report(stage_eval(load_config(o, std::nullopt), in, reference, hist), stats_path);
    } else if (info->parsed()) {
      report(stage_info(in), stats_path);
    } else if (pipe->parsed()) {
      report(stage_pipeline(load_config(o, data_dir), data, out, stereo), stats_path);
    } else if (cons->parsed()) {
      load_config(o, std::nullopt);
      report(stage_consolidate(scans, poses_file, calib, out, stride),
             stats_path.empty() ? out + ".json" : stats_path);
    }
  } catch (const CapacityError& e) {
    std::cerr << "error: " << e.what() << " (" << e.dropped() << " allocations dropped)\n";
    return kResource;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kOk;
}
