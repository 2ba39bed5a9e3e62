#include "voxreg/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "voxreg/eval.hpp"
#include "voxreg/io.hpp"
#include "voxreg/regularizer.hpp"
#include "voxreg/stereo.hpp"
#include "voxreg/surface.hpp"

namespace voxreg {

namespace fs = std::filesystem;

namespace {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

CameraModel checked_camera(const Config& cfg) {
  const CameraModel cam = cfg.camera();
  try {
    cam.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("camera: ") + e.what());
  }
  return cam;
}

Json error_json(const ErrorStats& s) {
  return Json{{"samples", s.sample_count}, {"mode_cm", s.mode_cm},   {"median_cm", s.median_cm},
              {"p75_cm", s.p75_cm},        {"mean_cm", s.mean_cm}};
}

}  // namespace

void set_thread_count(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

void write_json(const Json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << j.dump(2) << '\n';
}

Json stage_gen(const SceneSpec& scene, const Config& base, const fs::path& out) {
  Stopwatch clock;
  const Dataset data = generate(scene);
  write_dataset(data, out);
  Config cfg = base;
  cfg.fx = data.camera.fx;
  cfg.fy = data.camera.fy;
  cfg.cx = data.camera.cx;
  cfg.cy = data.camera.cy;
  cfg.width = data.camera.width;
  cfg.height = data.camera.height;
  cfg.baseline = data.camera.baseline;
  cfg.seed = scene.seed;
  std::ofstream(out / "config.txt") << cfg.emit();
  return Json{{"stage", "gen"},
              {"frames", data.poses.size()},
              {"stereo_pairs", data.left.size()},
              {"reference_points", data.reference.size()},
              {"depth_noise_m", scene.depth_noise},
              {"seed", scene.seed},
              {"seconds", clock.seconds()}};
}

Json stage_stereo(const Config& cfg, const fs::path& data, const fs::path& out) {
  Stopwatch clock;
  cfg.validate();
  CameraModel cam = checked_camera(cfg);
  if (!(cam.baseline > 0)) throw ConfigError("stereo needs a positive baseline");
  const auto lefts = list_files(resolve(data, cfg.left_dir), {".png", ".pgm"});
  const auto rights = list_files(resolve(data, cfg.right_dir), {".png", ".pgm"});
  if (lefts.size() != rights.size())
    throw DataError(fmt::format("{} left images but {} right images", lefts.size(), rights.size()));
  if (lefts.empty()) throw DataError("no stereo pairs in " + data.string());
  const auto poses = read_poses(resolve(data, cfg.poses_file));
  if (poses.size() < lefts.size())
    throw DataError(fmt::format("{} stereo pairs but only {} poses", lefts.size(), poses.size()));

  const StereoParams params = cfg.stereo_params();
  fs::create_directories(out / "depth");
  std::vector<Pose> right_poses;
  std::size_t valid = 0, total = 0;
  for (std::size_t i = 0; i < lefts.size(); ++i) {
    const GrayImage left = read_gray(lefts[i]);
    const GrayImage right = read_gray(rights[i]);
    if (left.width() != right.width() || left.height() != right.height())
      throw DataError(lefts[i].string() + ": stereo pair sizes differ");
    if (left.width() != cam.width || left.height() != cam.height)
      throw DataError(lefts[i].string() + ": image size does not match the camera");
    const CostVolume volume = cost_volume(left, right, params);
    const TensorField tensor = diffusion_tensor(right, params.beta, params.gamma);
    const DisparityMap disp = tgv_disparity(volume, tensor, params);
    const DepthMap depth = disparity_to_depth(disp.disparity, cam);
    for (float d : depth.data()) valid += valid_depth(d) ? 1 : 0;
    total += depth.size();
    write_pfm(depth, out / "depth" / fmt::format("{:06d}.pfm", i));
    Pose rp = poses[i];
    rp.translation = poses[i].to_world(Vec3d(cam.baseline, 0, 0));
    right_poses.push_back(rp);
  }
  write_poses(right_poses, out / "poses.txt");
  Config derived = cfg;
  derived.poses_file = "poses.txt";
  derived.depth_dir = "depth";
  std::ofstream(out / "config.txt") << derived.emit();
  return Json{{"stage", "stereo"},
              {"pairs", lefts.size()},
              {"valid_depth_fraction", total ? static_cast<double>(valid) / total : 0.0},
              {"seconds", clock.seconds()}};
}

Json stage_fuse(const Config& cfg, const fs::path& data, const fs::path& snapshot) {
  Stopwatch clock;
  cfg.validate();
  const CameraModel cam = checked_camera(cfg);
  const auto depth_files = list_files(resolve(data, cfg.depth_dir), {".pfm", ".png"});
  if (depth_files.empty()) throw DataError("no depth maps in " + resolve(data, cfg.depth_dir).string());
  const auto poses = read_poses(resolve(data, cfg.poses_file));
  if (poses.size() < depth_files.size())
    throw DataError(fmt::format("{} depth maps but only {} poses", depth_files.size(), poses.size()));

  BlockMap map(cfg.voxel_size, Vec3d::Zero(), cfg.map_options());
  const FusionParams params = cfg.fusion_params();
  FusionStats stats;
  for (std::size_t i = 0; i < depth_files.size(); ++i) {
    const DepthMap depth = read_depth(depth_files[i]);
    if (depth.width() != cam.width || depth.height() != cam.height)
      throw DataError(depth_files[i].string() + ": depth size does not match the camera");
    stats += integrate_depth_map(map, depth, cam, poses[i], params);
  }
  if (snapshot.has_parent_path()) fs::create_directories(snapshot.parent_path());
  save_snapshot(map, snapshot);
  return Json{{"stage", "fuse"},
              {"frames", depth_files.size()},
              {"voxel_size", cfg.voxel_size},
              {"mu", params.mu},
              {"blocks", map.block_count()},
              {"voxels_updated", stats.voxels_updated},
              {"pixels_skipped", stats.pixels_skipped},
              {"seconds", clock.seconds()}};
}

Json stage_regularize(const Config& cfg, const fs::path& in, const fs::path& out) {
  Stopwatch clock;
  cfg.validate();
  BlockMap map = load_snapshot(in, cfg.map_options());
  const RegParams params = cfg.reg_params();
  const RegStats stats = regularize(map, params);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_snapshot(map, out);
  Json j{{"stage", "regularize"},
         {"lambda", params.lambda},
         {"iterations", stats.iterations},
         {"observed_voxels", stats.observed_voxels},
         {"initial_energy", stats.initial_energy},
         {"final_energy", stats.final_energy}};
  if (stats.final_gap) j["final_gap"] = *stats.final_gap;
  j["seconds"] = clock.seconds();
  return j;
}

Json stage_extract(const Config& cfg, const fs::path& in, const fs::path& ply) {
  Stopwatch clock;
  cfg.validate();
  const BlockMap map = load_snapshot(in, cfg.map_options());
  const TriangleMesh mesh = extract_mesh(map, cfg.min_weight);
  if (ply.has_parent_path()) fs::create_directories(ply.parent_path());
  const std::size_t bytes = export_ply(mesh, ply);
  return Json{{"stage", "extract"},
              {"vertices", mesh.vertices.size()},
              {"triangles", mesh.triangles.size()},
              {"area_m2", surface_area(mesh)},
              {"bytes", bytes},
              {"seconds", clock.seconds()}};
}

Json stage_eval(const Config& cfg, const fs::path& ply, const fs::path& reference,
                const std::optional<fs::path>& histogram_csv) {
  Stopwatch clock;
  const TriangleMesh mesh = read_ply(ply);
  const std::vector<Vec3d> ref = read_xyz(reference);
  if (ref.empty()) throw DataError(reference.string() + ": empty reference cloud");
  if (mesh.vertices.empty()) throw DataError(ply.string() + ": mesh has no vertices");
  std::vector<double> errors;
  if (cfg.eval_sample_surface) {
    const auto samples = sample_surface(mesh, cfg.eval_samples, cfg.seed);
    if (samples.empty()) throw DataError(ply.string() + ": mesh has no area to sample");
    errors = point_errors(samples, ref);
  } else {
    errors = point_errors(mesh, ref);
  }
  const ErrorStats stats = error_stats(errors);
  if (histogram_csv) {
    std::ofstream os(*histogram_csv);
    if (!os) throw DataError("cannot open " + histogram_csv->string());
    write_histogram_csv(stats, os);
  }
  Json j = error_json(stats);
  j["stage"] = "eval";
  j["area_m2"] = surface_area(mesh);
  j["seconds"] = clock.seconds();
  return j;
}

Json stage_info(const fs::path& snapshot) {
  const BlockMap map = load_snapshot(snapshot);
  const StorageReport r = storage_report(map);
  return Json{{"stage", "info"},
              {"voxel_size", map.voxel_size()},
              {"block_count", r.block_count},
              {"voxel_count", r.voxel_count},
              {"observed_voxels", r.observed_voxels},
              {"bytes", r.bytes},
              {"dense_bytes", r.dense_bytes},
              {"compression_ratio", r.compression_ratio}};
}

Json stage_consolidate(const fs::path& scans_dir, const fs::path& poses_file,
                       const fs::path& calib_file, const fs::path& out, int stride) {
  Stopwatch clock;
  if (stride < 1) throw ConfigError("stride must be positive");
  const auto scans = list_files(scans_dir, {".bin"});
  const auto poses = read_poses(poses_file);
  if (scans.empty()) throw DataError("no scans in " + scans_dir.string());
  if (poses.size() < scans.size())
    throw DataError(fmt::format("{} scans but only {} poses", scans.size(), poses.size()));
  const Pose velo_to_cam = read_kitti_velo_to_cam(calib_file);
  std::vector<std::vector<Vec3d>> frames;
  std::vector<Pose> world_poses;
  for (std::size_t i = 0; i < scans.size(); ++i) {
    const auto scan = read_velodyne_scan(scans[i]);
    std::vector<Vec3d> kept;
    for (std::size_t k = 0; k < scan.size(); k += static_cast<std::size_t>(stride))
      kept.push_back(scan[k]);
    frames.push_back(std::move(kept));
    world_poses.push_back(poses[i] * velo_to_cam);
  }
  const auto cloud = consolidate_clouds(frames, world_poses);
  export_xyz(cloud, out);
  return Json{{"stage", "consolidate"},
              {"scans", scans.size()},
              {"points", cloud.size()},
              {"seconds", clock.seconds()}};
}

Json stage_pipeline(const Config& cfg, const fs::path& data, const fs::path& out, bool use_stereo) {
  Stopwatch clock;
  cfg.validate();
  fs::create_directories(out);
  Json j{{"stage", "pipeline"}};

  fs::path depth_source = data;
  Config fuse_cfg = cfg;
  if (use_stereo || !fs::is_directory(resolve(data, cfg.depth_dir))) {
    j["stereo"] = stage_stereo(cfg, data, out / "stereo");
    write_json(j["stereo"], out / "stereo.json");
    depth_source = out / "stereo";
    fuse_cfg.depth_dir = "depth";
    fuse_cfg.poses_file = "poses.txt";
  }

  j["fuse"] = stage_fuse(fuse_cfg, depth_source, out / "raw.hvg");
  write_json(j["fuse"], out / "fuse.json");
  j["extract_raw"] = stage_extract(cfg, out / "raw.hvg", out / "raw.ply");
  j["regularize"] = stage_regularize(cfg, out / "raw.hvg", out / "regularized.hvg");
  write_json(j["regularize"], out / "regularize.json");
  j["extract"] = stage_extract(cfg, out / "regularized.hvg", out / "mesh.ply");
  write_json(j["extract"], out / "extract.json");
  j["info"] = stage_info(out / "regularized.hvg");
  write_json(j["info"], out / "info.json");

  const fs::path reference = resolve(data, cfg.reference_file);
  if (fs::exists(reference)) {
    const Json raw = stage_eval(cfg, out / "raw.ply", reference, out / "raw_histogram.csv");
    const Json reg = stage_eval(cfg, out / "mesh.ply", reference, out / "histogram.csv");
    const double raw_median = raw["median_cm"], reg_median = reg["median_cm"];
    const double raw_area = raw["area_m2"], reg_area = reg["area_m2"];
    j["eval"] = Json{{"raw", raw},
                     {"regularized", reg},
                     {"median_reduction", raw_median > 0 ? 1.0 - reg_median / raw_median : 0.0},
                     {"area_reduction", raw_area > 0 ? 1.0 - reg_area / raw_area : 0.0}};
    write_json(j["eval"], out / "eval.json");
  }
  j["seconds"] = clock.seconds();
  write_json(j, out / "pipeline.json");
  return j;
}

}  // namespace voxreg
