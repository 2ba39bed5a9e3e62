#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "voxreg/fusion.hpp"
#include "voxreg/image.hpp"

namespace voxreg {

class SceneError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parallelogram center +- s * half_u +- t * half_v, s, t in [-1, 1].
struct Rect {
  Vec3d center, half_u, half_v;
};

struct Sphere {
  Vec3d center;
  double radius;
};

/// Rectangular tube (floor, ceiling, two walls; open ends) whose floor
/// centerline starts at `start` and runs along `direction`.
struct Corridor {
  Vec3d start;
  Vec3d direction;
  double length, width, height;
};

struct Trajectory {
  enum class Kind { kLine, kOrbit };
  Kind kind = Kind::kLine;
  // Line: camera centers from start to end, looking along `look` (defaults to
  // the motion direction).
  Vec3d start = Vec3d::Zero(), end = Vec3d::Zero();
  std::optional<Vec3d> look;
  // Orbit: circle of `radius` around `center` in the horizontal plane at
  // center.z + height, always looking at `center`.
  Vec3d center = Vec3d::Zero();
  double radius = 0, height = 0;
  int frames = 1;
};

/// World frame is z-up; cameras use x right, y down, z forward.
struct SceneSpec {
  std::vector<Rect> planes;
  std::vector<Sphere> spheres;
  std::vector<Corridor> corridors;
  Trajectory trajectory;
  CameraModel camera{260, 260, 159.5, 119.5, 320, 240, 0.54};
  double depth_noise = 0;          ///< std. dev. of additive depth noise, meters
  std::uint64_t seed = 1;
  double reference_spacing = 0.01; ///< ground-truth sample spacing, meters
  bool stereo = false;             ///< also render textured stereo pairs
  double texture_scale = 0.05;     ///< texture lattice spacing, meters

  /// Throws SceneError on an empty scene or a degenerate trajectory.
  void validate() const;

  /// Line-based text format, one directive per line (see README).
  static SceneSpec parse(std::string_view text);
  static SceneSpec load(const std::filesystem::path& path);
};

/// Straight 20-frame corridor walk with 2 cm depth noise.
SceneSpec corridor_preset(int frames = 20, double noise = 0.02);
/// Long corridor at an oblique heading, for storage measurements.
SceneSpec long_corridor_preset(double length = 100.0);
/// Unit sphere seen from an orbit.
SceneSpec sphere_preset(int frames = 12);
/// Single plane seen head-on.
SceneSpec plane_preset();

/// Analytic ray caster over the primitives of a scene.
class Scene {
 public:
  explicit Scene(const SceneSpec& spec);

  /// Smallest ray parameter t > 0 at which origin + t dir hits a surface, or
  /// +inf. `dir` need not be unit length.
  double raycast(const Vec3d& origin, const Vec3d& dir) const;
  /// Procedural gray-level texture in [0, 1].
  float texture(const Vec3d& p) const;
  /// Dense samples on every surface at roughly `spacing` meters.
  std::vector<Vec3d> sample_reference(double spacing) const;
  /// Smallest distance from p to any primitive surface.
  double distance(const Vec3d& p) const;

  const std::vector<Rect>& rects() const { return rects_; }

 private:
  std::vector<Rect> rects_;
  std::vector<Sphere> spheres_;
  double texture_scale_;
  std::uint64_t seed_;
};

/// Camera-to-world pose at `eye` looking along `forward` with z-up.
Pose look_along(const Vec3d& eye, const Vec3d& forward);

std::vector<Pose> trajectory_poses(const Trajectory& traj);

struct Dataset {
  CameraModel camera;
  std::vector<Pose> poses;           ///< left camera, camera-to-world
  std::vector<DepthMap> depth;       ///< noisy depth, NaN where nothing is hit
  std::vector<GrayImage> left, right;
  std::vector<Vec3d> reference;
};

Dataset generate(const SceneSpec& spec);

/// Writes poses.txt, depth/NNNNNN.pfm, left/ and right/ PNGs when present,
/// and reference.xyz under `dir`.
void write_dataset(const Dataset& data, const std::filesystem::path& dir);

}  // namespace voxreg
