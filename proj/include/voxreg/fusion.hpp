#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>

#include <Eigen/Core>

#include "voxreg/image.hpp"
#include "voxreg/voxel_store.hpp"

namespace voxreg {

using Mat3d = Eigen::Matrix3d;
using Vec2d = Eigen::Vector2d;

/// Pinhole intrinsics. `baseline` is only used for stereo triangulation.
struct CameraModel {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  double baseline = 0;

  /// Throws std::invalid_argument on non-positive focal lengths or a principal
  /// point outside the image.
  void validate() const;
};

/// Rigid camera-to-world transform.
struct Pose {
  Mat3d rotation = Mat3d::Identity();
  Vec3d translation = Vec3d::Zero();

  /// Throws std::invalid_argument unless rotation is orthonormal with
  /// determinant +1 to within `tolerance`.
  void validate(double tolerance = 1e-6) const;

  Vec3d to_world(const Vec3d& p_cam) const { return rotation * p_cam + translation; }
  Vec3d to_camera(const Vec3d& p_world) const {
    return rotation.transpose() * (p_world - translation);
  }
  Pose operator*(const Pose& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
  }
  static Pose from_row_major_3x4(std::span<const double, 12> m);
};

/// Metric depth per pixel; NaN (or any non-positive value) marks invalid.
using DepthMap = Image<float>;

inline bool valid_depth(float d) { return d > 0.0f && std::isfinite(d); }

struct FusionParams {
  double mu = 1.0;             ///< truncation distance, meters
  double max_weight = 100.0;   ///< saturation cap on w (may be +inf)
  double max_range = 25.0;     ///< depths beyond this are ignored, meters

  void validate() const;
};

struct FusionStats {
  std::size_t blocks_allocated = 0;
  std::size_t voxels_updated = 0;
  std::size_t pixels_skipped = 0;

  FusionStats& operator+=(const FusionStats& o) {
    blocks_allocated += o.blocks_allocated;
    voxels_updated += o.voxels_updated;
    pixels_skipped += o.pixels_skipped;
    return *this;
  }
};

/// Signed distance along the optical axis: positive in front of the surface.
constexpr double sdf_from_depth(double depth, double z_camera) noexcept {
  return depth - z_camera;
}

struct TsdfSample {
  double f;
  double w;
};

/// Weighted running-average update of one voxel. Observations further than
/// mu behind the surface leave the voxel untouched.
TsdfSample tsdf_update(double f_prev, double w_prev, double u_sdf,
                       const FusionParams& params);

/// Fuses one depth map: allocates blocks along each valid pixel's ray up to
/// mu behind the measured surface, then updates every voxel whose center
/// projects (nearest pixel) onto a valid depth. `color`, when given, must
/// match the depth dimensions and is blended with the same weights.
FusionStats integrate_depth_map(BlockMap& map, const DepthMap& depth,
                                const CameraModel& cam, const Pose& pose,
                                const FusionParams& params,
                                const RgbImage* color = nullptr);

struct RangeRay {
  Vec3d origin;
  Vec3d direction;  ///< unit norm
  double range;     ///< meters, > 0
};

/// Laser-style fusion: walks each ray through the lattice up to mu behind the
/// return and updates every intersected voxel with u = range - t, where t is
/// the voxel center's distance along the ray.
FusionStats integrate_ray_scan(BlockMap& map, std::span<const RangeRay> rays,
                               const FusionParams& params);

/// Visits every lattice cell (edge `cell_size`, lattice anchored at `origin`)
/// intersected by the segment [start, end], in order, each exactly once.
void traverse_cells(const Vec3d& start, const Vec3d& end, const Vec3d& origin,
                    double cell_size, const std::function<void(const Vec3i&)>& visit);

}  // namespace voxreg
