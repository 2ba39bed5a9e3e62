#include "voxreg/fusion.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_set>
#include <vector>

#include <Eigen/LU>

#include "parallel.hpp"

namespace voxreg {

void CameraModel::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("focal lengths must be positive");
  if (width <= 0 || height <= 0) throw std::invalid_argument("image size must be positive");
  if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
    throw std::invalid_argument("principal point outside the image");
}

void Pose::validate(double tolerance) const {
  if (!rotation.allFinite() || !translation.allFinite())
    throw std::invalid_argument("pose contains non-finite values");
  const double ortho = (rotation.transpose() * rotation - Mat3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho > tolerance) throw std::invalid_argument("pose rotation is not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > tolerance)
    throw std::invalid_argument("pose rotation has determinant != +1");
}

Pose Pose::from_row_major_3x4(std::span<const double, 12> m) {
  Pose p;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = m[4 * r + c];
    p.translation[r] = m[4 * r + 3];
  }
  return p;
}

void FusionParams::validate() const {
  if (!(mu > 0)) throw std::invalid_argument("truncation distance mu must be positive");
  if (!(max_weight >= 1)) throw std::invalid_argument("max_weight must be >= 1");
  if (!(max_range > 0)) throw std::invalid_argument("max_range must be positive");
}

TsdfSample tsdf_update(double f_prev, double w_prev, double u_sdf,
                       const FusionParams& params) {
  if (u_sdf < -params.mu) return {f_prev, w_prev};
  const double u_tsdf = std::clamp(u_sdf, -params.mu, params.mu) / params.mu;
  const double f = (u_tsdf + w_prev * f_prev) / (w_prev + 1.0);
  const double w = std::min(w_prev + 1.0, params.max_weight);
  return {std::clamp(f, -1.0, 1.0), w};
}

void traverse_cells(const Vec3d& start, const Vec3d& end, const Vec3d& origin,
                    double cell_size, const std::function<void(const Vec3i&)>& visit) {
  const Vec3d a = (start - origin) / cell_size;
  const Vec3d b = (end - origin) / cell_size;
  const Vec3d dir = b - a;
  constexpr double kInf = std::numeric_limits<double>::infinity();

  Vec3i cell;
  Vec3i step;
  Vec3d t_max;
  Vec3d t_delta;
  for (int i = 0; i < 3; ++i) {
    const double fl = std::floor(a[i]);
    if (dir[i] > 0) {
      cell[i] = static_cast<int>(fl);
      step[i] = 1;
      t_max[i] = (fl + 1.0 - a[i]) / dir[i];
      t_delta[i] = 1.0 / dir[i];
    } else if (dir[i] < 0) {
      // Starting on a face while moving down: the cell below is the first one.
      const bool on_face = fl == a[i];
      cell[i] = static_cast<int>(on_face ? fl - 1.0 : fl);
      step[i] = -1;
      t_max[i] = (on_face ? 1.0 : a[i] - fl) / -dir[i];
      t_delta[i] = 1.0 / -dir[i];
    } else {
      cell[i] = static_cast<int>(fl);
      step[i] = 0;
      t_max[i] = kInf;
      t_delta[i] = kInf;
    }
  }

  visit(cell);
  for (;;) {
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    if (!(t_max[axis] < 1.0)) break;
    cell[axis] += step[axis];
    t_max[axis] += t_delta[axis];
    visit(cell);
  }
}

namespace {

struct Vec3iHash {
  std::size_t operator()(const Vec3i& v) const noexcept {
    return block_hash(v, std::numeric_limits<std::size_t>::max());
  }
};
struct Vec3iEq {
  bool operator()(const Vec3i& a, const Vec3i& b) const noexcept { return a == b; }
};
using BlockSet = std::unordered_set<Vec3i, Vec3iHash, Vec3iEq>;

// World-to-pixel projection with nearest-pixel rounding and the validity
// rules shared by the allocation and update passes.
class Projector {
 public:
  Projector(const DepthMap& depth, const CameraModel& cam, const Pose& pose,
            const FusionParams& params)
      : depth_(depth), cam_(cam), rot_t_(pose.rotation.transpose()),
        t_(pose.translation), params_(params) {}

  Vec3d to_camera(const Vec3d& p) const { return rot_t_ * (p - t_); }

  /// Depth at the nearest pixel of a camera-frame point, or NaN.
  float depth_at(const Vec3d& pc, int* px_out = nullptr, int* py_out = nullptr) const {
    constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();
    if (!(pc.z() > 0)) return kNaN;
    const double u = cam_.fx * pc.x() / pc.z() + cam_.cx;
    const double v = cam_.fy * pc.y() / pc.z() + cam_.cy;
    const double px = std::floor(u + 0.5);
    const double py = std::floor(v + 0.5);
    if (px < 0 || py < 0 || px >= cam_.width || py >= cam_.height) return kNaN;
    const int ix = static_cast<int>(px);
    const int iy = static_cast<int>(py);
    const float d = depth_(ix, iy);
    if (!usable(d)) return kNaN;
    if (px_out) *px_out = ix;
    if (py_out) *py_out = iy;
    return d;
  }

  bool usable(float d) const { return valid_depth(d) && d <= params_.max_range; }

  /// True if the voxel center at world point p receives an update.
  bool updates(const Vec3d& p) const {
    const Vec3d pc = to_camera(p);
    const float d = depth_at(pc);
    return !std::isnan(d) && sdf_from_depth(d, pc.z()) >= -params_.mu;
  }

 private:
  const DepthMap& depth_;
  const CameraModel& cam_;
  Mat3d rot_t_;
  Vec3d t_;
  const FusionParams& params_;
};

bool block_receives_update(const BlockMap& map, const Vec3i& bc, const Projector& proj) {
  for (int i = 0; i < kBlockVoxels; ++i) {
    if (proj.updates(map.voxel_to_world(kBlockSide * bc + voxel_offset(i)))) return true;
  }
  return false;
}

// Conservative frustum test on the hull of the block's voxel centers.
bool block_maybe_visible(const BlockMap& map, const Vec3i& bc, const Projector& proj,
                         const CameraModel& cam, double max_depth, double mu) {
  double min_z = std::numeric_limits<double>::infinity();
  double umin = min_z, vmin = min_z;
  double umax = -min_z, vmax = -min_z;
  double max_z = -min_z;
  for (int c = 0; c < 8; ++c) {
    const Vec3i corner = kBlockSide * bc + Vec3i((c & 1) * (kBlockSide - 1),
                                                 ((c >> 1) & 1) * (kBlockSide - 1),
                                                 ((c >> 2) & 1) * (kBlockSide - 1));
    const Vec3d pc = proj.to_camera(map.voxel_to_world(corner));
    min_z = std::min(min_z, pc.z());
    max_z = std::max(max_z, pc.z());
    if (pc.z() <= 0) continue;
    const double u = cam.fx * pc.x() / pc.z() + cam.cx;
    const double v = cam.fy * pc.y() / pc.z() + cam.cy;
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  if (min_z > max_depth + mu || max_z <= 0) return false;
  if (min_z <= 0) return true;  // straddles or lies behind the image plane
  return !(umax < -0.5 || umin >= cam.width - 0.5 || vmax < -0.5 || vmin >= cam.height - 0.5);
}

}  // namespace

FusionStats integrate_depth_map(BlockMap& map, const DepthMap& depth,
                                const CameraModel& cam, const Pose& pose,
                                const FusionParams& params, const RgbImage* color) {
  cam.validate();
  pose.validate();
  params.validate();
  if (depth.width() != cam.width || depth.height() != cam.height)
    throw std::invalid_argument("depth map dimensions do not match the camera");
  if (color && (color->width() != cam.width || color->height() != cam.height))
    throw std::invalid_argument("color image dimensions do not match the camera");

  FusionStats stats;
  const Projector proj(depth, cam, pose, params);
  const double block_edge = kBlockSide * map.voxel_size();

  // Allocation pass: blocks crossed by each pixel's ray up to mu behind the
  // surface. Neighbors of those blocks can still hold voxel centers that round
  // to the pixel, so they are allocated too when any voxel would be updated.
  BlockSet ray_blocks;
  double max_depth = 0;
  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      const float d = depth(x, y);
      if (!proj.usable(d)) {
        ++stats.pixels_skipped;
        continue;
      }
      max_depth = std::max(max_depth, static_cast<double>(d));
      const Vec3d ray((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0);
      const Vec3d end = pose.to_world(ray * (d + params.mu));
      traverse_cells(pose.translation, end, map.origin(), block_edge,
                     [&](const Vec3i& b) { ray_blocks.insert(b); });
    }
  }

  const std::size_t blocks_before = map.block_count();
  const std::size_t dropped_before = map.dropped_allocations();
  BlockSet shell;
  for (const Vec3i& b : ray_blocks) {
    map.try_allocate_block(b);
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const Vec3i n = b + Vec3i(dx, dy, dz);
          if (!ray_blocks.count(n)) shell.insert(n);
        }
  }
  std::vector<Vec3i> shell_sorted(shell.begin(), shell.end());
  std::sort(shell_sorted.begin(), shell_sorted.end(), [](const Vec3i& a, const Vec3i& b) {
    return std::tie(a.z(), a.y(), a.x()) < std::tie(b.z(), b.y(), b.x());
  });
  for (const Vec3i& b : shell_sorted) {
    if (map.find_block(b)) continue;
    if (block_receives_update(map, b, proj)) map.try_allocate_block(b);
  }
  stats.blocks_allocated = map.block_count() - blocks_before;
  if (map.dropped_allocations() > dropped_before) {
    const std::size_t dropped = map.dropped_allocations() - dropped_before;
    throw CapacityError("memory budget exhausted: " + std::to_string(dropped) +
                            " block allocations dropped",
                        dropped);
  }

  // Update pass: each block is owned by exactly one worker.
  const auto blocks = map.sorted_blocks();
  std::vector<std::size_t> updated(blocks.size(), 0);
  detail::parallel_for(blocks.size(), [&](std::size_t bi) {
    VoxelBlock& block = *blocks[bi];
    if (!block_maybe_visible(map, block.coords, proj, cam, max_depth, params.mu)) return;
    std::size_t n = 0;
    for (int i = 0; i < kBlockVoxels; ++i) {
      const Vec3d pc = proj.to_camera(map.voxel_to_world(kBlockSide * block.coords + voxel_offset(i)));
      int px = 0, py = 0;
      const float d = proj.depth_at(pc, &px, &py);
      if (std::isnan(d)) continue;
      const double u_sdf = sdf_from_depth(d, pc.z());
      if (u_sdf < -params.mu) continue;
      Voxel& v = block.voxels[i];
      const double w_prev = v.w;
      const TsdfSample s = tsdf_update(v.f, v.w, u_sdf, params);
      v.f = static_cast<float>(s.f);
      v.w = static_cast<float>(s.w);
      v.observed = v.w > 0;
      if (color) {
        const Rgb c = (*color)(px, py);
        const unsigned char in[3] = {c.r, c.g, c.b};
        for (int k = 0; k < 3; ++k) {
          const double blended = (in[k] + w_prev * v.rgb[k]) / (w_prev + 1.0);
          v.rgb[k] = static_cast<std::uint8_t>(std::clamp(std::lround(blended), 0L, 255L));
        }
      }
      ++n;
    }
    updated[bi] = n;
  });
  for (std::size_t n : updated) stats.voxels_updated += n;
  return stats;
}

FusionStats integrate_ray_scan(BlockMap& map, std::span<const RangeRay> rays,
                               const FusionParams& params) {
  params.validate();
  for (const RangeRay& r : rays) {
    if (!(r.range > 0) || !std::isfinite(r.range))
      throw std::invalid_argument("ray range must be positive");
    if (std::abs(r.direction.norm() - 1.0) > 1e-6)
      throw std::invalid_argument("ray direction must be unit length");
  }

  FusionStats stats;
  const std::size_t blocks_before = map.block_count();
  for (const RangeRay& r : rays) {
    const Vec3d end = r.origin + r.direction * (r.range + params.mu);
    traverse_cells(r.origin, end, map.origin(), map.voxel_size(), [&](const Vec3i& vc) {
      Voxel* v = map.locate(vc, true);
      const double t = (map.voxel_to_world(vc) - r.origin).dot(r.direction);
      const double u_sdf = r.range - t;
      if (u_sdf < -params.mu) return;
      const TsdfSample s = tsdf_update(v->f, v->w, u_sdf, params);
      v->f = static_cast<float>(s.f);
      v->w = static_cast<float>(s.w);
      v->observed = v->w > 0;
      ++stats.voxels_updated;
    });
  }
  stats.blocks_allocated = map.block_count() - blocks_before;
  return stats;
}

}  // namespace voxreg
