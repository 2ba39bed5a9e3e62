#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "voxreg/fusion.hpp"
#include "voxreg/surface.hpp"
#include "voxreg/voxel_store.hpp"

namespace voxreg {

/// Static 3-d tree for exact nearest-neighbor queries.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3d> points);

  std::size_t size() const noexcept { return points_.size(); }
  /// Index and squared distance of the nearest point. Tree must be non-empty.
  std::pair<std::size_t, double> nearest(const Vec3d& query) const;
  const Vec3d& point(std::size_t i) const { return points_[i]; }

 private:
  struct Node {
    std::uint32_t begin, end;  // range in order_
    std::int32_t left = -1, right = -1;
    std::uint8_t axis = 0;
    double split = 0;
  };
  std::int32_t build(std::uint32_t begin, std::uint32_t end, int depth);
  void search(std::int32_t node, const Vec3d& q, std::size_t& best, double& best_d2) const;

  std::vector<Vec3d> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// Distance in meters from each query point to its nearest reference point.
std::vector<double> point_errors(std::span<const Vec3d> queries, std::span<const Vec3d> reference);
/// Mesh vertices against the reference cloud.
std::vector<double> point_errors(const TriangleMesh& mesh, std::span<const Vec3d> reference);

/// Area-weighted uniform samples on the mesh surface, deterministic in `seed`.
std::vector<Vec3d> sample_surface(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed);

struct ErrorStats {
  static constexpr int kBins = 101;  ///< bins centered on 0..100 cm, plus overflow
  double mode_cm = 0;
  double median_cm = 0;
  double p75_cm = 0;
  double mean_cm = 0;
  std::array<std::size_t, kBins + 1> histogram{};
  std::size_t sample_count = 0;

  static double bin_center_cm(int bin) { return bin; }
};

/// Linear interpolation between order statistics at position q (n - 1).
double quantile(std::vector<double> values, double q);

/// Distances in meters in; centimeter statistics out. Histogram bin k counts
/// errors in [k - 0.5, k + 0.5) cm (bin 0 starts at 0); the last slot is
/// the overflow. The mode is the center of the fullest bin (lowest on ties).
ErrorStats error_stats(std::span<const double> distances_m);

void write_histogram_csv(const ErrorStats& stats, std::ostream& os);

double surface_area(const TriangleMesh& mesh);

struct StorageReport {
  std::size_t block_count = 0;
  std::size_t voxel_count = 0;
  std::size_t bytes = 0;        ///< exact snapshot size
  std::size_t dense_bytes = 0;  ///< dense grid over the block bounding box
  double compression_ratio = 0; ///< dense_bytes / bytes
  std::size_t observed_voxels = 0;
};

StorageReport storage_report(const BlockMap& map);

/// Applies each frame's pose to its cloud and concatenates the results.
std::vector<Vec3d> consolidate_clouds(std::span<const std::vector<Vec3d>> frames,
                                      std::span<const Pose> poses);

}  // namespace voxreg
