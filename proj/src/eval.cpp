#include "voxreg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include "parallel.hpp"

namespace voxreg {

namespace {
constexpr std::uint32_t kLeafSize = 12;
}

KdTree::KdTree(std::vector<Vec3d> points) : points_(std::move(points)) {
  if (points_.size() >= std::numeric_limits<std::uint32_t>::max())
    throw std::invalid_argument("too many points for KdTree");
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 1);
    build(0, static_cast<std::uint32_t>(points_.size()), 0);
  }
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end, int depth) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;

  Vec3d lo = Vec3d::Constant(std::numeric_limits<double>::infinity());
  Vec3d hi = -lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     return points_[a][axis] < points_[b][axis];
                   });
  nodes_[id].axis = static_cast<std::uint8_t>(axis);
  nodes_[id].split = points_[order_[mid]][axis];
  const std::int32_t left = build(begin, mid, depth + 1);
  const std::int32_t right = build(mid, end, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(std::int32_t node, const Vec3d& q, std::size_t& best, double& best_d2) const {
  const Node& n = nodes_[node];
  if (n.left < 0) {
    for (std::uint32_t i = n.begin; i < n.end; ++i) {
      const double d2 = (points_[order_[i]] - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && order_[i] < best)) {
        best_d2 = d2;
        best = order_[i];
      }
    }
    return;
  }
  const double diff = q[n.axis] - n.split;
  const std::int32_t near = diff < 0 ? n.left : n.right;
  const std::int32_t far = diff < 0 ? n.right : n.left;
  search(near, q, best, best_d2);
  if (diff * diff <= best_d2) search(far, q, best, best_d2);
}

std::pair<std::size_t, double> KdTree::nearest(const Vec3d& query) const {
  if (points_.empty()) throw std::logic_error("nearest() on an empty KdTree");
  std::size_t best = std::numeric_limits<std::size_t>::max();
  double best_d2 = std::numeric_limits<double>::infinity();
  search(0, query, best, best_d2);
  return {best, best_d2};
}

std::vector<double> point_errors(std::span<const Vec3d> queries, std::span<const Vec3d> reference) {
  if (queries.empty() || reference.empty())
    throw std::invalid_argument("point_errors needs non-empty inputs");
  const KdTree tree(std::vector<Vec3d>(reference.begin(), reference.end()));
  std::vector<double> out(queries.size());
  detail::parallel_for(queries.size(), [&](std::size_t i) {
    out[i] = std::sqrt(tree.nearest(queries[i]).second);
  });
  return out;
}

std::vector<double> point_errors(const TriangleMesh& mesh, std::span<const Vec3d> reference) {
  return point_errors(std::span<const Vec3d>(mesh.vertices), reference);
}

std::vector<Vec3d> sample_surface(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed) {
  if (mesh.triangles.empty() || count == 0) return {};
  std::vector<double> cumulative(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    total += 0.5 * (mesh.vertices[tri[1]] - mesh.vertices[tri[0]])
                       .cross(mesh.vertices[tri[2]] - mesh.vertices[tri[0]])
                       .norm();
    cumulative[t] = total;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Vec3d> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const double r = uni(rng) * total;
    const auto t = static_cast<std::size_t>(
        std::lower_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin());
    const auto& tri = mesh.triangles[std::min(t, mesh.triangles.size() - 1)];
    double a = uni(rng), b = uni(rng);
    if (a + b > 1.0) {
      a = 1.0 - a;
      b = 1.0 - b;
    }
    const Vec3d& p0 = mesh.vertices[tri[0]];
    out.push_back(p0 + a * (mesh.vertices[tri[1]] - p0) + b * (mesh.vertices[tri[2]] - p0));
  }
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty list");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

ErrorStats error_stats(std::span<const double> distances_m) {
  if (distances_m.empty()) throw std::invalid_argument("error_stats of an empty list");
  ErrorStats s;
  std::vector<double> cm(distances_m.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < cm.size(); ++i) {
    cm[i] = distances_m[i] * 100.0;
    sum += cm[i];
    const double b = std::floor(cm[i] + 0.5);
    const int bin = b >= ErrorStats::kBins ? ErrorStats::kBins : static_cast<int>(std::max(0.0, b));
    ++s.histogram[bin];
  }
  s.sample_count = cm.size();
  s.mean_cm = sum / static_cast<double>(cm.size());
  std::sort(cm.begin(), cm.end());
  s.median_cm = quantile(cm, 0.5);
  s.p75_cm = quantile(cm, 0.75);
  int best = 0;
  for (int b = 1; b < ErrorStats::kBins; ++b)
    if (s.histogram[b] > s.histogram[best]) best = b;
  s.mode_cm = ErrorStats::bin_center_cm(best);
  return s;
}

void write_histogram_csv(const ErrorStats& stats, std::ostream& os) {
  os << "bin_center_cm,count\n";
  for (int b = 0; b < ErrorStats::kBins; ++b)
    os << ErrorStats::bin_center_cm(b) << ',' << stats.histogram[b] << '\n';
  os << "overflow," << stats.histogram[ErrorStats::kBins] << '\n';
}

double surface_area(const TriangleMesh& mesh) {
  double area = 0.0;
  for (const auto& t : mesh.triangles)
    area += 0.5 * (mesh.vertices[t[1]] - mesh.vertices[t[0]])
                      .cross(mesh.vertices[t[2]] - mesh.vertices[t[0]])
                      .norm();
  return area;
}

StorageReport storage_report(const BlockMap& map) {
  StorageReport r;
  r.block_count = map.block_count();
  r.voxel_count = map.voxel_count();
  r.bytes = snapshot_size(map);
  if (r.block_count > 0) {
    Vec3i lo = Vec3i::Constant(std::numeric_limits<int>::max());
    Vec3i hi = Vec3i::Constant(std::numeric_limits<int>::min());
    for (const auto& b : map.blocks()) {
      lo = lo.cwiseMin(b->coords);
      hi = hi.cwiseMax(b->coords);
      for (const Voxel& v : b->voxels) r.observed_voxels += v.observed ? 1 : 0;
    }
    const Eigen::Matrix<std::size_t, 3, 1> extent = (hi - lo + Vec3i::Ones()).cast<std::size_t>();
    r.dense_bytes = extent.prod() * kBlockVoxels * kSnapshotVoxelBytes;
  }
  r.compression_ratio = static_cast<double>(r.dense_bytes) / static_cast<double>(r.bytes);
  return r;
}

std::vector<Vec3d> consolidate_clouds(std::span<const std::vector<Vec3d>> frames,
                                      std::span<const Pose> poses) {
  if (frames.size() != poses.size())
    throw std::invalid_argument("one pose per cloud is required");
  std::vector<Vec3d> out;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    poses[i].validate();
    for (const Vec3d& p : frames[i]) out.push_back(poses[i].to_world(p));
  }
  return out;
}

}  // namespace voxreg
