#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace voxreg {

using Vec3i = Eigen::Vector3i;
using Vec3d = Eigen::Vector3d;

/// One TSDF cell. `f` is normalized to [-1, 1]; `w` counts fused observations.
/// `observed` is the membership flag of the regularizer's domain and always
/// equals `w > 0`.
struct Voxel {
  float f = 0.0f;
  float w = 0.0f;
  bool observed = false;
  std::array<std::uint8_t, 3> rgb{0, 0, 0};
};

inline constexpr int kBlockSide = 8;
inline constexpr int kBlockVoxels = kBlockSide * kBlockSide * kBlockSide;

/// Linear index inside a block, x fastest.
constexpr int voxel_index(int x, int y, int z) noexcept {
  return x + kBlockSide * (y + kBlockSide * z);
}

inline Vec3i voxel_offset(int index) noexcept {
  return {index % kBlockSide, (index / kBlockSide) % kBlockSide,
          index / (kBlockSide * kBlockSide)};
}

/// Floor division, correct for negative numerators.
constexpr int floor_div(int a, int b) noexcept {
  const int q = a / b;
  return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

inline Vec3i block_of(const Vec3i& voxel) noexcept {
  return {floor_div(voxel.x(), kBlockSide), floor_div(voxel.y(), kBlockSide),
          floor_div(voxel.z(), kBlockSide)};
}

inline Vec3i offset_in_block(const Vec3i& voxel) noexcept {
  return voxel - kBlockSide * block_of(voxel);
}

struct VoxelBlock {
  Vec3i coords = Vec3i::Zero();
  std::array<Voxel, kBlockVoxels> voxels{};

  Voxel& at(int x, int y, int z) { return voxels[voxel_index(x, y, z)]; }
  const Voxel& at(int x, int y, int z) const {
    return voxels[voxel_index(x, y, z)];
  }
};

/// Spatial hash over block coordinates:
/// (x*73856093 ^ y*19349669 ^ z*83492791) mod table_size, evaluated on the
/// two's-complement 64-bit images of the coordinates.
std::size_t block_hash(const Vec3i& block_coords, std::size_t table_size);

/// Raised when an allocation would exceed the configured memory budget.
class CapacityError : public std::runtime_error {
 public:
  CapacityError(const std::string& what, std::size_t dropped)
      : std::runtime_error(what), dropped_(dropped) {}
  std::size_t dropped() const noexcept { return dropped_; }

 private:
  std::size_t dropped_;
};

struct BlockMapOptions {
  std::size_t table_size = 1u << 16;
  /// Upper bound on block payload bytes; nullopt means unlimited.
  std::optional<std::size_t> memory_budget_bytes;
};

/// Hashing voxel grid: 8^3 voxel blocks stored sparsely over an unbounded
/// integer lattice. Buckets are chained, so any number of collisions is fine.
///
/// Thread-safety: const member functions may run concurrently with each
/// other. Block allocation is serialized internally but must not race with
/// readers; voxel contents of distinct blocks may be written concurrently.
class BlockMap {
 public:
  explicit BlockMap(double voxel_size, Vec3d origin = Vec3d::Zero(),
                    BlockMapOptions options = {});

  BlockMap(BlockMap&&) noexcept;
  BlockMap& operator=(BlockMap&&) noexcept;
  BlockMap(const BlockMap& other);
  BlockMap& operator=(const BlockMap&) = delete;
  ~BlockMap();

  double voxel_size() const noexcept { return voxel_size_; }
  const Vec3d& origin() const noexcept { return origin_; }
  std::size_t table_size() const noexcept { return buckets_.size(); }

  Vec3i world_to_voxel(const Vec3d& point) const;
  /// Center of the voxel in world coordinates.
  Vec3d voxel_to_world(const Vec3i& voxel) const;

  VoxelBlock* find_block(const Vec3i& block_coords);
  const VoxelBlock* find_block(const Vec3i& block_coords) const;

  /// Returns the block, creating a zero-initialized one if needed. Returns
  /// nullptr (and counts the drop) when the memory budget is exhausted.
  VoxelBlock* try_allocate_block(const Vec3i& block_coords);

  /// Voxel access. With `allocate` set, a missing block is created; a budget
  /// overrun then throws CapacityError. Without it, absence yields nullptr.
  Voxel* locate(const Vec3i& voxel_coords, bool allocate);
  const Voxel* locate(const Vec3i& voxel_coords) const;

  std::size_t block_count() const noexcept { return blocks_.size(); }
  std::size_t voxel_count() const noexcept {
    return blocks_.size() * kBlockVoxels;
  }
  std::size_t dropped_allocations() const noexcept { return dropped_; }
  void reset_dropped_allocations() noexcept { dropped_ = 0; }

  /// Blocks in insertion order. Pointers stay valid for the map's lifetime.
  const std::vector<std::unique_ptr<VoxelBlock>>& blocks() const noexcept {
    return blocks_;
  }
  /// Blocks sorted by (z, y, x) block coordinates; deterministic iteration.
  std::vector<VoxelBlock*> sorted_blocks();
  std::vector<const VoxelBlock*> sorted_blocks() const;

  static constexpr std::size_t kBlockPayloadBytes = sizeof(VoxelBlock);

 private:
  VoxelBlock* insert_locked(const Vec3i& block_coords);

  double voxel_size_;
  Vec3d origin_;
  BlockMapOptions options_;
  std::vector<std::int64_t> buckets_;  // head entry per bucket, -1 if empty
  std::vector<std::int64_t> next_;     // chain link per block
  std::vector<std::unique_ptr<VoxelBlock>> blocks_;
  std::size_t dropped_ = 0;
  std::unique_ptr<std::mutex> alloc_mutex_;
};

// Binary snapshot ("HVG1"), little-endian. See README for the layout.
inline constexpr std::size_t kSnapshotHeaderBytes = 4 + 8 + 3 * 8 + 8;
inline constexpr std::size_t kSnapshotVoxelBytes = 4 + 4 + 1 + 3;
inline constexpr std::size_t kSnapshotBlockBytes =
    3 * 4 + kBlockVoxels * kSnapshotVoxelBytes;

std::size_t snapshot_size(const BlockMap& map);
std::vector<std::uint8_t> encode_snapshot(const BlockMap& map);
BlockMap decode_snapshot(const std::vector<std::uint8_t>& bytes,
                         BlockMapOptions options = {});
void save_snapshot(const BlockMap& map, const std::filesystem::path& path);
BlockMap load_snapshot(const std::filesystem::path& path,
                       BlockMapOptions options = {});

}  // namespace voxreg
