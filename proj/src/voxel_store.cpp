#include "voxreg/voxel_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <tuple>
#include <utility>

#include "byte_io.hpp"

namespace voxreg {

std::size_t block_hash(const Vec3i& c, std::size_t table_size) {
  const auto ux = static_cast<std::uint64_t>(static_cast<std::int64_t>(c.x()));
  const auto uy = static_cast<std::uint64_t>(static_cast<std::int64_t>(c.y()));
  const auto uz = static_cast<std::uint64_t>(static_cast<std::int64_t>(c.z()));
  const std::uint64_t h = (ux * 73856093ull) ^ (uy * 19349669ull) ^ (uz * 83492791ull);
  return static_cast<std::size_t>(h % table_size);
}

BlockMap::BlockMap(double voxel_size, Vec3d origin, BlockMapOptions options)
    : voxel_size_(voxel_size),
      origin_(std::move(origin)),
      options_(options),
      alloc_mutex_(std::make_unique<std::mutex>()) {
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size))
    throw std::invalid_argument("voxel_size must be positive");
  if (options_.table_size == 0)
    throw std::invalid_argument("table_size must be positive");
  buckets_.assign(options_.table_size, -1);
}

BlockMap::BlockMap(BlockMap&&) noexcept = default;
BlockMap& BlockMap::operator=(BlockMap&&) noexcept = default;
BlockMap::~BlockMap() = default;

BlockMap::BlockMap(const BlockMap& other)
    : voxel_size_(other.voxel_size_),
      origin_(other.origin_),
      options_(other.options_),
      buckets_(other.buckets_),
      next_(other.next_),
      dropped_(other.dropped_),
      alloc_mutex_(std::make_unique<std::mutex>()) {
  blocks_.reserve(other.blocks_.size());
  for (const auto& b : other.blocks_)
    blocks_.push_back(std::make_unique<VoxelBlock>(*b));
}

Vec3i BlockMap::world_to_voxel(const Vec3d& point) const {
  const Vec3d g = (point - origin_) / voxel_size_;
  return {static_cast<int>(std::floor(g.x())), static_cast<int>(std::floor(g.y())),
          static_cast<int>(std::floor(g.z()))};
}

Vec3d BlockMap::voxel_to_world(const Vec3i& voxel) const {
  return origin_ + (voxel.cast<double>() + Vec3d::Constant(0.5)) * voxel_size_;
}

const VoxelBlock* BlockMap::find_block(const Vec3i& block_coords) const {
  for (std::int64_t e = buckets_[block_hash(block_coords, buckets_.size())]; e >= 0;
       e = next_[e]) {
    if (blocks_[e]->coords == block_coords) return blocks_[e].get();
  }
  return nullptr;
}

VoxelBlock* BlockMap::find_block(const Vec3i& block_coords) {
  return const_cast<VoxelBlock*>(std::as_const(*this).find_block(block_coords));
}

VoxelBlock* BlockMap::insert_locked(const Vec3i& block_coords) {
  if (VoxelBlock* existing = find_block(block_coords)) return existing;
  if (options_.memory_budget_bytes &&
      (blocks_.size() + 1) * kBlockPayloadBytes > *options_.memory_budget_bytes) {
    ++dropped_;
    return nullptr;
  }
  auto block = std::make_unique<VoxelBlock>();
  block->coords = block_coords;
  const std::size_t bucket = block_hash(block_coords, buckets_.size());
  next_.push_back(buckets_[bucket]);
  buckets_[bucket] = static_cast<std::int64_t>(blocks_.size());
  blocks_.push_back(std::move(block));
  return blocks_.back().get();
}

VoxelBlock* BlockMap::try_allocate_block(const Vec3i& block_coords) {
  std::lock_guard lock(*alloc_mutex_);
  return insert_locked(block_coords);
}

Voxel* BlockMap::locate(const Vec3i& voxel_coords, bool allocate) {
  const Vec3i bc = block_of(voxel_coords);
  VoxelBlock* block = find_block(bc);
  if (!block && allocate) {
    block = try_allocate_block(bc);
    if (!block)
      throw CapacityError("voxel block allocation exceeds memory budget", dropped_);
  }
  if (!block) return nullptr;
  const Vec3i o = voxel_coords - kBlockSide * bc;
  return &block->at(o.x(), o.y(), o.z());
}

const Voxel* BlockMap::locate(const Vec3i& voxel_coords) const {
  const Vec3i bc = block_of(voxel_coords);
  const VoxelBlock* block = find_block(bc);
  if (!block) return nullptr;
  const Vec3i o = voxel_coords - kBlockSide * bc;
  return &block->at(o.x(), o.y(), o.z());
}

namespace {
bool block_less(const VoxelBlock* a, const VoxelBlock* b) {
  const auto& ca = a->coords;
  const auto& cb = b->coords;
  return std::tie(ca.z(), ca.y(), ca.x()) < std::tie(cb.z(), cb.y(), cb.x());
}
}  // namespace

std::vector<VoxelBlock*> BlockMap::sorted_blocks() {
  std::vector<VoxelBlock*> out;
  out.reserve(blocks_.size());
  for (auto& b : blocks_) out.push_back(b.get());
  std::sort(out.begin(), out.end(), block_less);
  return out;
}

std::vector<const VoxelBlock*> BlockMap::sorted_blocks() const {
  std::vector<const VoxelBlock*> out;
  out.reserve(blocks_.size());
  for (const auto& b : blocks_) out.push_back(b.get());
  std::sort(out.begin(), out.end(), block_less);
  return out;
}

// ---------------------------------------------------------------------------
// Snapshot

namespace {
constexpr char kMagic[4] = {'H', 'V', 'G', '1'};
constexpr std::uint8_t kFlagObserved = 0x01;
}  // namespace

std::size_t snapshot_size(const BlockMap& map) {
  return kSnapshotHeaderBytes + map.block_count() * kSnapshotBlockBytes;
}

std::vector<std::uint8_t> encode_snapshot(const BlockMap& map) {
  std::vector<std::uint8_t> out;
  out.reserve(snapshot_size(map));
  detail::ByteWriter w(out);
  w.put_bytes(kMagic, 4);
  w.put<double>(map.voxel_size());
  for (int i = 0; i < 3; ++i) w.put<double>(map.origin()[i]);
  w.put<std::uint64_t>(map.block_count());
  for (const VoxelBlock* b : map.sorted_blocks()) {
    for (int i = 0; i < 3; ++i) w.put<std::int32_t>(b->coords[i]);
    for (const Voxel& v : b->voxels) {
      w.put<float>(v.f);
      w.put<float>(v.w);
      w.put<std::uint8_t>(v.observed ? kFlagObserved : 0);
      w.put_bytes(v.rgb.data(), 3);
    }
  }
  return out;
}

BlockMap decode_snapshot(const std::vector<std::uint8_t>& bytes,
                         BlockMapOptions options) {
  detail::ByteReader r(bytes.data(), bytes.size());
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not an HVG1 snapshot");
  const double voxel_size = r.get<double>();
  Vec3d origin;
  for (int i = 0; i < 3; ++i) origin[i] = r.get<double>();
  const auto count = r.get<std::uint64_t>();
  if (count > r.remaining() / kSnapshotBlockBytes)
    throw std::runtime_error("snapshot truncated");
  BlockMap map(voxel_size, origin, options);
  for (std::uint64_t n = 0; n < count; ++n) {
    Vec3i c;
    for (int i = 0; i < 3; ++i) c[i] = r.get<std::int32_t>();
    if (map.find_block(c)) throw std::runtime_error("duplicate block in snapshot");
    VoxelBlock* b = map.try_allocate_block(c);
    if (!b) throw CapacityError("snapshot exceeds memory budget", map.dropped_allocations());
    for (Voxel& v : b->voxels) {
      v.f = r.get<float>();
      v.w = r.get<float>();
      v.observed = (r.get<std::uint8_t>() & kFlagObserved) != 0;
      r.get_bytes(v.rgb.data(), 3);
    }
  }
  if (r.remaining() != 0) throw std::runtime_error("trailing bytes in snapshot");
  return map;
}

void save_snapshot(const BlockMap& map, const std::filesystem::path& path) {
  const auto bytes = encode_snapshot(map);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

BlockMap load_snapshot(const std::filesystem::path& path, BlockMapOptions options) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return decode_snapshot(bytes, options);
}

}  // namespace voxreg
