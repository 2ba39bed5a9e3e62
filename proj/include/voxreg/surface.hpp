#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "voxreg/voxel_store.hpp"

namespace voxreg {

struct TriangleMesh {
  std::vector<Vec3d> vertices;
  /// Either empty or one entry per vertex.
  std::vector<std::array<std::uint8_t, 3>> colors;
  std::vector<std::array<std::int32_t, 3>> triangles;

  bool empty() const noexcept { return vertices.empty() && triangles.empty(); }
  bool has_colors() const noexcept { return !colors.empty(); }
};

/// Marching cubes over the zero level set. A cell (eight neighboring voxel
/// centers) contributes only if every corner is observed with w >= min_weight.
/// Vertices sit on cell edges by linear interpolation of f and are shared
/// between cells through their lattice edge; triangles face toward f > 0.
TriangleMesh extract_mesh(const BlockMap& map, double min_weight = 1.0,
                          bool with_color = false);

/// Binary little-endian PLY: float x,y,z, optional uchar red,green,blue,
/// and `list uchar int vertex_indices` faces. Returns the bytes written.
std::size_t export_ply(const TriangleMesh& mesh, std::ostream& os);
std::size_t export_ply(const TriangleMesh& mesh, const std::filesystem::path& path);

/// Reads binary little-endian or ASCII PLY. Vertex properties other than
/// x,y,z,red,green,blue are skipped; faces are optional.
TriangleMesh read_ply(const std::filesystem::path& path);

/// One "x y z" line per vertex.
void export_xyz(const std::vector<Vec3d>& points, const std::filesystem::path& path);
std::vector<Vec3d> read_xyz(const std::filesystem::path& path);

}  // namespace voxreg
