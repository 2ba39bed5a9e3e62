#include "voxreg/surface.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "byte_io.hpp"
#include "parallel.hpp"

namespace voxreg {

namespace {

#include "mc_tables.inc"

// Cube corner offsets and edge endpoints in the table's numbering.
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                              {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

// A lattice edge: lower endpoint voxel plus axis.
struct EdgeKey {
  Vec3i base;
  int axis;
  bool operator==(const EdgeKey& o) const noexcept { return axis == o.axis && base == o.base; }
};
struct EdgeKeyHash {
  std::size_t operator()(const EdgeKey& k) const noexcept {
    return block_hash(k.base, static_cast<std::size_t>(-1)) * 3u + static_cast<std::size_t>(k.axis);
  }
};

struct CellVertex {
  EdgeKey key;
  Vec3d position;
  std::array<std::uint8_t, 3> rgb;
};

struct BlockOutput {
  std::vector<CellVertex> vertices;           // unique within the block
  std::vector<std::array<int, 3>> triangles;  // indices into `vertices`
};

class CornerReader {
 public:
  CornerReader(const BlockMap& map, const VoxelBlock& block) : block_(block) {
    for (int c = 0; c < 8; ++c) {
      const Vec3i off((c & 1), (c >> 1) & 1, (c >> 2) & 1);
      neighbors_[c] = c == 0 ? &block : map.find_block(block.coords + off);
    }
  }

  /// Voxel at local offset (x, y, z) with each coordinate in [0, 8].
  const Voxel* at(int x, int y, int z) const {
    const int bx = x >> 3, by = y >> 3, bz = z >> 3;
    const VoxelBlock* b = neighbors_[bx | (by << 1) | (bz << 2)];
    if (!b) return nullptr;
    return &b->at(x & 7, y & 7, z & 7);
  }

  const VoxelBlock& block() const { return block_; }

 private:
  const VoxelBlock& block_;
  std::array<const VoxelBlock*, 8> neighbors_{};
};

double triangle_area(const Vec3d& a, const Vec3d& b, const Vec3d& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

BlockOutput march_block(const BlockMap& map, const VoxelBlock& block, double min_weight) {
  BlockOutput out;
  std::unordered_map<EdgeKey, int, EdgeKeyHash> local;
  const CornerReader reader(map, block);
  const Vec3i base = kBlockSide * block.coords;

  for (int z = 0; z < kBlockSide; ++z)
    for (int y = 0; y < kBlockSide; ++y)
      for (int x = 0; x < kBlockSide; ++x) {
        std::array<const Voxel*, 8> corner{};
        bool complete = true;
        int cube = 0;
        for (int c = 0; c < 8 && complete; ++c) {
          const Voxel* v = reader.at(x + kCorner[c][0], y + kCorner[c][1], z + kCorner[c][2]);
          if (!v || !v->observed || !(v->w > 0) || v->w < min_weight) {
            complete = false;
            break;
          }
          corner[c] = v;
          if (v->f < 0.0f) cube |= 1 << c;
        }
        if (!complete || cube == 0 || cube == 255) continue;

        std::array<int, 12> edge_vertex;
        edge_vertex.fill(-1);
        auto vertex_on = [&](int e) {
          if (edge_vertex[e] >= 0) return edge_vertex[e];
          int c0 = kEdge[e][0], c1 = kEdge[e][1];
          // Orient each edge from its lower lattice endpoint.
          if (kCorner[c0][0] + kCorner[c0][1] + kCorner[c0][2] >
              kCorner[c1][0] + kCorner[c1][1] + kCorner[c1][2])
            std::swap(c0, c1);
          const Vec3i p0 = base + Vec3i(x + kCorner[c0][0], y + kCorner[c0][1], z + kCorner[c0][2]);
          const Vec3i p1 = base + Vec3i(x + kCorner[c1][0], y + kCorner[c1][1], z + kCorner[c1][2]);
          int axis = 0;
          while (p1[axis] == p0[axis]) ++axis;
          const EdgeKey key{p0, axis};
          if (auto it = local.find(key); it != local.end()) return edge_vertex[e] = it->second;
          const double f0 = corner[c0]->f, f1 = corner[c1]->f;
          const double t = f0 / (f0 - f1);
          CellVertex cv;
          cv.key = key;
          cv.position = (1.0 - t) * map.voxel_to_world(p0) + t * map.voxel_to_world(p1);
          for (int k = 0; k < 3; ++k)
            cv.rgb[k] = static_cast<std::uint8_t>(
                std::lround((1.0 - t) * corner[c0]->rgb[k] + t * corner[c1]->rgb[k]));
          const int idx = static_cast<int>(out.vertices.size());
          out.vertices.push_back(cv);
          local.emplace(key, idx);
          return edge_vertex[e] = idx;
        };

        const auto& row = kTriTable[cube];
        for (int n = 0; row[n] != -1; n += 3) {
          // Reverse the table winding so normals face increasing f.
          const int a = vertex_on(row[n]);
          const int b = vertex_on(row[n + 2]);
          const int c = vertex_on(row[n + 1]);
          if (a == b || b == c || a == c) continue;
          if (!(triangle_area(out.vertices[a].position, out.vertices[b].position,
                              out.vertices[c].position) > 0.0))
            continue;
          out.triangles.push_back({a, b, c});
        }
      }
  return out;
}

}  // namespace

TriangleMesh extract_mesh(const BlockMap& map, double min_weight, bool with_color) {
  const auto blocks = map.sorted_blocks();
  std::vector<BlockOutput> outputs(blocks.size());
  detail::parallel_for(blocks.size(), [&](std::size_t k) {
    outputs[k] = march_block(map, *blocks[k], min_weight);
  });

  TriangleMesh mesh;
  std::unordered_map<EdgeKey, std::int32_t, EdgeKeyHash> global;
  for (const BlockOutput& out : outputs) {
    std::vector<std::int32_t> remap(out.vertices.size());
    for (std::size_t i = 0; i < out.vertices.size(); ++i) {
      const CellVertex& v = out.vertices[i];
      auto [it, inserted] = global.emplace(v.key, static_cast<std::int32_t>(mesh.vertices.size()));
      if (inserted) {
        mesh.vertices.push_back(v.position);
        if (with_color) mesh.colors.push_back(v.rgb);
      }
      remap[i] = it->second;
    }
    for (const auto& t : out.triangles) mesh.triangles.push_back({remap[t[0]], remap[t[1]], remap[t[2]]});
  }
  return mesh;
}

// ---------------------------------------------------------------------------
// PLY / XYZ

std::size_t export_ply(const TriangleMesh& mesh, std::ostream& os) {
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\n"
         << "element vertex " << mesh.vertices.size() << "\n"
         << "property float x\nproperty float y\nproperty float z\n";
  if (mesh.has_colors())
    header << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  header << "element face " << mesh.triangles.size() << "\n"
         << "property list uchar int vertex_indices\nend_header\n";
  const std::string h = header.str();

  std::vector<std::uint8_t> body;
  detail::ByteWriter w(body);
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    for (int k = 0; k < 3; ++k) w.put<float>(static_cast<float>(mesh.vertices[i][k]));
    if (mesh.has_colors()) w.put_bytes(mesh.colors[i].data(), 3);
  }
  for (const auto& t : mesh.triangles) {
    w.put<std::uint8_t>(3);
    for (int k = 0; k < 3; ++k) w.put<std::int32_t>(t[k]);
  }
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  os.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!os) throw std::runtime_error("failed to write PLY data");
  return h.size() + body.size();
}

std::size_t export_ply(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return export_ply(mesh, os);
}

namespace {

struct PlyProperty {
  std::string name;
  std::string type;
  bool is_list = false;
  std::string count_type;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

double read_binary(detail::ByteReader& r, const std::string& t) {
  if (t == "char" || t == "int8") return r.get<std::int8_t>();
  if (t == "uchar" || t == "uint8") return r.get<std::uint8_t>();
  if (t == "short" || t == "int16") return r.get<std::int16_t>();
  if (t == "ushort" || t == "uint16") return r.get<std::uint16_t>();
  if (t == "int" || t == "int32") return r.get<std::int32_t>();
  if (t == "uint" || t == "uint32") return r.get<std::uint32_t>();
  if (t == "float" || t == "float32") return r.get<float>();
  if (t == "double" || t == "float64") return r.get<double>();
  throw std::runtime_error("unsupported PLY property type: " + t);
}

}  // namespace

TriangleMesh read_ply(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "ply") throw std::runtime_error(path.string() + ": not a PLY file");

  bool binary = false;
  std::vector<PlyElement> elements;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian") binary = true;
      else if (fmt != "ascii") throw std::runtime_error("unsupported PLY format: " + fmt);
    } else if (tok == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (tok == "property") {
      if (elements.empty()) throw std::runtime_error("PLY property before element");
      PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") {
        p.is_list = true;
        ls >> p.count_type >> p.type >> p.name;
      } else {
        p.type = t;
        ls >> p.name;
      }
      elements.back().props.push_back(p);
    } else if (tok == "end_header") {
      break;
    }
  }

  TriangleMesh mesh;
  std::vector<std::uint8_t> rest((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  detail::ByteReader br(rest.data(), rest.size());
  std::istringstream text(std::string(rest.begin(), rest.end()));

  for (const PlyElement& e : elements) {
    const bool is_vertex = e.name == "vertex";
    const bool is_face = e.name == "face";
    bool has_rgb = false;
    for (const auto& p : e.props) has_rgb |= (p.name == "red");
    for (std::size_t n = 0; n < e.count; ++n) {
      Vec3d v = Vec3d::Zero();
      std::array<std::uint8_t, 3> rgb{0, 0, 0};
      for (const auto& p : e.props) {
        if (p.is_list) {
          double cnt = 0;
          if (binary) cnt = read_binary(br, p.count_type);
          else text >> cnt;
          std::vector<std::int32_t> idx(static_cast<std::size_t>(cnt));
          for (auto& x : idx) {
            double val = 0;
            if (binary) val = read_binary(br, p.type);
            else text >> val;
            x = static_cast<std::int32_t>(val);
          }
          if (is_face && p.name == "vertex_indices") {
            for (std::size_t k = 1; k + 1 < idx.size(); ++k)
              mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
          }
          continue;
        }
        double val = 0;
        if (binary) val = read_binary(br, p.type);
        else text >> val;
        if (is_vertex) {
          if (p.name == "x") v.x() = val;
          else if (p.name == "y") v.y() = val;
          else if (p.name == "z") v.z() = val;
          else if (p.name == "red") rgb[0] = static_cast<std::uint8_t>(val);
          else if (p.name == "green") rgb[1] = static_cast<std::uint8_t>(val);
          else if (p.name == "blue") rgb[2] = static_cast<std::uint8_t>(val);
        }
      }
      if (is_vertex) {
        mesh.vertices.push_back(v);
        if (has_rgb) mesh.colors.push_back(rgb);
      }
      if (!binary && !text) throw std::runtime_error(path.string() + ": truncated PLY body");
    }
  }
  for (const auto& t : mesh.triangles)
    for (std::int32_t i : t)
      if (i < 0 || static_cast<std::size_t>(i) >= mesh.vertices.size())
        throw std::runtime_error(path.string() + ": face index out of range");
  return mesh;
}

void export_xyz(const std::vector<Vec3d>& points, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.precision(9);
  for (const Vec3d& p : points) os << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::vector<Vec3d> read_xyz(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<Vec3d> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Vec3d p;
    if (!(ls >> p.x() >> p.y() >> p.z()))
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed point");
    pts.push_back(p);
  }
  return pts;
}

}  // namespace voxreg
