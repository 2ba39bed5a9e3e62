#include "voxreg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "parallel.hpp"
#include "voxreg/io.hpp"
#include "voxreg/surface.hpp"

namespace voxreg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kHitEpsilon = 1e-9;

Vec3d unit_or_throw(const Vec3d& v, const char* what) {
  const double n = v.norm();
  if (!(n > 1e-12) || !std::isfinite(n)) throw SceneError(std::string("degenerate ") + what);
  return v / n;
}

void corridor_frame(const Corridor& c, Vec3d& d, Vec3d& side, Vec3d& up) {
  d = unit_or_throw(c.direction, "corridor direction");
  Vec3d hint = Vec3d::UnitZ();
  if (std::abs(d.dot(hint)) > 0.99) hint = Vec3d::UnitY();
  side = d.cross(hint).normalized();
  up = side.cross(d);
}

std::vector<Rect> corridor_rects(const Corridor& c) {
  Vec3d d, side, up;
  corridor_frame(c, d, side, up);
  const Vec3d mid = c.start + 0.5 * c.length * d;
  const Vec3d half_len = 0.5 * c.length * d;
  return {
      Rect{mid, half_len, 0.5 * c.width * side},                                // floor
      Rect{mid + c.height * up, half_len, 0.5 * c.width * side},                // ceiling
      Rect{mid + 0.5 * c.width * side + 0.5 * c.height * up, half_len, 0.5 * c.height * up},
      Rect{mid - 0.5 * c.width * side + 0.5 * c.height * up, half_len, 0.5 * c.height * up},
  };
}

double ray_rect(const Rect& r, const Vec3d& o, const Vec3d& dir) {
  const Vec3d n = r.half_u.cross(r.half_v);
  const double denom = n.dot(dir);
  if (std::abs(denom) < 1e-15) return kInf;
  const double t = n.dot(r.center - o) / denom;
  if (!(t > kHitEpsilon)) return kInf;
  const Vec3d q = o + t * dir - r.center;
  const double s = q.dot(r.half_u) / r.half_u.squaredNorm();
  const double v = q.dot(r.half_v) / r.half_v.squaredNorm();
  return std::abs(s) <= 1.0 && std::abs(v) <= 1.0 ? t : kInf;
}

double ray_sphere(const Sphere& s, const Vec3d& o, const Vec3d& dir) {
  const Vec3d oc = o - s.center;
  const double a = dir.squaredNorm();
  const double b = oc.dot(dir);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - a * c;
  if (disc < 0) return kInf;
  const double root = std::sqrt(disc);
  double t = (-b - root) / a;
  if (t > kHitEpsilon) return t;
  t = (-b + root) / a;
  return t > kHitEpsilon ? t : kInf;
}

double rect_distance(const Rect& r, const Vec3d& p) {
  const Vec3d q = p - r.center;
  const double s = std::clamp(q.dot(r.half_u) / r.half_u.squaredNorm(), -1.0, 1.0);
  const double v = std::clamp(q.dot(r.half_v) / r.half_v.squaredNorm(), -1.0, 1.0);
  return (q - s * r.half_u - v * r.half_v).norm();
}

double lattice_value(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t seed) {
  std::uint64_t h = seed * 0x9E3779B97F4A7C15ull;
  h ^= static_cast<std::uint64_t>(x) * 0xBF58476D1CE4E5B9ull;
  h ^= static_cast<std::uint64_t>(y) * 0x94D049BB133111EBull;
  h ^= static_cast<std::uint64_t>(z) * 0xD6E8FEB86659FD93ull;
  h ^= h >> 31;
  h *= 0x9E3779B97F4A7C15ull;
  h ^= h >> 29;
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(const Vec3d& p, std::uint64_t seed) {
  const Vec3d f = p.array().floor();
  const Vec3d t = p - f;
  const Vec3d s = t.array() * t.array() * (3.0 - 2.0 * t.array());
  const auto ix = static_cast<std::int64_t>(f.x());
  const auto iy = static_cast<std::int64_t>(f.y());
  const auto iz = static_cast<std::int64_t>(f.z());
  double acc = 0;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = c >> 2;
    const double wgt = (dx ? s.x() : 1 - s.x()) * (dy ? s.y() : 1 - s.y()) * (dz ? s.z() : 1 - s.z());
    acc += wgt * lattice_value(ix + dx, iy + dy, iz + dz, seed);
  }
  return acc;
}

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream is(line);
  std::vector<std::string> out;
  for (std::string t; is >> t;) out.push_back(t);
  return out;
}

}  // namespace

void SceneSpec::validate() const {
  if (planes.empty() && spheres.empty() && corridors.empty())
    throw SceneError("scene has no surfaces");
  for (const Rect& r : planes) {
    if (r.half_u.norm() < 1e-9 || r.half_v.norm() < 1e-9)
      throw SceneError("plane with zero extent");
    if (std::abs(r.half_u.dot(r.half_v)) > 1e-9 * r.half_u.norm() * r.half_v.norm())
      throw SceneError("plane axes must be orthogonal");
  }
  for (const Sphere& s : spheres)
    if (!(s.radius > 0)) throw SceneError("sphere radius must be positive");
  for (const Corridor& c : corridors) {
    if (!(c.length > 0 && c.width > 0 && c.height > 0))
      throw SceneError("corridor dimensions must be positive");
    unit_or_throw(c.direction, "corridor direction");
  }
  if (trajectory.frames < 1) throw SceneError("trajectory needs at least one frame");
  if (trajectory.kind == Trajectory::Kind::kOrbit) {
    if (!(trajectory.radius > 0)) throw SceneError("orbit radius must be positive");
  } else if (!trajectory.look) {
    if ((trajectory.end - trajectory.start).norm() < 1e-9)
      throw SceneError("degenerate trajectory: no motion and no look direction");
  } else {
    unit_or_throw(*trajectory.look, "look direction");
  }
  if (!(depth_noise >= 0)) throw SceneError("depth noise must be non-negative");
  if (!(reference_spacing > 0)) throw SceneError("reference spacing must be positive");
  if (!(texture_scale > 0)) throw SceneError("texture scale must be positive");
  try {
    camera.validate();
  } catch (const std::invalid_argument& e) {
    throw SceneError(e.what());
  }
  if (stereo && !(camera.baseline > 0)) throw SceneError("stereo rendering needs a baseline");
}

SceneSpec SceneSpec::parse(std::string_view text) {
  SceneSpec s;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto tok = tokens(line);
    if (tok.empty()) continue;
    const std::string where = "scene line " + std::to_string(lineno) + ": ";
    std::vector<double> v;
    try {
      for (std::size_t i = 1; i < tok.size(); ++i) v.push_back(std::stod(tok[i]));
    } catch (const std::exception&) {
      throw SceneError(where + "expected numbers after '" + tok[0] + "'");
    }
    auto need = [&](std::size_t lo, std::size_t hi) {
      if (v.size() < lo || v.size() > hi)
        throw SceneError(where + "wrong number of values for '" + tok[0] + "'");
    };
    auto vec = [&](std::size_t i) { return Vec3d(v[i], v[i + 1], v[i + 2]); };
    const std::string& key = tok[0];
    if (key == "camera") {
      need(6, 7);
      s.camera = CameraModel{v[0], v[1], v[2], v[3], static_cast<int>(v[4]), static_cast<int>(v[5]),
                             v.size() == 7 ? v[6] : 0.0};
    } else if (key == "plane") {
      need(9, 9);
      s.planes.push_back(Rect{vec(0), vec(3), vec(6)});
    } else if (key == "sphere") {
      need(4, 4);
      s.spheres.push_back(Sphere{vec(0), v[3]});
    } else if (key == "corridor") {
      need(9, 9);
      s.corridors.push_back(Corridor{vec(0), vec(3), v[6], v[7], v[8]});
    } else if (key == "line") {
      need(6, 6);
      s.trajectory.kind = Trajectory::Kind::kLine;
      s.trajectory.start = vec(0);
      s.trajectory.end = vec(3);
    } else if (key == "look") {
      need(3, 3);
      s.trajectory.look = vec(0);
    } else if (key == "orbit") {
      need(5, 5);
      s.trajectory.kind = Trajectory::Kind::kOrbit;
      s.trajectory.center = vec(0);
      s.trajectory.radius = v[3];
      s.trajectory.height = v[4];
    } else if (key == "frames") {
      need(1, 1);
      s.trajectory.frames = static_cast<int>(v[0]);
    } else if (key == "noise") {
      need(1, 1);
      s.depth_noise = v[0];
    } else if (key == "seed") {
      need(1, 1);
      s.seed = static_cast<std::uint64_t>(v[0]);
    } else if (key == "reference_spacing") {
      need(1, 1);
      s.reference_spacing = v[0];
    } else if (key == "stereo") {
      need(1, 1);
      s.stereo = v[0] != 0;
    } else if (key == "texture_scale") {
      need(1, 1);
      s.texture_scale = v[0];
    } else {
      throw SceneError(where + "unknown directive '" + key + "'");
    }
  }
  s.validate();
  return s;
}

SceneSpec SceneSpec::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw SceneError("cannot open scene " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

SceneSpec corridor_preset(int frames, double noise) {
  SceneSpec s;
  const double heading = 20.0 * std::numbers::pi / 180.0;
  const Vec3d d(std::cos(heading), std::sin(heading), 0.0);
  const Vec3d side(-d.y(), d.x(), 0.0);
  s.corridors.push_back(Corridor{Vec3d(0.013, 0.021, 0.037), d, 12.0, 3.0, 2.5});
  s.trajectory.kind = Trajectory::Kind::kLine;
  s.trajectory.start = Vec3d(0.013, 0.021, 1.237) + 0.5 * d + 0.3 * side;
  s.trajectory.end = s.trajectory.start + 6.0 * d;
  s.trajectory.frames = frames;
  s.depth_noise = noise;
  return s;
}

SceneSpec long_corridor_preset(double length) {
  SceneSpec s;
  const Vec3d d = Vec3d(2.0, 1.0, 2.0) / 3.0;
  s.corridors.push_back(Corridor{Vec3d(0.013, 0.021, 0.037), d, length, 3.0, 2.5});
  Vec3d dn, side, up;
  corridor_frame(s.corridors[0], dn, side, up);
  s.trajectory.kind = Trajectory::Kind::kLine;
  s.trajectory.start = s.corridors[0].start + 1.25 * up + 0.5 * d;
  s.trajectory.end = s.corridors[0].start + 1.25 * up + (length - 0.5) * d;
  s.trajectory.frames = std::max(2, static_cast<int>(std::ceil(length / 4.0)) + 1);
  s.camera = CameraModel{80, 80, 79.5, 59.5, 160, 120, 0.54};
  s.reference_spacing = 0.05;
  return s;
}

SceneSpec sphere_preset(int frames) {
  SceneSpec s;
  s.spheres.push_back(Sphere{Vec3d(0.013, 0.021, 0.037), 1.0});
  s.trajectory.kind = Trajectory::Kind::kOrbit;
  s.trajectory.center = s.spheres[0].center;
  s.trajectory.radius = 3.0;
  s.trajectory.height = 0.8;
  s.trajectory.frames = frames;
  return s;
}

SceneSpec plane_preset() {
  SceneSpec s;
  s.planes.push_back(Rect{Vec3d(4.013, 0.0, 1.0), Vec3d(0, 2.0, 0), Vec3d(0, 0, 1.5)});
  s.trajectory.kind = Trajectory::Kind::kLine;
  s.trajectory.start = s.trajectory.end = Vec3d(0, 0, 1.0);
  s.trajectory.look = Vec3d::UnitX();
  s.trajectory.frames = 1;
  return s;
}

Scene::Scene(const SceneSpec& spec)
    : rects_(spec.planes), spheres_(spec.spheres), texture_scale_(spec.texture_scale),
      seed_(spec.seed) {
  for (const Corridor& c : spec.corridors) {
    const auto r = corridor_rects(c);
    rects_.insert(rects_.end(), r.begin(), r.end());
  }
}

double Scene::raycast(const Vec3d& origin, const Vec3d& dir) const {
  double best = kInf;
  for (const Rect& r : rects_) best = std::min(best, ray_rect(r, origin, dir));
  for (const Sphere& s : spheres_) best = std::min(best, ray_sphere(s, origin, dir));
  return best;
}

float Scene::texture(const Vec3d& p) const {
  const Vec3d q = p / texture_scale_;
  const double v = 0.65 * value_noise(q, seed_) + 0.35 * value_noise(q * 2.7, seed_ + 1);
  return static_cast<float>(std::clamp(0.1 + 0.8 * v, 0.0, 1.0));
}

double Scene::distance(const Vec3d& p) const {
  double best = kInf;
  for (const Rect& r : rects_) best = std::min(best, rect_distance(r, p));
  for (const Sphere& s : spheres_) best = std::min(best, std::abs((p - s.center).norm() - s.radius));
  return best;
}

std::vector<Vec3d> Scene::sample_reference(double spacing) const {
  std::vector<Vec3d> out;
  for (const Rect& r : rects_) {
    const int nu = std::max(1, static_cast<int>(std::ceil(2.0 * r.half_u.norm() / spacing)));
    const int nv = std::max(1, static_cast<int>(std::ceil(2.0 * r.half_v.norm() / spacing)));
    for (int j = 0; j < nv; ++j)
      for (int i = 0; i < nu; ++i) {
        const double s = -1.0 + (2.0 * i + 1.0) / nu;
        const double t = -1.0 + (2.0 * j + 1.0) / nv;
        out.push_back(r.center + s * r.half_u + t * r.half_v);
      }
  }
  for (const Sphere& sp : spheres_) {
    const double area = 4.0 * std::numbers::pi * sp.radius * sp.radius;
    const auto n = static_cast<std::size_t>(std::ceil(area / (spacing * spacing)));
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (std::size_t i = 0; i < n; ++i) {
      const double z = 1.0 - (2.0 * i + 1.0) / static_cast<double>(n);
      const double rho = std::sqrt(1.0 - z * z);
      const double phi = golden * static_cast<double>(i);
      out.push_back(sp.center + sp.radius * Vec3d(rho * std::cos(phi), rho * std::sin(phi), z));
    }
  }
  return out;
}

Pose look_along(const Vec3d& eye, const Vec3d& forward) {
  const Vec3d f = unit_or_throw(forward, "view direction");
  Vec3d up = Vec3d::UnitZ();
  if (std::abs(f.dot(up)) > 0.99) up = Vec3d::UnitY();
  const Vec3d down = (f * f.dot(up) - up).normalized();
  Pose p;
  p.rotation.col(0) = down.cross(f);
  p.rotation.col(1) = down;
  p.rotation.col(2) = f;
  p.translation = eye;
  return p;
}

std::vector<Pose> trajectory_poses(const Trajectory& traj) {
  std::vector<Pose> poses;
  for (int k = 0; k < traj.frames; ++k) {
    const double a = traj.frames > 1 ? static_cast<double>(k) / (traj.frames - 1) : 0.0;
    if (traj.kind == Trajectory::Kind::kOrbit) {
      const double phi = 2.0 * std::numbers::pi * k / traj.frames;
      const Vec3d eye = traj.center + Vec3d(traj.radius * std::cos(phi), traj.radius * std::sin(phi),
                                            traj.height);
      poses.push_back(look_along(eye, traj.center - eye));
    } else {
      const Vec3d eye = traj.start + a * (traj.end - traj.start);
      poses.push_back(look_along(eye, traj.look.value_or(traj.end - traj.start)));
    }
  }
  return poses;
}

namespace {

template <typename Fn>
void render(const CameraModel& cam, const Pose& pose, Fn&& per_pixel) {
  detail::parallel_for(static_cast<std::size_t>(cam.height), [&](std::size_t yy) {
    const int y = static_cast<int>(yy);
    for (int x = 0; x < cam.width; ++x) {
      const Vec3d ray_cam((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0);
      per_pixel(x, y, pose.translation, pose.rotation * ray_cam);
    }
  });
}

}  // namespace

Dataset generate(const SceneSpec& spec) {
  spec.validate();
  const Scene scene(spec);
  Dataset data;
  data.camera = spec.camera;
  data.poses = trajectory_poses(spec.trajectory);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  for (const Pose& pose : data.poses) {
    DepthMap depth(spec.camera.width, spec.camera.height, nan);
    // Camera rays have unit z, so the hit parameter is the depth.
    render(spec.camera, pose, [&](int x, int y, const Vec3d& o, const Vec3d& dir) {
      const double t = scene.raycast(o, dir);
      if (std::isfinite(t)) depth(x, y) = static_cast<float>(t);
    });
    if (spec.depth_noise > 0) {
      for (float& d : depth.data()) {
        const double n = noise(rng);
        if (!std::isnan(d)) {
          const double v = d + spec.depth_noise * n;
          d = v > 0 ? static_cast<float>(v) : nan;
        }
      }
    }
    data.depth.push_back(std::move(depth));

    if (spec.stereo) {
      Pose right_pose = pose;
      right_pose.translation = pose.to_world(Vec3d(spec.camera.baseline, 0, 0));
      auto shade = [&](const Pose& p) {
        GrayImage img(spec.camera.width, spec.camera.height, 0.0f);
        render(spec.camera, p, [&](int x, int y, const Vec3d& o, const Vec3d& dir) {
          const double t = scene.raycast(o, dir);
          if (std::isfinite(t)) img(x, y) = scene.texture(o + t * dir);
        });
        return img;
      };
      data.left.push_back(shade(pose));
      data.right.push_back(shade(right_pose));
    }
  }
  data.reference = scene.sample_reference(spec.reference_spacing);
  return data;
}

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "depth");
  write_poses(data.poses, dir / "poses.txt");
  for (std::size_t i = 0; i < data.depth.size(); ++i)
    write_pfm(data.depth[i], dir / "depth" / fmt::format("{:06d}.pfm", i));
  if (!data.left.empty()) {
    fs::create_directories(dir / "left");
    fs::create_directories(dir / "right");
    for (std::size_t i = 0; i < data.left.size(); ++i) {
      write_gray_png(data.left[i], dir / "left" / fmt::format("{:06d}.png", i));
      write_gray_png(data.right[i], dir / "right" / fmt::format("{:06d}.png", i));
    }
  }
  export_xyz(data.reference, dir / "reference.xyz");
}

}  // namespace voxreg
