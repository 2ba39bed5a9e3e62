#pragma once

// Straightforward dense-array reference implementations used to check the
// sparse code paths.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "voxreg/fusion.hpp"
#include "voxreg/voxel_store.hpp"

namespace oracle {

using voxreg::Vec3d;
using voxreg::Vec3i;

struct DenseGrid {
  Vec3i lo;  // voxel coordinates of the first cell
  int nx, ny, nz;
  double voxel_size;
  std::vector<float> f, w;

  DenseGrid(Vec3i lo_, int nx_, int ny_, int nz_, double vs)
      : lo(lo_), nx(nx_), ny(ny_), nz(nz_), voxel_size(vs),
        f(static_cast<std::size_t>(nx_) * ny_ * nz_, 0.0f),
        w(static_cast<std::size_t>(nx_) * ny_ * nz_, 0.0f) {}

  std::size_t size() const { return f.size(); }
  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * ny + y) * nx + x;
  }
  bool inside(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz;
  }
  Vec3i voxel(int x, int y, int z) const { return lo + Vec3i(x, y, z); }
};

// One pass over every cell: project the center, take the nearest pixel, and
// apply the truncated running average.
inline void dense_fuse(DenseGrid& g, const voxreg::DepthMap& depth, const voxreg::CameraModel& cam,
                       const voxreg::Pose& pose, double mu, double max_weight, double max_range) {
  const Eigen::Matrix3d rt = pose.rotation.transpose();
  for (int z = 0; z < g.nz; ++z)
    for (int y = 0; y < g.ny; ++y)
      for (int x = 0; x < g.nx; ++x) {
        const Vec3i v = g.voxel(x, y, z);
        const Vec3d p((v.x() + 0.5) * g.voxel_size, (v.y() + 0.5) * g.voxel_size,
                      (v.z() + 0.5) * g.voxel_size);
        const Vec3d c = rt * (p - pose.translation);
        if (c.z() <= 0) continue;
        const double px = std::floor(cam.fx * c.x() / c.z() + cam.cx + 0.5);
        const double py = std::floor(cam.fy * c.y() / c.z() + cam.cy + 0.5);
        if (px < 0 || py < 0 || px > cam.width - 1 || py > cam.height - 1) continue;
        const float d = depth(static_cast<int>(px), static_cast<int>(py));
        if (!(d > 0) || !std::isfinite(d) || d > max_range) continue;
        const double sdf = d - c.z();
        if (sdf < -mu) continue;
        const double t = std::min(sdf, mu) / mu;
        const std::size_t i = g.index(x, y, z);
        const double wp = g.w[i];
        g.f[i] = static_cast<float>(std::max(-1.0, std::min(1.0, (t + wp * g.f[i]) / (wp + 1.0))));
        g.w[i] = static_cast<float>(std::min(wp + 1.0, max_weight));
      }
}

// Primal-dual TV solver on a dense box. Cells outside the box or with w == 0
// are outside the domain.
struct DenseSolver {
  int nx, ny, nz;
  std::vector<double> f, w, u, u_prev, u_hat, px, py, pz;
  std::vector<char> omega;

  DenseSolver(const DenseGrid& g)
      : nx(g.nx), ny(g.ny), nz(g.nz), f(g.f.begin(), g.f.end()), w(g.w.begin(), g.w.end()),
        u(g.size()), u_prev(g.size()), u_hat(g.size()), px(g.size(), 0.0), py(g.size(), 0.0),
        pz(g.size(), 0.0), omega(g.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      omega[i] = w[i] > 0;
      u[i] = u_prev[i] = u_hat[i] = omega[i] ? f[i] : 0.0;
    }
  }

  std::size_t idx(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * ny + y) * nx + x;
  }
  bool in(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz && omega[idx(x, y, z)];
  }

  // Forward difference, zero when either end is outside the domain.
  double grad(const std::vector<double>& a, int x, int y, int z, int axis) const {
    const int x1 = x + (axis == 0), y1 = y + (axis == 1), z1 = z + (axis == 2);
    if (!in(x, y, z) || !in(x1, y1, z1)) return 0.0;
    return a[idx(x1, y1, z1)] - a[idx(x, y, z)];
  }

  // Case analysis on which neighbors are in the domain.
  double div(int x, int y, int z) const {
    if (!in(x, y, z)) return 0.0;
    double s = 0.0;
    const std::vector<double>* comp[3] = {&px, &py, &pz};
    for (int a = 0; a < 3; ++a) {
      const int dx = a == 0, dy = a == 1, dz = a == 2;
      const bool has_next = in(x + dx, y + dy, z + dz);
      const bool has_prev = in(x - dx, y - dy, z - dz);
      const double here = (*comp[a])[idx(x, y, z)];
      const double before = has_prev ? (*comp[a])[idx(x - dx, y - dy, z - dz)] : 0.0;
      if (has_next && has_prev) s += here - before;
      else if (has_next) s += here;
      else if (has_prev) s -= before;
    }
    return s;
  }

  void iterate(double sigma, double tau, double lambda, double theta) {
    for (int z = 0; z < nz; ++z)
      for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
          const std::size_t i = idx(x, y, z);
          if (!omega[i]) continue;
          const double a = px[i] + sigma * grad(u_hat, x, y, z, 0);
          const double b = py[i] + sigma * grad(u_hat, x, y, z, 1);
          const double c = pz[i] + sigma * grad(u_hat, x, y, z, 2);
          const double n = std::max(1.0, std::sqrt(a * a + b * b + c * c));
          px[i] = a / n;
          py[i] = b / n;
          pz[i] = c / n;
        }
    for (int z = 0; z < nz; ++z)
      for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
          const std::size_t i = idx(x, y, z);
          if (!omega[i]) continue;
          u_prev[i] = u[i];
          const double t = u[i] + tau * div(x, y, z);
          u[i] = (t + tau * lambda * w[i] * f[i]) / (1.0 + tau * lambda * w[i]);
        }
    for (std::size_t i = 0; i < u.size(); ++i)
      if (omega[i]) u_hat[i] = u[i] + theta * (u[i] - u_prev[i]);
  }

  double energy(double lambda) const {
    double e = 0.0;
    for (int z = 0; z < nz; ++z)
      for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
          const std::size_t i = idx(x, y, z);
          if (!omega[i]) continue;
          const double gx = grad(u, x, y, z, 0), gy = grad(u, x, y, z, 1), gz = grad(u, x, y, z, 2);
          e += std::sqrt(gx * gx + gy * gy + gz * gz) + 0.5 * lambda * w[i] * (f[i] - u[i]) * (f[i] - u[i]);
        }
    return e;
  }
};

// Copies a dense grid into a sparse map (observed cells only).
inline voxreg::BlockMap to_block_map(const DenseGrid& g) {
  voxreg::BlockMap map(g.voxel_size);
  for (int z = 0; z < g.nz; ++z)
    for (int y = 0; y < g.ny; ++y)
      for (int x = 0; x < g.nx; ++x) {
        const std::size_t i = g.index(x, y, z);
        if (!(g.w[i] > 0)) continue;
        voxreg::Voxel* v = map.locate(g.voxel(x, y, z), true);
        v->f = g.f[i];
        v->w = g.w[i];
        v->observed = true;
      }
  return map;
}

}  // namespace oracle
