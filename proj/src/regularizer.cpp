#include "voxreg/regularizer.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "parallel.hpp"

namespace voxreg {

void RegParams::validate() const {
  if (!(lambda > 0) || !(sigma_p > 0) || !(tau > 0) || !(theta >= 0))
    throw std::invalid_argument("regularizer parameters must be positive");
  if (iterations < 0) throw std::invalid_argument("iterations must be non-negative");
  if (gap_tolerance < 0 || gap_check_interval <= 0)
    throw std::invalid_argument("invalid duality-gap settings");
}

namespace {

constexpr int kLast = kBlockSide - 1;
constexpr int kStride[3] = {1, kBlockSide, kBlockSide * kBlockSide};

inline int axis_coord(int i, int axis) { return (i / kStride[axis]) % kBlockSide; }

struct CoordHash {
  std::size_t operator()(const Vec3i& v) const noexcept {
    return block_hash(v, static_cast<std::size_t>(-1));
  }
};
struct CoordEq {
  bool operator()(const Vec3i& a, const Vec3i& b) const noexcept { return a == b; }
};

}  // namespace

RegState::RegState(const BlockMap& map) {
  for (const VoxelBlock* b : map.sorted_blocks()) {
    const bool any = std::any_of(b->voxels.begin(), b->voxels.end(),
                                 [](const Voxel& v) { return v.observed && v.w > 0; });
    if (!any) continue;
    BlockState s;
    s.coords = b->coords;
    for (int i = 0; i < kBlockVoxels; ++i) {
      const Voxel& v = b->voxels[i];
      s.omega[i] = (v.observed && v.w > 0) ? 1 : 0;
      s.f[i] = v.f;
      s.w[i] = v.w;
      observed_ += s.omega[i];
    }
    blocks_.push_back(std::move(s));
  }

  std::unordered_map<Vec3i, std::int32_t, CoordHash, CoordEq> slot_of;
  slot_of.reserve(blocks_.size());
  for (std::size_t k = 0; k < blocks_.size(); ++k)
    slot_of.emplace(blocks_[k].coords, static_cast<std::int32_t>(k));
  for (auto& s : blocks_) {
    for (int a = 0; a < 3; ++a) {
      if (auto it = slot_of.find(s.coords + unit_steps()[a]); it != slot_of.end())
        s.next[a] = it->second;
      if (auto it = slot_of.find(s.coords - unit_steps()[a]); it != slot_of.end())
        s.prev[a] = it->second;
    }
  }

  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    auto& s = blocks_[k];
    for (int i = 0; i < kBlockVoxels; ++i) {
      if (!s.omega[i]) continue;
      for (int a = 0; a < 3; ++a) {
        const auto [ns, ni] = step(k, i, a, true);
        if (ns >= 0 && blocks_[ns].omega[ni]) s.edges[i] |= static_cast<std::uint8_t>(1u << a);
      }
    }
  }
  initialize(InitMode::kFromData);
}

std::pair<std::int32_t, int> RegState::step(std::size_t slot, int i, int axis,
                                            bool forward) const {
  const int c = axis_coord(i, axis);
  const BlockState& s = blocks_[slot];
  if (forward) {
    if (c < kLast) return {static_cast<std::int32_t>(slot), i + kStride[axis]};
    return {s.next[axis], i - kLast * kStride[axis]};
  }
  if (c > 0) return {static_cast<std::int32_t>(slot), i - kStride[axis]};
  return {s.prev[axis], i + kLast * kStride[axis]};
}

void RegState::initialize(InitMode mode) {
  for (auto& s : blocks_) {
    for (int i = 0; i < kBlockVoxels; ++i) {
      const double start = (mode == InitMode::kFromData && s.omega[i]) ? s.f[i] : 0.0;
      s.u[i] = s.u_prev[i] = s.u_hat[i] = start;
    }
    for (auto& pa : s.p) pa.fill(0.0);
  }
}

Vec3d RegState::gradient(std::size_t slot, int i, Scalars BlockState::*field) const {
  const BlockState& s = blocks_[slot];
  Vec3d g = Vec3d::Zero();
  for (int a = 0; a < 3; ++a) {
    if (!(s.edges[i] & (1u << a))) continue;
    const auto [ns, ni] = step(slot, i, a, true);
    g[a] = (blocks_[ns].*field)[ni] - (s.*field)[i];
  }
  return g;
}

double RegState::divergence_p(std::size_t slot, int i) const {
  const BlockState& s = blocks_[slot];
  if (!s.omega[i]) return 0.0;
  double div = 0.0;
  for (int a = 0; a < 3; ++a) {
    if (s.edges[i] & (1u << a)) div += s.p[a][i];
    const auto [ps, pi] = step(slot, i, a, false);
    if (ps >= 0 && (blocks_[ps].edges[pi] & (1u << a))) div -= blocks_[ps].p[a][pi];
  }
  return div;
}

Vec3d RegState::p(std::size_t slot, int i) const {
  const auto& s = blocks_[slot];
  return {s.p[0][i], s.p[1][i], s.p[2][i]};
}

void RegState::set_u(std::size_t slot, int i, double value) { blocks_[slot].u[i] = value; }
void RegState::set_u_hat(std::size_t slot, int i, double value) {
  blocks_[slot].u_hat[i] = value;
}
void RegState::set_p(std::size_t slot, int i, const Vec3d& value) {
  for (int a = 0; a < 3; ++a) blocks_[slot].p[a][i] = value[a];
}

void RegState::dual_step(double sigma_p) {
  detail::parallel_for(blocks_.size(), [&](std::size_t k) {
    BlockState& s = blocks_[k];
    for (int i = 0; i < kBlockVoxels; ++i) {
      if (!s.omega[i]) continue;
      const Vec3d g = gradient(k, i, &BlockState::u_hat);
      const Vec3d pk = project_unit_ball(
          Vec3d(s.p[0][i], s.p[1][i], s.p[2][i]) + sigma_p * g);
      for (int a = 0; a < 3; ++a) s.p[a][i] = pk[a];
    }
  });
}

void RegState::primal_step(double tau, double lambda) {
  detail::parallel_for(blocks_.size(), [&](std::size_t k) {
    BlockState& s = blocks_[k];
    for (int i = 0; i < kBlockVoxels; ++i) {
      if (!s.omega[i]) continue;
      s.u_prev[i] = s.u[i];
      const double u_tilde = s.u[i] + tau * divergence_p(k, i);
      const double tlw = tau * lambda * s.w[i];
      s.u[i] = (u_tilde + tlw * s.f[i]) / (1.0 + tlw);
    }
  });
}

void RegState::relax_step(double theta, RelaxMode mode) {
  detail::parallel_for(blocks_.size(), [&](std::size_t k) {
    BlockState& s = blocks_[k];
    for (int i = 0; i < kBlockVoxels; ++i) {
      if (!s.omega[i]) continue;
      const double anchor = mode == RelaxMode::kPreviousIterate ? s.u_prev[i] : s.u_hat[i];
      s.u_hat[i] = s.u[i] + theta * (s.u[i] - anchor);
    }
  });
}

double RegState::energy(double lambda) const {
  std::vector<double> partial(blocks_.size(), 0.0);
  detail::parallel_for(blocks_.size(), [&](std::size_t k) {
    const BlockState& s = blocks_[k];
    double e = 0.0;
    for (int i = 0; i < kBlockVoxels; ++i) {
      if (!s.omega[i]) continue;
      const double r = s.f[i] - s.u[i];
      e += gradient(k, i, &BlockState::u).norm() + 0.5 * lambda * s.w[i] * r * r;
    }
    partial[k] = e;
  });
  double total = 0.0;
  for (double e : partial) total += e;
  return total;
}

double RegState::dual_energy(double lambda) const {
  std::vector<double> partial(blocks_.size(), 0.0);
  detail::parallel_for(blocks_.size(), [&](std::size_t k) {
    const BlockState& s = blocks_[k];
    double e = 0.0;
    for (int i = 0; i < kBlockVoxels; ++i) {
      if (!s.omega[i]) continue;
      const double d = divergence_p(k, i);
      e += -s.f[i] * d - d * d / (2.0 * lambda * s.w[i]);
    }
    partial[k] = e;
  });
  double total = 0.0;
  for (double e : partial) total += e;
  return total;
}

double RegState::max_dual_norm() const {
  double m = 0.0;
  for (std::size_t k = 0; k < blocks_.size(); ++k)
    for (int i = 0; i < kBlockVoxels; ++i) m = std::max(m, p(k, i).norm());
  return m;
}

void RegState::write_back(BlockMap& map) const {
  for (const BlockState& s : blocks_) {
    VoxelBlock* b = map.find_block(s.coords);
    if (!b) continue;
    for (int i = 0; i < kBlockVoxels; ++i) {
      if (s.omega[i]) b->voxels[i].f = static_cast<float>(std::clamp(s.u[i], -1.0, 1.0));
    }
  }
}

RegStats regularize(BlockMap& map, const RegParams& params,
                    const std::function<void(const RegState&, int)>& on_iteration) {
  params.validate();
  RegState state(map);
  if (state.observed_count() == 0)
    throw EmptyDomainError("no observed voxels to regularize");
  state.initialize(params.init);

  RegStats stats;
  stats.observed_voxels = state.observed_count();
  stats.initial_energy = state.energy(params.lambda);
  int k = 0;
  for (; k < params.iterations; ++k) {
    state.dual_step(params.sigma_p);
    state.primal_step(params.tau, params.lambda);
    state.relax_step(params.theta, params.relax);
    if (on_iteration) on_iteration(state, k);
    if (params.gap_tolerance > 0 && (k + 1) % params.gap_check_interval == 0) {
      const double gap = state.energy(params.lambda) - state.dual_energy(params.lambda);
      stats.final_gap = gap;
      if (gap < params.gap_tolerance) {
        ++k;
        break;
      }
    }
  }
  stats.iterations = k;
  stats.final_energy = state.energy(params.lambda);
  if (k > 0) state.write_back(map);
  return stats;
}

}  // namespace voxreg
