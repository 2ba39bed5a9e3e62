#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "voxreg/voxel_store.hpp"

namespace voxreg {

/// How the primal iterate is extrapolated after each primal step.
enum class RelaxMode {
  kPreviousIterate,  ///< u_hat = u_k + theta (u_k - u_{k-1})
  kPreviousRelaxed,  ///< u_hat = u_k + theta (u_k - u_hat)
};

enum class InitMode {
  kFromData,  ///< u = u_hat = f
  kZero,      ///< u = u_hat = 0
};

struct RegParams {
  double lambda = 0.8;
  double sigma_p = 0.5;
  double tau = 1.0 / 6.0;
  double theta = 1.0;
  int iterations = 200;
  InitMode init = InitMode::kFromData;
  RelaxMode relax = RelaxMode::kPreviousIterate;
  /// Stop early once the primal-dual gap drops below this value; 0 disables.
  double gap_tolerance = 0.0;
  int gap_check_interval = 10;

  void validate() const;
};

struct RegStats {
  double initial_energy = 0;
  double final_energy = 0;
  int iterations = 0;
  std::size_t observed_voxels = 0;
  std::optional<double> final_gap;
};

class EmptyDomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Masked difference operators on an arbitrary lattice field.
//
// The dual component p_a(c) lives on the edge c -> c + e_a and exists only
// when both endpoints are observed. `u(c)` returns the scalar, `p(c)` a
// 3-vector, `in_omega(c)` membership (false outside any finite lattice).

inline const std::array<Vec3i, 3>& unit_steps() {
  static const std::array<Vec3i, 3> e{Vec3i(1, 0, 0), Vec3i(0, 1, 0), Vec3i(0, 0, 1)};
  return e;
}

template <typename Field, typename Mask>
Vec3d masked_gradient(const Field& u, const Mask& in_omega, const Vec3i& c) {
  Vec3d g = Vec3d::Zero();
  if (!in_omega(c)) return g;
  for (int a = 0; a < 3; ++a) {
    const Vec3i n = c + unit_steps()[a];
    if (in_omega(n)) g[a] = u(n) - u(c);
  }
  return g;
}

template <typename Dual, typename Mask>
double masked_divergence(const Dual& p, const Mask& in_omega, const Vec3i& c) {
  if (!in_omega(c)) return 0.0;
  double div = 0.0;
  for (int a = 0; a < 3; ++a) {
    const Vec3i& e = unit_steps()[a];
    if (in_omega(c + e)) div += p(c)[a];
    if (in_omega(c - e)) div -= p(c - e)[a];
  }
  return div;
}

/// Projection onto the closed unit ball.
inline Vec3d project_unit_ball(const Vec3d& p) {
  const double n = p.norm();
  return n > 1.0 ? Vec3d(p / n) : p;
}

// ---------------------------------------------------------------------------

/// Solver scratch state over the observed voxels of a BlockMap. Blocks are
/// held in sorted order with face-neighbor links; absent neighbors behave as
/// unobserved. Every phase writes only its own block's arrays, so results
/// are independent of the worker count.
class RegState {
 public:
  explicit RegState(const BlockMap& map);

  std::size_t block_count() const noexcept { return blocks_.size(); }
  std::size_t observed_count() const noexcept { return observed_; }

  void initialize(InitMode mode);

  /// p <- proj(p + sigma_p * grad(u_hat)).
  void dual_step(double sigma_p);
  /// u <- (u + tau div p + tau lambda w f) / (1 + tau lambda w); keeps u_{k-1}.
  /// div is the negative adjoint of the gradient, so +tau div p descends.
  void primal_step(double tau, double lambda);
  void relax_step(double theta, RelaxMode mode = RelaxMode::kPreviousIterate);

  /// sum |grad u|_2 + lambda/2 sum w (f - u)^2 over observed voxels.
  double energy(double lambda) const;
  /// Value of the dual objective at the current p.
  double dual_energy(double lambda) const;
  double max_dual_norm() const;

  /// Writes u into the map's f for observed voxels; nothing else changes.
  void write_back(BlockMap& map) const;

  // Voxel-level access by block slot (sorted order) and linear index.
  const Vec3i& block_coords(std::size_t slot) const { return blocks_[slot].coords; }
  bool observed(std::size_t slot, int i) const { return blocks_[slot].omega[i] != 0; }
  double u(std::size_t slot, int i) const { return blocks_[slot].u[i]; }
  double u_hat(std::size_t slot, int i) const { return blocks_[slot].u_hat[i]; }
  Vec3d p(std::size_t slot, int i) const;
  void set_u(std::size_t slot, int i, double value);
  void set_u_hat(std::size_t slot, int i, double value);
  void set_p(std::size_t slot, int i, const Vec3d& value);

  Vec3d gradient_u(std::size_t slot, int i) const { return gradient(slot, i, &BlockState::u); }
  Vec3d gradient_u_hat(std::size_t slot, int i) const {
    return gradient(slot, i, &BlockState::u_hat);
  }
  double divergence_p(std::size_t slot, int i) const;

 private:
  using Scalars = std::array<double, kBlockVoxels>;
  struct BlockState {
    Vec3i coords;
    std::array<std::int32_t, 3> next{-1, -1, -1};  // +x, +y, +z neighbor slots
    std::array<std::int32_t, 3> prev{-1, -1, -1};  // -x, -y, -z neighbor slots
    std::array<std::uint8_t, kBlockVoxels> omega{};
    std::array<std::uint8_t, kBlockVoxels> edges{};  // bit a: edge along axis a valid
    Scalars f{}, w{}, u{}, u_prev{}, u_hat{};
    std::array<Scalars, 3> p{};
  };

  // Slot and index of the voxel one step along +/- axis a, or slot -1.
  std::pair<std::int32_t, int> step(std::size_t slot, int i, int axis, bool forward) const;
  Vec3d gradient(std::size_t slot, int i, Scalars BlockState::*field) const;

  std::vector<BlockState> blocks_;
  std::size_t observed_ = 0;
};

/// Minimizes sum |grad u| + lambda/2 sum w (f - u)^2 over the observed voxels
/// with the masked primal-dual iteration, then writes u into f. Unobserved
/// voxels, weights and flags are never modified. The optional callback runs
/// after every iteration.
RegStats regularize(BlockMap& map, const RegParams& params,
                    const std::function<void(const RegState&, int)>& on_iteration = {});

}  // namespace voxreg
