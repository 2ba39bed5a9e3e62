#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "voxreg/fusion.hpp"
#include "voxreg/image.hpp"

namespace voxreg {

struct StereoParams {
  double lambda = 0.5;  ///< data term weight
  double alpha1 = 1.0;  ///< weight of |T grad d - w|
  double alpha2 = 5.0;  ///< weight of |grad w|
  double beta = 1.0;    ///< gradient exponent in the diffusion tensor
  double gamma = 4.0;   ///< gradient scale in the diffusion tensor
  int window = 5;       ///< census window side, odd, at most 7
  int d_min = 0;
  int d_max = 128;
  int outer_iterations = 80;  ///< data-coupling rounds
  int inner_iterations = 5;   ///< primal-dual steps per round
  double theta_start = 10.0;  ///< coupling weight is 1/theta; theta decays geometrically
  double theta_end = 0.001;
  /// Primal/dual step sizes; tau * sigma * 16 <= 1 keeps the iteration stable
  /// because the stacked operator norm is at most 4 when |T| <= 1.
  double tau = 0.25;
  double sigma = 0.25;

  void validate() const;
};

/// Census bits, first window position in the most significant used bit.
using CensusSignature = std::uint64_t;

/// Row-major over the window, center excluded; bit = 1 iff the neighbor is
/// darker than the center. Borders clamp to the edge.
CensusSignature census_signature(const GrayImage& img, int x, int y, int window);
Image<CensusSignature> census_transform(const GrayImage& img, int window);

inline int census_bits(int window) { return window * window - 1; }

class CostVolume {
 public:
  CostVolume(int width, int height, int d_min, int d_max, float fill = 0.0f);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int d_min() const noexcept { return d_min_; }
  int d_max() const noexcept { return d_max_; }
  int depth() const noexcept { return d_max_ - d_min_ + 1; }

  float& at(int x, int y, int d) { return cost_[index(x, y, d)]; }
  float at(int x, int y, int d) const { return cost_[index(x, y, d)]; }
  /// Costs for all disparities of one pixel, d_min first.
  const float* pixel(int x, int y) const { return &cost_[index(x, y, d_min_)]; }

 private:
  std::size_t index(int x, int y, int d) const {
    return (static_cast<std::size_t>(y) * width_ + x) * static_cast<std::size_t>(depth()) +
           static_cast<std::size_t>(d - d_min_);
  }
  int width_, height_, d_min_, d_max_;
  std::vector<float> cost_;
};

/// cost(x, y, d) = Hamming(census_R(x, y), census_L(x + d, y)); samples that
/// fall outside the left image cost window^2 - 1. The right image is the
/// reference view.
CostVolume cost_volume(const GrayImage& left, const GrayImage& right, const StereoParams& params);

/// Symmetric 2x2 tensor [[xx, xy], [xy, yy]].
struct Tensor2 {
  double xx = 1, xy = 0, yy = 1;
  Eigen::Vector2d apply(const Eigen::Vector2d& v) const {
    return {xx * v.x() + xy * v.y(), xy * v.x() + yy * v.y()};
  }
};
using TensorField = Image<Tensor2>;

inline constexpr double kTensorEpsilon = 1e-6;

/// exp(-gamma |g|^beta) n n^T + n_perp n_perp^T with g the central-difference
/// image gradient and n = g/|g|; identity where |g| < kTensorEpsilon.
TensorField diffusion_tensor(const GrayImage& img, double beta, double gamma);

struct DisparityMap {
  Image<float> disparity;
  Image<Eigen::Vector2f> aux;  ///< TGV auxiliary field, one 2-vector per pixel
};

/// Discrete argmin per pixel with optional 3-point parabola refinement.
DisparityMap winner_take_all(const CostVolume& volume, bool subpixel = true);

/// Approximate minimizer of
///   alpha1 |T grad d - w| + alpha2 |grad w| + lambda * rho(d)
/// with rho the census cost normalized to [0, 1]. Alternates primal-dual
/// steps on (d, w) against a quadratic coupling to a per-pixel variable with
/// exhaustive point-wise search of the coupled data term.
DisparityMap tgv_disparity(const CostVolume& volume, const TensorField& tensor,
                           const StereoParams& params);

/// alpha1 sum |T grad d - w|_2 + alpha2 sum |grad w|_F with forward
/// differences (zero across the last row and column).
double tgv_energy(const Image<float>& d, const Image<Eigen::Vector2f>& w,
                  const TensorField& tensor, double alpha1, double alpha2);

/// min over w of tgv_energy(d, w, ...), approximated from above by a
/// primal-dual solve over w with d fixed.
double tgv_regularizer_energy(const Image<float>& d, const TensorField& tensor,
                              double alpha1, double alpha2, int iterations = 500);

/// depth = fx * baseline / d for d > d_eps; NaN elsewhere.
DepthMap disparity_to_depth(const Image<float>& disparity, const CameraModel& cam,
                            double d_eps = 1e-3);

/// Rec. 601 luma, scaled to [0, 1].
GrayImage to_gray(const RgbImage& rgb);

}  // namespace voxreg
