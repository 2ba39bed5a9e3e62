#pragma once

#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "voxreg/stereo.hpp"

namespace stereo_pairs {

using voxreg::GrayImage;

// Random values on a unit lattice, blended with a smooth step so the texture
// is continuous and can be resampled at sub-pixel positions.
struct Texture {
  static constexpr int kSize = 512, kOffset = 256;
  std::vector<double> lattice;

  explicit Texture(std::uint64_t seed) : lattice(kSize * kSize) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> val(0.1, 0.9);
    for (double& v : lattice) v = val(rng);
  }
  double at(int i, int j) const { return lattice[(j + kOffset) * kSize + (i + kOffset)]; }
  double operator()(double s, double y) const {
    const int i = static_cast<int>(std::floor(s)), j = static_cast<int>(std::floor(y));
    auto smooth = [](double t) { return t * t * (3 - 2 * t); };
    const double a = smooth(s - i), b = smooth(y - j);
    return (1 - b) * ((1 - a) * at(i, j) + a * at(i + 1, j)) + b * ((1 - a) * at(i, j + 1) + a * at(i + 1, j + 1));
  }
};

// Right image is the reference; a right pixel x sees the left image at x + d.
template <typename Disp>
std::pair<GrayImage, GrayImage> make_pair(int w, int h, const Texture& tex, Disp disparity) {
  GrayImage left(w, h), right(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) right(x, y) = static_cast<float>(tex(x, y));
  // Invert x_L = x_R + d(x_R, y) by bisection for every left pixel.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double lo = x - 200.0, hi = x + 200.0;
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid + disparity(mid, y) < x) lo = mid;
        else hi = mid;
      }
      left(x, y) = static_cast<float>(tex(0.5 * (lo + hi), y));
    }
  return {left, right};
}

}  // namespace stereo_pairs
