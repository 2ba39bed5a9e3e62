#include "voxreg/stereo.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "parallel.hpp"

namespace voxreg {

void StereoParams::validate() const {
  if (!(lambda > 0 && alpha1 > 0 && alpha2 > 0 && beta > 0 && gamma > 0))
    throw std::invalid_argument("stereo weights must be positive");
  if (window < 3 || window > 7 || window % 2 == 0)
    throw std::invalid_argument("census window must be odd and in [3, 7]");
  if (d_max < d_min) throw std::invalid_argument("empty disparity range");
  if (outer_iterations < 1 || inner_iterations < 1)
    throw std::invalid_argument("stereo iteration counts must be positive");
  if (!(theta_start > 0 && theta_end > 0 && tau > 0 && sigma > 0))
    throw std::invalid_argument("stereo step sizes must be positive");
}

CensusSignature census_signature(const GrayImage& img, int x, int y, int window) {
  const int r = window / 2;
  const float center = img.clamped(x, y);
  CensusSignature sig = 0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      if (dx == 0 && dy == 0) continue;
      sig = (sig << 1) | (img.clamped(x + dx, y + dy) < center ? 1u : 0u);
    }
  return sig;
}

Image<CensusSignature> census_transform(const GrayImage& img, int window) {
  Image<CensusSignature> out(img.width(), img.height());
  detail::parallel_for(static_cast<std::size_t>(img.height()), [&](std::size_t yy) {
    const int y = static_cast<int>(yy);
    for (int x = 0; x < img.width(); ++x) out(x, y) = census_signature(img, x, y, window);
  });
  return out;
}

CostVolume::CostVolume(int width, int height, int d_min, int d_max, float fill)
    : width_(width), height_(height), d_min_(d_min), d_max_(d_max) {
  if (d_max < d_min) throw std::invalid_argument("empty disparity range");
  cost_.assign(static_cast<std::size_t>(width) * height * depth(), fill);
}

CostVolume cost_volume(const GrayImage& left, const GrayImage& right,
                       const StereoParams& params) {
  params.validate();
  if (left.width() != right.width() || left.height() != right.height())
    throw std::invalid_argument("stereo pair dimensions differ");
  const auto cl = census_transform(left, params.window);
  const auto cr = census_transform(right, params.window);
  const float max_cost = static_cast<float>(census_bits(params.window));
  CostVolume vol(right.width(), right.height(), params.d_min, params.d_max);
  detail::parallel_for(static_cast<std::size_t>(right.height()), [&](std::size_t yy) {
    const int y = static_cast<int>(yy);
    for (int x = 0; x < right.width(); ++x)
      for (int d = params.d_min; d <= params.d_max; ++d) {
        const int xl = x + d;
        vol.at(x, y, d) = (xl < 0 || xl >= left.width())
                              ? max_cost
                              : static_cast<float>(std::popcount(cr(x, y) ^ cl(xl, y)));
      }
  });
  return vol;
}

TensorField diffusion_tensor(const GrayImage& img, double beta, double gamma) {
  TensorField t(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const double gx = 0.5 * (img.clamped(x + 1, y) - img.clamped(x - 1, y));
      const double gy = 0.5 * (img.clamped(x, y + 1) - img.clamped(x, y - 1));
      const double mag = std::hypot(gx, gy);
      Tensor2 T;
      if (mag >= kTensorEpsilon) {
        const double nx = gx / mag, ny = gy / mag;
        const double s = std::exp(-gamma * std::pow(mag, beta));
        // s n n^T + n_perp n_perp^T with n_perp = (-ny, nx)
        T.xx = s * nx * nx + ny * ny;
        T.xy = s * nx * ny - nx * ny;
        T.yy = s * ny * ny + nx * nx;
      }
      t(x, y) = T;
    }
  return t;
}

namespace {

// Parabola vertex offset through (-1, em), (0, e0), (1, ep); 0 if not convex.
double parabola_offset(double em, double e0, double ep) {
  const double denom = em - 2.0 * e0 + ep;
  if (!(denom > 0)) return 0.0;
  return std::clamp(0.5 * (em - ep) / denom, -0.5, 0.5);
}

// Forward-difference gradient and its negative adjoint on a W x H grid.
struct Grid {
  int w, h;
  std::size_t n() const { return static_cast<std::size_t>(w) * h; }
  std::size_t at(int x, int y) const { return static_cast<std::size_t>(y) * w + x; }

  template <typename Get>
  Eigen::Vector2d grad(const Get& f, int x, int y) const {
    const double c = f(at(x, y));
    return {x + 1 < w ? f(at(x + 1, y)) - c : 0.0, y + 1 < h ? f(at(x, y + 1)) - c : 0.0};
  }
  template <typename GetX, typename GetY>
  double div(const GetX& px, const GetY& py, int x, int y) const {
    double d = 0.0;
    if (x + 1 < w) d += px(at(x, y));
    if (x > 0) d -= px(at(x - 1, y));
    if (y + 1 < h) d += py(at(x, y));
    if (y > 0) d -= py(at(x, y - 1));
    return d;
  }
};

template <int N>
Eigen::Matrix<double, N, 1> project_ball(const Eigen::Matrix<double, N, 1>& v, double radius) {
  const double n = v.norm();
  return n > radius ? Eigen::Matrix<double, N, 1>(v * (radius / n)) : v;
}

// Primal-dual state for alpha1 |T grad d - w| + alpha2 |grad w| (+ coupling).
struct TgvSolver {
  Grid g;
  const TensorField& tensor;
  double alpha1, alpha2, tau, sigma;
  std::vector<double> d, d_bar;
  std::vector<Eigen::Vector2d> w, w_bar, p;
  std::vector<Eigen::Vector4d> q;

  TgvSolver(int width, int height, const TensorField& t, double a1, double a2, double tau_,
            double sigma_)
      : g{width, height}, tensor(t), alpha1(a1), alpha2(a2), tau(tau_), sigma(sigma_),
        d(g.n(), 0.0), d_bar(g.n(), 0.0), w(g.n(), Eigen::Vector2d::Zero()),
        w_bar(g.n(), Eigen::Vector2d::Zero()), p(g.n(), Eigen::Vector2d::Zero()),
        q(g.n(), Eigen::Vector4d::Zero()) {}

  Eigen::Vector2d tensor_grad(const std::vector<double>& f, int x, int y) const {
    return tensor(x, y).apply(g.grad([&](std::size_t i) { return f[i]; }, x, y));
  }
  Eigen::Vector4d grad_w(const std::vector<Eigen::Vector2d>& v, int x, int y) const {
    const auto g0 = g.grad([&](std::size_t i) { return v[i].x(); }, x, y);
    const auto g1 = g.grad([&](std::size_t i) { return v[i].y(); }, x, y);
    return {g0.x(), g0.y(), g1.x(), g1.y()};
  }

  void dual_step() {
    detail::parallel_for(static_cast<std::size_t>(g.h), [&](std::size_t yy) {
      const int y = static_cast<int>(yy);
      for (int x = 0; x < g.w; ++x) {
        const std::size_t i = g.at(x, y);
        p[i] = project_ball<2>(p[i] + sigma * (tensor_grad(d_bar, x, y) - w_bar[i]), alpha1);
        q[i] = project_ball<4>(q[i] + sigma * grad_w(w_bar, x, y), alpha2);
      }
    });
  }

  // div(T p): T is symmetric, so the adjoint of T grad is -div(T p).
  double div_tp(const std::vector<Eigen::Vector2d>& tp, int x, int y) const {
    return g.div([&](std::size_t i) { return tp[i].x(); }, [&](std::size_t i) { return tp[i].y(); },
                 x, y);
  }
  Eigen::Vector2d div_q(int x, int y) const {
    return {g.div([&](std::size_t i) { return q[i][0]; }, [&](std::size_t i) { return q[i][1]; }, x, y),
            g.div([&](std::size_t i) { return q[i][2]; }, [&](std::size_t i) { return q[i][3]; }, x, y)};
  }

  /// Primal step; `anchor`/`coupling` add coupling/2 (d - anchor)^2 when set.
  void primal_step(const std::vector<double>* anchor, double coupling, bool update_d = true) {
    std::vector<Eigen::Vector2d> tp(g.n());
    for (int y = 0; y < g.h; ++y)
      for (int x = 0; x < g.w; ++x) tp[g.at(x, y)] = tensor(x, y).apply(p[g.at(x, y)]);
    const std::vector<double> d_old = d;
    const std::vector<Eigen::Vector2d> w_old = w;
    detail::parallel_for(static_cast<std::size_t>(g.h), [&](std::size_t yy) {
      const int y = static_cast<int>(yy);
      for (int x = 0; x < g.w; ++x) {
        const std::size_t i = g.at(x, y);
        if (update_d) {
          const double dt = d_old[i] + tau * div_tp(tp, x, y);
          d[i] = anchor ? (dt + tau * coupling * (*anchor)[i]) / (1.0 + tau * coupling) : dt;
        }
        w[i] = w_old[i] + tau * (p[i] + div_q(x, y));
      }
    });
    for (std::size_t i = 0; i < g.n(); ++i) {
      d_bar[i] = 2.0 * d[i] - d_old[i];
      w_bar[i] = 2.0 * w[i] - w_old[i];
    }
  }
};

}  // namespace

DisparityMap winner_take_all(const CostVolume& volume, bool subpixel) {
  DisparityMap out{Image<float>(volume.width(), volume.height()),
                   Image<Eigen::Vector2f>(volume.width(), volume.height(), Eigen::Vector2f::Zero())};
  const int D = volume.depth();
  for (int y = 0; y < volume.height(); ++y)
    for (int x = 0; x < volume.width(); ++x) {
      const float* c = volume.pixel(x, y);
      const int k = static_cast<int>(std::min_element(c, c + D) - c);
      double d = volume.d_min() + k;
      if (subpixel && k > 0 && k + 1 < D) d += parabola_offset(c[k - 1], c[k], c[k + 1]);
      out.disparity(x, y) = static_cast<float>(d);
    }
  return out;
}

DisparityMap tgv_disparity(const CostVolume& volume, const TensorField& tensor,
                           const StereoParams& params) {
  params.validate();
  if (volume.depth() < 1) throw std::invalid_argument("empty disparity range");
  if (tensor.width() != volume.width() || tensor.height() != volume.height())
    throw std::invalid_argument("tensor and cost volume dimensions differ");

  const int W = volume.width(), H = volume.height(), D = volume.depth();
  const double scale = 1.0 / census_bits(params.window);
  TgvSolver s(W, H, tensor, params.alpha1, params.alpha2, params.tau, params.sigma);

  const DisparityMap init = winner_take_all(volume, true);
  std::vector<double> a(s.g.n());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) a[s.g.at(x, y)] = init.disparity(x, y);
  s.d = a;
  s.d_bar = a;

  const double lo = volume.d_min() - 1.0, hi = volume.d_max() + 1.0;
  const int rounds = params.outer_iterations;
  for (int k = 0; k < rounds; ++k) {
    const double frac = rounds > 1 ? static_cast<double>(k) / (rounds - 1) : 1.0;
    const double theta = params.theta_start * std::pow(params.theta_end / params.theta_start, frac);
    const double coupling = 1.0 / theta;

    for (int it = 0; it < params.inner_iterations; ++it) {
      s.dual_step();
      s.primal_step(&a, coupling);
    }

    // Point-wise: a = argmin_e lambda rho(e) + (d - e)^2 / (2 theta).
    detail::parallel_for(static_cast<std::size_t>(H), [&](std::size_t yy) {
      const int y = static_cast<int>(yy);
      for (int x = 0; x < W; ++x) {
        const std::size_t i = s.g.at(x, y);
        const float* c = volume.pixel(x, y);
        const double d = s.d[i];
        auto energy = [&](int j) {
          const double r = d - (volume.d_min() + j);
          return params.lambda * scale * c[j] + 0.5 * coupling * r * r;
        };
        int best = 0;
        double best_e = energy(0);
        for (int j = 1; j < D; ++j) {
          const double e = energy(j);
          if (e < best_e) {
            best_e = e;
            best = j;
          }
        }
        double v = volume.d_min() + best;
        if (best > 0 && best + 1 < D) v += parabola_offset(energy(best - 1), best_e, energy(best + 1));
        a[i] = v;
      }
    });
  }

  DisparityMap out{Image<float>(W, H), Image<Eigen::Vector2f>(W, H)};
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t i = s.g.at(x, y);
      double d = s.d[i];
      if (!std::isfinite(d)) d = a[i];
      out.disparity(x, y) = static_cast<float>(std::clamp(d, lo, hi));
      Eigen::Vector2f wv = s.w[i].cast<float>();
      if (!wv.allFinite()) wv.setZero();
      out.aux(x, y) = wv;
    }
  return out;
}

double tgv_energy(const Image<float>& d, const Image<Eigen::Vector2f>& w,
                  const TensorField& tensor, double alpha1, double alpha2) {
  const Grid g{d.width(), d.height()};
  auto dv = [&](std::size_t i) { return static_cast<double>(d.data()[i]); };
  auto w0 = [&](std::size_t i) { return static_cast<double>(w.data()[i].x()); };
  auto w1 = [&](std::size_t i) { return static_cast<double>(w.data()[i].y()); };
  double e = 0.0;
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) {
      const Eigen::Vector2d td = tensor(x, y).apply(g.grad(dv, x, y));
      e += alpha1 * (td - w(x, y).cast<double>()).norm();
      const auto gw0 = g.grad(w0, x, y), gw1 = g.grad(w1, x, y);
      e += alpha2 * std::sqrt(gw0.squaredNorm() + gw1.squaredNorm());
    }
  return e;
}

double tgv_regularizer_energy(const Image<float>& d, const TensorField& tensor, double alpha1,
                              double alpha2, int iterations) {
  TgvSolver s(d.width(), d.height(), tensor, alpha1, alpha2, 0.25, 0.25);
  for (std::size_t i = 0; i < s.g.n(); ++i) s.d[i] = s.d_bar[i] = d.data()[i];
  for (int y = 0; y < s.g.h; ++y)
    for (int x = 0; x < s.g.w; ++x) s.w[s.g.at(x, y)] = s.w_bar[s.g.at(x, y)] = s.tensor_grad(s.d, x, y);

  auto current = [&] {
    Image<Eigen::Vector2f> w(d.width(), d.height());
    for (std::size_t i = 0; i < s.g.n(); ++i) w.data()[i] = s.w[i].cast<float>();
    return tgv_energy(d, w, tensor, alpha1, alpha2);
  };
  double best = std::min(current(), tgv_energy(d, Image<Eigen::Vector2f>(d.width(), d.height(),
                                                                         Eigen::Vector2f::Zero()),
                                               tensor, alpha1, alpha2));
  for (int it = 0; it < iterations; ++it) {
    s.dual_step();
    s.primal_step(nullptr, 0.0, /*update_d=*/false);
    if ((it + 1) % 50 == 0) best = std::min(best, current());
  }
  return std::min(best, current());
}

DepthMap disparity_to_depth(const Image<float>& disparity, const CameraModel& cam, double d_eps) {
  if (!(cam.baseline > 0)) throw std::invalid_argument("stereo baseline must be positive");
  DepthMap depth(disparity.width(), disparity.height(), std::numeric_limits<float>::quiet_NaN());
  for (std::size_t i = 0; i < disparity.size(); ++i) {
    const double d = disparity.data()[i];
    if (d > d_eps) depth.data()[i] = static_cast<float>(cam.fx * cam.baseline / d);
  }
  return depth;
}

GrayImage to_gray(const RgbImage& rgb) {
  GrayImage g(rgb.width(), rgb.height());
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    const Rgb& c = rgb.data()[i];
    g.data()[i] = static_cast<float>((0.299 * c.r + 0.587 * c.g + 0.114 * c.b) / 255.0);
  }
  return g;
}

}  // namespace voxreg
