#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <tuple>

#include "oracles.hpp"
#include "voxreg/pipeline.hpp"
#include "voxreg/regularizer.hpp"

using namespace voxreg;

namespace {

void observe(BlockMap& map, const Vec3i& c, double f, double w = 1.0) {
  Voxel* v = map.locate(c, true);
  v->f = static_cast<float>(f);
  v->w = static_cast<float>(w);
  v->observed = true;
}

std::size_t slot_of(const RegState& s, const Vec3i& block) {
  for (std::size_t k = 0; k < s.block_count(); ++k)
    if (s.block_coords(k) == block) return k;
  FAIL("block not in state");
  return 0;
}

struct Cell {
  std::size_t slot;
  int index;
};

Cell cell(const RegState& s, const Vec3i& voxel) {
  const Vec3i o = offset_in_block(voxel);
  return {slot_of(s, block_of(voxel)), voxel_index(o.x(), o.y(), o.z())};
}

using Key = std::tuple<int, int, int>;
Key key(const Vec3i& c) { return {c.x(), c.y(), c.z()}; }

}  // namespace

TEST_CASE("masked gradient on a sparse field") {
  std::map<Key, double> u{{{0, 0, 0}, 0.4}, {{1, 0, 0}, 0.7}, {{0, 1, 0}, 0.1}};
  std::map<Key, bool> omega{{{0, 0, 0}, true}, {{1, 0, 0}, true}, {{0, 1, 0}, false}};
  auto uf = [&](const Vec3i& c) { return u.at(key(c)); };
  auto in = [&](const Vec3i& c) { auto it = omega.find(key(c)); return it != omega.end() && it->second; };
  const Vec3d g = masked_gradient(uf, in, Vec3i(0, 0, 0));
  CHECK(g.x() == doctest::Approx(0.3));
  CHECK(g.y() == 0.0);  // neighbor unobserved
  CHECK(g.z() == 0.0);  // outside the lattice
  CHECK(masked_gradient(uf, in, Vec3i(1, 0, 0)).isZero());
  CHECK(masked_gradient(uf, in, Vec3i(0, 1, 0)).isZero());
}

TEST_CASE("masked divergence cases") {
  std::map<Key, Vec3d> p{{{-1, 0, 0}, Vec3d(0.5, 0, 0)}, {{0, 0, 0}, Vec3d(0.2, 0, 0)}};
  auto pf = [&](const Vec3i& c) { auto it = p.find(key(c)); return it == p.end() ? Vec3d::Zero().eval() : it->second; };
  auto all = [](const Vec3i&) { return true; };
  CHECK(masked_divergence(pf, all, Vec3i(0, 0, 0)) == doctest::Approx(-0.3));

  auto center_out = [](const Vec3i& c) { return c != Vec3i(0, 0, 0); };
  CHECK(masked_divergence(pf, center_out, Vec3i(0, 0, 0)) == 0.0);

  auto prev_out = [](const Vec3i& c) { return c != Vec3i(-1, 0, 0); };
  CHECK(masked_divergence(pf, prev_out, Vec3i(0, 0, 0)) == doctest::Approx(0.2));

  auto next_out = [](const Vec3i& c) { return c != Vec3i(1, 0, 0); };
  CHECK(masked_divergence(pf, next_out, Vec3i(0, 0, 0)) == doctest::Approx(-0.5));
}

TEST_CASE("operators across block borders") {
  BlockMap map(0.1);
  observe(map, Vec3i(7, 0, 0), 0.4);
  observe(map, Vec3i(8, 0, 0), 0.7);
  observe(map, Vec3i(7, -1, 0), 0.0);
  RegState s(map);
  CHECK(s.block_count() == 3);
  CHECK(s.observed_count() == 3);
  const Cell a = cell(s, Vec3i(7, 0, 0)), b = cell(s, Vec3i(8, 0, 0)), c = cell(s, Vec3i(7, -1, 0));
  CHECK(s.gradient_u(a.slot, a.index).x() == doctest::Approx(0.3));
  CHECK(s.gradient_u(a.slot, a.index).y() == 0.0);
  CHECK(s.gradient_u(c.slot, c.index).y() == doctest::Approx(0.4));
  s.set_p(a.slot, a.index, Vec3d(0.2, 0.0, 0.0));
  s.set_p(c.slot, c.index, Vec3d(0.0, 0.5, 0.0));
  CHECK(s.divergence_p(a.slot, a.index) == doctest::Approx(0.2 - 0.5));
  CHECK(s.divergence_p(b.slot, b.index) == doctest::Approx(-0.2));
  CHECK(s.divergence_p(c.slot, c.index) == doctest::Approx(0.5));
}

TEST_CASE("dual step and projection") {
  BlockMap map(0.1);
  observe(map, Vec3i(0, 0, 0), 0.0);
  observe(map, Vec3i(1, 0, 0), 1.0);
  RegState s(map);
  s.dual_step(0.5);
  CHECK(s.p(0, 0).isApprox(Vec3d(0.5, 0, 0)));
  CHECK(s.p(0, 1).isZero());

  BlockMap flat(0.1);
  observe(flat, Vec3i(0, 0, 0), 0.3);
  observe(flat, Vec3i(1, 0, 0), 0.3);
  RegState t(flat);
  t.set_p(0, 0, Vec3d(3, 4, 0));
  t.dual_step(0.5);
  CHECK(t.p(0, 0).isApprox(Vec3d(0.6, 0.8, 0)));
  t.set_p(0, 0, Vec3d(0.1, 0.2, 0.3));
  t.dual_step(0.5);
  CHECK(t.p(0, 0) == Vec3d(0.1, 0.2, 0.3));
}

TEST_CASE("primal step") {
  BlockMap map(0.1);
  observe(map, Vec3i(0, 0, 0), 0.2, 1.0);
  RegState s(map);
  s.set_u(0, 0, 0.5);
  s.primal_step(1.0 / 6.0, 0.8);
  CHECK(s.u(0, 0) == doctest::Approx((0.5 + 0.8 / 6.0 * 0.2) / (1.0 + 0.8 / 6.0)));
  CHECK(s.u(0, 0) == doctest::Approx(0.4647).epsilon(1e-4));

  RegState fixed(map);
  fixed.primal_step(1.0 / 6.0, 0.8);
  CHECK(fixed.u(0, 0) == doctest::Approx(0.2));
}

TEST_CASE("relaxation") {
  BlockMap map(0.1);
  observe(map, Vec3i(0, 0, 0), 0.6, 1.0);
  RegState s(map);
  s.set_u(0, 0, 0.4);
  s.primal_step(1.0, 1.0);  // (0.4 + 0.6) / 2
  REQUIRE(s.u(0, 0) == doctest::Approx(0.5));
  RegState t = s;
  s.relax_step(1.0);
  CHECK(s.u_hat(0, 0) == doctest::Approx(0.6));
  t.relax_step(0.0);
  CHECK(t.u_hat(0, 0) == doctest::Approx(0.5));

  RegState r(map);
  r.set_u(0, 0, 0.4);
  r.set_u_hat(0, 0, 0.45);
  r.primal_step(1.0, 1.0);
  r.relax_step(1.0, RelaxMode::kPreviousRelaxed);
  CHECK(r.u_hat(0, 0) == doctest::Approx(0.55));
}

TEST_CASE("energy of small configurations") {
  BlockMap map(0.1);
  observe(map, Vec3i(3, 3, 3), 0.0);
  observe(map, Vec3i(4, 3, 3), 1.0);
  RegState s(map);
  CHECK(s.energy(0.8) == doctest::Approx(1.0));
  CHECK(s.energy(123.0) == doctest::Approx(1.0));

  BlockMap flat(0.1);
  for (int x = 0; x < 5; ++x) observe(flat, Vec3i(x, 0, 0), 0.25);
  CHECK(RegState(flat).energy(0.8) == 0.0);
}

TEST_CASE("energy matches a scalar sum on a random 8^3 field") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> val(-1, 1), wt(0.5, 4);
  std::bernoulli_distribution in(0.6);
  const int n = 8;
  std::vector<double> f(n * n * n), w(n * n * n, 0.0), u(n * n * n);
  std::vector<char> om(n * n * n);
  BlockMap map(0.1);
  auto id = [&](int x, int y, int z) { return (z * n + y) * n + x; };
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const int i = id(x, y, z);
        om[i] = in(rng);
        f[i] = static_cast<float>(val(rng));
        u[i] = val(rng);
        if (om[i]) {
          w[i] = static_cast<float>(wt(rng));
          observe(map, Vec3i(x + 3, y - 2, z + 5), f[i], w[i]);
        }
      }
  RegState s(map);
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        if (om[id(x, y, z)]) {
          const Cell c = cell(s, Vec3i(x + 3, y - 2, z + 5));
          s.set_u(c.slot, c.index, u[id(x, y, z)]);
        }
  const double lambda = 0.7;
  double expected = 0.0;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const int i = id(x, y, z);
        if (!om[i]) continue;
        const double gx = (x + 1 < n && om[id(x + 1, y, z)]) ? u[id(x + 1, y, z)] - u[i] : 0.0;
        const double gy = (y + 1 < n && om[id(x, y + 1, z)]) ? u[id(x, y + 1, z)] - u[i] : 0.0;
        const double gz = (z + 1 < n && om[id(x, y, z + 1)]) ? u[id(x, y, z + 1)] - u[i] : 0.0;
        expected += std::sqrt(gx * gx + gy * gy + gz * gz);
        expected += 0.5 * lambda * w[i] * (f[i] - u[i]) * (f[i] - u[i]);
      }
  CHECK(s.energy(lambda) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("adjointness on random domains") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> val(-1, 1), density(0.1, 0.9);
  for (int trial = 0; trial < 20; ++trial) {
    std::bernoulli_distribution in(density(rng));
    BlockMap map(0.1);
    for (int z = -6; z < 10; ++z)
      for (int y = -6; y < 10; ++y)
        for (int x = -6; x < 10; ++x)
          if (in(rng)) observe(map, Vec3i(x, y, z), 0.0);
    RegState s(map);
    for (std::size_t k = 0; k < s.block_count(); ++k)
      for (int i = 0; i < kBlockVoxels; ++i)
        if (s.observed(k, i)) {
          s.set_u(k, i, val(rng));
          s.set_p(k, i, Vec3d(val(rng), val(rng), val(rng)));
        }
    double lhs = 0.0, rhs = 0.0, scale = 0.0;
    for (std::size_t k = 0; k < s.block_count(); ++k)
      for (int i = 0; i < kBlockVoxels; ++i) {
        const double a = s.gradient_u(k, i).dot(s.p(k, i));
        const double b = s.u(k, i) * s.divergence_p(k, i);
        lhs += a;
        rhs += b;
        scale += std::abs(a) + std::abs(b);
      }
    CHECK(std::abs(lhs + rhs) <= 1e-9 * scale);
  }
}

TEST_CASE("regularize with zero iterations leaves the map unchanged") {
  BlockMap map(0.1);
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> val(-1, 1);
  for (int x = 0; x < 20; ++x) observe(map, Vec3i(x, x % 3, 0), val(rng));
  const auto before = encode_snapshot(map);
  RegParams p;
  p.iterations = 0;
  const RegStats st = regularize(map, p);
  CHECK(st.iterations == 0);
  CHECK(encode_snapshot(map) == before);
}

TEST_CASE("empty domain is an error") {
  BlockMap map(0.1);
  map.locate(Vec3i(0, 0, 0), true);
  CHECK_THROWS_AS(regularize(map, RegParams{}), EmptyDomainError);
  RegParams bad;
  bad.tau = -1;
  observe(map, Vec3i(1, 1, 1), 0.2);
  CHECK_THROWS_AS(regularize(map, bad), std::invalid_argument);
}

namespace {

// Signed distance to a sphere, truncated and noisy, on a 32^3 box; cells far
// outside the band stay unobserved.
oracle::DenseGrid noisy_sphere(std::uint64_t seed) {
  oracle::DenseGrid g(Vec3i(-16, -16, -16), 32, 32, 32, 0.1);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.15);
  std::uniform_int_distribution<int> weight(1, 6);
  const double mu = 0.4;
  for (int z = 0; z < 32; ++z)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const Vec3i v = g.voxel(x, y, z);
        const Vec3d p = (v.cast<double>() + Vec3d::Constant(0.5)) * g.voxel_size;
        const double sdf = 1.0 - p.norm();
        if (sdf < -mu) continue;
        const std::size_t i = g.index(x, y, z);
        g.f[i] = static_cast<float>(std::clamp(std::clamp(sdf / mu, -1.0, 1.0) + noise(rng), -1.0, 1.0));
        g.w[i] = static_cast<float>(weight(rng));
      }
  return g;
}

}  // namespace

TEST_CASE("sparse solver matches the dense solver on a noisy sphere") {
  const oracle::DenseGrid g = noisy_sphere(3);
  BlockMap map = oracle::to_block_map(g);
  RegParams params;
  params.iterations = 200;
  oracle::DenseSolver dense(g);
  const double e0 = dense.energy(params.lambda);
  for (int k = 0; k < params.iterations; ++k)
    dense.iterate(params.sigma_p, params.tau, params.lambda, params.theta);

  double max_dual = 0.0;
  const RegStats st = regularize(map, params, [&](const RegState& s, int) {
    max_dual = std::max(max_dual, s.max_dual_norm());
  });
  CHECK(st.initial_energy == doctest::Approx(e0).epsilon(1e-9));
  CHECK(st.final_energy < st.initial_energy);
  CHECK(st.final_energy == doctest::Approx(dense.energy(params.lambda)).epsilon(1e-9));
  CHECK(max_dual <= 1.0 + 1e-9);

  double worst = 0.0;
  for (int z = 0; z < 32; ++z)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const std::size_t i = g.index(x, y, z);
        const Voxel* v = std::as_const(map).locate(g.voxel(x, y, z));
        if (!(g.w[i] > 0)) {
          if (v) {
            CHECK(v->w == 0.0f);
            CHECK(v->f == 0.0f);
            CHECK_FALSE(v->observed);
          }
          continue;
        }
        REQUIRE(v);
        CHECK(v->w == g.w[i]);
        worst = std::max(worst, std::abs(v->f - std::clamp(dense.u[i], -1.0, 1.0)));
      }
  CHECK(worst < 1e-5);
}

TEST_CASE("result does not depend on the worker count") {
  const oracle::DenseGrid g = noisy_sphere(9);
  BlockMap a = oracle::to_block_map(g), b = oracle::to_block_map(g);
  RegParams params;
  params.iterations = 30;
  set_thread_count(1);
  regularize(a, params);
  set_thread_count(4);
  regularize(b, params);
  set_thread_count(1);
  CHECK(encode_snapshot(a) == encode_snapshot(b));
}

TEST_CASE("constant data is a fixed point") {
  BlockMap map(0.1);
  for (int z = 0; z < 10; ++z)
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x < 10; ++x)
        if ((x + y + z) % 7 != 0 || x == 0) observe(map, Vec3i(x, y, z), -0.375, 1 + (x % 3));
  RegParams params;
  params.iterations = 50;
  regularize(map, params);
  for (const auto& b : map.blocks())
    for (const Voxel& v : b->voxels)
      if (v.observed) CHECK(std::abs(v.f + 0.375) <= 1e-9);
}

TEST_CASE("disjoint components do not interact") {
  auto build = [](double shift) {
    BlockMap map(0.1);
    std::mt19937 rng(8);
    std::uniform_real_distribution<double> val(-0.5, 0.5);
    for (int z = 0; z < 6; ++z)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) {
          observe(map, Vec3i(x, y, z), val(rng) + shift);
          observe(map, Vec3i(x + 7, y, z), val(rng));  // one empty layer in between
        }
    return map;
  };
  BlockMap a = build(0.0), b = build(0.3);
  RegParams params;
  params.iterations = 100;
  regularize(a, params);
  regularize(b, params);
  for (int z = 0; z < 6; ++z)
    for (int y = 0; y < 6; ++y)
      for (int x = 7; x < 13; ++x)
        CHECK(std::as_const(a).locate(Vec3i(x, y, z))->f == std::as_const(b).locate(Vec3i(x, y, z))->f);
  CHECK(std::as_const(a).locate(Vec3i(2, 2, 2))->f != std::as_const(b).locate(Vec3i(2, 2, 2))->f);
}

TEST_CASE("zero initialization and gap stopping") {
  const oracle::DenseGrid g = noisy_sphere(4);
  BlockMap a = oracle::to_block_map(g);
  RegParams params;
  params.init = InitMode::kZero;
  params.iterations = 400;
  params.gap_tolerance = 1e9;
  const RegStats st = regularize(a, params);
  CHECK(st.iterations == params.gap_check_interval);
  REQUIRE(st.final_gap.has_value());
  CHECK(*st.final_gap >= -1e-6);
}
