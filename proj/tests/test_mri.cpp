#include <gtest/gtest.h>

#include <set>

#include "ssjdm/mri.hpp"

using namespace ssjdm;

namespace {

ContrastStack random_stack(std::size_t n, std::size_t r, std::size_t c, Rng &rng)
{
  ContrastStack x;
  for (std::size_t j = 0; j < n; ++j) { x.planes.push_back(random_grid(r, c, rng)); }
  return x;
}

KSpaceSet random_kspace(SamplingMask const &m, std::size_t coils, Rng &rng)
{
  KSpaceSet y;
  y.mask = m;
  y.data.resize(m.contrasts());
  for (std::size_t j = 0; j < m.contrasts(); ++j) {
    for (std::size_t c = 0; c < coils; ++c) { y.data[j].push_back(random_grid(m.rows(), m.cols(), rng)); }
  }
  return y;
}

SamplingMask full_mask(std::size_t n, std::size_t r, std::size_t c)
{
  SamplingMask m;
  m.planes.assign(n, MaskGrid(r, c, 1));
  return m;
}

} // namespace

TEST(Sensitivities, RootSumOfSquaresIsOne)
{
  auto const s = make_sensitivities(4, 20, 18, 3);
  ASSERT_EQ(s.coils(), 4U);
  for (std::size_t i = 0; i < 20 * 18; ++i) {
    double sos = 0;
    for (auto const &m : s.maps) { sos += std::norm(m[i]); }
    EXPECT_NEAR(sos, 1.0, 1e-12);
  }
  EXPECT_EQ(make_sensitivities(4, 20, 18, 3).maps, s.maps);
}

TEST(Encoding, AdjointIdentity)
{
  Rng rng(1);
  auto const s = make_sensitivities(3, 16, 12, 2);
  auto const m = make_poisson_disc_mask(16, 12, {.accel = 2, .center_rows = 4, .center_cols = 4, .seed = 5, .contrasts = 3});
  for (int trial = 0; trial < 5; ++trial) {
    ContrastStack const x = random_stack(3, 16, 12, rng);
    KSpaceSet const y = random_kspace(m, 3, rng);
    cplx const lhs = inner(encode(x, s, m), y);
    cplx const rhs = inner(x, adjoint(y, s, m));
    EXPECT_LT(std::abs(lhs - rhs) / std::abs(lhs), 1e-12);
  }
}

TEST(Encoding, FullSamplingGramIsIdentity)
{
  Rng rng(2);
  auto const s = make_sensitivities(4, 10, 10, 7);
  auto const m = full_mask(2, 10, 10);
  ContrastStack const x = random_stack(2, 10, 10, rng);
  EXPECT_LT(norm(adjoint(encode(x, s, m), s, m) - x) / norm(x), 1e-12);
  EXPECT_LT(norm(zero_fill(encode(x, s, m), s) - x) / norm(x), 1e-12);
}

TEST(Encoding, OperatorNormAtMostOne)
{
  Rng rng(3);
  auto const s = make_sensitivities(3, 16, 16, 1);
  auto const m = make_poisson_disc_mask(16, 16, {.accel = 3, .center_rows = 4, .center_cols = 4, .seed = 2, .contrasts = 2});
  ContrastStack x = random_stack(2, 16, 16, rng);
  double lambda = 0;
  for (int it = 0; it < 100; ++it) {
    ContrastStack const ax = adjoint(encode(x, s, m), s, m);
    lambda = norm(ax) / norm(x);
    x = ax;
    x *= 1.0 / norm(x);
  }
  EXPECT_LE(lambda, 1.0 + 1e-10);
  EXPECT_GT(lambda, 0.5);
}

TEST(Encoding, GeometryMismatchIsRejected)
{
  auto const s = make_sensitivities(2, 8, 8, 1);
  EXPECT_THROW(encode(ContrastStack(2, 8, 6), s, full_mask(2, 8, 6)), ConfigError);
  EXPECT_THROW(encode(ContrastStack(2, 8, 8), s, full_mask(3, 8, 8)), ConfigError);
}

TEST(Projection, ReplacesSampledEntriesAndIsIdempotent)
{
  Rng rng(4);
  ComplexGrid const k = random_grid(8, 8, rng), y = random_grid(8, 8, rng);
  MaskGrid m(8, 8);
  for (std::size_t i = 0; i < m.size(); ++i) { m[i] = rng.uniform() < 0.4; }
  ComplexGrid const p = project_dc(k, m, y);
  for (std::size_t i = 0; i < m.size(); ++i) { EXPECT_EQ(p[i], m[i] ? y[i] : k[i]); }
  EXPECT_EQ(project_dc(p, m, y), p);
}

TEST(Projection, DataConsistentInvertsZeroFillAtFullSampling)
{
  Rng rng(5);
  auto const s = make_sensitivities(3, 12, 12, 4);
  ContrastStack const x = random_stack(2, 12, 12, rng);
  KSpaceSet const y = encode(x, s, full_mask(2, 12, 12));
  ContrastStack const garbage = random_stack(2, 12, 12, rng);
  EXPECT_LT(norm(data_consistent(garbage, y, s) - x) / norm(x), 1e-12);
}

TEST(Masks, AccelerationCenterAndAudit)
{
  for (double accel : {4.0, 8.0}) {
    PoissonDiscOptions o{.accel = accel, .center_rows = 24, .center_cols = 24, .seed = 11, .contrasts = 11};
    auto const m = make_poisson_disc_mask(128, 128, o);
    ASSERT_EQ(m.contrasts(), 11U);
    for (std::size_t j = 0; j < 11; ++j) {
      EXPECT_NEAR(m.achieved_accel(j), accel, 0.05 * accel) << "contrast " << j;
      for (std::size_t r = 0; r < 128; ++r) {
        for (std::size_t c = 0; c < 128; ++c) {
          if (in_center(r, c, 128, 128, 24, 24)) { ASSERT_TRUE(m.planes[j](r, c)); }
        }
      }
    }
    std::set<std::vector<std::uint8_t>> distinct;
    for (auto const &p : m.planes) { distinct.insert(p.vec()); }
    EXPECT_EQ(distinct.size(), 11U);
    // same options give the same masks
    EXPECT_EQ(make_poisson_disc_mask(128, 128, o).planes, m.planes);
  }
}

TEST(Masks, VariableDensityFavorsTheCenter)
{
  auto const m = make_poisson_disc_mask(96, 96, {.accel = 6, .center_rows = 8, .center_cols = 8, .seed = 3});
  std::size_t inner_n = 0, inner_hit = 0, outer_n = 0, outer_hit = 0;
  for (std::size_t r = 0; r < 96; ++r) {
    for (std::size_t c = 0; c < 96; ++c) {
      if (in_center(r, c, 96, 96, 8, 8)) { continue; }
      double const d = std::hypot(double(r) - 48, double(c) - 48);
      bool const hit = m.planes[0](r, c);
      if (d < 24) {
        ++inner_n;
        inner_hit += hit;
      } else if (d > 40) {
        ++outer_n;
        outer_hit += hit;
      }
    }
  }
  EXPECT_GT(double(inner_hit) / double(inner_n), 1.5 * double(outer_hit) / double(outer_n));
}

TEST(Masks, PoissonExclusionHolds)
{
  auto const m = make_poisson_disc_mask(48, 48, {.accel = 4, .center_rows = 8, .center_cols = 8, .seed = 9});
  double const r0 = m.base_radius[0];
  ASSERT_GT(r0, 0.0);
  std::vector<std::pair<int, int>> pts;
  for (int r = 0; r < 48; ++r) {
    for (int c = 0; c < 48; ++c) {
      if (m.planes[0](std::size_t(r), std::size_t(c)) && !in_center(std::size_t(r), std::size_t(c), 48, 48, 8, 8)) {
        pts.emplace_back(r, c);
      }
    }
  }
  double const dmax = std::hypot(24.0, 24.0);
  for (std::size_t a = 0; a < pts.size(); ++a) {
    for (std::size_t b = a + 1; b < pts.size(); ++b) {
      double const d = std::hypot(double(pts[a].first - pts[b].first), double(pts[a].second - pts[b].second));
      // whichever point came later in the candidate order was checked with its own radius
      double const ra = poisson_radius(r0, std::hypot(pts[a].first - 24.0, pts[a].second - 24.0), dmax, 2);
      double const rb = poisson_radius(r0, std::hypot(pts[b].first - 24.0, pts[b].second - 24.0), dmax, 2);
      ASSERT_GE(d + 1e-12, std::min(ra, rb));
    }
  }
}

TEST(Masks, FullSamplingAndInfeasibleCenter)
{
  auto const m = make_poisson_disc_mask(16, 16, {.accel = 1, .center_rows = 4, .center_cols = 4, .contrasts = 2});
  EXPECT_EQ(count_ones(m.planes[1]), 256U);
  EXPECT_THROW(make_poisson_disc_mask(32, 32, {.accel = 4, .center_rows = 24, .center_cols = 24}), ConfigError);
  EXPECT_THROW(make_poisson_disc_mask(16, 16, {.accel = 0.5}), ConfigError);
}

TEST(Split, CountsAndDisjointness)
{
  auto const m = make_poisson_disc_mask(64, 64, {.accel = 4, .center_rows = 12, .center_cols = 12, .seed = 1, .contrasts = 3});
  auto const [keep, loss] = split_mask(m, 0.4, 77);
  for (std::size_t j = 0; j < 3; ++j) {
    std::size_t const outer = count_ones(m.planes[j]) - 144;
    EXPECT_EQ(count_ones(loss.planes[j]), std::size_t(std::llround(0.4 * double(outer))));
    EXPECT_EQ(count_ones(keep.planes[j]) + count_ones(loss.planes[j]), count_ones(m.planes[j]));
    for (std::size_t i = 0; i < 64 * 64; ++i) {
      ASSERT_FALSE(keep.planes[j][i] && loss.planes[j][i]);
      ASSERT_LE(keep.planes[j][i] + loss.planes[j][i], m.planes[j][i]);
      if (in_center(i / 64, i % 64, 64, 64, 12, 12)) { ASSERT_TRUE(keep.planes[j][i]); }
    }
  }
  auto const [k0, l0] = split_mask(m, 0.0, 1);
  EXPECT_EQ(k0.planes, m.planes);
  EXPECT_THROW(split_mask(m, 1.0, 1), ConfigError);
}
