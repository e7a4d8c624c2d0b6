#include <gtest/gtest.h>

#include "ssjdm/phantom.hpp"

using namespace ssjdm;

TEST(Schedule, ElevenContrastsInThreeParts)
{
  auto const s = default_schedule(1000);
  ASSERT_EQ(s.size(), 11U);
  EXPECT_EQ(s.contrasts[0].prep, Prep::None);
  std::vector<double> const t{0, 1000, 2000, 3000, 4000, 100, 1100, 2100, 3100, 4100};
  for (std::size_t j = 1; j < 11; ++j) {
    EXPECT_EQ(s.contrasts[j].tsl_ms, j <= 5 ? 30.0 : 60.0);
    EXPECT_EQ(s.contrasts[j].recovery_ms, t[j - 1]);
  }
  EXPECT_THROW(default_schedule(0), ConfigError);
}

TEST(Signal, ClosedFormValues)
{
  ContrastDescriptor const d{Prep::SpinLock, 60, 0, 0};
  EXPECT_NEAR(signal(1000, 100, 1.0, d), -std::exp(-0.6), 1e-15);
  EXPECT_NEAR(signal(1000, 100, 1.0, d), -0.5488, 1e-4);
  EXPECT_EQ(signal(1000, 100, 0.7, {Prep::None, 0, 0, 0}), 0.7);
  ContrastDescriptor const late{Prep::SpinLock, 30, 100, 2100};
  EXPECT_NEAR(signal(1080.42, 61.36, 0.6, late), 0.6 * (1 - (1 + std::exp(-30 / 61.36)) * std::exp(-2100 / 1080.42)),
              1e-15);
  // long recovery approaches M0
  EXPECT_NEAR(signal(800, 50, 0.5, {Prep::SpinLock, 30, 0, 1e6}), 0.5, 1e-12);
  EXPECT_THROW(signal(0, 50, 1, d), ConfigError);
  EXPECT_THROW(signal(800, -1, 1, d), ConfigError);
}

TEST(Phantom, RegionMeansEqualTissueValues)
{
  PhantomOptions const o;
  for (std::uint64_t seed : {1, 2, 3}) {
    auto const p = make_phantom(64, 64, seed, o);
    for (auto [reg, tv] : {std::pair{Blood, o.blood}, std::pair{Myocardium, o.myocardium}, std::pair{Liver, o.liver}}) {
      double t1 = 0, t1r = 0, n = 0, lo = 1e9, hi = 0;
      for (std::size_t i = 0; i < p.labels.size(); ++i) {
        if (p.labels[i] != reg) { continue; }
        t1 += p.t1[i];
        t1r += p.t1rho[i];
        lo = std::min(lo, p.t1[i]);
        hi = std::max(hi, p.t1[i]);
        n += 1;
        ASSERT_EQ(p.m0[i], tv.m0);
      }
      ASSERT_GT(n, 10) << "region " << int(reg);
      EXPECT_NEAR(t1 / n, tv.t1_ms, 1e-9 * tv.t1_ms);
      EXPECT_NEAR(t1r / n, tv.t1rho_ms, 1e-9 * tv.t1rho_ms);
      EXPECT_LE(hi, tv.t1_ms * 1.02 + 1e-9);
      EXPECT_GE(lo, tv.t1_ms * 0.98 - 1e-9);
    }
  }
  EXPECT_THROW(make_phantom(8, 32, 1), ConfigError);
}

TEST(Phantom, SeedsVaryGeometryButReproduce)
{
  EXPECT_EQ(make_phantom(32, 32, 5).labels, make_phantom(32, 32, 5).labels);
  EXPECT_NE(make_phantom(32, 32, 5).t1, make_phantom(32, 32, 6).t1);
}

TEST(Contrasts, MatchSignalModelVoxelwise)
{
  auto const p = make_phantom(32, 32, 1);
  auto const s = default_schedule();
  auto const x = simulate_contrasts(p, s);
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      double const ref = p.m0[i] == 0 ? 0.0 : signal(p.t1[i], p.t1rho[i], p.m0[i], s.contrasts[j]);
      ASSERT_EQ(x[j][i], cplx(ref, 0.0));
    }
  }
  auto const xp = simulate_contrasts(p, s, 3);
  for (std::size_t j = 0; j < s.size(); ++j) {
    for (std::size_t i = 0; i < p.labels.size(); ++i) { ASSERT_NEAR(std::abs(xp[j][i]), std::abs(x[j][i]), 1e-12); }
  }
}

TEST(Synthesis, NoiseStatisticsOnSampledEntries)
{
  auto const p = make_phantom(32, 32, 2);
  auto const x = simulate_contrasts(p, default_schedule());
  auto const s = make_sensitivities(4, 32, 32, 1);
  auto const m = make_poisson_disc_mask(32, 32, {.accel = 2, .center_rows = 8, .center_cols = 8, .seed = 1, .contrasts = 11});
  double const sigma = 0.05;
  auto const clean = encode(x, s, m);
  auto const noisy = synthesize_kspace(x, s, m, sigma, 42);
  double s2 = 0;
  std::size_t n = 0;
  for (std::size_t j = 0; j < 11; ++j) {
    for (std::size_t c = 0; c < 4; ++c) {
      for (std::size_t i = 0; i < 32 * 32; ++i) {
        cplx const d = noisy.data[j][c][i] - clean.data[j][c][i];
        if (!m.planes[j][i]) {
          ASSERT_EQ(noisy.data[j][c][i], cplx{});
          continue;
        }
        s2 += d.real() * d.real() + d.imag() * d.imag();
        n += 2;
      }
    }
  }
  EXPECT_NEAR(std::sqrt(s2 / double(n)), sigma, 0.03 * sigma);
}

TEST(Synthesis, FullySampledNoiselessRoundTrip)
{
  auto const p = make_phantom(32, 32, 3);
  auto const x = simulate_contrasts(p, default_schedule(), 9);
  auto const s = make_sensitivities(4, 32, 32, 2);
  auto const m = make_poisson_disc_mask(32, 32, {.accel = 1, .center_rows = 8, .center_cols = 8, .contrasts = 11});
  auto const y = synthesize_kspace(x, s, m, 0.0, 1);
  EXPECT_LT(norm(zero_fill(y, s) - x) / norm(x), 1e-12);
}
