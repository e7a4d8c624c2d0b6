#include <gtest/gtest.h>

#include <set>

#include "ssjdm/mapping.hpp"

using namespace ssjdm;

TEST(Grid, FullSizeSegments)
{
  auto const g = parity_grid(true);
  auto const t2 = expand_segments(g.t2);
  ASSERT_EQ(t2.size(), 21U);
  EXPECT_EQ(t2.front(), 40.0);
  EXPECT_EQ(t2.back(), 50.0);
  auto const t1r = expand_segments(g.t1rho);
  for (double v = 20; v <= 60; v += 0.5) { EXPECT_EQ(std::count(t1r.begin(), t1r.end(), v), 1) << v; }
  auto const t1 = expand_segments(g.t1);
  EXPECT_EQ(std::count(t1.begin(), t1.end(), 900.0), 1);
  EXPECT_EQ(std::count(t1.begin(), t1.end(), 1300.0), 1);
  // the first T1 run stops at 690, so 700 opens the second run
  EXPECT_EQ(std::count(t1.begin(), t1.end(), 690.0), 1);
  EXPECT_EQ(std::count(t1.begin(), t1.end(), 700.0), 1);
  EXPECT_EQ(std::set<double>(t1.begin(), t1.end()).size(), t1.size());
  EXPECT_TRUE(std::is_sorted(t1.begin(), t1.end()));
}

TEST(Grid, AtomCountsWithAndWithoutJointDuplicates)
{
  auto const g = parity_grid(true);
  auto const dedup = expand_segments(g.t1).size() * expand_segments(g.t1rho).size() * expand_segments(g.t2).size();
  EXPECT_EQ(dedup, 168U * 112U * 21U);
  auto const keep = expand_segments(g.t1, true).size() * expand_segments(g.t1rho, true).size() *
                    expand_segments(g.t2, true).size();
  EXPECT_EQ(keep, 410550U);
}

TEST(Grid, ParseAndValidate)
{
  auto const segs = parse_segments("[50:20:700, 700:10:900]");
  ASSERT_EQ(segs.size(), 2U);
  EXPECT_EQ(segs[1].step, 10.0);
  EXPECT_EQ(expand_segments(parse_segments("1:0.5:2")), (std::vector<double>{1, 1.5, 2}));
  EXPECT_THROW(parse_segments("1:0:2"), ConfigError);
  EXPECT_THROW(parse_segments("5:1:2"), ConfigError);
  EXPECT_THROW(parse_segments("10:1:20, 5:1:8"), ConfigError);
  EXPECT_THROW(parse_segments("a:b"), ConfigError);
}

TEST(Dictionary, SmallGridUnitAtomsAndClosedForm)
{
  ParameterGridSpec g;
  g.t1 = {{800, 200, 1200}};
  g.t1rho = {{40, 20, 60}};
  auto const d = build_dictionary(g, default_schedule());
  ASSERT_EQ(d.size(), 6U);
  for (std::size_t k = 0; k < d.size(); ++k) {
    double s = 0;
    for (std::size_t j = 0; j < d.contrasts; ++j) { s += d.atom(k)[j] * d.atom(k)[j]; }
    EXPECT_NEAR(s, 1.0, 1e-10);
  }
  ParameterGridSpec one;
  one.t1 = {{1000, 1, 1000}};
  one.t1rho = {{50, 1, 50}};
  auto const d1 = build_dictionary(one, default_schedule());
  // contrast 1: TSL = 30 ms read at t = 0
  EXPECT_NEAR(d1.atom(0)[1] * d1.norms[0], -std::exp(-30.0 / 50.0), 1e-12);
  EXPECT_NEAR(d1.atom(0)[1] * d1.norms[0], -0.5488, 1e-4);
}

TEST(Dictionary, DeskAtomsAreDistinct)
{
  auto const d = build_dictionary(desk_grid(), default_schedule());
  EXPECT_EQ(d.size(), 151U * 111U);
  // nearest-neighbour distance along each grid axis bounds the pairwise minimum
  double min_d = 1e9;
  for (std::size_t k = 0; k + 1 < d.size(); ++k) {
    for (std::size_t step : {std::size_t(1), std::size_t(111)}) {
      if (k + step >= d.size()) { continue; }
      double s = 0;
      for (std::size_t j = 0; j < d.contrasts; ++j) { s += std::pow(d.atom(k)[j] - d.atom(k + step)[j], 2); }
      min_d = std::min(min_d, std::sqrt(s));
    }
  }
  EXPECT_GT(min_d, 0.0);
}

TEST(Match, SelfScaleSignAndPhase)
{
  auto const d = build_dictionary(desk_grid(), default_schedule());
  auto const sched = default_schedule();
  std::vector<double> s;
  for (auto const &c : sched.contrasts) { s.push_back(signal(1080, 61, 0.6, c)); }
  auto const r = match(s, d);
  EXPECT_EQ(r.t1, 1080.0);
  EXPECT_EQ(r.t1rho, 61.0);
  EXPECT_NEAR(r.m0, 0.6, 1e-12);
  EXPECT_NEAR(r.correlation, 1.0, 1e-12);

  std::vector<double> scaled = s, flipped = s;
  for (auto &v : scaled) { v *= 3.7; }
  for (auto &v : flipped) { v *= -2.0; }
  EXPECT_EQ(match(scaled, d).atom, r.atom);
  EXPECT_NEAR(match(scaled, d).m0, 0.6 * 3.7, 1e-12);
  EXPECT_EQ(match(flipped, d).atom, r.atom);

  std::vector<cplx> rotated;
  for (double v : s) { rotated.push_back(std::polar(v, 0.0) * std::polar(1.0, 1.1)); }
  EXPECT_EQ(match(rotated, d).atom, r.atom);
  EXPECT_TRUE(match(std::vector<double>(11, 0.0), d).background);
}

TEST(Match, OffGridEqualsBruteForceOracle)
{
  auto const d = build_dictionary(desk_grid(), default_schedule());
  auto const sched = default_schedule();
  Rng rng(3);
  auto oracle = [&](std::vector<double> const &s) {
    // independent scan: cosine similarity with the raw (unnormalized) signals
    double best = -1;
    std::size_t arg = 0;
    double ns = 0;
    for (double v : s) { ns += v * v; }
    for (std::size_t k = 0; k < d.size(); ++k) {
      double dot = 0, na = 0;
      for (std::size_t j = 0; j < s.size(); ++j) {
        double const a = signal(d.points[k].t1, d.points[k].t1rho, 1.0, sched.contrasts[j]);
        dot += a * s[j];
        na += a * a;
      }
      double const c = std::abs(dot) / std::sqrt(na * ns);
      if (c > best + 1e-13) {
        best = c;
        arg = k;
      }
    }
    return arg;
  };
  std::vector<double> s;
  for (auto const &c : sched.contrasts) { s.push_back(signal(1010, 52, 1.0, c)); }
  EXPECT_EQ(match(s, d).atom, oracle(s));
  for (int q = 0; q < 40; ++q) {
    std::vector<double> r;
    double const t1 = rng.uniform(650, 2050), t1r = rng.uniform(25, 125);
    for (auto const &c : sched.contrasts) { r.push_back(signal(t1, t1r, 1.0, c) + 0.01 * rng.normal()); }
    EXPECT_EQ(match(r, d).atom, oracle(r));
  }
}

TEST(MapVolume, PhantomRoundTripAndBackground)
{
  auto const p = make_phantom(24, 24, 1);
  auto const x = simulate_contrasts(p, default_schedule(), 5);
  auto const d = build_dictionary(desk_grid(), default_schedule());
  auto const maps = map_volume(x, d, 0.05);
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    if (p.labels[i] == Background) {
      EXPECT_FALSE(maps.foreground[i]);
      continue;
    }
    std::vector<cplx> s;
    for (std::size_t j = 0; j < x.contrasts(); ++j) { s.push_back(x[j][i]); }
    auto const r = match(s, d);
    EXPECT_EQ(maps.t1[i], r.t1);
    EXPECT_NEAR(maps.t1[i], p.t1[i], 10.0);
    EXPECT_NEAR(maps.t1rho[i], p.t1rho[i], 1.0);
  }
  // on-grid tissue values without variation are recovered exactly
  PhantomOptions o;
  o.variation = 0;
  o.myocardium = {1080, 61, 0.6, 45};
  auto const q = make_phantom(24, 24, 2, o);
  auto const exact = map_volume(simulate_contrasts(q, default_schedule(), 6), d, 0.05);
  for (std::size_t i = 0; i < q.labels.size(); ++i) {
    if (q.labels[i] == Background) { continue; }
    EXPECT_EQ(exact.t1[i], q.t1[i]);
    EXPECT_EQ(exact.t1rho[i], q.t1rho[i]);
    EXPECT_NEAR(exact.m0[i], q.m0[i], 1e-12);
  }
  auto const zero = map_volume(ContrastStack(11, 24, 24), d, 0.0);
  EXPECT_EQ(count_ones(zero.foreground), 0U);
}

TEST(Roi, Statistics)
{
  RealGrid m(2, 2);
  m[0] = 3;
  m[1] = 7;
  m[2] = 5;
  m[3] = 5;
  MaskGrid two(2, 2);
  two[0] = two[1] = 1;
  auto const s = roi_stats(m, two);
  EXPECT_EQ(s.mean, 5.0);
  EXPECT_EQ(s.std, 2.0);
  EXPECT_EQ(s.n, 2U);
  MaskGrid c(2, 2);
  c[2] = c[3] = 1;
  EXPECT_EQ(roi_stats(m, c).std, 0.0);
  EXPECT_THROW(roi_stats(m, MaskGrid(2, 2)), ConfigError);
}
