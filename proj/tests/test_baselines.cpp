#include <gtest/gtest.h>

#include "ssjdm/baselines.hpp"
#include "ssjdm/phantom.hpp"

using namespace ssjdm;

namespace {

struct Problem
{
  ContrastStack truth;
  CoilSensitivities sens;
  KSpaceSet y;
};

Problem phantom_problem(double accel, double noise, std::uint64_t seed = 4)
{
  auto const p = make_phantom(32, 32, seed);
  AcquisitionSchedule s = default_schedule();
  s.contrasts = {s.contrasts[0], s.contrasts[4], s.contrasts[9]};
  Problem pr{simulate_contrasts(p, s, seed + 1), make_sensitivities(4, 32, 32, seed + 2), {}};
  auto const m = make_poisson_disc_mask(32, 32, {.accel = accel, .center_rows = 8, .center_cols = 8, .seed = seed, .contrasts = 3});
  pr.y = synthesize_kspace(pr.truth, pr.sens, m, noise, seed + 3);
  return pr;
}

ComplexGrid row_step(std::size_t left, std::size_t right, double lo, double hi)
{
  ComplexGrid g(1, left + right);
  for (std::size_t c = 0; c < left + right; ++c) { g(0, c) = c < left ? lo : hi; }
  return g;
}

} // namespace

TEST(Nrmse, BasicValuesAndErrors)
{
  ComplexGrid ref(2, 2, cplx{1, 0});
  ComplexGrid a = ref;
  EXPECT_DOUBLE_EQ(nrmse(a, ref), 0.0);
  a(0, 0) = cplx{3, 0};
  EXPECT_DOUBLE_EQ(nrmse(a, ref), 1.0);
  EXPECT_THROW(nrmse(a, ComplexGrid(2, 2)), ConfigError);
  EXPECT_THROW(nrmse(ComplexGrid(2, 3), ref), ConfigError);
}

TEST(Gradient, AdjointIdentity)
{
  Rng rng(9);
  ComplexGrid x(7, 5);
  GradientField p{ComplexGrid(7, 5), ComplexGrid(7, 5)};
  for (auto &v : x.vec()) { v = rng.complex_normal(); }
  for (auto &v : p.h.vec()) { v = rng.complex_normal(); }
  for (auto &v : p.v.vec()) { v = rng.complex_normal(); }
  GradientField const g = forward_gradient(x);
  cplx lhs{}, rhs{};
  for (std::size_t i = 0; i < x.size(); ++i) {
    lhs += std::conj(g.h[i]) * p.h[i] + std::conj(g.v[i]) * p.v[i];
  }
  ComplexGrid const dt = gradient_adjoint(p);
  for (std::size_t i = 0; i < x.size(); ++i) { rhs += std::conj(x[i]) * dt[i]; }
  EXPECT_LT(std::abs(lhs - rhs), 1e-10 * std::abs(lhs));
}

TEST(TvProx, OneDimensionalStepShrinksByTheExactAmount)
{
  // For a two-level signal with a large jump the prox moves each side toward
  // the other by λ/length, so the jump drops by λ(1/n₁ + 1/n₂) ≤ 2λ.
  double const lam = 0.6;
  for (auto [n1, n2] : {std::pair<std::size_t, std::size_t>{4, 4}, {3, 9}, {10, 6}}) {
    ComplexGrid const b = row_step(n1, n2, 0.0, 5.0);
    ComplexGrid const x = tv_prox(b, lam, 4000);
    double const jump = (x(0, n1) - x(0, n1 - 1)).real();
    double const expected = 5.0 - lam * (1.0 / double(n1) + 1.0 / double(n2));
    EXPECT_NEAR(jump, expected, 1e-6);
    EXPECT_LE(5.0 - jump, 2 * lam + 1e-9);
    // Flat pieces stay flat.
    for (std::size_t c = 1; c < n1; ++c) { EXPECT_NEAR(std::abs(x(0, c) - x(0, 0)), 0.0, 1e-6); }
  }
}

TEST(TvProx, NeverIncreasesJumpsOnRandomSignals)
{
  Rng rng(3);
  ComplexGrid b(1, 40);
  for (auto &v : b.vec()) { v = 3.0 * rng.normal(); }
  ComplexGrid const x = tv_prox(b, 0.4, 500);
  EXPECT_LE(total_variation(x), total_variation(b));
  // Optimality: objective at the prox output beats nearby perturbations.
  auto obj = [&](ComplexGrid const &z) { return 0.5 * std::pow(norm(z - b), 2) + 0.4 * total_variation(z); };
  double const f = obj(x);
  for (int t = 0; t < 20; ++t) {
    ComplexGrid z = x;
    for (auto &v : z.vec()) { v += 1e-3 * rng.complex_normal(); }
    EXPECT_LE(f, obj(z) + 1e-6);
  }
}

TEST(TvProx, ZeroLambdaIsIdentity)
{
  Rng rng(1);
  ComplexGrid b(4, 4);
  for (auto &v : b.vec()) { v = rng.complex_normal(); }
  EXPECT_EQ(tv_prox(b, 0.0, 10), b);
}

TEST(TvCs, ZeroLambdaFullSamplingEqualsZeroFill)
{
  auto const pr = phantom_problem(1.0, 0.01);
  TvConfig cfg;
  cfg.lambda = 0;
  cfg.max_iterations = 5;
  auto const r = tv_cs_reconstruct(pr.y, pr.sens, cfg);
  auto const zf = zero_fill(pr.y, pr.sens);
  EXPECT_LT(norm(r.x - zf), 1e-8 * norm(zf));
}

TEST(TvCs, ObjectiveNeverIncreases)
{
  auto const pr = phantom_problem(4.0, 0.005);
  TvConfig cfg;
  cfg.lambda = 0.002;
  cfg.max_iterations = 60;
  auto const r = tv_cs_reconstruct(pr.y, pr.sens, cfg);
  ASSERT_GE(r.objective.size(), 2U);
  for (std::size_t k = 1; k < r.objective.size(); ++k) {
    EXPECT_LE(r.objective[k], r.objective[k - 1] + 1e-12 * r.objective[k - 1]);
  }
}

TEST(TvCs, BeatsZeroFillAtFourfoldAcceleration)
{
  auto const pr = phantom_problem(4.0, 0.0);
  TvConfig cfg;
  cfg.lambda = 0.001;
  cfg.max_iterations = 200;
  auto const r = tv_cs_reconstruct(pr.y, pr.sens, cfg);
  double const e_tv = nrmse(r.x, pr.truth);
  double const e_zf = nrmse(zero_fill(pr.y, pr.sens), pr.truth);
  EXPECT_LT(e_tv, 0.5 * e_zf) << "tv " << e_tv << " zero-fill " << e_zf;
}

TEST(TvCs, RejectsBadConfig)
{
  auto const pr = phantom_problem(2.0, 0.0);
  TvConfig cfg;
  cfg.lambda = -1;
  EXPECT_THROW(tv_cs_reconstruct(pr.y, pr.sens, cfg), ConfigError);
  cfg.lambda = 0.1;
  cfg.max_iterations = 0;
  EXPECT_THROW(tv_cs_reconstruct(pr.y, pr.sens, cfg), ConfigError);
}
