#pragma once

// Synthetic cardiac-like phantoms, the closed-form spin-lock/T1-recovery
// signal model, and noisy multi-coil k-space synthesis.

#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "mri.hpp"

namespace ssjdm {

enum class Prep
{
  None,
  SpinLock,
};

struct ContrastDescriptor
{
  Prep prep = Prep::None;
  double tsl_ms = 0;      ///< spin-lock duration
  double ti_ms = 0;       ///< delay between preparation and first readout of the part
  double recovery_ms = 0; ///< time t from preparation to this readout
};

struct AcquisitionSchedule
{
  std::vector<ContrastDescriptor> contrasts;
  double rr_ms = 1000;
  double te_ms = 1.64;
  double tr_ms = 3.28;

  std::size_t size() const { return contrasts.size(); }
};

/// 11 contrasts in three parts: one unprepared image; TSL = 30 ms, TI = 0 with
/// five images one heartbeat apart; TSL = 60 ms, TI = 100 ms with five more.
inline AcquisitionSchedule default_schedule(double rr_ms = 1000)
{
  require(rr_ms > 0, "default_schedule: R-R interval must be positive");
  AcquisitionSchedule s;
  s.rr_ms = rr_ms;
  s.contrasts.push_back({Prep::None, 0, 0, 0});
  for (auto [tsl, ti] : {std::pair{30.0, 0.0}, std::pair{60.0, 100.0}}) {
    for (int j = 0; j < 5; ++j) { s.contrasts.push_back({Prep::SpinLock, tsl, ti, ti + j * rr_ms}); }
  }
  return s;
}

/// Longitudinal signal after preparation. Unprepared: M0. Spin-lock: the
/// magnetization starts at −M0·e^(−TSL/T1ρ) and recovers with T1, giving
/// M0·(1 − (1 + e^(−TSL/T1ρ))·e^(−t/T1)).
inline double signal(double t1, double t1rho, double m0, ContrastDescriptor const &d)
{
  if (!(t1 > 0) || !(t1rho > 0)) { throw ConfigError("signal: relaxation times must be positive"); }
  if (d.prep == Prep::None) { return m0; }
  return m0 * (1.0 - (1.0 + std::exp(-d.tsl_ms / t1rho)) * std::exp(-d.recovery_ms / t1));
}

enum Region : std::uint8_t
{
  Background = 0,
  Blood = 1,
  Myocardium = 2,
  Liver = 3,
};

struct TissueValues
{
  double t1_ms;
  double t1rho_ms;
  double m0;
  double t2_ms;
};

struct PhantomOptions
{
  TissueValues blood{1650.0, 95.0, 0.9, 250.0};
  TissueValues myocardium{1080.42, 61.36, 0.6, 45.0};
  TissueValues liver{810.0, 42.0, 0.45, 30.0};
  double variation = 0.02; ///< peak relative amplitude of smooth within-region variation
};

struct ParameterMaps
{
  RealGrid t1;
  RealGrid t1rho;
  RealGrid m0;
  RealGrid t2;
  MaskGrid labels;

  std::size_t rows() const { return labels.rows(); }
  std::size_t cols() const { return labels.cols(); }
};

inline MaskGrid region_mask(ParameterMaps const &p, Region r)
{
  MaskGrid m(p.rows(), p.cols());
  for (std::size_t i = 0; i < m.size(); ++i) { m[i] = p.labels[i] == r; }
  return m;
}

/// Body ellipse of liver-like tissue holding a myocardial annulus around a
/// blood pool, with per-seed jitter of position and radii. Each region gets a
/// smooth multiplicative variation whose mean over the region is exactly
/// zero, so region means equal the configured tissue values.
inline ParameterMaps make_phantom(std::size_t rows, std::size_t cols, std::uint64_t seed, PhantomOptions const &o = {})
{
  require(rows >= 16 && cols >= 16, "make_phantom: shape must be at least 16x16");
  Rng rng(seed);
  ParameterMaps p{RealGrid(rows, cols), RealGrid(rows, cols), RealGrid(rows, cols), RealGrid(rows, cols),
                  MaskGrid(rows, cols)};
  double const h = double(rows), w = double(cols);
  double const by = 0.5 * (h - 1) + rng.uniform(-0.02, 0.02) * h;
  double const bx = 0.5 * (w - 1) + rng.uniform(-0.02, 0.02) * w;
  double const bry = h * 0.40 * rng.uniform(0.94, 1.04), brx = w * 0.44 * rng.uniform(0.94, 1.04);
  double const hy = by + rng.uniform(-0.06, 0.02) * h, hx = bx + rng.uniform(-0.06, 0.06) * w;
  double const outer = std::min(h, w) * 0.23 * rng.uniform(0.92, 1.08);
  double const inner = outer * rng.uniform(0.55, 0.65);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double const y = double(r), x = double(c);
      double const e = ((y - by) / bry) * ((y - by) / bry) + ((x - bx) / brx) * ((x - bx) / brx);
      double const d = std::hypot(y - hy, x - hx);
      Region lab = Background;
      if (e <= 1.0) { lab = Liver; }
      if (d <= outer) { lab = Myocardium; }
      if (d <= inner) { lab = Blood; }
      p.labels(r, c) = lab;
    }
  }
  // smooth field: two low-frequency plane waves with random orientation
  auto field = [&](double a1, double a2, double ph1, double ph2) {
    RealGrid f(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        double const y = double(r) / h, x = double(c) / w;
        f(r, c) = std::sin(2 * std::numbers::pi * (std::cos(a1) * x + std::sin(a1) * y) + ph1) +
                  0.5 * std::sin(2 * std::numbers::pi * 1.5 * (std::cos(a2) * x + std::sin(a2) * y) + ph2);
      }
    }
    return f;
  };
  auto const two_pi = 2 * std::numbers::pi;
  RealGrid const f1 = field(rng.uniform(0, two_pi), rng.uniform(0, two_pi), rng.uniform(0, two_pi), rng.uniform(0, two_pi));
  RealGrid const f2 = field(rng.uniform(0, two_pi), rng.uniform(0, two_pi), rng.uniform(0, two_pi), rng.uniform(0, two_pi));
  for (Region reg : {Blood, Myocardium, Liver}) {
    TissueValues const &tv = reg == Blood ? o.blood : reg == Myocardium ? o.myocardium : o.liver;
    double mean1 = 0, mean2 = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < p.labels.size(); ++i) {
      if (p.labels[i] == reg) {
        mean1 += f1[i];
        mean2 += f2[i];
        ++n;
      }
    }
    if (n == 0) { continue; }
    mean1 /= double(n);
    mean2 /= double(n);
    double peak1 = 0, peak2 = 0;
    for (std::size_t i = 0; i < p.labels.size(); ++i) {
      if (p.labels[i] == reg) {
        peak1 = std::max(peak1, std::abs(f1[i] - mean1));
        peak2 = std::max(peak2, std::abs(f2[i] - mean2));
      }
    }
    double const s1 = peak1 > 0 ? o.variation / peak1 : 0, s2 = peak2 > 0 ? o.variation / peak2 : 0;
    for (std::size_t i = 0; i < p.labels.size(); ++i) {
      if (p.labels[i] != reg) { continue; }
      p.t1[i] = tv.t1_ms * (1.0 + s1 * (f1[i] - mean1));
      p.t1rho[i] = tv.t1rho_ms * (1.0 + s2 * (f2[i] - mean2));
      p.m0[i] = tv.m0;
      p.t2[i] = tv.t2_ms;
    }
  }
  return p;
}

/// Voxel-wise signal() over the schedule. Background voxels (M0 = 0) are zero.
/// With `phase_seed` set, a smooth phase field multiplies every contrast.
inline ContrastStack simulate_contrasts(ParameterMaps const &p, AcquisitionSchedule const &s,
                                        std::optional<std::uint64_t> phase_seed = std::nullopt)
{
  std::size_t const rows = p.rows(), cols = p.cols();
  ContrastStack x(s.size(), rows, cols);
  ComplexGrid phase(rows, cols, 1.0);
  if (phase_seed) {
    Rng rng(*phase_seed);
    double const a = rng.uniform(-1, 1), b = rng.uniform(-1, 1), c0 = rng.uniform(-1, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        double const y = double(r) / double(rows) - 0.5, xx = double(c) / double(cols) - 0.5;
        phase(r, c) = std::polar(1.0, c0 + 2.0 * a * y + 2.0 * b * xx + 1.5 * a * b * y * xx);
      }
    }
  }
  for (std::size_t i = 0; i < rows * cols; ++i) {
    if (p.m0[i] == 0.0) { continue; }
    for (std::size_t j = 0; j < s.size(); ++j) { x[j][i] = signal(p.t1[i], p.t1rho[i], p.m0[i], s.contrasts[j]) * phase[i]; }
  }
  return x;
}

/// encode(X, S, M) plus complex white noise of std `noise_std` per real
/// component, added at sampled locations only.
inline KSpaceSet synthesize_kspace(ContrastStack const &x, CoilSensitivities const &s, SamplingMask const &m,
                                   double noise_std, std::uint64_t seed)
{
  require(noise_std >= 0, "synthesize_kspace: noise std must be non-negative");
  KSpaceSet y = encode(x, s, m);
  y.noise_std = noise_std;
  if (noise_std == 0) { return y; }
  Rng rng(seed);
  for (std::size_t j = 0; j < y.contrasts(); ++j) {
    for (auto &g : y.data[j]) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        cplx const n = rng.complex_normal();
        if (m.planes[j][i]) { g[i] += noise_std * n; }
      }
    }
  }
  return y;
}

} // namespace ssjdm
