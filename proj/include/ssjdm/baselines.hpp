#pragma once

// Comparison reconstructions: zero filling and total-variation compressed
// sensing solved by proximal gradient with a dual-projection TV prox.

#include <cmath>
#include <string>
#include <vector>

#include "mri.hpp"

namespace ssjdm {

inline double nrmse(ContrastStack const &a, ContrastStack const &ref)
{
  require(a.same_shape(ref), "nrmse: shape mismatch");
  double const n = norm(ref);
  require(n > 0, "nrmse: zero reference");
  return norm(a - ref) / n;
}

inline double nrmse(ComplexGrid const &a, ComplexGrid const &ref)
{
  require(a.same_shape(ref), "nrmse: shape mismatch");
  double const n = norm(ref);
  require(n > 0, "nrmse: zero reference");
  return norm(a - ref) / n;
}

// Discrete gradient with forward differences and a zero last difference.

struct GradientField
{
  ComplexGrid h; ///< x[r, c+1] − x[r, c]
  ComplexGrid v; ///< x[r+1, c] − x[r, c]
};

inline GradientField forward_gradient(ComplexGrid const &x)
{
  std::size_t const R = x.rows(), C = x.cols();
  GradientField g{ComplexGrid(R, C), ComplexGrid(R, C)};
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      if (c + 1 < C) { g.h(r, c) = x(r, c + 1) - x(r, c); }
      if (r + 1 < R) { g.v(r, c) = x(r + 1, c) - x(r, c); }
    }
  }
  return g;
}

/// Adjoint of forward_gradient (the negative divergence).
inline ComplexGrid gradient_adjoint(GradientField const &p)
{
  std::size_t const R = p.h.rows(), C = p.h.cols();
  ComplexGrid out(R, C);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      if (c + 1 < C) {
        out(r, c + 1) += p.h(r, c);
        out(r, c) -= p.h(r, c);
      }
      if (r + 1 < R) {
        out(r + 1, c) += p.v(r, c);
        out(r, c) -= p.v(r, c);
      }
    }
  }
  return out;
}

inline double total_variation(ComplexGrid const &x, bool anisotropic = false)
{
  GradientField const g = forward_gradient(x);
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s += anisotropic ? std::abs(g.h[i]) + std::abs(g.v[i]) : std::sqrt(std::norm(g.h[i]) + std::norm(g.v[i]));
  }
  return s;
}

/// argmin_x ½‖x − b‖² + λ·TV(x) by projected gradient on the dual
/// (step 1/8, the inverse of the bound ‖D‖² ≤ 8). `dual` carries the warm start.
inline ComplexGrid tv_prox(ComplexGrid const &b, double lambda, std::size_t iterations, GradientField &dual,
                           bool anisotropic = false)
{
  if (lambda == 0) { return b; }
  if (!dual.h.same_shape(b)) { dual = {ComplexGrid(b.rows(), b.cols()), ComplexGrid(b.rows(), b.cols())}; }
  double const tau = 1.0 / (8.0 * lambda);
  for (std::size_t it = 0; it < iterations; ++it) {
    ComplexGrid x = gradient_adjoint(dual);
    x *= -lambda;
    x += b;
    GradientField const g = forward_gradient(x);
    for (std::size_t i = 0; i < b.size(); ++i) {
      cplx const ph = dual.h[i] + tau * g.h[i];
      cplx const pv = dual.v[i] + tau * g.v[i];
      if (anisotropic) {
        dual.h[i] = ph / std::max(1.0, std::abs(ph));
        dual.v[i] = pv / std::max(1.0, std::abs(pv));
      } else {
        double const n = std::max(1.0, std::sqrt(std::norm(ph) + std::norm(pv)));
        dual.h[i] = ph / n;
        dual.v[i] = pv / n;
      }
    }
  }
  ComplexGrid x = gradient_adjoint(dual);
  x *= -lambda;
  x += b;
  return x;
}

inline ComplexGrid tv_prox(ComplexGrid const &b, double lambda, std::size_t iterations, bool anisotropic = false)
{
  GradientField dual;
  return tv_prox(b, lambda, iterations, dual, anisotropic);
}

struct TvConfig
{
  double lambda = 0.01;
  std::size_t max_iterations = 100;
  std::size_t inner_iterations = 20;
  double tolerance = 1e-7; ///< stop when the relative objective decrease falls below this
  bool anisotropic = false;

  void validate() const
  {
    require(lambda >= 0, "tv: lambda must be non-negative");
    require(max_iterations >= 1 && inner_iterations >= 1, "tv: iteration counts must be >= 1");
    require(tolerance >= 0, "tv: tolerance must be non-negative");
  }
};

struct TvResult
{
  ContrastStack x;
  std::vector<double> objective; ///< accepted iterates, starting with the initial one
  std::size_t iterations = 0;
};

/// Proximal gradient with unit step (valid because ‖A‖ ≤ 1) on
/// ½‖AX − Y‖² + λ Σ_j TV(x_j), started from the zero-filled image. A step
/// that raises the objective is rejected and retried with a more accurate
/// prox; five rejections in a row abort.
inline TvResult tv_cs_reconstruct(KSpaceSet const &y, CoilSensitivities const &s, TvConfig const &cfg)
{
  cfg.validate();
  std::size_t const n = y.contrasts();
  auto residual = [&](ContrastStack const &x) {
    KSpaceSet r = encode(x, s, y.mask);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t c = 0; c < r.coils(); ++c) { r.data[j][c] -= y.data[j][c]; }
    }
    return r;
  };
  auto objective = [&](ContrastStack const &x, KSpaceSet const &r) {
    double f = 0.5 * std::pow(norm(r), 2);
    for (std::size_t j = 0; j < n; ++j) { f += cfg.lambda * total_variation(x[j], cfg.anisotropic); }
    return f;
  };

  TvResult res;
  res.x = zero_fill(y, s);
  KSpaceSet r = residual(res.x);
  double f = objective(res.x, r);
  res.objective.push_back(f);
  std::vector<GradientField> duals(n);
  std::size_t inner = cfg.inner_iterations, rejected = 0;
  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    ContrastStack const grad = adjoint(r, s, y.mask);
    ContrastStack cand = res.x - grad;
    for (std::size_t j = 0; j < n; ++j) { cand[j] = tv_prox(cand[j], cfg.lambda, inner, duals[j], cfg.anisotropic); }
    KSpaceSet const rc = residual(cand);
    double const fc = objective(cand, rc);
    if (!std::isfinite(fc)) { throw NumericalError("tv: non-finite objective at iteration " + std::to_string(it)); }
    res.iterations = it + 1;
    if (fc > f + 1e-12 * std::max(1.0, std::abs(f))) {
      if (++rejected >= 5) {
        throw NumericalError("tv: objective increased in 5 consecutive steps (last " + std::to_string(f) + " -> " +
                             std::to_string(fc) + ")");
      }
      inner *= 2;
      continue;
    }
    rejected = 0;
    double const drop = f - fc;
    res.x = std::move(cand);
    r = rc;
    f = fc;
    res.objective.push_back(f);
    if (drop <= cfg.tolerance * std::max(f, 1e-300)) { break; }
  }
  return res;
}

} // namespace ssjdm
