#pragma once

// Annealed Langevin sampling, unconditional or conditioned on measurements
// through a Gaussian likelihood whose variance grows with the noise scale.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mri.hpp"
#include "score.hpp"

namespace ssjdm {

/// Score field s(X̃, ε) at one of the schedule's scales.
using ScoreFn = std::function<ContrastStack(ContrastStack const &, double)>;

/// Aᴴ(A X − Y) for the current estimate, or empty for unconditional sampling.
using DataGradFn = std::function<ContrastStack(ContrastStack const &)>;

enum class DataTermSign
{
  Descent,   ///< adds −Aᴴ(AX − Y)/(γ₂² + ε_i²)
  AsPrinted, ///< adds +Aᴴ(AX − Y)/(γ₂² + ε_i²); kept only to show that it diverges
};

struct SamplerConfig
{
  double step_scale = 2e-5; ///< ε in η_i = ε·ε_i²/ε_L²
  std::size_t inner_steps = 4;
  double gamma2 = 0.0;
  std::uint64_t seed = 1;
  DataTermSign sign = DataTermSign::Descent;
  std::size_t chains = 1; ///< independent chains averaged into the returned estimate

  void validate() const
  {
    require(step_scale > 0, "sampler: step scale must be positive");
    require(inner_steps >= 1, "sampler: need at least one inner step");
    require(gamma2 >= 0, "sampler: gamma2 must be non-negative");
    require(chains >= 1, "sampler: need at least one chain");
  }
};

inline double step_size(SamplerConfig const &cfg, NoiseSchedule const &s, std::size_t i)
{
  return cfg.step_scale * s[i] * s[i] / (s.largest() * s.largest());
}

/// Mean ‖update‖ per scale, largest scale first.
struct SamplerTrace
{
  std::vector<double> scale;
  std::vector<double> mean_update_norm;
};

struct StackShape
{
  std::size_t contrasts = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

namespace detail {

inline ContrastStack complex_noise(StackShape const &sh, Rng &rng, double std_dev)
{
  ContrastStack z(sh.contrasts, sh.rows, sh.cols);
  for (auto &p : z.planes) {
    for (auto &v : p.vec()) { v = std_dev * rng.complex_normal(); }
  }
  return z;
}

inline ContrastStack one_chain(ScoreFn const &score, DataGradFn const &data_grad, NoiseSchedule const &sched,
                               SamplerConfig const &cfg, StackShape const &sh, Rng &rng, SamplerTrace *trace)
{
  ContrastStack x = complex_noise(sh, rng, sched.largest());
  for (std::size_t ii = sched.size(); ii-- > 0;) {
    double const eps = sched[ii];
    double const eta = step_size(cfg, sched, ii);
    double const w = (cfg.sign == DataTermSign::Descent ? -1.0 : 1.0) / (cfg.gamma2 * cfg.gamma2 + eps * eps);
    double update_sum = 0;
    for (std::size_t t = 0; t < cfg.inner_steps; ++t) {
      ContrastStack drift = score(x, eps);
      if (data_grad) {
        ContrastStack dg = data_grad(x);
        dg *= w;
        drift += dg;
      }
      drift *= 0.5 * eta;
      drift += complex_noise(sh, rng, std::sqrt(eta));
      update_sum += norm(drift);
      x += drift;
      for (auto const &p : x.planes) {
        if (!all_finite(p)) {
          throw NumericalError("langevin: non-finite state at scale " + std::to_string(eps) + " (index " +
                               std::to_string(ii) + "), inner step " + std::to_string(t) + ", step size " +
                               std::to_string(eta));
        }
      }
    }
    if (trace) {
      trace->scale.push_back(eps);
      trace->mean_update_norm.push_back(update_sum / double(cfg.inner_steps));
    }
  }
  return x;
}

} // namespace detail

/// Runs cfg.chains chains from X̃₀ ~ ε_L·N(0, I), sweeping the scales from
/// largest to smallest with T inner steps each, and returns their average.
inline ContrastStack langevin_reconstruct(ScoreFn const &score, DataGradFn const &data_grad,
                                          NoiseSchedule const &sched, SamplerConfig const &cfg, StackShape const &sh,
                                          SamplerTrace *trace = nullptr)
{
  cfg.validate();
  require(sched.size() >= 1, "langevin: empty schedule");
  require(sh.contrasts >= 1 && sh.rows >= 1 && sh.cols >= 1, "langevin: empty image shape");
  ContrastStack acc(sh.contrasts, sh.rows, sh.cols);
  for (std::size_t c = 0; c < cfg.chains; ++c) {
    Rng rng(split_seed(cfg.seed, c));
    acc += detail::one_chain(score, data_grad, sched, cfg, sh, rng, c == 0 ? trace : nullptr);
  }
  if (cfg.chains > 1) { acc *= 1.0 / double(cfg.chains); }
  return acc;
}

/// The MRI likelihood gradient Aᴴ(A X − Y).
inline DataGradFn mri_data_grad(KSpaceSet const &y, CoilSensitivities const &s)
{
  return [&y, &s](ContrastStack const &x) {
    KSpaceSet r = encode(x, s, y.mask);
    for (std::size_t j = 0; j < r.contrasts(); ++j) {
      for (std::size_t c = 0; c < r.coils(); ++c) { r.data[j][c] -= y.data[j][c]; }
    }
    return adjoint(r, s, y.mask);
  };
}

/// Score of N(m, τ²I) smoothed by N(0, ε²I): −(X̃ − m)/(τ² + ε²).
inline ScoreFn analytic_gaussian_score(ContrastStack m, double tau)
{
  require(tau > 0, "analytic_gaussian_score: tau must be positive");
  return [m = std::move(m), tau](ContrastStack const &x, double eps) {
    ContrastStack d = x - m;
    d *= -1.0 / (tau * tau + eps * eps);
    return d;
  };
}

/// A trained network as a sampler score function.
inline ScoreFn network_score(ScoreNet const &net)
{
  return [&net](ContrastStack const &x, double eps) { return score_eval(net, x, eps); };
}

/// Independent reconstruction of every slice, each with its own seed
/// split from cfg.seed; output order follows the input order.
inline std::vector<ContrastStack> reconstruct_volume(ScoreFn const &score, std::vector<DataGradFn> const &slices,
                                                     NoiseSchedule const &sched, SamplerConfig const &cfg,
                                                     StackShape const &sh, std::vector<std::uint64_t> const &slice_ids)
{
  require(slices.size() == slice_ids.size(), "reconstruct_volume: one id per slice required");
  std::vector<ContrastStack> out;
  for (std::size_t k = 0; k < slices.size(); ++k) {
    SamplerConfig c = cfg;
    c.seed = split_seed(cfg.seed, slice_ids[k]);
    out.push_back(langevin_reconstruct(score, slices[k], sched, c, sh));
  }
  return out;
}

} // namespace ssjdm
