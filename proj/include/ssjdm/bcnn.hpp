#pragma once

// Self-supervised Bayesian unrolled reconstruction network.
//
// Each block holds an image-domain module and a k-space module. Both are four
// conv+relu layers followed by a convolution whose weights are Gaussian,
// w = μ + softplus(ρ)·ε, and both act residually. The k-space module ends
// with the projection (1 − M′)·K + Y′ before returning to the image domain.
// Channels are coil-resolved: index (j·N_c + c)·2 + {0 = re, 1 = im}.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adam.hpp"
#include "autograd.hpp"
#include "mri.hpp"

namespace ssjdm {

struct BcnnConfig
{
  std::size_t blocks = 3;
  std::size_t convs = 4; ///< deterministic conv+relu layers per module
  std::size_t width = 16;
  std::size_t kernel = 3;
  double prior_std = 1.0; ///< σ̄
  double init_std = 1e-3; ///< starting posterior std, as a fraction of σ̄
  double gamma1 = 0.5;
  double split_ratio = 0.4;
  double alpha = 0.5; ///< accepted for config compatibility; has no effect
  double lr = 1e-4;
  double kl_scale = -1; ///< weight on the KL term; negative means 1/N_train
  std::size_t epochs = 50;
  std::uint64_t seed = 1;

  void validate() const
  {
    require(blocks >= 1, "bcnn: block count must be >= 1");
    require(convs >= 1, "bcnn: convs per module must be >= 1");
    require(width >= 1, "bcnn: width must be >= 1");
    require(kernel % 2 == 1, "bcnn: kernel size must be odd");
    require(prior_std > 0, "bcnn: prior std must be positive");
    require(init_std > 0, "bcnn: initial posterior std must be positive");
    require(gamma1 > 0, "bcnn: gamma1 must be positive");
    require(split_ratio >= 0 && split_ratio < 1, "bcnn: split ratio must lie in [0, 1)");
    require(lr > 0, "bcnn: learning rate must be positive");
  }
};

/// Inverse of softplus, used to place σ at a chosen starting value.
inline double softplus_inverse(double s) { return s > 30 ? s : std::log(std::expm1(s)); }

using ag::softplus_value;

/// Parameters flattened into one list so a single Adam state covers them.
/// Per module: convs × (w, b), then the Gaussian layer (w_μ, w_ρ, b).
struct BcnnModel
{
  BcnnConfig config;
  std::size_t coils = 0;
  std::size_t contrasts = 0;
  std::vector<ag::Tensor> params;

  std::size_t channels() const { return coils * contrasts * 2; }
  std::size_t per_module() const { return 2 * config.convs + 3; }
  std::size_t modules() const { return 2 * config.blocks; }
  std::size_t module_base(std::size_t m) const { return m * per_module(); }
  std::size_t mu_index(std::size_t m) const { return module_base(m) + 2 * config.convs; }
  std::size_t rho_index(std::size_t m) const { return mu_index(m) + 1; }

  std::size_t gaussian_count() const
  {
    std::size_t n = 0;
    for (std::size_t m = 0; m < modules(); ++m) { n += params[mu_index(m)].numel(); }
    return n;
  }
};

inline BcnnModel build_bcnn(BcnnConfig const &cfg, std::size_t coils, std::size_t contrasts)
{
  cfg.validate();
  require(coils >= 1 && contrasts >= 1, "build_bcnn: need at least one coil and one contrast");
  BcnnModel model{cfg, coils, contrasts, {}};
  std::size_t const ch = model.channels(), w = cfg.width, k = cfg.kernel;
  Rng rng(split_seed(cfg.seed, 0xB0));
  auto uniform_tensor = [&](std::vector<std::size_t> shape, double a) {
    ag::Tensor t(std::move(shape));
    for (auto &v : t.data) { v = rng.uniform(-a, a); }
    return t;
  };
  double const rho0 = softplus_inverse(cfg.init_std * cfg.prior_std);
  for (std::size_t m = 0; m < model.modules(); ++m) {
    std::size_t in = ch;
    for (std::size_t l = 0; l < cfg.convs; ++l) {
      double const fan = double(in * k * k);
      model.params.push_back(uniform_tensor({w, in, k, k}, std::sqrt(6.0 / fan)));
      model.params.emplace_back(std::vector<std::size_t>{w});
      in = w;
    }
    double const fan = double(w * k * k);
    model.params.push_back(uniform_tensor({ch, w, k, k}, 0.1 / std::sqrt(fan)));
    model.params.emplace_back(std::vector<std::size_t>{ch, w, k, k}, rho0);
    model.params.emplace_back(std::vector<std::size_t>{ch});
  }
  return model;
}

/// Standard-normal draws for every Gaussian weight (one tensor per module).
using WeightNoise = std::vector<ag::Tensor>;

inline WeightNoise draw_weight_noise(BcnnModel const &m, Rng &rng)
{
  WeightNoise eps;
  for (std::size_t mod = 0; mod < m.modules(); ++mod) {
    ag::Tensor e(m.params[m.mu_index(mod)].shape);
    for (auto &v : e.data) { v = rng.normal(); }
    eps.push_back(std::move(e));
  }
  return eps;
}

/// θ = μ + σ ⊙ ε for every Gaussian layer, σ = softplus(ρ).
inline std::vector<ag::Tensor> sample_weights(BcnnModel const &m, WeightNoise const &eps)
{
  std::vector<ag::Tensor> out;
  for (std::size_t mod = 0; mod < m.modules(); ++mod) {
    ag::Tensor t = m.params[m.mu_index(mod)];
    auto const &rho = m.params[m.rho_index(mod)];
    for (std::size_t i = 0; i < t.numel(); ++i) { t.data[i] += softplus_value(rho.data[i]) * eps[mod].data[i]; }
    out.push_back(std::move(t));
  }
  return out;
}

// Layout conversion -------------------------------------------------------------

inline ag::Tensor coil_tensor(std::vector<std::vector<ComplexGrid>> const &planes)
{
  std::size_t const nmc = planes.size(), nc = planes[0].size();
  std::size_t const h = planes[0][0].rows(), w = planes[0][0].cols(), hw = h * w;
  ag::Tensor t({nmc * nc * 2, h, w});
  for (std::size_t j = 0; j < nmc; ++j) {
    for (std::size_t c = 0; c < nc; ++c) {
      std::size_t const base = (j * nc + c) * 2 * hw;
      auto const &g = planes[j][c];
      for (std::size_t i = 0; i < hw; ++i) {
        t.data[base + i] = g[i].real();
        t.data[base + hw + i] = g[i].imag();
      }
    }
  }
  return t;
}

inline std::vector<std::vector<ComplexGrid>> coil_planes(ag::Tensor const &t, std::size_t contrasts, std::size_t coils)
{
  std::size_t const h = t.dim(1), w = t.dim(2), hw = h * w;
  require(t.dim(0) == contrasts * coils * 2, "coil_planes: channel count mismatch");
  std::vector<std::vector<ComplexGrid>> out(contrasts);
  for (std::size_t j = 0; j < contrasts; ++j) {
    for (std::size_t c = 0; c < coils; ++c) {
      ComplexGrid g(h, w);
      std::size_t const base = (j * coils + c) * 2 * hw;
      for (std::size_t i = 0; i < hw; ++i) { g[i] = {t.data[base + i], t.data[base + hw + i]}; }
      out[j].push_back(std::move(g));
    }
  }
  return out;
}

/// Mask replicated over coils and the re/im pair, as a 0/1 tensor.
inline ag::Tensor mask_tensor(SamplingMask const &m, std::size_t coils, bool complement = false)
{
  std::size_t const h = m.rows(), w = m.cols(), hw = h * w;
  ag::Tensor t({m.contrasts() * coils * 2, h, w});
  for (std::size_t j = 0; j < m.contrasts(); ++j) {
    for (std::size_t c = 0; c < coils; ++c) {
      for (std::size_t part = 0; part < 2; ++part) {
        std::size_t const base = ((j * coils + c) * 2 + part) * hw;
        for (std::size_t i = 0; i < hw; ++i) { t.data[base + i] = (m.planes[j][i] != 0) != complement ? 1.0 : 0.0; }
      }
    }
  }
  return t;
}

/// Coil-wise zero-filled images ifft2c(y_c) for every contrast.
inline ag::Tensor coil_zero_fill(KSpaceSet const &y)
{
  auto planes = y.data;
  for (auto &row : planes) {
    for (auto &g : row) { g = ifft2c(g); }
  }
  return coil_tensor(planes);
}

/// Σ_c conj(S_c) · x_c per contrast.
inline ContrastStack coil_combine(ag::Tensor const &t, CoilSensitivities const &s, std::size_t contrasts)
{
  auto const planes = coil_planes(t, contrasts, s.coils());
  ContrastStack x(contrasts, s.rows(), s.cols());
  for (std::size_t j = 0; j < contrasts; ++j) {
    for (std::size_t c = 0; c < s.coils(); ++c) {
      for (std::size_t i = 0; i < x[j].size(); ++i) { x[j][i] += std::conj(s.maps[c][i]) * planes[j][c][i]; }
    }
  }
  return x;
}

// Forward ---------------------------------------------------------------------------

/// Network graph on an existing tape. `gaussian` holds one weight Var per
/// module (already sampled). Returns the coil-resolved image output.
inline ag::Var bcnn_graph(ag::Graph &g, BcnnModel const &m, std::vector<ag::Var> const &p,
                          std::vector<ag::Var> const &gaussian, ag::Tensor const &input, ag::Tensor const &keep_c,
                          ag::Tensor const &y_consistent)
{
  auto module = [&](std::size_t mod, ag::Var x) {
    std::size_t const base = m.module_base(mod);
    ag::Var h = x;
    for (std::size_t l = 0; l < m.config.convs; ++l) { h = g.relu(g.conv2d(h, p[base + 2 * l], p[base + 2 * l + 1])); }
    return g.add(x, g.conv2d(h, gaussian[mod], p[m.mu_index(mod) + 2]));
  };
  ag::Var x = g.input(input);
  for (std::size_t b = 0; b < m.config.blocks; ++b) {
    ag::Var const u = module(2 * b, x);
    ag::Var const k = module(2 * b + 1, g.fft(u));
    x = g.ifft(g.mask_project(k, keep_c, y_consistent));
  }
  return x;
}

struct BcnnInputs
{
  ag::Tensor image;      ///< coil-wise zero fill of Y′
  ag::Tensor keep_c;     ///< 1 − M′
  ag::Tensor consistent; ///< Y′ as a tensor
};

inline BcnnInputs make_inputs(KSpaceSet const &y_prime)
{
  return {coil_zero_fill(y_prime), mask_tensor(y_prime.mask, y_prime.coils(), true), coil_tensor(y_prime.data)};
}

/// One forward pass with the Gaussian layers fixed to `weights`
/// (e.g. from sample_weights, or the means for the deterministic network).
inline ag::Tensor bcnn_forward(BcnnModel const &m, std::vector<ag::Tensor> const &weights, BcnnInputs const &in)
{
  ag::Graph g;
  std::vector<ag::Var> p, gw;
  for (auto const &t : m.params) { p.push_back(g.input(t)); }
  for (auto const &t : weights) { gw.push_back(g.input(t)); }
  return g.value(bcnn_graph(g, m, p, gw, in.image, in.keep_c, in.consistent));
}

/// The deterministic network: Gaussian layers replaced by their means.
inline ag::Tensor bcnn_forward_mean(BcnnModel const &m, BcnnInputs const &in)
{
  std::vector<ag::Tensor> mu;
  for (std::size_t mod = 0; mod < m.modules(); ++mod) { mu.push_back(m.params[m.mu_index(mod)]); }
  return bcnn_forward(m, mu, in);
}

// Loss ------------------------------------------------------------------------------

/// One self-supervised training example: the full measurement Y, its
/// consistency/loss split, and the coil maps.
struct BcnnExample
{
  KSpaceSet y;
  SamplingMask keep;
  SamplingMask loss;
  CoilSensitivities sens;
};

inline BcnnExample make_example(KSpaceSet y, CoilSensitivities s, double ratio, std::uint64_t seed)
{
  auto [keep, loss] = split_mask(y.mask, ratio, seed);
  return {std::move(y), std::move(keep), std::move(loss), std::move(s)};
}

/// KL(q‖p) for factorised Gaussians without the constant: (‖μ‖² + ‖σ‖²)/2σ̄² − Σ log(σ/σ̄).
inline double gaussian_kl(BcnnModel const &m)
{
  double const s2 = m.config.prior_std * m.config.prior_std;
  double kl = 0;
  for (std::size_t mod = 0; mod < m.modules(); ++mod) {
    auto const &mu = m.params[m.mu_index(mod)], &rho = m.params[m.rho_index(mod)];
    for (std::size_t i = 0; i < mu.numel(); ++i) {
      double const sig = softplus_value(rho.data[i]);
      kl += (mu.data[i] * mu.data[i] + sig * sig) / (2 * s2) - std::log(sig / m.config.prior_std);
    }
  }
  return kl;
}

struct BcnnLoss
{
  double total = 0;
  double data = 0; ///< mean over draws of (1/2γ₁²)‖M_loss ∘ (F x − Y)‖²
  double kl = 0;   ///< unscaled KL
  std::vector<ag::Tensor> grads;
};

/// total = data + kl_weight·KL. The expectation over q uses one draw per
/// entry of `draws`. Gradients are with respect to every entry of m.params.
inline BcnnLoss bcnn_loss(BcnnModel const &m, BcnnExample const &ex, std::vector<WeightNoise> const &draws,
                          double kl_weight = 1.0, bool with_grad = true)
{
  require(!draws.empty(), "bcnn_loss: need at least one weight draw");
  BcnnLoss out;
  for (auto const &p : m.params) { out.grads.emplace_back(p.shape); }
  BcnnInputs const in = make_inputs(restrict_to(ex.y, ex.keep));
  ag::Tensor const loss_mask = mask_tensor(ex.loss, ex.y.coils());
  ag::Tensor neg_y = coil_tensor(ex.y.data);
  for (std::size_t i = 0; i < neg_y.numel(); ++i) { neg_y.data[i] = -neg_y.data[i] * loss_mask.data[i]; }
  double const scale = 1.0 / (2 * m.config.gamma1 * m.config.gamma1 * double(draws.size()));

  for (auto const &eps : draws) {
    ag::Graph g;
    std::vector<ag::Var> p, gw;
    for (auto const &t : m.params) { p.push_back(with_grad ? g.parameter(t) : g.input(t)); }
    for (std::size_t mod = 0; mod < m.modules(); ++mod) {
      ag::Var const sig = g.softplus(p[m.rho_index(mod)]);
      gw.push_back(g.add(p[m.mu_index(mod)], g.mul(sig, g.input(eps[mod]))));
    }
    ag::Var const x = bcnn_graph(g, m, p, gw, in.image, in.keep_c, in.consistent);
    ag::Var const r = g.mask_project(g.fft(x), loss_mask, neg_y);
    ag::Var const loss = g.scale(g.sum_squares(r), scale);
    out.data += g.value(loss)[0];
    if (with_grad) {
      g.backward(loss);
      for (std::size_t i = 0; i < p.size(); ++i) {
        auto const &gr = g.grad(p[i]);
        for (std::size_t k = 0; k < gr.numel(); ++k) { out.grads[i].data[k] += gr.data[k]; }
      }
    }
  }

  out.kl = gaussian_kl(m);
  out.total = out.data + kl_weight * out.kl;
  if (with_grad && kl_weight != 0) {
    double const s2 = m.config.prior_std * m.config.prior_std;
    for (std::size_t mod = 0; mod < m.modules(); ++mod) {
      auto const &mu = m.params[m.mu_index(mod)], &rho = m.params[m.rho_index(mod)];
      auto &gmu = out.grads[m.mu_index(mod)], &grho = out.grads[m.rho_index(mod)];
      for (std::size_t i = 0; i < mu.numel(); ++i) {
        double const sig = softplus_value(rho.data[i]);
        double const dsig = 1.0 / (1.0 + std::exp(-rho.data[i]));
        gmu.data[i] += kl_weight * mu.data[i] / s2;
        grho.data[i] += kl_weight * (sig / s2 - 1.0 / sig) * dsig;
      }
    }
  }
  return out;
}

/// Data term of the deterministic (mean-weight) network on an example.
inline double bcnn_data_term(BcnnModel const &m, BcnnExample const &ex)
{
  ag::Tensor const x = bcnn_forward_mean(m, make_inputs(restrict_to(ex.y, ex.keep)));
  auto const k = coil_planes(x, ex.y.contrasts(), ex.y.coils());
  double s = 0;
  for (std::size_t j = 0; j < ex.y.contrasts(); ++j) {
    for (std::size_t c = 0; c < ex.y.coils(); ++c) {
      ComplexGrid const kk = fft2c(k[j][c]);
      for (std::size_t i = 0; i < kk.size(); ++i) {
        if (ex.loss.planes[j][i]) { s += std::norm(kk[i] - ex.y.data[j][c][i]); }
      }
    }
  }
  return s / (2 * m.config.gamma1 * m.config.gamma1);
}

// Training --------------------------------------------------------------------------

struct BcnnEpoch
{
  std::size_t epoch = 0;
  double mean_loss = 0;
  double held_out_data = 0; ///< NaN when no held-out example was given
};

struct BcnnTrainResult
{
  BcnnModel model;
  std::vector<BcnnEpoch> history;
  double initial_held_out = 0;
};

/// Adam over single examples in shuffled order, one weight draw per step and
/// the KL scaled by kl_scale (1/N by default). `on_epoch` (optional) sees the model after every epoch.
inline BcnnTrainResult train_bcnn(std::vector<BcnnExample> const &train, BcnnConfig const &cfg,
                                  std::optional<BcnnExample> const &held_out = std::nullopt,
                                  std::function<void(BcnnModel const &, BcnnEpoch const &)> const &on_epoch = {})
{
  require(!train.empty(), "train_bcnn: empty training set");
  BcnnTrainResult res{build_bcnn(cfg, train[0].y.coils(), train[0].y.contrasts()), {}, 0};
  auto &model = res.model;
  Rng rng(split_seed(cfg.seed, 0xB1));
  AdamState adam(AdamConfig{.lr = cfg.lr});
  double const kl_weight = cfg.kl_scale < 0 ? 1.0 / double(train.size()) : cfg.kl_scale;
  res.initial_held_out = held_out ? bcnn_data_term(model, *held_out) : std::nan("");
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) { order[i] = i; }

  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    rng.shuffle(order.begin(), order.end());
    double sum = 0;
    for (auto idx : order) {
      BcnnLoss const l = bcnn_loss(model, train[idx], {draw_weight_noise(model, rng)}, kl_weight);
      if (!std::isfinite(l.total)) {
        throw NumericalError("train_bcnn: non-finite loss at epoch " + std::to_string(e) + ", example " +
                             std::to_string(idx) + " (data " + std::to_string(l.data) + ", kl " +
                             std::to_string(l.kl) + ")");
      }
      sum += l.total;
      adam_step(model.params, l.grads, adam);
    }
    BcnnEpoch ep{e, sum / double(train.size()), held_out ? bcnn_data_term(model, *held_out) : std::nan("")};
    res.history.push_back(ep);
    if (on_epoch) { on_epoch(model, ep); }
  }
  return res;
}

// Reconstruction ----------------------------------------------------------------------

/// n posterior draws f_θ(Y), each projected onto the measurements and
/// coil-combined. Inference uses the full mask M and data Y.
inline std::vector<ContrastStack> bcnn_reconstruct(BcnnModel const &m, KSpaceSet const &y, CoilSensitivities const &s,
                                                   std::size_t n_samples, std::uint64_t seed)
{
  require(n_samples >= 1, "bcnn_reconstruct: need at least one sample");
  require(y.coils() == m.coils && y.contrasts() == m.contrasts, "bcnn_reconstruct: geometry differs from model");
  BcnnInputs const in = make_inputs(y);
  Rng rng(seed);
  std::vector<ContrastStack> out;
  for (std::size_t n = 0; n < n_samples; ++n) {
    ag::Tensor const x = bcnn_forward(m, sample_weights(m, draw_weight_noise(m, rng)), in);
    out.push_back(coil_combine(x, s, y.contrasts()));
  }
  return out;
}

/// Per-voxel standard deviation of the magnitude across samples.
inline std::vector<RealGrid> sample_spread(std::vector<ContrastStack> const &samples)
{
  require(!samples.empty(), "sample_spread: no samples");
  std::vector<RealGrid> out;
  double const n = double(samples.size());
  for (std::size_t j = 0; j < samples[0].contrasts(); ++j) {
    RealGrid sd(samples[0].rows(), samples[0].cols());
    for (std::size_t i = 0; i < sd.size(); ++i) {
      double s = 0, s2 = 0;
      for (auto const &x : samples) {
        double const a = std::abs(x[j][i]);
        s += a;
        s2 += a * a;
      }
      sd[i] = std::sqrt(std::max(0.0, s2 / n - (s / n) * (s / n)));
    }
    out.push_back(std::move(sd));
  }
  return out;
}

} // namespace ssjdm
