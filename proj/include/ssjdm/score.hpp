#pragma once

// Noise schedule, noise-conditional score network and denoising score
// matching.
//
// The network is a plain stack of 3×3 conv+relu layers on contrast-resolved
// channels (2j = re, 2j+1 = im). Its raw output h estimates −z for a draw
// X̃ = X + ε·z, and the score is s(X̃, ε) = h/ε. Optionally log ε is fed as one
// extra constant input channel. In independent mode a single two-channel
// network is shared by all contrasts and sees one contrast at a time.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adam.hpp"
#include "autograd.hpp"
#include "mri.hpp"

namespace ssjdm {

/// ε₁ < … < ε_L, geometric. Index 0 holds ε₁.
struct NoiseSchedule
{
  std::vector<double> sigmas;

  std::size_t size() const { return sigmas.size(); }
  double smallest() const { return sigmas.front(); }
  double largest() const { return sigmas.back(); }
  double operator[](std::size_t i) const { return sigmas[i]; }

  /// Index of `eps` in the schedule; throws if it is not one of the scales.
  std::size_t index_of(double eps) const
  {
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
      if (std::abs(sigmas[i] - eps) <= 1e-12 * sigmas[i]) { return i; }
    }
    throw ConfigError("noise scale " + std::to_string(eps) + " is not in the schedule");
  }
};

inline NoiseSchedule make_noise_schedule(double eps1, double epsL, std::size_t L)
{
  require(eps1 > 0 && eps1 < epsL, "make_noise_schedule: need 0 < eps1 < epsL");
  require(L >= 2, "make_noise_schedule: need at least two scales");
  NoiseSchedule s;
  double const ratio = std::log(epsL / eps1);
  for (std::size_t i = 0; i < L; ++i) { s.sigmas.push_back(eps1 * std::exp(ratio * double(i) / double(L - 1))); }
  s.sigmas.front() = eps1;
  s.sigmas.back() = epsL;
  return s;
}

// Layout ------------------------------------------------------------------------

inline ag::Tensor stack_tensor(ContrastStack const &x)
{
  std::size_t const hw = x.rows() * x.cols();
  ag::Tensor t({2 * x.contrasts(), x.rows(), x.cols()});
  for (std::size_t j = 0; j < x.contrasts(); ++j) {
    for (std::size_t i = 0; i < hw; ++i) {
      t.data[2 * j * hw + i] = x[j][i].real();
      t.data[(2 * j + 1) * hw + i] = x[j][i].imag();
    }
  }
  return t;
}

inline ContrastStack tensor_stack(ag::Tensor const &t)
{
  require(t.shape.size() == 3 && t.dim(0) % 2 == 0, "tensor_stack: expected [2·N_mc, H, W]");
  std::size_t const n = t.dim(0) / 2, h = t.dim(1), w = t.dim(2), hw = h * w;
  ContrastStack x(n, h, w);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < hw; ++i) { x[j][i] = {t.data[2 * j * hw + i], t.data[(2 * j + 1) * hw + i]}; }
  }
  return x;
}

// Network -------------------------------------------------------------------------

enum class ScoreMode
{
  Joint,
  Independent,
};

struct ScoreConfig
{
  ScoreMode mode = ScoreMode::Joint;
  std::size_t width = 32;
  std::size_t depth = 6; ///< conv+relu layers before the output conv
  std::size_t kernel = 3;
  bool scale_channel = false; ///< append log ε as an input channel
  bool skip = false;          ///< add a 1×1 linear path from the input to the output
  /// Joint mode only: one network shared across contrasts, fed its own
  /// contrast plus the whole stack, instead of a single 2·N_mc-channel net.
  bool shared = false;
  double lr = 1e-4;
  std::size_t steps = 2000;
  std::size_t batch = 1;
  double ema_rate = 0.999;
  bool ema_warmup = true; ///< use min(rate, (1+t)/(10+t)) early in training
  std::uint64_t seed = 1;

  void validate() const
  {
    require(width >= 1 && depth >= 1, "score: width and depth must be >= 1");
    require(kernel % 2 == 1, "score: kernel size must be odd");
    require(lr > 0, "score: learning rate must be positive");
    require(batch >= 1, "score: batch must be >= 1");
    require(ema_rate >= 0 && ema_rate < 1, "score: EMA rate must lie in [0, 1)");
  }
};

struct ScoreNet
{
  ScoreConfig config;
  NoiseSchedule schedule;
  std::size_t contrasts = 0;
  std::vector<ag::Tensor> params; ///< (w, b) per layer, output layer last, then the skip weight if any
  std::vector<ag::Tensor> ema;

  /// True when the network runs once per contrast.
  bool per_contrast() const { return config.mode == ScoreMode::Independent || config.shared; }
  /// Output channels of one network application.
  std::size_t io_channels() const { return per_contrast() ? 2 : 2 * contrasts; }
  /// Image input channels of one network application.
  std::size_t in_channels() const { return config.mode == ScoreMode::Joint && config.shared ? 2 + 2 * contrasts : io_channels(); }
};

inline ScoreNet build_score_net(ScoreConfig const &cfg, NoiseSchedule schedule, std::size_t contrasts)
{
  cfg.validate();
  require(contrasts >= 1, "build_score_net: need at least one contrast");
  require(schedule.size() >= 2, "build_score_net: schedule needs at least two scales");
  ScoreNet net{cfg, std::move(schedule), contrasts, {}, {}};
  Rng rng(split_seed(cfg.seed, 0x5C));
  std::size_t const io = net.io_channels(), k = cfg.kernel;
  std::size_t const in0 = net.in_channels() + (cfg.scale_channel ? 1 : 0);
  std::size_t in = in0;
  auto layer = [&](std::size_t out, std::size_t fan_in, double gain) {
    ag::Tensor w({out, fan_in, k, k});
    double const a = gain * std::sqrt(6.0 / double(fan_in * k * k));
    for (auto &v : w.data) { v = rng.uniform(-a, a); }
    net.params.push_back(std::move(w));
    net.params.emplace_back(std::vector<std::size_t>{out});
  };
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    layer(cfg.width, in, 1.0);
    in = cfg.width;
  }
  layer(io, in, 0.1);
  if (cfg.skip) { net.params.emplace_back(std::vector<std::size_t>{io, in0, 1, 1}); }
  net.ema = net.params;
  return net;
}

namespace detail {

inline ag::Var score_graph(ag::Graph &g, ScoreNet const &net, std::vector<ag::Var> const &p, ag::Tensor x, double eps)
{
  if (net.config.scale_channel) {
    std::size_t const c = x.dim(0), hw = x.dim(1) * x.dim(2);
    x.shape[0] = c + 1;
    x.data.resize((c + 1) * hw, std::log(eps));
  }
  ag::Var const in = g.input(std::move(x));
  ag::Var h = in;
  std::size_t const layers = p.size() / 2;
  for (std::size_t l = 0; l + 1 < layers; ++l) { h = g.relu(g.conv2d(h, p[2 * l], p[2 * l + 1])); }
  h = g.conv2d(h, p[2 * layers - 2], p[2 * layers - 1]);
  if (net.config.skip) { h = g.add(h, g.conv2d(in, p.back())); }
  return h;
}

inline ag::Tensor channel_slice(ag::Tensor const &x, std::size_t c0, std::size_t n)
{
  std::size_t const hw = x.dim(1) * x.dim(2);
  ag::Tensor out({n, x.dim(1), x.dim(2)});
  std::copy(x.data.begin() + std::ptrdiff_t(c0 * hw), x.data.begin() + std::ptrdiff_t((c0 + n) * hw), out.data.begin());
  return out;
}

/// Network input for application `a`: the whole stack, one contrast, or one
/// contrast followed by the whole stack.
inline ag::Tensor app_input(ScoreNet const &net, ag::Tensor const &x, std::size_t a)
{
  if (!net.per_contrast()) { return x; }
  ag::Tensor own = channel_slice(x, 2 * a, 2);
  if (net.config.mode == ScoreMode::Independent) { return own; }
  own.shape[0] += x.dim(0);
  own.data.insert(own.data.end(), x.data.begin(), x.data.end());
  return own;
}

} // namespace detail

/// Raw network output h(X̃, ε) (≈ −z) with the given weight set.
inline ag::Tensor score_raw(ScoreNet const &net, std::vector<ag::Tensor> const &weights, ag::Tensor const &x, double eps)
{
  require(x.dim(0) == 2 * net.contrasts, "score: input channel count differs from the network");
  auto run = [&](ag::Tensor in) {
    ag::Graph g;
    std::vector<ag::Var> p;
    for (auto const &t : weights) { p.push_back(g.input(t)); }
    return g.value(detail::score_graph(g, net, p, std::move(in), eps));
  };
  if (!net.per_contrast()) { return run(x); }
  ag::Tensor out(x.shape);
  std::size_t const hw = x.dim(1) * x.dim(2);
  for (std::size_t j = 0; j < net.contrasts; ++j) {
    ag::Tensor const o = run(detail::app_input(net, x, j));
    std::copy(o.data.begin(), o.data.end(), out.data.begin() + std::ptrdiff_t(2 * j * hw));
  }
  return out;
}

/// s_φ(X̃, ε) = h/ε using the EMA weights. ε must be one of the schedule's scales.
inline ContrastStack score_eval(ScoreNet const &net, ContrastStack const &x, double eps)
{
  net.schedule.index_of(eps);
  ag::Tensor h = score_raw(net, net.ema, stack_tensor(x), eps);
  for (auto &v : h.data) { v /= eps; }
  return tensor_stack(h);
}

// Loss ------------------------------------------------------------------------------

struct DsmLoss
{
  double loss = 0;
  std::vector<ag::Tensor> grads;
};

/// (1/N_pix)·‖ε·s(X + ε z, ε) + z‖² = (1/N_pix)·‖h + z‖² for one frozen
/// (X, scale index, z) draw, with gradients for the live weights. In
/// per-contrast networks `only_contrast` restricts the sum to one contrast.
inline DsmLoss dsm_loss(ScoreNet const &net, ContrastStack const &x, std::size_t scale_index, ag::Tensor const &z,
                        bool with_grad = true, std::optional<std::size_t> only_contrast = std::nullopt)
{
  require(scale_index < net.schedule.size(), "dsm_loss: scale index out of range");
  double const eps = net.schedule[scale_index];
  ag::Tensor const clean = stack_tensor(x);
  require(z.shape == clean.shape, "dsm_loss: noise shape differs from data");
  ag::Tensor noisy = clean;
  for (std::size_t i = 0; i < noisy.numel(); ++i) { noisy.data[i] += eps * z.data[i]; }
  double const inv_pix = 1.0 / double(x.rows() * x.cols());

  DsmLoss out;
  for (auto const &p : net.params) { out.grads.emplace_back(p.shape); }
  std::size_t const apps = net.per_contrast() ? net.contrasts : 1;
  std::size_t const per = net.io_channels();
  for (std::size_t a = 0; a < apps; ++a) {
    if (apps > 1 && only_contrast && *only_contrast != a) { continue; }
    ag::Graph g;
    std::vector<ag::Var> p;
    for (auto const &t : net.params) { p.push_back(with_grad ? g.parameter(t) : g.input(t)); }
    ag::Tensor const in = detail::app_input(net, noisy, a);
    ag::Tensor const zz = apps == 1 ? z : detail::channel_slice(z, per * a, per);
    ag::Var const h = detail::score_graph(g, net, p, in, eps);
    ag::Var const loss = g.scale(g.sum_squares(g.add(h, g.input(zz))), inv_pix);
    out.loss += g.value(loss)[0];
    if (with_grad) {
      g.backward(loss);
      for (std::size_t i = 0; i < p.size(); ++i) {
        auto const &gr = g.grad(p[i]);
        for (std::size_t k = 0; k < gr.numel(); ++k) { out.grads[i].data[k] += gr.data[k]; }
      }
    }
  }
  return out;
}

inline ag::Tensor draw_like(ContrastStack const &x, Rng &rng)
{
  ag::Tensor z({2 * x.contrasts(), x.rows(), x.cols()});
  for (auto &v : z.data) { v = rng.normal(); }
  return z;
}

// Training --------------------------------------------------------------------------

/// Draws one clean training image stack.
using StackSource = std::function<ContrastStack(Rng &)>;

inline void ema_update(std::vector<ag::Tensor> &ema, std::vector<ag::Tensor> const &live, double rate)
{
  for (std::size_t t = 0; t < ema.size(); ++t) {
    for (std::size_t i = 0; i < ema[t].numel(); ++i) {
      ema[t].data[i] = rate * ema[t].data[i] + (1 - rate) * live[t].data[i];
    }
  }
}

struct ScoreTrainResult
{
  ScoreNet net;
  std::vector<double> loss_trace; ///< per step, averaged over the batch
};

inline ScoreTrainResult train_score(StackSource const &source, NoiseSchedule schedule, std::size_t contrasts,
                                    ScoreConfig const &cfg,
                                    std::function<void(std::size_t, double)> const &on_step = {})
{
  ScoreTrainResult res{build_score_net(cfg, std::move(schedule), contrasts), {}};
  auto &net = res.net;
  Rng rng(split_seed(cfg.seed, 0x5D));
  AdamState adam(AdamConfig{.lr = cfg.lr});
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<ag::Tensor> grads;
    double loss = 0;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      ContrastStack const x = source(rng);
      require(x.contrasts() == contrasts, "train_score: source returned the wrong contrast count");
      std::size_t const i = rng.index(net.schedule.size());
      ag::Tensor const z = draw_like(x, rng);
      // The per-contrast model sees one random contrast per draw, which keeps
      // its cost per step close to one joint evaluation.
      std::optional<std::size_t> only;
      if (net.per_contrast()) { only = rng.index(contrasts); }
      DsmLoss l = dsm_loss(net, x, i, z, true, only);
      if (!std::isfinite(l.loss)) {
        throw NumericalError("train_score: non-finite loss at step " + std::to_string(step) + ", scale " +
                             std::to_string(net.schedule[i]));
      }
      loss += l.loss;
      if (grads.empty()) {
        grads = std::move(l.grads);
      } else {
        for (std::size_t t = 0; t < grads.size(); ++t) {
          for (std::size_t k = 0; k < grads[t].numel(); ++k) { grads[t].data[k] += l.grads[t].data[k]; }
        }
      }
    }
    for (auto &gt : grads) {
      for (auto &v : gt.data) { v /= double(cfg.batch); }
    }
    adam_step(net.params, grads, adam);
    double const t = double(step);
    double const rate = cfg.ema_warmup ? std::min(cfg.ema_rate, (1 + t) / (10 + t)) : cfg.ema_rate;
    ema_update(net.ema, net.params, rate);
    res.loss_trace.push_back(loss / double(cfg.batch));
    if (on_step) { on_step(step, res.loss_trace.back()); }
  }
  return res;
}

} // namespace ssjdm
