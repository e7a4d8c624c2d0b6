#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "autograd.hpp"

namespace ssjdm {

struct AdamConfig
{
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double floor = 1e-8;
};

struct AdamState
{
  AdamConfig config;
  std::vector<ag::Tensor> m;
  std::vector<ag::Tensor> v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(AdamConfig c)
      : config(c)
  {
  }
};

/// One bias-corrected Adam update of every tensor in `params`.
inline void adam_step(std::vector<ag::Tensor> &params, std::vector<ag::Tensor> const &grads, AdamState &st)
{
  require(params.size() == grads.size(), "adam_step: params/grads count mismatch");
  if (st.m.empty()) {
    for (auto const &p : params) {
      st.m.emplace_back(p.shape);
      st.v.emplace_back(p.shape);
    }
  }
  require(st.m.size() == params.size(), "adam_step: state does not match parameter set");
  ++st.step;
  auto const &c = st.config;
  double const bc1 = 1.0 - std::pow(c.beta1, double(st.step));
  double const bc2 = 1.0 - std::pow(c.beta2, double(st.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto &p = params[t].data;
    auto const &g = grads[t].data;
    require(p.size() == g.size() && p.size() == st.m[t].numel(), "adam_step: shape mismatch");
    auto &m = st.m[t].data;
    auto &v = st.v[t].data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1 - c.beta2) * g[i] * g[i];
      double const mh = m[i] / bc1, vh = v[i] / bc2;
      p[i] -= c.lr * mh / (std::sqrt(vh) + c.floor);
    }
  }
}

} // namespace ssjdm
