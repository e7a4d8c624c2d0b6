#include <gtest/gtest.h>

#include "ssjdm/adam.hpp"
#include "ssjdm/autograd.hpp"
#include "ssjdm/rng.hpp"

using namespace ssjdm;
using ag::Graph;
using ag::Tensor;
using ag::Var;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng &rng, double scale = 1.0)
{
  Tensor t(std::move(shape));
  for (auto &v : t.data) { v = scale * rng.normal(); }
  return t;
}

// Nested-loop same-padding convolution, independent of the kernel code.
Tensor naive_conv(Tensor const &x, Tensor const &w, Tensor const &b)
{
  std::size_t const ci = x.dim(0), h = x.dim(1), wd = x.dim(2), co = w.dim(0), k = w.dim(2);
  long const p = long(k / 2);
  Tensor out({co, h, wd});
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < wd; ++xx) {
        double s = b[o];
        for (std::size_t i = 0; i < ci; ++i) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              long const sy = long(y) + long(ky) - p, sx = long(xx) + long(kx) - p;
              if (sy < 0 || sx < 0 || sy >= long(h) || sx >= long(wd)) { continue; }
              s += w.data[((o * ci + i) * k + ky) * k + kx] * x.data[(i * h + std::size_t(sy)) * wd + std::size_t(sx)];
            }
          }
        }
        out.data[(o * h + y) * wd + xx] = s;
      }
    }
  }
  return out;
}

double dot(Tensor const &a, Tensor const &b)
{
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) { s += a.data[i] * b.data[i]; }
  return s;
}

} // namespace

TEST(Forward, ReluClampsNegatives)
{
  Graph g;
  Var x = g.input(Tensor({2}, {-1.0, 2.0}));
  EXPECT_EQ(g.value(g.relu(x)).data, (std::vector<double>{0.0, 2.0}));
}

TEST(Forward, IdentityKernelIsIdentity)
{
  Rng rng(1);
  Graph g;
  Tensor img = random_tensor({1, 7, 5}, rng);
  Tensor w({1, 1, 3, 3});
  w.data[4] = 1.0;
  Var y = g.conv2d(g.input(img), g.input(w));
  EXPECT_EQ(g.value(y).data, img.data);
}

TEST(Forward, TwoLayerConvReluMatchesNestedLoops)
{
  Rng rng(2);
  Tensor x = random_tensor({3, 6, 5}, rng);
  Tensor w1 = random_tensor({4, 3, 3, 3}, rng, 0.3), b1 = random_tensor({4}, rng, 0.1);
  Tensor w2 = random_tensor({2, 4, 5, 5}, rng, 0.2), b2 = random_tensor({2}, rng, 0.1);
  Graph g;
  Var h = g.relu(g.conv2d(g.input(x), g.input(w1), g.input(b1)));
  Var y = g.conv2d(h, g.input(w2), g.input(b2));

  Tensor h_ref = naive_conv(x, w1, b1);
  for (auto &v : h_ref.data) { v = std::max(v, 0.0); }
  Tensor const y_ref = naive_conv(h_ref, w2, b2);
  ASSERT_EQ(g.value(y).shape, y_ref.shape);
  for (std::size_t i = 0; i < y_ref.numel(); ++i) { EXPECT_NEAR(g.value(y).data[i], y_ref.data[i], 1e-12); }
}

TEST(Forward, ShapeMismatchIsRejected)
{
  Graph g;
  EXPECT_THROW(g.add(g.input(Tensor({2})), g.input(Tensor({3}))), ConfigError);
  EXPECT_THROW(g.conv2d(g.input(Tensor({2, 4, 4})), g.input(Tensor({1, 3, 3, 3}))), ConfigError);
  EXPECT_THROW(g.fft(g.input(Tensor({3, 4, 4}))), ConfigError);
}

TEST(Forward, DeterministicBitwise)
{
  Rng rng(3);
  Tensor x = random_tensor({4, 8, 8}, rng), w = random_tensor({6, 4, 3, 3}, rng), b = random_tensor({6}, rng);
  auto run = [&] {
    Graph g;
    Var y = g.ifft(g.fft(g.relu(g.conv2d(g.input(x), g.input(w), g.input(b)))));
    return g.value(y);
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, SumSquaresGradient)
{
  Graph g;
  Var x = g.parameter(Tensor({2}, {1.0, 2.0}));
  g.backward(g.sum_squares(x));
  EXPECT_EQ(g.grad(x).data, (std::vector<double>{2.0, 4.0}));
}

TEST(Backward, SumSquaresThroughFftIsTwoX)
{
  Rng rng(4);
  Tensor x0 = random_tensor({4, 6, 5}, rng);
  Graph g;
  Var x = g.parameter(x0);
  g.backward(g.sum_squares(g.fft(x)));
  for (std::size_t i = 0; i < x0.numel(); ++i) { EXPECT_NEAR(g.grad(x).data[i], 2 * x0.data[i], 1e-12); }
}

TEST(Backward, NonScalarLossIsRejected)
{
  Graph g;
  Var x = g.parameter(Tensor({3}, 1.0));
  EXPECT_THROW(g.backward(g.relu(x)), ConfigError);
}

TEST(Backward, LinearOpsSatisfyAdjointIdentity)
{
  // Lᴴy is read off the backward rule: ∇ₓ ½‖L x + y‖² at x = 0 equals Lᴴ y.
  Rng rng(5);
  Tensor const w = random_tensor({4, 2, 3, 3}, rng);
  Tensor keep({2, 5, 6});
  for (auto &v : keep.data) { v = rng.uniform() < 0.5 ? 1.0 : 0.0; }
  struct Case
  {
    char const *name;
    std::vector<std::size_t> in_shape;
    std::function<Var(Graph &, Var)> op;
  };
  std::vector<Case> cases{
      {"fft", {2, 5, 6}, [](Graph &g, Var x) { return g.fft(x); }},
      {"ifft", {2, 5, 6}, [](Graph &g, Var x) { return g.ifft(x); }},
      {"conv", {2, 5, 6}, [&](Graph &g, Var x) { return g.conv2d(x, g.input(w)); }},
      {"mask-project", {2, 5, 6}, [&](Graph &g, Var x) { return g.mask_project(x, keep, Tensor(keep.shape)); }},
  };
  for (auto const &c : cases) {
    Tensor const x = random_tensor(c.in_shape, rng);
    Graph fwd;
    Tensor const lx = fwd.value(c.op(fwd, fwd.input(x)));
    Tensor const y = random_tensor(lx.shape, rng);

    Graph g;
    Var xv = g.parameter(Tensor(c.in_shape));
    Var lv = c.op(g, xv);
    g.backward(g.scale(g.sum_squares(g.add(lv, g.input(y))), 0.5));
    Tensor const lhy = g.grad(xv);
    double const lhs = dot(lx, y), rhs = dot(x, lhy);
    EXPECT_LT(std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300), 1e-10) << c.name;
  }
}

TEST(GradCheck, DenseLayerIsExact)
{
  Rng rng(6);
  Tensor const x = random_tensor({5}, rng);
  auto build = [&](Graph &g, std::vector<Var> const &p) { return g.sum_squares(g.dense(g.input(x), p[0], p[1])); };
  auto res = ag::grad_check(build, {random_tensor({3, 5}, rng), random_tensor({3}, rng)}, 1e-4);
  EXPECT_LT(res.max_rel_error, 1e-9);
  EXPECT_EQ(res.checked, 18U);
}

TEST(GradCheck, TwoBlockNetworkMatchesCentralDifferences)
{
  Rng rng(7);
  Tensor const x = random_tensor({2, 6, 6}, rng);
  // conv+relu, fft, projection, ifft, conv+relu, residual: a miniature
  // version of one unrolled reconstruction block, stacked twice.
  Tensor keep({2, 6, 6}), off({2, 6, 6});
  for (std::size_t i = 0; i < keep.numel(); ++i) {
    keep.data[i] = rng.uniform() < 0.6 ? 1.0 : 0.0;
    off.data[i] = keep.data[i] ? 0.0 : rng.normal();
  }
  auto build = [&](Graph &g, std::vector<Var> const &p) {
    Var h = g.input(x);
    for (int blk = 0; blk < 2; ++blk) {
      Var a = g.relu(g.conv2d(h, p[0 + 4 * blk], p[1 + 4 * blk]));
      Var u = g.add(h, g.conv2d(a, p[2 + 4 * blk]));
      Var k = g.mask_project(g.fft(u), keep, off);
      h = g.mul(g.ifft(k), g.softplus(p[3 + 4 * blk]));
    }
    return g.sum_squares(h);
  };
  std::vector<Tensor> params;
  for (int blk = 0; blk < 2; ++blk) {
    params.push_back(random_tensor({3, 2, 3, 3}, rng, 0.4));
    params.push_back(random_tensor({3}, rng, 0.1));
    params.push_back(random_tensor({2, 3, 3, 3}, rng, 0.3));
    params.push_back(random_tensor({2, 6, 6}, rng, 0.5));
  }
  auto res = ag::grad_check(build, params, 1e-5);
  ASSERT_FALSE(res.near_kink);
  EXPECT_LT(res.max_rel_error, 1e-6);
}

TEST(GradCheck, ReluAtKinkIsFlagged)
{
  auto build = [](Graph &g, std::vector<Var> const &p) { return g.sum_squares(g.relu(p[0])); };
  EXPECT_TRUE(ag::grad_check(build, {Tensor({2}, {0.0, 1.0})}, 1e-6).near_kink);
  EXPECT_FALSE(ag::grad_check(build, {Tensor({2}, {0.5, 1.0})}, 1e-6).near_kink);
  EXPECT_THROW(ag::grad_check(build, {Tensor({1}, 1.0)}, 0.0), ConfigError);
}

TEST(Adam, FirstStepMovesByLearningRate)
{
  std::vector<Tensor> p{Tensor({1}, 3.0)};
  AdamState st(AdamConfig{.lr = 1e-3});
  adam_step(p, {Tensor({1}, 0.7)}, st);
  EXPECT_NEAR(p[0][0], 3.0 - 1e-3, 1e-10);
  EXPECT_EQ(st.step, 1U);

  std::vector<Tensor> q{Tensor({1}, -2.0)};
  AdamState st2(AdamConfig{.lr = 1e-3});
  adam_step(q, {Tensor({1}, -50.0)}, st2);
  EXPECT_NEAR(q[0][0], -2.0 + 1e-3, 1e-10);
}

TEST(Adam, ZeroGradientOnlyAdvancesCounter)
{
  std::vector<Tensor> p{Tensor({3}, {1.0, -2.0, 0.5})};
  auto const before = p[0];
  AdamState st;
  adam_step(p, {Tensor({3})}, st);
  EXPECT_EQ(p[0], before);
  EXPECT_EQ(st.step, 1U);
}

TEST(Adam, ThreeStepsOnQuadraticMatchReferenceRecurrence)
{
  // f(x) = (x − 3)², gradient 2(x − 3); recurrence written out by hand.
  double const lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double x = 0, m = 0, v = 0;
  std::vector<double> trace;
  for (int t = 1; t <= 3; ++t) {
    double const gr = 2 * (x - 3);
    m = b1 * m + (1 - b1) * gr;
    v = b2 * v + (1 - b2) * gr * gr;
    x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    trace.push_back(x);
  }
  std::vector<Tensor> p{Tensor({1}, 0.0)};
  AdamState st(AdamConfig{.lr = lr});
  for (int t = 0; t < 3; ++t) {
    adam_step(p, {Tensor({1}, 2 * (p[0][0] - 3))}, st);
    EXPECT_DOUBLE_EQ(p[0][0], trace[std::size_t(t)]);
  }
}
