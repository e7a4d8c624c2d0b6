#pragma once

// Minimal define-by-run reverse-mode differentiation.
//
// A Graph records nodes as ops are called; each node holds its value and, for
// nodes that need one, a gradient filled by backward(). Nodes are appended in
// evaluation order, so reverse creation order is a valid reverse topological
// order and every node is visited exactly once.
//
// Complex data inside networks travel as paired real channels: channel 2k is
// the real part and 2k+1 the imaginary part of complex plane k.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "fft.hpp"
#include <cblas.h>

#include "parallel.hpp"

namespace ssjdm::ag {

struct Tensor
{
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
      : shape(std::move(s)), data(count(shape), fill)
  {
  }
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d))
  {
    require(data.size() == count(shape), "Tensor: data size does not match shape");
  }

  static std::size_t count(std::vector<std::size_t> const &s)
  {
    return std::accumulate(s.begin(), s.end(), std::size_t(1), std::multiplies<>());
  }

  std::size_t numel() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  double &operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  bool operator==(Tensor const &) const = default;
};

inline std::string shape_str(std::vector<std::size_t> const &s)
{
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) { out += (i ? "," : "") + std::to_string(s[i]); }
  return out + "]";
}

enum class OpKind
{
  Input,
  Parameter,
  Conv2d,
  Dense,
  Relu,
  Add,
  Mul,
  Scale,
  Softplus,
  Fft,
  Ifft,
  MaskProject,
  ReduceSumSquares,
};

struct Var
{
  std::size_t id = 0;
};

// Kernels ---------------------------------------------------------------------
//
// Shapes: activations [C, H, W]; conv weight [Cout, Cin, K, K] with odd K;
// bias [Cout]. Same padding with zero fill, stride 1.

/// log(1 + e^v) without overflow.
inline double softplus_value(double v) { return v > 30 ? v : std::log1p(std::exp(v)); }

namespace kernel {

/// Dot product with eight fixed partial sums, so the compiler can vectorise
/// it while the summation order stays identical from run to run.
inline double dot(double const *a, double const *b, std::size_t n)
{
  double acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) { acc[l] += a[i + l] * b[i + l]; }
  }
  double s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
  for (; i < n; ++i) { s += a[i] * b[i]; }
  return s;
}

inline void blas_threads()
{
  static bool const once = [] {
    openblas_set_num_threads(int(thread_count()));
    return true;
  }();
  (void)once;
}

/// Zero-padded patch matrix of a [C, H, W] tensor: row (c·k + ky)·k + kx,
/// column y·W + x holds in[c, y + ky − k/2, x + kx − k/2].
inline std::vector<double> im2col(Tensor const &in, std::size_t k)
{
  std::size_t const cin = in.dim(0), h = in.dim(1), wd = in.dim(2), hw = h * wd;
  std::ptrdiff_t const pad = std::ptrdiff_t(k / 2);
  std::vector<double> cols(cin * k * k * hw, 0.0);
  for (std::size_t ci = 0; ci < cin; ++ci) {
    double const *src0 = in.data.data() + ci * hw;
    for (std::size_t ky = 0; ky < k; ++ky) {
      std::ptrdiff_t const dy = std::ptrdiff_t(ky) - pad;
      std::size_t const y0 = std::size_t(std::max<std::ptrdiff_t>(0, -dy));
      std::size_t const y1 = std::size_t(std::min<std::ptrdiff_t>(std::ptrdiff_t(h), std::ptrdiff_t(h) - dy));
      for (std::size_t kx = 0; kx < k; ++kx) {
        std::ptrdiff_t const dx = std::ptrdiff_t(kx) - pad;
        std::size_t const x0 = std::size_t(std::max<std::ptrdiff_t>(0, -dx));
        std::size_t const x1 = std::size_t(std::min<std::ptrdiff_t>(std::ptrdiff_t(wd), std::ptrdiff_t(wd) - dx));
        double *row = cols.data() + ((ci * k + ky) * k + kx) * hw;
        for (std::size_t y = y0; y < y1; ++y) {
          double const *src = src0 + std::ptrdiff_t(y) * std::ptrdiff_t(wd) + dy * std::ptrdiff_t(wd) + dx;
          std::copy(src + x0, src + x1, row + y * wd + x0);
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col, accumulated into `out`.
inline void col2im_add(std::vector<double> const &cols, std::size_t k, Tensor &out)
{
  std::size_t const cin = out.dim(0), h = out.dim(1), wd = out.dim(2), hw = h * wd;
  std::ptrdiff_t const pad = std::ptrdiff_t(k / 2);
  for (std::size_t ci = 0; ci < cin; ++ci) {
    double *dst0 = out.data.data() + ci * hw;
    for (std::size_t ky = 0; ky < k; ++ky) {
      std::ptrdiff_t const dy = std::ptrdiff_t(ky) - pad;
      std::size_t const y0 = std::size_t(std::max<std::ptrdiff_t>(0, -dy));
      std::size_t const y1 = std::size_t(std::min<std::ptrdiff_t>(std::ptrdiff_t(h), std::ptrdiff_t(h) - dy));
      for (std::size_t kx = 0; kx < k; ++kx) {
        std::ptrdiff_t const dx = std::ptrdiff_t(kx) - pad;
        std::size_t const x0 = std::size_t(std::max<std::ptrdiff_t>(0, -dx));
        std::size_t const x1 = std::size_t(std::min<std::ptrdiff_t>(std::ptrdiff_t(wd), std::ptrdiff_t(wd) - dx));
        double const *row = cols.data() + ((ci * k + ky) * k + kx) * hw;
        for (std::size_t y = y0; y < y1; ++y) {
          double *dst = dst0 + std::ptrdiff_t(y) * std::ptrdiff_t(wd) + dy * std::ptrdiff_t(wd) + dx;
          for (std::size_t x = x0; x < x1; ++x) { dst[x] += row[y * wd + x]; }
        }
      }
    }
  }
}

// Same-padded convolution as a matrix product: out[co, ·] = W[co, ·] · cols.
inline void conv2d_forward(Tensor const &in, Tensor const &w, Tensor const *b, Tensor &out)
{
  blas_threads();
  std::size_t const h = in.dim(1), wd = in.dim(2), hw = h * wd;
  std::size_t const cout = w.dim(0), k = w.dim(2), kk = w.dim(1) * k * k;
  out = Tensor({cout, h, wd});
  if (b) {
    for (std::size_t co = 0; co < cout; ++co) { std::fill_n(out.data.data() + co * hw, hw, (*b)[co]); }
  }
  std::vector<double> const cols = im2col(in, k);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(cout), int(hw), int(kk), 1.0, w.data.data(), int(kk),
              cols.data(), int(hw), 1.0, out.data.data(), int(hw));
}

inline void conv2d_backward_input(Tensor const &gout, Tensor const &w, Tensor &gin)
{
  blas_threads();
  std::size_t const cout = w.dim(0), k = w.dim(2), kk = w.dim(1) * k * k;
  std::size_t const hw = gout.dim(1) * gout.dim(2);
  std::vector<double> gcols(kk * hw);
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(kk), int(hw), int(cout), 1.0, w.data.data(), int(kk),
              gout.data.data(), int(hw), 0.0, gcols.data(), int(hw));
  col2im_add(gcols, k, gin);
}

inline void conv2d_backward_weight(Tensor const &gout, Tensor const &in, Tensor &gw, Tensor *gb)
{
  blas_threads();
  std::size_t const cout = gw.dim(0), k = gw.dim(2), kk = gw.dim(1) * k * k;
  std::size_t const hw = in.dim(1) * in.dim(2);
  if (gb) {
    for (std::size_t co = 0; co < cout; ++co) {
      double const *g = gout.data.data() + co * hw;
      (*gb)[co] += std::accumulate(g, g + hw, 0.0);
    }
  }
  std::vector<double> const cols = im2col(in, k);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(cout), int(kk), int(hw), 1.0, gout.data.data(), int(hw),
              cols.data(), int(hw), 1.0, gw.data.data(), int(kk));
}

/// Applies fft2c/ifft2c to every (re, im) channel pair of a [2K, H, W] tensor.
inline Tensor fft_pairs(Tensor const &x, bool inverse)
{
  std::size_t const c = x.dim(0), h = x.dim(1), w = x.dim(2), hw = h * w;
  Tensor out(x.shape);
  parallel_for(c / 2, [&](std::size_t p) {
    ComplexGrid g(h, w);
    for (std::size_t i = 0; i < hw; ++i) { g[i] = {x.data[2 * p * hw + i], x.data[(2 * p + 1) * hw + i]}; }
    g = inverse ? ifft2c(std::move(g)) : fft2c(std::move(g));
    for (std::size_t i = 0; i < hw; ++i) {
      out.data[2 * p * hw + i] = g[i].real();
      out.data[(2 * p + 1) * hw + i] = g[i].imag();
    }
  });
  return out;
}

} // namespace kernel

// Graph -----------------------------------------------------------------------

class Graph
{
public:
  struct Node
  {
    OpKind kind;
    std::vector<std::size_t> parents;
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(Graph &, Node &)> backward;
  };

  Var input(Tensor t) { return push(OpKind::Input, {}, std::move(t), false); }
  Var parameter(Tensor t) { return push(OpKind::Parameter, {}, std::move(t), true); }

  Tensor const &value(Var v) const { return nodes_.at(v.id).value; }
  Tensor const &grad(Var v) const { return nodes_.at(v.id).grad; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  std::size_t size() const { return nodes_.size(); }

  /// Smallest |pre-activation| seen by any relu in this graph.
  double min_relu_abs() const { return min_relu_abs_; }

  Var conv2d(Var x, Var w) { return conv2d_impl(x, w, nullptr); }
  Var conv2d(Var x, Var w, Var b) { return conv2d_impl(x, w, &b); }

  /// y = W·vec(x) + b with W [out, in].
  Var dense(Var x, Var w, Var b)
  {
    auto const &xv = value(x), &wv = value(w), &bv = value(b);
    require(wv.shape.size() == 2 && wv.dim(1) == xv.numel() && bv.numel() == wv.dim(0),
            "dense: shape mismatch " + shape_str(wv.shape) + " x " + shape_str(xv.shape));
    std::size_t const no = wv.dim(0), ni = wv.dim(1);
    Tensor out({no});
    for (std::size_t o = 0; o < no; ++o) {
      double s = bv[o];
      for (std::size_t i = 0; i < ni; ++i) { s += wv.data[o * ni + i] * xv.data[i]; }
      out[o] = s;
    }
    return push(OpKind::Dense, {x.id, w.id, b.id}, std::move(out), any_grad({x, w, b}), [no, ni](Graph &g, Node &n) {
      auto const &go = n.grad;
      Node &nx = g.nodes_[n.parents[0]], &nw = g.nodes_[n.parents[1]], &nb = g.nodes_[n.parents[2]];
      if (nx.needs_grad) {
        for (std::size_t i = 0; i < ni; ++i) {
          double s = 0;
          for (std::size_t o = 0; o < no; ++o) { s += nw.value.data[o * ni + i] * go[o]; }
          nx.grad[i] += s;
        }
      }
      if (nw.needs_grad) {
        for (std::size_t o = 0; o < no; ++o) {
          for (std::size_t i = 0; i < ni; ++i) { nw.grad.data[o * ni + i] += go[o] * nx.value.data[i]; }
        }
      }
      if (nb.needs_grad) {
        for (std::size_t o = 0; o < no; ++o) { nb.grad[o] += go[o]; }
      }
    });
  }

  Var relu(Var x)
  {
    Tensor out = value(x);
    for (auto &v : out.data) {
      min_relu_abs_ = std::min(min_relu_abs_, std::abs(v));
      v = v > 0 ? v : 0.0;
    }
    return push(OpKind::Relu, {x.id}, std::move(out), any_grad({x}), [](Graph &g, Node &n) {
      Node &nx = g.nodes_[n.parents[0]];
      if (!nx.needs_grad) { return; }
      for (std::size_t i = 0; i < n.grad.numel(); ++i) {
        if (nx.value.data[i] > 0) { nx.grad.data[i] += n.grad.data[i]; }
      }
    });
  }

  Var add(Var a, Var b)
  {
    same_shape(a, b, "add");
    Tensor out = value(a);
    auto const &bv = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) { out.data[i] += bv.data[i]; }
    return push(OpKind::Add, {a.id, b.id}, std::move(out), any_grad({a, b}), [](Graph &g, Node &n) {
      for (auto pid : n.parents) {
        Node &p = g.nodes_[pid];
        if (!p.needs_grad) { continue; }
        for (std::size_t i = 0; i < n.grad.numel(); ++i) { p.grad.data[i] += n.grad.data[i]; }
      }
    });
  }

  Var mul(Var a, Var b)
  {
    same_shape(a, b, "mul");
    Tensor out = value(a);
    auto const &bv = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) { out.data[i] *= bv.data[i]; }
    return push(OpKind::Mul, {a.id, b.id}, std::move(out), any_grad({a, b}), [](Graph &g, Node &n) {
      Node &na = g.nodes_[n.parents[0]], &nb = g.nodes_[n.parents[1]];
      for (std::size_t i = 0; i < n.grad.numel(); ++i) {
        if (na.needs_grad) { na.grad.data[i] += n.grad.data[i] * nb.value.data[i]; }
        if (nb.needs_grad) { nb.grad.data[i] += n.grad.data[i] * na.value.data[i]; }
      }
    });
  }

  Var scale(Var a, double s)
  {
    Tensor out = value(a);
    for (auto &v : out.data) { v *= s; }
    return push(OpKind::Scale, {a.id}, std::move(out), any_grad({a}), [s](Graph &g, Node &n) {
      Node &na = g.nodes_[n.parents[0]];
      if (!na.needs_grad) { return; }
      for (std::size_t i = 0; i < n.grad.numel(); ++i) { na.grad.data[i] += s * n.grad.data[i]; }
    });
  }

  /// log(1 + e^x), evaluated stably.
  Var softplus(Var a)
  {
    Tensor out = value(a);
    for (auto &v : out.data) { v = softplus_value(v); }
    return push(OpKind::Softplus, {a.id}, std::move(out), any_grad({a}), [](Graph &g, Node &n) {
      Node &na = g.nodes_[n.parents[0]];
      if (!na.needs_grad) { return; }
      for (std::size_t i = 0; i < n.grad.numel(); ++i) {
        na.grad.data[i] += n.grad.data[i] / (1.0 + std::exp(-na.value.data[i]));
      }
    });
  }

  /// Centered orthonormal FFT of each (re, im) channel pair. Adjoint = ifft.
  Var fft(Var x) { return fft_impl(x, false); }
  Var ifft(Var x) { return fft_impl(x, true); }

  /// keep ∘ x + offset with constant tensors. With keep = 1 − M′ and
  /// offset = Y′ this is the data-consistency projection.
  Var mask_project(Var x, Tensor keep, Tensor offset)
  {
    auto const &xv = value(x);
    require(keep.shape == xv.shape && offset.shape == xv.shape,
            "mask_project: shape mismatch " + shape_str(xv.shape));
    Tensor out(xv.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) { out.data[i] = keep.data[i] * xv.data[i] + offset.data[i]; }
    return push(OpKind::MaskProject, {x.id}, std::move(out), any_grad({x}),
                [keep = std::move(keep)](Graph &g, Node &n) {
                  Node &nx = g.nodes_[n.parents[0]];
                  if (!nx.needs_grad) { return; }
                  for (std::size_t i = 0; i < n.grad.numel(); ++i) { nx.grad.data[i] += keep.data[i] * n.grad.data[i]; }
                });
  }

  Var sum_squares(Var x)
  {
    double s = 0;
    for (auto v : value(x).data) { s += v * v; }
    return push(OpKind::ReduceSumSquares, {x.id}, Tensor({1}, s), any_grad({x}), [](Graph &g, Node &n) {
      Node &nx = g.nodes_[n.parents[0]];
      if (!nx.needs_grad) { return; }
      double const go = n.grad.data[0];
      for (std::size_t i = 0; i < nx.value.numel(); ++i) { nx.grad.data[i] += 2.0 * go * nx.value.data[i]; }
    });
  }

  /// Reverse sweep from a scalar loss. Gradients accumulate into every node
  /// that needs one; call once per graph.
  void backward(Var loss)
  {
    Node &root = nodes_.at(loss.id);
    if (root.value.numel() != 1) {
      throw ConfigError("backward: loss must be scalar, got shape " + shape_str(root.value.shape));
    }
    for (std::size_t i = 0; i <= loss.id; ++i) {
      if (nodes_[i].needs_grad) { nodes_[i].grad = Tensor(nodes_[i].value.shape); }
    }
    root.grad = Tensor({1}, 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node &n = nodes_[i];
      if (n.needs_grad && n.backward) { n.backward(*this, n); }
    }
  }


private:
  Var push(OpKind kind, std::vector<std::size_t> parents, Tensor value, bool needs_grad,
           std::function<void(Graph &, Node &)> bw = {})
  {
    for (auto v : value.data) {
      if (!std::isfinite(v)) {
        throw NumericalError("autograd: non-finite value produced by op " + std::to_string(int(kind)));
      }
    }
    nodes_.push_back(Node{kind, std::move(parents), std::move(value), {}, needs_grad, std::move(bw)});
    return Var{nodes_.size() - 1};
  }

  bool any_grad(std::initializer_list<Var> vs) const
  {
    for (auto v : vs) {
      if (nodes_.at(v.id).needs_grad) { return true; }
    }
    return false;
  }

  void same_shape(Var a, Var b, char const *op) const
  {
    if (value(a).shape != value(b).shape) {
      throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(value(a).shape) + " vs " +
                        shape_str(value(b).shape));
    }
  }

  Var conv2d_impl(Var x, Var w, Var const *b)
  {
    auto const &xv = value(x), &wv = value(w);
    require(xv.shape.size() == 3, "conv2d: input must be [C,H,W], got " + shape_str(xv.shape));
    require(wv.shape.size() == 4 && wv.dim(1) == xv.dim(0) && wv.dim(2) == wv.dim(3) && wv.dim(2) % 2 == 1,
            "conv2d: weight " + shape_str(wv.shape) + " incompatible with input " + shape_str(xv.shape));
    if (b) { require(value(*b).numel() == wv.dim(0), "conv2d: bias size mismatch"); }
    Tensor out;
    kernel::conv2d_forward(xv, wv, b ? &value(*b) : nullptr, out);
    std::vector<std::size_t> parents{x.id, w.id};
    bool ng = any_grad({x, w});
    if (b) {
      parents.push_back(b->id);
      ng = ng || nodes_[b->id].needs_grad;
    }
    return push(OpKind::Conv2d, std::move(parents), std::move(out), ng, [](Graph &g, Node &n) {
      Node &nx = g.nodes_[n.parents[0]], &nw = g.nodes_[n.parents[1]];
      Node *nb = n.parents.size() > 2 ? &g.nodes_[n.parents[2]] : nullptr;
      if (nx.needs_grad) { kernel::conv2d_backward_input(n.grad, nw.value, nx.grad); }
      bool const want_b = nb && nb->needs_grad;
      if (nw.needs_grad || want_b) {
        Tensor scratch_w;
        Tensor &gw = nw.needs_grad ? nw.grad : (scratch_w = Tensor(nw.value.shape));
        kernel::conv2d_backward_weight(n.grad, nx.value, gw, want_b ? &nb->grad : nullptr);
      }
    });
  }

  Var fft_impl(Var x, bool inverse)
  {
    auto const &xv = value(x);
    require(xv.shape.size() == 3 && xv.dim(0) % 2 == 0, "fft: input must be [2K,H,W], got " + shape_str(xv.shape));
    Tensor out = kernel::fft_pairs(xv, inverse);
    return push(inverse ? OpKind::Ifft : OpKind::Fft, {x.id}, std::move(out), any_grad({x}),
                [inverse](Graph &g, Node &n) {
                  Node &nx = g.nodes_[n.parents[0]];
                  if (!nx.needs_grad) { return; }
                  Tensor const back = kernel::fft_pairs(n.grad, !inverse);
                  for (std::size_t i = 0; i < back.numel(); ++i) { nx.grad.data[i] += back.data[i]; }
                });
  }

  std::vector<Node> nodes_;
  double min_relu_abs_ = std::numeric_limits<double>::infinity();
};

// Finite-difference checking ---------------------------------------------------

struct GradCheckResult
{
  double max_rel_error = 0;
  std::size_t checked = 0;
  /// Some relu saw a pre-activation within `step` of its kink; central
  /// differences are not meaningful there and the point should be excluded.
  bool near_kink = false;
};

/// Builds the graph through `build(graph, param_vars) -> loss`, then compares
/// the backward gradient of every parameter element with a central difference.
/// Relative error per element is |a − f| / max(|a|, |f|, 1e-4·max_j|f_j|, 1e-300).
template <typename Build>
GradCheckResult grad_check(Build &&build, std::vector<Tensor> params, double step)
{
  require(step > 0, "grad_check: step must be positive");
  GradCheckResult res;
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> vars;
    for (auto const &p : params) { vars.push_back(g.parameter(p)); }
    Var loss = build(g, vars);
    g.backward(loss);
    for (auto v : vars) { analytic.push_back(g.grad(v)); }
    res.near_kink = g.min_relu_abs() <= step;
  }
  auto eval = [&]() {
    Graph g;
    std::vector<Var> vars;
    for (auto const &p : params) { vars.push_back(g.parameter(p)); }
    return g.value(build(g, vars))[0];
  };
  std::vector<std::vector<double>> fd(params.size());
  double fmax = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].numel(); ++i) {
      double const orig = params[p].data[i];
      params[p].data[i] = orig + step;
      double const up = eval();
      params[p].data[i] = orig - step;
      double const dn = eval();
      params[p].data[i] = orig;
      double const f = (up - dn) / (2 * step);
      fd[p].push_back(f);
      fmax = std::max(fmax, std::abs(f));
    }
  }
  double const floor = std::max(1e-4 * fmax, 1e-300);
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].numel(); ++i) {
      double const a = analytic[p].data[i], f = fd[p][i];
      double const err = std::abs(a - f) / std::max({std::abs(a), std::abs(f), floor});
      res.max_rel_error = std::max(res.max_rel_error, err);
      ++res.checked;
    }
  }
  return res;
}

} // namespace ssjdm::ag
