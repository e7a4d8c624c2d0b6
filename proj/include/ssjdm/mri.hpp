#pragma once

// Cartesian multi-coil, multi-contrast encoding A = M F S and its adjoint,
// sampling masks, the secondary split used for self-supervision, and the
// k-space data-consistency projection.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include "fft.hpp"
#include "rng.hpp"

namespace ssjdm {

/// N_mc complex image planes of identical geometry.
struct ContrastStack
{
  std::vector<ComplexGrid> planes;

  ContrastStack() = default;
  ContrastStack(std::size_t contrasts, std::size_t rows, std::size_t cols)
      : planes(contrasts, ComplexGrid(rows, cols))
  {
  }
  explicit ContrastStack(std::vector<ComplexGrid> p)
      : planes(std::move(p))
  {
    check();
  }

  std::size_t contrasts() const { return planes.size(); }
  std::size_t rows() const { return planes.empty() ? 0 : planes[0].rows(); }
  std::size_t cols() const { return planes.empty() ? 0 : planes[0].cols(); }
  ComplexGrid &operator[](std::size_t j) { return planes[j]; }
  ComplexGrid const &operator[](std::size_t j) const { return planes[j]; }

  bool same_shape(ContrastStack const &o) const
  {
    return contrasts() == o.contrasts() && rows() == o.rows() && cols() == o.cols();
  }
  void check() const
  {
    for (auto const &p : planes) { require(p.same_shape(planes[0]), "ContrastStack: non-uniform geometry"); }
  }

  ContrastStack &operator+=(ContrastStack const &o)
  {
    require(same_shape(o), "ContrastStack: shape mismatch");
    for (std::size_t j = 0; j < planes.size(); ++j) { planes[j] += o.planes[j]; }
    return *this;
  }
  ContrastStack &operator-=(ContrastStack const &o)
  {
    require(same_shape(o), "ContrastStack: shape mismatch");
    for (std::size_t j = 0; j < planes.size(); ++j) { planes[j] -= o.planes[j]; }
    return *this;
  }
  template <typename S>
  ContrastStack &operator*=(S s)
  {
    for (auto &p : planes) { p *= s; }
    return *this;
  }
  friend ContrastStack operator+(ContrastStack a, ContrastStack const &b) { return a += b; }
  friend ContrastStack operator-(ContrastStack a, ContrastStack const &b) { return a -= b; }
  template <typename S>
  friend ContrastStack operator*(S s, ContrastStack a)
  {
    return a *= s;
  }
  bool operator==(ContrastStack const &) const = default;
};

inline double norm_sq(ContrastStack const &x)
{
  double s = 0;
  for (auto const &p : x.planes) { s += norm_sq(p); }
  return s;
}
inline double norm(ContrastStack const &x) { return std::sqrt(norm_sq(x)); }

inline cplx inner(ContrastStack const &a, ContrastStack const &b)
{
  require(a.same_shape(b), "inner: stack shape mismatch");
  cplx s{};
  for (std::size_t j = 0; j < a.contrasts(); ++j) { s += inner(a[j], b[j]); }
  return s;
}

struct CoilSensitivities
{
  std::vector<ComplexGrid> maps;

  std::size_t coils() const { return maps.size(); }
  std::size_t rows() const { return maps.empty() ? 0 : maps[0].rows(); }
  std::size_t cols() const { return maps.empty() ? 0 : maps[0].cols(); }
};

/// One binary plane per contrast plus the fully sampled center extent.
struct SamplingMask
{
  std::vector<MaskGrid> planes;
  std::size_t center_rows = 0;
  std::size_t center_cols = 0;
  // provenance, kept for the sidecar manifest
  double target_accel = 1;
  double density_exponent = 2;
  std::uint64_t seed = 0;
  std::vector<double> base_radius;

  std::size_t contrasts() const { return planes.size(); }
  std::size_t rows() const { return planes.empty() ? 0 : planes[0].rows(); }
  std::size_t cols() const { return planes.empty() ? 0 : planes[0].cols(); }

  double achieved_accel(std::size_t j) const { return double(planes[j].size()) / double(count_ones(planes[j])); }
};

/// Measured k-space, indexed [contrast][coil], with its mask and the
/// measurement-noise standard deviation per real component.
struct KSpaceSet
{
  std::vector<std::vector<ComplexGrid>> data;
  SamplingMask mask;
  double noise_std = 0;

  std::size_t contrasts() const { return data.size(); }
  std::size_t coils() const { return data.empty() ? 0 : data[0].size(); }
  std::size_t rows() const { return data.empty() ? 0 : data[0][0].rows(); }
  std::size_t cols() const { return data.empty() ? 0 : data[0][0].cols(); }
};

inline std::pair<std::size_t, std::size_t> kspace_center(std::size_t rows, std::size_t cols)
{
  return {rows / 2, cols / 2};
}

/// True when (r, c) lies in the centered cr×cc calibration block.
inline bool in_center(std::size_t r, std::size_t c, std::size_t rows, std::size_t cols, std::size_t cr, std::size_t cc)
{
  auto const r0 = rows / 2 - cr / 2, c0 = cols / 2 - cc / 2;
  return r >= r0 && r < r0 + cr && c >= c0 && c < c0 + cc;
}

// Encoding -------------------------------------------------------------------

namespace detail {
inline void check_geometry(ContrastStack const &x, CoilSensitivities const &s, SamplingMask const &m)
{
  require(s.coils() >= 1, "encode: no coils");
  require(x.rows() == s.rows() && x.cols() == s.cols(), "encode: image and sensitivity geometry differ");
  require(m.contrasts() == x.contrasts(), "encode: mask contrast count differs from image stack");
  require(m.rows() == x.rows() && m.cols() == x.cols(), "encode: mask geometry differs from image");
}
} // namespace detail

/// A X: per contrast j and coil c, M_j ∘ fft2c(S_c ∘ x_j).
inline KSpaceSet encode(ContrastStack const &x, CoilSensitivities const &s, SamplingMask const &m)
{
  detail::check_geometry(x, s, m);
  KSpaceSet y;
  y.mask = m;
  y.data.resize(x.contrasts());
  for (std::size_t j = 0; j < x.contrasts(); ++j) {
    for (std::size_t c = 0; c < s.coils(); ++c) {
      y.data[j].push_back(apply_mask(fft2c(hadamard(s.maps[c], x[j])), m.planes[j]));
    }
  }
  return y;
}

/// Aᴴ Y: per contrast, Σ_c conj(S_c) ∘ ifft2c(M ∘ y_c).
inline ContrastStack adjoint(KSpaceSet const &y, CoilSensitivities const &s, SamplingMask const &m)
{
  require(y.contrasts() == m.contrasts() && y.coils() == s.coils(), "adjoint: geometry mismatch");
  require(y.rows() == s.rows() && y.cols() == s.cols(), "adjoint: k-space and sensitivity geometry differ");
  ContrastStack x(y.contrasts(), y.rows(), y.cols());
  for (std::size_t j = 0; j < y.contrasts(); ++j) {
    for (std::size_t c = 0; c < s.coils(); ++c) {
      ComplexGrid const img = ifft2c(apply_mask(y.data[j][c], m.planes[j]));
      auto &dst = x[j];
      auto const &sc = s.maps[c];
      for (std::size_t i = 0; i < dst.size(); ++i) { dst[i] += std::conj(sc[i]) * img[i]; }
    }
  }
  return x;
}

/// Zero-filled reconstruction Aᴴ Y (the mask is implicit in Y's stored zeros).
inline ContrastStack zero_fill(KSpaceSet const &y, CoilSensitivities const &s)
{
  require(y.coils() == s.coils(), "zero_fill: coil count mismatch");
  ContrastStack x(y.contrasts(), y.rows(), y.cols());
  for (std::size_t j = 0; j < y.contrasts(); ++j) {
    for (std::size_t c = 0; c < s.coils(); ++c) {
      ComplexGrid const img = ifft2c(y.data[j][c]);
      auto const &sc = s.maps[c];
      for (std::size_t i = 0; i < img.size(); ++i) { x[j][i] += std::conj(sc[i]) * img[i]; }
    }
  }
  return x;
}

/// (I − M′) ∘ K + Y′. Entries where M′ = 1 take Y′ exactly.
inline ComplexGrid project_dc(ComplexGrid k, MaskGrid const &m, ComplexGrid const &y)
{
  require(k.same_shape(m) && k.same_shape(y), "project_dc: shape mismatch");
  for (std::size_t i = 0; i < k.size(); ++i) {
    if (m[i]) { k[i] = y[i]; }
  }
  return k;
}

/// Coil-wise data-consistency projection of a full k-space set.
inline std::vector<std::vector<ComplexGrid>> project_dc(std::vector<std::vector<ComplexGrid>> k, SamplingMask const &m,
                                                        KSpaceSet const &y)
{
  require(k.size() == y.contrasts(), "project_dc: contrast count mismatch");
  for (std::size_t j = 0; j < k.size(); ++j) {
    require(k[j].size() == y.coils(), "project_dc: coil count mismatch");
    for (std::size_t c = 0; c < k[j].size(); ++c) { k[j][c] = project_dc(std::move(k[j][c]), m.planes[j], y.data[j][c]); }
  }
  return k;
}

/// Replaces the sampled k-space of S·x with the measurements and combines
/// the coils back with Sᴴ. Exact inverse of zero-filling at R = 1.
inline ContrastStack data_consistent(ContrastStack const &x, KSpaceSet const &y, CoilSensitivities const &s)
{
  require(x.contrasts() == y.contrasts() && y.coils() == s.coils(), "data_consistent: geometry mismatch");
  ContrastStack out(x.contrasts(), x.rows(), x.cols());
  for (std::size_t j = 0; j < x.contrasts(); ++j) {
    for (std::size_t c = 0; c < s.coils(); ++c) {
      ComplexGrid k = fft2c(hadamard(s.maps[c], x[j]));
      k = project_dc(std::move(k), y.mask.planes[j], y.data[j][c]);
      ComplexGrid const img = ifft2c(std::move(k));
      for (std::size_t i = 0; i < img.size(); ++i) { out[j][i] += std::conj(s.maps[c][i]) * img[i]; }
    }
  }
  return out;
}

inline cplx inner(KSpaceSet const &a, KSpaceSet const &b)
{
  require(a.contrasts() == b.contrasts() && a.coils() == b.coils(), "inner: k-space shape mismatch");
  cplx s{};
  for (std::size_t j = 0; j < a.contrasts(); ++j) {
    for (std::size_t c = 0; c < a.coils(); ++c) { s += inner(a.data[j][c], b.data[j][c]); }
  }
  return s;
}

inline double norm(KSpaceSet const &y) { return std::sqrt(std::real(inner(y, y))); }

// Sensitivities ----------------------------------------------------------------

/// Smooth simulated receive profiles: Gaussian lobes centered on a ring
/// around the field of view with a gentle linear phase (coil 0 is the phase
/// reference), root-sum-of-squares normalized to 1 at every voxel.
inline CoilSensitivities make_sensitivities(std::size_t coils, std::size_t rows, std::size_t cols, std::uint64_t seed)
{
  require(coils >= 1, "make_sensitivities: need at least one coil");
  require(rows >= 1 && cols >= 1, "make_sensitivities: empty geometry");
  Rng rng(seed);
  CoilSensitivities s;
  double const cy = 0.5 * double(rows - 1), cx = 0.5 * double(cols - 1);
  double const ring = 0.6 * 0.5 * double(std::max(rows, cols));
  double const width = 0.55 * double(std::max(rows, cols));
  double const turn = rng.uniform(0, 2 * std::numbers::pi);
  for (std::size_t c = 0; c < coils; ++c) {
    double const ang = turn + 2 * std::numbers::pi * double(c) / double(coils) + rng.uniform(-0.2, 0.2);
    double const py = cy + ring * std::sin(ang), px = cx + ring * std::cos(ang);
    double const ky = c == 0 ? 0 : rng.uniform(-1, 1) * std::numbers::pi / double(rows);
    double const kx = c == 0 ? 0 : rng.uniform(-1, 1) * std::numbers::pi / double(cols);
    double const ph0 = c == 0 ? 0 : rng.uniform(-std::numbers::pi, std::numbers::pi);
    ComplexGrid m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t q = 0; q < cols; ++q) {
        double const d2 = (double(r) - py) * (double(r) - py) + (double(q) - px) * (double(q) - px);
        double const mag = std::exp(-d2 / (2 * width * width));
        double const ph = ph0 + ky * (double(r) - cy) + kx * (double(q) - cx);
        m(r, q) = std::polar(mag, ph);
      }
    }
    s.maps.push_back(std::move(m));
  }
  for (std::size_t i = 0; i < rows * cols; ++i) {
    double sos = 0;
    for (auto const &m : s.maps) { sos += std::norm(m[i]); }
    double const inv = 1.0 / std::sqrt(sos);
    for (auto &m : s.maps) { m[i] *= inv; }
  }
  return s;
}

// Masks ------------------------------------------------------------------------

/// Exclusion radius of the variable-density rule r(k) = r₀·(1 + d/d_max)^p.
inline double poisson_radius(double r0, double d, double dmax, double p) { return r0 * std::pow(1.0 + d / dmax, p); }

struct PoissonDiscOptions
{
  double accel = 4;
  std::size_t center_rows = 24;
  std::size_t center_cols = 24;
  double density_exponent = 2;
  std::uint64_t seed = 0;
  std::size_t contrasts = 1;
  bool shared = false; ///< one pattern for all contrasts (ablation only)
};

namespace detail {

struct DartResult
{
  MaskGrid mask;
  std::size_t count = 0;
};

/// Dart throwing over a fixed candidate order. A candidate is accepted when
/// every previously accepted non-center point lies at distance ≥ r(candidate).
inline DartResult dart_throw(std::size_t rows, std::size_t cols, std::size_t cr, std::size_t cc,
                             std::vector<std::size_t> const &order, double r0, double p)
{
  DartResult res{MaskGrid(rows, cols), 0};
  auto const [kr, kc] = kspace_center(rows, cols);
  double const dmax = std::hypot(double(std::max(kr, rows - 1 - kr)), double(std::max(kc, cols - 1 - kc)));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (in_center(r, c, rows, cols, cr, cc)) {
        res.mask(r, c) = 1;
        ++res.count;
      }
    }
  }
  // accepted outside-center points, used for the exclusion test; scanned as a
  // list when that is cheaper than the neighbourhood window
  MaskGrid outer(rows, cols);
  std::vector<std::pair<std::ptrdiff_t, std::ptrdiff_t>> accepted;
  for (auto idx : order) {
    std::size_t const r = idx / cols, c = idx % cols;
    double const d = std::hypot(double(r) - double(kr), double(c) - double(kc));
    double const rad = poisson_radius(r0, d, dmax, p);
    double const rad2 = rad * rad;
    auto const reach = std::ptrdiff_t(std::ceil(rad));
    bool ok = true;
    if (double(accepted.size()) < double(2 * reach + 1) * double(2 * reach + 1)) {
      for (auto [rr, qq] : accepted) {
        double const dr = double(rr - std::ptrdiff_t(r)), dc = double(qq - std::ptrdiff_t(c));
        if (dr * dr + dc * dc < rad2) {
          ok = false;
          break;
        }
      }
    } else {
      for (std::ptrdiff_t dr = -reach; dr <= reach && ok; ++dr) {
        for (std::ptrdiff_t dc = -reach; dc <= reach; ++dc) {
          std::ptrdiff_t const rr = std::ptrdiff_t(r) + dr, qq = std::ptrdiff_t(c) + dc;
          if (rr < 0 || qq < 0 || rr >= std::ptrdiff_t(rows) || qq >= std::ptrdiff_t(cols)) { continue; }
          if (outer(std::size_t(rr), std::size_t(qq)) && double(dr * dr + dc * dc) < rad2) {
            ok = false;
            break;
          }
        }
      }
    }
    if (ok) {
      outer(r, c) = 1;
      accepted.emplace_back(std::ptrdiff_t(r), std::ptrdiff_t(c));
      res.mask(r, c) = 1;
      ++res.count;
    }
  }
  return res;
}

inline std::pair<MaskGrid, double> poisson_plane(std::size_t rows, std::size_t cols, PoissonDiscOptions const &o,
                                                 std::uint64_t seed)
{
  std::size_t const total = rows * cols;
  std::size_t const target = std::size_t(std::llround(double(total) / o.accel));
  std::size_t const center = std::min(o.center_rows, rows) * std::min(o.center_cols, cols);
  Rng rng(seed);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < total; ++i) {
    if (!in_center(i / cols, i % cols, rows, cols, o.center_rows, o.center_cols)) { order.push_back(i); }
  }
  rng.shuffle(order.begin(), order.end());
  if (center >= target) {
    MaskGrid m(rows, cols);
    for (std::size_t i = 0; i < total; ++i) { m[i] = in_center(i / cols, i % cols, rows, cols, o.center_rows, o.center_cols); }
    return {m, 0.0};
  }
  // Bisection on r₀: the sampled count falls as the radius grows.
  double lo = 0.0, hi = double(std::max(rows, cols));
  DartResult best = dart_throw(rows, cols, o.center_rows, o.center_cols, order, lo, o.density_exponent);
  double best_r = lo;
  auto err = [&](std::size_t n) { return std::abs(double(n) - double(target)); };
  double const tol = std::max(1.0, 0.002 * double(target));
  for (int it = 0; it < 60 && err(best.count) > tol && hi - lo > 1e-6; ++it) {
    double const mid = 0.5 * (lo + hi);
    DartResult d = dart_throw(rows, cols, o.center_rows, o.center_cols, order, mid, o.density_exponent);
    if (err(d.count) < err(best.count)) {
      best = d;
      best_r = mid;
    }
    if (d.count > target) {
      lo = mid;
    } else if (d.count < target) {
      hi = mid;
    } else {
      break;
    }
  }
  return {std::move(best.mask), best_r};
}

} // namespace detail

/// Variable-density Poisson-disc masks, one independent pattern per contrast
/// unless `shared` is set. The centered calibration block is always sampled.
inline SamplingMask make_poisson_disc_mask(std::size_t rows, std::size_t cols, PoissonDiscOptions const &o)
{
  require(o.accel >= 1, "make_poisson_disc_mask: acceleration must be >= 1");
  require(o.contrasts >= 1, "make_poisson_disc_mask: need at least one contrast");
  require(o.center_rows <= rows && o.center_cols <= cols, "make_poisson_disc_mask: center does not fit in grid");
  SamplingMask m;
  m.center_rows = o.center_rows;
  m.center_cols = o.center_cols;
  m.target_accel = o.accel;
  m.density_exponent = o.density_exponent;
  m.seed = o.seed;
  std::size_t const total = rows * cols;
  if (o.accel == 1.0) {
    m.planes.assign(o.contrasts, MaskGrid(rows, cols, 1));
    m.base_radius.assign(o.contrasts, 0.0);
    return m;
  }
  double const budget = double(total) / o.accel;
  if (double(o.center_rows * o.center_cols) > budget * 1.1) {
    throw ConfigError("make_poisson_disc_mask: fully sampled center alone exceeds the sampling budget for R=" +
                      std::to_string(o.accel));
  }
  for (std::size_t j = 0; j < o.contrasts; ++j) {
    if (o.shared && j > 0) {
      m.planes.push_back(m.planes[0]);
      m.base_radius.push_back(m.base_radius[0]);
      continue;
    }
    auto [plane, r0] = detail::poisson_plane(rows, cols, o, split_seed(o.seed, j));
    m.planes.push_back(std::move(plane));
    m.base_radius.push_back(r0);
  }
  return m;
}

/// Splits each contrast's mask into the consistency part M′ (which always
/// keeps the calibration center) and the loss part M_loss, drawing
/// round(ratio·|M \ center|) loss locations per contrast.
inline std::pair<SamplingMask, SamplingMask> split_mask(SamplingMask const &m, double loss_ratio, std::uint64_t seed)
{
  require(loss_ratio >= 0 && loss_ratio < 1, "split_mask: loss ratio must lie in [0, 1)");
  SamplingMask keep = m, loss = m;
  for (std::size_t j = 0; j < m.contrasts(); ++j) {
    auto const &plane = m.planes[j];
    std::size_t const rows = plane.rows(), cols = plane.cols();
    std::vector<std::size_t> outer;
    for (std::size_t i = 0; i < plane.size(); ++i) {
      if (plane[i] && !in_center(i / cols, i % cols, rows, cols, m.center_rows, m.center_cols)) { outer.push_back(i); }
    }
    Rng rng(split_seed(seed, j));
    rng.shuffle(outer.begin(), outer.end());
    auto const n_loss = std::size_t(std::llround(loss_ratio * double(outer.size())));
    loss.planes[j] = MaskGrid(rows, cols);
    for (std::size_t k = 0; k < n_loss; ++k) {
      keep.planes[j][outer[k]] = 0;
      loss.planes[j][outer[k]] = 1;
    }
  }
  return {std::move(keep), std::move(loss)};
}

/// Restricts a k-space set to a sub-mask (Y′ = M′ Y).
inline KSpaceSet restrict_to(KSpaceSet const &y, SamplingMask const &sub)
{
  KSpaceSet out = y;
  out.mask = sub;
  for (std::size_t j = 0; j < y.contrasts(); ++j) {
    for (auto &g : out.data[j]) { g = apply_mask(std::move(g), sub.planes[j]); }
  }
  return out;
}

} // namespace ssjdm
