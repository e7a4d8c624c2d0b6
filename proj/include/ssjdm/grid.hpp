#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace ssjdm {

using cplx = std::complex<double>;

/// Dense 2D array stored row-major. The carrier for images, k-space planes,
/// masks and parameter maps.
template <typename T>
class Grid
{
public:
  using value_type = T;

  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill)
  {
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T &operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  T const &operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T &operator[](std::size_t i) { return data_[i]; }
  T const &operator[](std::size_t i) const { return data_[i]; }

  std::span<T> span() { return data_; }
  std::span<T const> span() const { return data_; }
  std::vector<T> &vec() { return data_; }
  std::vector<T> const &vec() const { return data_; }

  bool same_shape(Grid const &o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  template <typename U>
  bool same_shape(Grid<U> const &o) const
  {
    return rows_ == o.rows() && cols_ == o.cols();
  }

  bool operator==(Grid const &o) const = default;

  Grid &operator+=(Grid const &o)
  {
    check_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) { data_[i] += o.data_[i]; }
    return *this;
  }
  Grid &operator-=(Grid const &o)
  {
    check_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) { data_[i] -= o.data_[i]; }
    return *this;
  }
  template <typename S>
  Grid &operator*=(S s)
  {
    for (auto &v : data_) { v *= s; }
    return *this;
  }

  friend Grid operator+(Grid a, Grid const &b) { return a += b; }
  friend Grid operator-(Grid a, Grid const &b) { return a -= b; }
  template <typename S>
  friend Grid operator*(S s, Grid a)
  {
    return a *= s;
  }

private:
  void check_shape(Grid const &o) const
  {
    if (!same_shape(o)) {
      throw ConfigError("grid shape mismatch: " + std::to_string(rows_) + "x" + std::to_string(cols_) +
                        " vs " + std::to_string(o.rows_) + "x" + std::to_string(o.cols_));
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using ComplexGrid = Grid<cplx>;
using RealGrid = Grid<double>;
using MaskGrid = Grid<std::uint8_t>;

/// Σ conj(a)·b
inline cplx inner(ComplexGrid const &a, ComplexGrid const &b)
{
  require(a.same_shape(b), "inner: shape mismatch");
  cplx acc{};
  for (std::size_t i = 0; i < a.size(); ++i) { acc += std::conj(a[i]) * b[i]; }
  return acc;
}

inline double norm_sq(ComplexGrid const &g)
{
  double acc = 0;
  for (auto const &v : g.vec()) { acc += std::norm(v); }
  return acc;
}

inline double norm(ComplexGrid const &g) { return std::sqrt(norm_sq(g)); }

inline double norm_sq(RealGrid const &g)
{
  double acc = 0;
  for (auto v : g.vec()) { acc += v * v; }
  return acc;
}

inline double norm(RealGrid const &g) { return std::sqrt(norm_sq(g)); }

inline bool all_finite(ComplexGrid const &g)
{
  for (auto const &v : g.vec()) {
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) { return false; }
  }
  return true;
}

inline ComplexGrid delta_at(std::size_t rows, std::size_t cols, std::size_t r, std::size_t c, cplx v = 1.0)
{
  ComplexGrid g(rows, cols);
  g(r, c) = v;
  return g;
}

/// Elementwise a ∘ b
inline ComplexGrid hadamard(ComplexGrid const &a, ComplexGrid const &b)
{
  require(a.same_shape(b), "hadamard: shape mismatch");
  ComplexGrid out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) { out[i] = a[i] * b[i]; }
  return out;
}

inline ComplexGrid apply_mask(ComplexGrid g, MaskGrid const &m)
{
  require(g.same_shape(m), "apply_mask: shape mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!m[i]) { g[i] = 0.0; }
  }
  return g;
}

inline std::size_t count_ones(MaskGrid const &m)
{
  std::size_t n = 0;
  for (auto v : m.vec()) { n += v ? 1 : 0; }
  return n;
}

} // namespace ssjdm
