#pragma once

// Centered orthonormal 2D DFT on top of FFTW. Plans are created once per
// (rows, cols, direction) under a lock; execution is thread-safe. Planning
// with FFTW_ESTIMATE | FFTW_UNALIGNED makes the chosen algorithm independent
// of timing and buffer alignment, so results are bitwise reproducible.

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

#include "grid.hpp"

namespace ssjdm {

namespace detail {

inline fftw_plan fft_plan(std::size_t rows, std::size_t cols, bool inverse)
{
  static std::mutex mu;
  static std::map<std::tuple<std::size_t, std::size_t, bool>, fftw_plan> plans;
  std::lock_guard<std::mutex> lock(mu);
  auto &p = plans[{rows, cols, inverse}];
  if (!p) {
    ComplexGrid scratch(rows, cols);
    auto *buf = reinterpret_cast<fftw_complex *>(scratch.span().data());
    p = fftw_plan_dft_2d(int(rows), int(cols), buf, buf, inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                         FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!p) { throw NumericalError("fft2c: FFTW could not plan a " + std::to_string(rows) + "x" + std::to_string(cols) + " transform"); }
  }
  return p;
}

/// out[(r + dr) mod R, (c + dc) mod C] = in[r, c]
inline ComplexGrid circshift(ComplexGrid const &in, std::size_t dr, std::size_t dc)
{
  std::size_t const R = in.rows(), C = in.cols();
  ComplexGrid out(R, C);
  for (std::size_t r = 0; r < R; ++r) {
    std::size_t const rr = (r + dr) % R;
    for (std::size_t c = 0; c < C; ++c) { out(rr, (c + dc) % C) = in(r, c); }
  }
  return out;
}

inline ComplexGrid centered_2d(ComplexGrid const &g, bool inverse)
{
  require(g.rows() >= 1 && g.cols() >= 1, "fft2c: empty grid");
  if (!all_finite(g)) { throw NumericalError("fft2c: non-finite input"); }
  std::size_t const R = g.rows(), C = g.cols();
  // ifftshift moves the center index ⌊N/2⌋ to 0; fftshift moves it back.
  ComplexGrid x = circshift(g, R - R / 2, C - C / 2);
  auto *buf = reinterpret_cast<fftw_complex *>(x.span().data());
  fftw_execute_dft(fft_plan(R, C, inverse), buf, buf);
  x *= 1.0 / std::sqrt(double(R * C));
  return circshift(x, R / 2, C / 2);
}

} // namespace detail

/// Centered, orthonormal 2D DFT (DC at index ⌊rows/2⌋, ⌊cols/2⌋).
inline ComplexGrid fft2c(ComplexGrid const &g) { return detail::centered_2d(g, false); }

/// Exact inverse of fft2c.
inline ComplexGrid ifft2c(ComplexGrid const &g) { return detail::centered_2d(g, true); }

} // namespace ssjdm
