#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "grid.hpp"

namespace ssjdm {

/// SplitMix64 finalizer; used only to derive child seeds.
constexpr std::uint64_t mix64(std::uint64_t z)
{
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Child seed for stream `stream` of `root`. Every worker, phantom, mask and
/// training run derives its generator through this rule, so a whole
/// experiment traces back to one root seed.
constexpr std::uint64_t split_seed(std::uint64_t root, std::uint64_t stream)
{
  return mix64(root ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

/// Reproducible generator. mt19937_64 is fully specified by the standard; the
/// distributions below are implemented here because std::*_distribution output
/// is implementation-defined.
class Rng
{
public:
  explicit Rng(std::uint64_t seed)
      : seed_(seed), engine_(seed)
  {
  }

  std::uint64_t seed() const { return seed_; }
  Rng split(std::uint64_t stream) const { return Rng(split_seed(seed_, stream)); }

  std::uint64_t bits() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n)
  {
    // rejection sampling keeps the draw unbiased
    std::uint64_t const limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t v;
    do { v = engine_(); } while (v >= limit);
    return std::size_t(v % n);
  }

  /// Standard normal via Box–Muller; the second variate is cached.
  double normal()
  {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do { u1 = uniform(); } while (u1 <= 0.0);
    double const u2 = uniform();
    double const r = std::sqrt(-2.0 * std::log(u1));
    double const a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Real and imaginary parts each standard normal.
  cplx complex_normal() { return {normal(), normal()}; }

  template <typename It>
  void shuffle(It first, It last)
  {
    auto const n = std::size_t(last - first);
    for (std::size_t i = n; i > 1; --i) { std::swap(first[i - 1], first[index(i)]); }
  }

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0;
};

inline ComplexGrid random_grid(std::size_t rows, std::size_t cols, Rng &rng)
{
  ComplexGrid g(rows, cols);
  for (auto &v : g.vec()) { v = rng.complex_normal(); }
  return g;
}

} // namespace ssjdm
