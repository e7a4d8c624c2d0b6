#pragma once

// MCMR1 container: the on-disk tensor format shared by every module.
//
//   offset 0   "MCMR1"            5 bytes magic
//   offset 5   dtype code         u8  (1=f32, 2=f64, 3=c64, 4=c128)
//   offset 6   rank               u8  (1..4)
//   offset 7   reserved           u8  (0)
//   offset 8   dims[rank]         u64 little-endian, outermost first
//   then       payload            row-major, little-endian, complex as (re, im)

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "grid.hpp"

namespace ssjdm::mcmr {

static_assert(std::endian::native == std::endian::little, "MCMR1 I/O assumes a little-endian host");

enum class DType : std::uint8_t
{
  F32 = 1,
  F64 = 2,
  C64 = 3,
  C128 = 4,
};

inline bool is_complex(DType t) { return t == DType::C64 || t == DType::C128; }
inline char const *dtype_name(DType t)
{
  switch (t) {
  case DType::F32: return "f32";
  case DType::F64: return "f64";
  case DType::C64: return "c64";
  case DType::C128: return "c128";
  }
  return "?";
}

/// In-memory tensor. Values are always held as doubles; complex tensors keep
/// interleaved (re, im) pairs so values.size() == 2·numel.
struct Tensor
{
  DType dtype = DType::F64;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;

  std::uint64_t numel() const
  {
    std::uint64_t n = 1;
    for (auto d : dims) { n *= d; }
    return n;
  }
};

inline constexpr std::array<char, 5> kMagic{'M', 'C', 'M', 'R', '1'};

inline void write(std::filesystem::path const &path, Tensor const &t)
{
  require(!t.dims.empty() && t.dims.size() <= 4, "MCMR1: rank must be 1..4");
  std::uint64_t const expect = t.numel() * (is_complex(t.dtype) ? 2 : 1);
  require(t.values.size() == expect, "MCMR1: payload size does not match dims");
  std::ofstream out(path, std::ios::binary);
  if (!out) { throw std::runtime_error("cannot open " + path.string() + " for writing"); }
  out.write(kMagic.data(), kMagic.size());
  std::uint8_t const head[3] = {std::uint8_t(t.dtype), std::uint8_t(t.dims.size()), 0};
  out.write(reinterpret_cast<char const *>(head), 3);
  for (auto d : t.dims) { out.write(reinterpret_cast<char const *>(&d), 8); }
  if (t.dtype == DType::F64 || t.dtype == DType::C128) {
    out.write(reinterpret_cast<char const *>(t.values.data()), std::streamsize(t.values.size() * 8));
  } else {
    std::vector<float> f(t.values.begin(), t.values.end());
    out.write(reinterpret_cast<char const *>(f.data()), std::streamsize(f.size() * 4));
  }
  if (!out) { throw std::runtime_error("write failed: " + path.string()); }
}

inline Tensor read(std::filesystem::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw std::runtime_error("cannot open " + path.string()); }
  std::array<char, 5> magic{};
  in.read(magic.data(), 5);
  if (magic != kMagic) { throw ConfigError(path.string() + ": not an MCMR1 file"); }
  std::uint8_t head[3];
  in.read(reinterpret_cast<char *>(head), 3);
  Tensor t;
  if (head[0] < 1 || head[0] > 4) { throw ConfigError(path.string() + ": unknown dtype code"); }
  t.dtype = DType(head[0]);
  if (head[1] < 1 || head[1] > 4) { throw ConfigError(path.string() + ": bad rank"); }
  t.dims.resize(head[1]);
  for (auto &d : t.dims) { in.read(reinterpret_cast<char *>(&d), 8); }
  std::uint64_t const n = t.numel() * (is_complex(t.dtype) ? 2 : 1);
  t.values.resize(n);
  if (t.dtype == DType::F64 || t.dtype == DType::C128) {
    in.read(reinterpret_cast<char *>(t.values.data()), std::streamsize(n * 8));
  } else {
    std::vector<float> f(n);
    in.read(reinterpret_cast<char *>(f.data()), std::streamsize(n * 4));
    std::copy(f.begin(), f.end(), t.values.begin());
  }
  if (!in) { throw ConfigError(path.string() + ": truncated payload"); }
  return t;
}

// Grid conversions -----------------------------------------------------------

inline Tensor from_grids(std::vector<ComplexGrid> const &gs, std::vector<std::uint64_t> outer = {})
{
  require(!gs.empty(), "MCMR1: no grids");
  Tensor t;
  t.dtype = DType::C128;
  t.dims = outer.empty() ? std::vector<std::uint64_t>{gs.size()} : outer;
  t.dims.push_back(gs[0].rows());
  t.dims.push_back(gs[0].cols());
  t.values.reserve(gs.size() * gs[0].size() * 2);
  for (auto const &g : gs) {
    require(g.same_shape(gs[0]), "MCMR1: grids differ in shape");
    for (auto const &v : g.vec()) {
      t.values.push_back(v.real());
      t.values.push_back(v.imag());
    }
  }
  require(t.numel() == gs.size() * gs[0].size(), "MCMR1: outer dims do not match grid count");
  return t;
}

inline std::vector<ComplexGrid> to_grids(Tensor const &t)
{
  require(t.dims.size() >= 2, "MCMR1: need rank >= 2 for grids");
  std::size_t const rows = t.dims[t.dims.size() - 2], cols = t.dims.back();
  std::size_t const count = t.numel() / (rows * cols);
  std::vector<ComplexGrid> out;
  std::size_t k = 0;
  bool const cx = is_complex(t.dtype);
  for (std::size_t g = 0; g < count; ++g) {
    ComplexGrid grid(rows, cols);
    for (auto &v : grid.vec()) {
      if (cx) {
        v = {t.values[k], t.values[k + 1]};
        k += 2;
      } else {
        v = t.values[k++];
      }
    }
    out.push_back(std::move(grid));
  }
  return out;
}

template <typename T>
Tensor from_real_grids(std::vector<Grid<T>> const &gs)
{
  require(!gs.empty(), "MCMR1: no grids");
  Tensor t;
  t.dtype = DType::F64;
  t.dims = {gs.size(), gs[0].rows(), gs[0].cols()};
  for (auto const &g : gs) {
    for (auto const &v : g.vec()) { t.values.push_back(double(v)); }
  }
  return t;
}

template <typename T>
Tensor from_real_grid(Grid<T> const &g)
{
  Tensor t;
  t.dtype = DType::F64;
  t.dims = {g.rows(), g.cols()};
  for (auto const &v : g.vec()) { t.values.push_back(double(v)); }
  return t;
}

template <typename T>
std::vector<Grid<T>> to_real_grids(Tensor const &t)
{
  require(!is_complex(t.dtype), "MCMR1: expected a real tensor");
  require(t.dims.size() >= 2, "MCMR1: need rank >= 2 for grids");
  std::size_t const rows = t.dims[t.dims.size() - 2], cols = t.dims.back();
  std::size_t const count = t.numel() / (rows * cols);
  std::vector<Grid<T>> out;
  std::size_t k = 0;
  for (std::size_t g = 0; g < count; ++g) {
    Grid<T> grid(rows, cols);
    for (auto &v : grid.vec()) { v = T(t.values[k++]); }
    out.push_back(std::move(grid));
  }
  return out;
}

} // namespace ssjdm::mcmr
