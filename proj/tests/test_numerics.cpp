#include <gtest/gtest.h>

#include <filesystem>
#include <numbers>

#include "ssjdm/fft.hpp"
#include "ssjdm/mcmr.hpp"
#include "ssjdm/rng.hpp"

using namespace ssjdm;

namespace {

// Direct O(N²) centered orthonormal DFT, written from the definition
// X[k] = Σ_n x[n] exp(∓2πi (k−c)(n−c)/N)/√N per axis, c = ⌊N/2⌋.
ComplexGrid dft_oracle(ComplexGrid const &g, bool inverse)
{
  std::size_t const R = g.rows(), C = g.cols();
  double const sgn = inverse ? 1.0 : -1.0;
  ComplexGrid out(R, C);
  for (std::size_t kr = 0; kr < R; ++kr) {
    for (std::size_t kc = 0; kc < C; ++kc) {
      cplx acc{};
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t c = 0; c < C; ++c) {
          double const a = 2 * std::numbers::pi *
                           (double((long(kr) - long(R / 2)) * (long(r) - long(R / 2))) / double(R) +
                            double((long(kc) - long(C / 2)) * (long(c) - long(C / 2))) / double(C));
          acc += g(r, c) * std::polar(1.0, sgn * a);
        }
      }
      out(kr, kc) = acc / std::sqrt(double(R * C));
    }
  }
  return out;
}

double rel_diff(ComplexGrid const &a, ComplexGrid const &b) { return norm(a - b) / norm(b); }

} // namespace

TEST(Fft, CenteredDeltaBecomesConstantQuarter)
{
  ComplexGrid const d = delta_at(4, 4, 2, 2);
  ComplexGrid const k = fft2c(d);
  for (auto v : k.vec()) {
    EXPECT_NEAR(v.real(), 0.25, 1e-15);
    EXPECT_NEAR(v.imag(), 0.0, 1e-15);
  }
}

TEST(Fft, ConstantBecomesCenteredDeltaOfEight)
{
  ComplexGrid const k = fft2c(ComplexGrid(8, 8, 1.0));
  for (std::size_t r = 0; r < 8; ++r) {
    for (std::size_t c = 0; c < 8; ++c) {
      double const expect = (r == 4 && c == 4) ? 8.0 : 0.0;
      EXPECT_NEAR(std::abs(k(r, c) - expect), 0.0, 1e-13);
    }
  }
}

TEST(Fft, InverseOfCenteredDeltaIsConstant)
{
  ComplexGrid const x = ifft2c(delta_at(6, 6, 3, 3));
  for (auto v : x.vec()) { EXPECT_NEAR(std::abs(v - 1.0 / 6.0), 0.0, 1e-15); }
}

TEST(Fft, MatchesDirectDftOracle)
{
  Rng rng(11);
  // powers of two, composite and prime lengths
  for (auto [r, c] : {std::pair{16, 16}, std::pair{12, 10}, std::pair{9, 7}, std::pair{1, 5}, std::pair{17, 6}}) {
    ComplexGrid const g = random_grid(r, c, rng);
    EXPECT_LT(rel_diff(fft2c(g), dft_oracle(g, false)), 1e-12) << r << "x" << c;
    EXPECT_LT(rel_diff(ifft2c(g), dft_oracle(g, true)), 1e-12) << r << "x" << c;
  }
}

TEST(Fft, ParsevalAndRoundTripUpTo64)
{
  Rng rng(5);
  for (std::size_t n : {2, 3, 8, 15, 31, 32, 48, 64}) {
    for (std::size_t m : {1, 7, 64}) {
      ComplexGrid const g = random_grid(n, m, rng);
      ComplexGrid const k = fft2c(g);
      EXPECT_NEAR(norm(k) / norm(g), 1.0, 1e-12);
      EXPECT_LT(rel_diff(ifft2c(k), g), 1e-12);
    }
  }
}

TEST(Fft, RejectsNonFiniteInput)
{
  ComplexGrid g(4, 4);
  g(1, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(fft2c(g), NumericalError);
  g(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(ifft2c(g), NumericalError);
}

TEST(Inner, BasicIdentities)
{
  Rng rng(3);
  ComplexGrid const g = random_grid(5, 6, rng);
  cplx const gg = inner(g, g);
  EXPECT_NEAR(gg.imag(), 0.0, 1e-12);
  EXPECT_NEAR(gg.real(), norm_sq(g), 1e-12);
  EXPECT_EQ(inner(delta_at(5, 6, 2, 3), g), g(2, 3));
  EXPECT_THROW(inner(g, ComplexGrid(6, 5)), ConfigError);
}

TEST(Inner, UnitarityOfFft)
{
  Rng rng(4);
  ComplexGrid const a = random_grid(16, 12, rng), b = random_grid(16, 12, rng);
  cplx const lhs = inner(fft2c(a), fft2c(b)), rhs = inner(a, b);
  EXPECT_LT(std::abs(lhs - rhs) / (norm(a) * norm(b)), 1e-12);
}

TEST(Rng, EqualSeedsGiveEqualStreams)
{
  Rng a(42), b(42);
  for (int i = 0; i < 1'000'000; ++i) { ASSERT_EQ(a.bits(), b.bits()); }
  Rng c(42), d(43);
  EXPECT_NE(c.bits(), d.bits());
}

TEST(Rng, SplitStreamsAreDistinctAndReproducible)
{
  Rng root(7);
  EXPECT_EQ(root.split(1).seed(), Rng(7).split(1).seed());
  EXPECT_NE(root.split(1).seed(), root.split(2).seed());
  EXPECT_NE(split_seed(7, 0), 7U);
}

TEST(Rng, NormalMoments)
{
  Rng rng(9);
  double s = 0, s2 = 0;
  int const n = 200000;
  for (int i = 0; i < n; ++i) {
    double const v = rng.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

TEST(Mcmr, RoundTripPreservesEveryDtype)
{
  auto const dir = std::filesystem::temp_directory_path() / "ssjdm_mcmr_test";
  std::filesystem::create_directories(dir);
  Rng rng(1);
  std::vector<ComplexGrid> gs{random_grid(3, 5, rng), random_grid(3, 5, rng)};
  auto t = mcmr::from_grids(gs);
  mcmr::write(dir / "a.mcmr", t);
  auto back = mcmr::read(dir / "a.mcmr");
  EXPECT_EQ(back.dims, (std::vector<std::uint64_t>{2, 3, 5}));
  EXPECT_EQ(back.values, t.values);
  EXPECT_EQ(mcmr::to_grids(back), gs);

  // single precision containers keep the layout and round to float
  t.dtype = mcmr::DType::C64;
  mcmr::write(dir / "b.mcmr", t);
  back = mcmr::read(dir / "b.mcmr");
  ASSERT_EQ(back.values.size(), t.values.size());
  for (std::size_t i = 0; i < t.values.size(); ++i) { EXPECT_EQ(back.values[i], double(float(t.values[i]))); }
  EXPECT_EQ(std::filesystem::file_size(dir / "b.mcmr"), 8 + 3 * 8 + 2 * 15 * 8);
}

TEST(Mcmr, RejectsForeignFiles)
{
  auto const p = std::filesystem::temp_directory_path() / "ssjdm_not_mcmr.bin";
  std::ofstream(p) << "hello world";
  EXPECT_THROW(mcmr::read(p), ConfigError);
}
