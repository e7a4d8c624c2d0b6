#pragma once

// Dictionary construction over relaxation-parameter grids and pixel-wise
// matching by maximum absolute normalized correlation.

#include <charconv>
#include <cmath>
#include <regex>
#include <string>
#include <vector>

#include "parallel.hpp"
#include "phantom.hpp"

namespace ssjdm {

/// One [lower : step : upper] run. Values are lower + k·step up to and
/// including upper (within a small tolerance).
struct GridSegment
{
  double lower;
  double step;
  double upper;
};

struct ParameterGridSpec
{
  std::vector<GridSegment> t1;
  std::vector<GridSegment> t1rho;
  std::vector<GridSegment> t2; ///< empty: T2 dimension disabled
  bool keep_duplicates = false;
};

/// Expands segments in order. Unless `keep_duplicates`, a value equal to the
/// last emitted one (a shared segment endpoint) is dropped.
inline std::vector<double> expand_segments(std::vector<GridSegment> const &segs, bool keep_duplicates = false)
{
  std::vector<double> out;
  for (auto const &s : segs) {
    require(s.step > 0, "grid: step must be positive");
    require(s.upper >= s.lower, "grid: segment upper bound below lower bound");
    require(out.empty() || s.lower >= out.back() - 1e-9, "grid: segments must be ordered");
    auto const n = std::size_t(std::floor((s.upper - s.lower) / s.step + 1e-9)) + 1;
    for (std::size_t k = 0; k < n; ++k) {
      double const v = s.lower + double(k) * s.step;
      if (!keep_duplicates && !out.empty() && std::abs(v - out.back()) < 1e-9) { continue; }
      out.push_back(v);
    }
  }
  return out;
}

/// Parses "[a:b:c, d:e:f]" (brackets optional).
inline std::vector<GridSegment> parse_segments(std::string const &text)
{
  std::vector<GridSegment> segs;
  std::regex const seg(R"(\s*([-+0-9.eE]+)\s*:\s*([-+0-9.eE]+)\s*:\s*([-+0-9.eE]+)\s*)");
  std::string body = text;
  std::erase_if(body, [](char c) { return c == '[' || c == ']'; });
  std::size_t start = 0;
  while (start <= body.size()) {
    std::size_t const comma = body.find(',', start);
    std::string const part = body.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    std::smatch m;
    if (!std::regex_match(part, m, seg)) { throw ConfigError("grid: cannot parse segment '" + part + "'"); }
    segs.push_back({std::stod(m[1]), std::stod(m[2]), std::stod(m[3])});
    if (comma == std::string::npos) { break; }
    start = comma + 1;
  }
  expand_segments(segs);
  return segs;
}

inline ParameterGridSpec parity_grid(bool with_t2 = false, bool keep_duplicates = false)
{
  ParameterGridSpec g;
  g.t1 = {{50, 20, 700}, {700, 10, 900}, {900, 5, 1300}, {1300, 50, 3000}};
  g.t1rho = {{5, 5, 20}, {20, 0.5, 60}, {60, 5, 100}, {100, 10, 300}};
  if (with_t2) { g.t2 = {{40, 0.5, 50}}; }
  g.keep_duplicates = keep_duplicates;
  return g;
}

inline ParameterGridSpec desk_grid()
{
  ParameterGridSpec g;
  g.t1 = {{600, 10, 2100}};
  g.t1rho = {{20, 1, 130}};
  return g;
}

struct GridPoint
{
  double t1;
  double t1rho;
  double t2; ///< 0 when the T2 dimension is disabled
};

struct Dictionary
{
  std::vector<GridPoint> points;
  std::vector<double> atoms; ///< row-major [atom][contrast], each row unit norm
  std::vector<double> norms; ///< norm of each atom before normalization (M0 = 1)
  std::size_t contrasts = 0;

  std::size_t size() const { return points.size(); }
  double const *atom(std::size_t a) const { return atoms.data() + a * contrasts; }
};

inline Dictionary build_dictionary(ParameterGridSpec const &grid, AcquisitionSchedule const &sched)
{
  require(sched.size() >= 2, "build_dictionary: need at least two contrasts");
  auto const t1 = expand_segments(grid.t1, grid.keep_duplicates);
  auto const t1r = expand_segments(grid.t1rho, grid.keep_duplicates);
  auto t2 = expand_segments(grid.t2, grid.keep_duplicates);
  if (t2.empty()) { t2.push_back(0.0); }
  require(!t1.empty() && !t1r.empty(), "build_dictionary: empty parameter grid");
  Dictionary d;
  d.contrasts = sched.size();
  d.points.reserve(t1.size() * t1r.size() * t2.size());
  for (double a : t1) {
    for (double b : t1r) {
      for (double c : t2) { d.points.push_back({a, b, c}); }
    }
  }
  d.atoms.resize(d.points.size() * d.contrasts);
  d.norms.resize(d.points.size());
  for (std::size_t k = 0; k < d.points.size(); ++k) {
    double *row = d.atoms.data() + k * d.contrasts;
    double s = 0;
    for (std::size_t j = 0; j < d.contrasts; ++j) {
      row[j] = signal(d.points[k].t1, d.points[k].t1rho, 1.0, sched.contrasts[j]);
      s += row[j] * row[j];
    }
    double const n = std::sqrt(s);
    if (!(n > 0)) { throw NumericalError("build_dictionary: zero-norm atom at T1=" + std::to_string(d.points[k].t1)); }
    for (std::size_t j = 0; j < d.contrasts; ++j) { row[j] /= n; }
    d.norms[k] = n;
  }
  return d;
}

struct MatchResult
{
  double t1 = 0;
  double t1rho = 0;
  double m0 = 0;
  double correlation = 0;
  std::size_t atom = 0;
  bool background = true;
};

/// Removes the phase of the largest-magnitude sample and keeps the real part.
inline std::vector<double> real_series(std::vector<cplx> const &series)
{
  std::size_t best = 0;
  for (std::size_t j = 1; j < series.size(); ++j) {
    if (std::abs(series[j]) > std::abs(series[best])) { best = j; }
  }
  cplx const rot = series.empty() || series[best] == cplx{} ? cplx{1, 0} : std::conj(series[best]) / std::abs(series[best]);
  std::vector<double> out;
  for (auto v : series) { out.push_back((v * rot).real()); }
  return out;
}

/// Exhaustive scan; ties go to the lowest atom index.
inline MatchResult match(std::vector<double> const &series, Dictionary const &d)
{
  require(series.size() == d.contrasts, "match: series length differs from the dictionary");
  double n2 = 0;
  for (double v : series) {
    require(std::isfinite(v), "match: non-finite series");
    n2 += v * v;
  }
  MatchResult r;
  if (n2 == 0) { return r; }
  double best = -1, best_dot = 0;
  std::size_t best_k = 0;
  for (std::size_t k = 0; k < d.size(); ++k) {
    double const *a = d.atom(k);
    double dot = 0;
    for (std::size_t j = 0; j < d.contrasts; ++j) { dot += a[j] * series[j]; }
    if (std::abs(dot) > best) {
      best = std::abs(dot);
      best_dot = dot;
      best_k = k;
    }
  }
  r.atom = best_k;
  r.t1 = d.points[best_k].t1;
  r.t1rho = d.points[best_k].t1rho;
  r.m0 = best / d.norms[best_k];
  r.correlation = best_dot / std::sqrt(n2);
  r.background = false;
  return r;
}

inline MatchResult match(std::vector<cplx> const &series, Dictionary const &d) { return match(real_series(series), d); }

struct ParameterMapSet
{
  RealGrid t1;
  RealGrid t1rho;
  RealGrid m0;
  RealGrid correlation;
  MaskGrid foreground;
};

/// Voxel-wise matching; voxels whose largest magnitude over contrasts is
/// below `threshold` are background (all maps zero).
inline ParameterMapSet map_volume(ContrastStack const &x, Dictionary const &d, double threshold)
{
  require(x.contrasts() == d.contrasts, "map_volume: contrast count differs from the dictionary");
  std::size_t const rows = x.rows(), cols = x.cols();
  ParameterMapSet out{RealGrid(rows, cols), RealGrid(rows, cols), RealGrid(rows, cols), RealGrid(rows, cols),
                      MaskGrid(rows, cols)};
  parallel_for(rows * cols, [&](std::size_t i) {
    std::vector<cplx> s(x.contrasts());
    double peak = 0;
    for (std::size_t j = 0; j < x.contrasts(); ++j) {
      s[j] = x[j][i];
      peak = std::max(peak, std::abs(s[j]));
    }
    if (peak < threshold || peak == 0) { return; }
    MatchResult const r = match(s, d);
    out.t1[i] = r.t1;
    out.t1rho[i] = r.t1rho;
    out.m0[i] = r.m0;
    out.correlation[i] = r.correlation;
    out.foreground[i] = 1;
  });
  return out;
}

struct RoiStats
{
  double mean = 0;
  double std = 0; ///< population standard deviation
  std::size_t n = 0;
};

inline RoiStats roi_stats(RealGrid const &map, MaskGrid const &region)
{
  require(map.same_shape(region), "roi_stats: map and region shapes differ");
  RoiStats s;
  double sum = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (region[i]) {
      sum += map[i];
      ++s.n;
    }
  }
  require(s.n > 0, "roi_stats: empty region");
  s.mean = sum / double(s.n);
  double ss = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (region[i]) { ss += (map[i] - s.mean) * (map[i] - s.mean); }
  }
  s.std = std::sqrt(ss / double(s.n));
  return s;
}

} // namespace ssjdm
