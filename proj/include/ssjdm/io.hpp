#pragma once

// Files on disk: MCMR1 bundles for stacks, k-space, coil maps, phantoms and
// model checkpoints; 8-bit previews; CSV; and a SHA-256 manifest of every
// file written to an output directory.

#include <openssl/evp.h>
#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "bcnn.hpp"
#include "mapping.hpp"
#include "mcmr.hpp"
#include "phantom.hpp"
#include "score.hpp"

namespace ssjdm::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Hashing and the manifest ------------------------------------------------------

namespace detail {

inline std::string hex_digest(EVP_MD_CTX *ctx)
{
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md.data(), &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char two[3];
  for (unsigned i = 0; i < len; ++i) {
    std::snprintf(two, sizeof two, "%02x", md[i]);
    hex += two;
  }
  return hex;
}

inline EVP_MD_CTX *sha256_context()
{
  EVP_MD_CTX *ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  return ctx;
}

} // namespace detail

inline std::string sha256_text(std::string const &text)
{
  EVP_MD_CTX *ctx = detail::sha256_context();
  EVP_DigestUpdate(ctx, text.data(), text.size());
  return detail::hex_digest(ctx);
}

inline std::string sha256_file(fs::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw std::runtime_error("cannot open " + path.string() + " for hashing"); }
  EVP_MD_CTX *ctx = detail::sha256_context();
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) { EVP_DigestUpdate(ctx, buf.data(), std::size_t(in.gcount())); }
  }
  return detail::hex_digest(ctx);
}

/// Single writer for one output directory. Every file goes through
/// path_for() and record(), and finish() writes manifest.json listing each
/// file with its size and SHA-256.
class OutputDir
{
public:
  explicit OutputDir(fs::path root)
      : root_(std::move(root))
  {
    fs::create_directories(root_);
  }

  fs::path const &root() const { return root_; }

  fs::path path_for(std::string const &rel) const
  {
    fs::path const p = root_ / rel;
    fs::create_directories(p.parent_path());
    return p;
  }

  void record(std::string const &rel)
  {
    if (std::find(files_.begin(), files_.end(), rel) == files_.end()) { files_.push_back(rel); }
  }

  void write_text(std::string const &rel, std::string const &text)
  {
    std::ofstream out(path_for(rel), std::ios::binary);
    out << text;
    if (!out) { throw std::runtime_error("write failed: " + (root_ / rel).string()); }
    out.close();
    record(rel);
  }

  void write_tensor(std::string const &rel, mcmr::Tensor const &t)
  {
    mcmr::write(path_for(rel), t);
    record(rel);
  }

  json manifest() const
  {
    json files = json::array();
    std::vector<std::string> sorted = files_;
    std::sort(sorted.begin(), sorted.end());
    for (auto const &rel : sorted) {
      fs::path const p = root_ / rel;
      files.push_back({{"path", rel}, {"bytes", fs::file_size(p)}, {"sha256", sha256_file(p)}});
    }
    return {{"format", "ssjdm-manifest-1"}, {"files", files}};
  }

  void finish() const
  {
    std::ofstream out(root_ / "manifest.json");
    out << manifest().dump(2) << "\n";
    if (!out) { throw std::runtime_error("cannot write manifest in " + root_.string()); }
  }

private:
  fs::path root_;
  std::vector<std::string> files_;
};

// Previews -------------------------------------------------------------------------

enum class PreviewMode
{
  Magnitude,
  Phase,
  Error,
};

struct Window
{
  double lo = 0;
  double hi = 1;
};

/// Percentile window over a sample set; a degenerate range widens to ±0.5
/// around the value so a constant image maps to mid gray.
inline Window percentile_window(std::vector<double> v, double lo_pct = 1, double hi_pct = 99)
{
  require(!v.empty(), "preview: empty image");
  std::sort(v.begin(), v.end());
  auto at = [&](double pct) {
    double const pos = pct / 100.0 * double(v.size() - 1);
    auto const i = std::size_t(pos);
    double const f = pos - double(i);
    return i + 1 < v.size() ? v[i] * (1 - f) + v[i + 1] * f : v[i];
  };
  Window w{at(lo_pct), at(hi_pct)};
  if (!(w.hi > w.lo)) { w = {w.lo - 0.5, w.lo + 0.5}; }
  return w;
}

inline Window minmax_window(std::vector<double> const &v)
{
  require(!v.empty(), "preview: empty image");
  auto const [a, b] = std::minmax_element(v.begin(), v.end());
  Window w{*a, *b};
  if (!(w.hi > w.lo)) { w = {w.lo - 0.5, w.lo + 0.5}; }
  return w;
}

/// 8-bit image, gray (channels = 1) or RGB (channels = 3).
struct Image8
{
  std::size_t rows = 0;
  std::size_t cols = 0;
  int channels = 1;
  std::vector<std::uint8_t> px;
};

inline std::uint8_t quantize(double v, Window const &w)
{
  double const t = std::clamp((v - w.lo) / (w.hi - w.lo), 0.0, 1.0);
  return std::uint8_t(std::lround(t * 255.0));
}

/// Contrasts tiled left to right into one strip.
inline std::vector<double> preview_values(ContrastStack const &x, PreviewMode mode, ContrastStack const *ref)
{
  require(x.contrasts() >= 1 && x.rows() >= 1, "preview: empty stack");
  if (mode == PreviewMode::Error) {
    require(ref && ref->same_shape(x), "preview: error mode needs a reference of the same shape");
  }
  std::size_t const R = x.rows(), C = x.cols(), N = x.contrasts();
  std::vector<double> v(R * C * N);
  for (std::size_t j = 0; j < N; ++j) {
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t c = 0; c < C; ++c) {
        cplx const a = x[j](r, c);
        double val = 0;
        switch (mode) {
        case PreviewMode::Magnitude: val = std::abs(a); break;
        case PreviewMode::Phase: val = std::arg(a); break;
        case PreviewMode::Error: val = std::abs(a - (*ref)[j](r, c)); break;
        }
        v[r * C * N + j * C + c] = val;
      }
    }
  }
  return v;
}

/// Default windowing is the 1st/99th percentile of the values; phase uses
/// the fixed range [−π, π]. Error previews of several methods should pass a
/// shared window (see shared_error_window).
inline Image8 render_preview(ContrastStack const &x, PreviewMode mode, ContrastStack const *ref = nullptr,
                             std::optional<Window> window = std::nullopt)
{
  std::vector<double> const v = preview_values(x, mode, ref);
  Window const w = window ? *window
                          : mode == PreviewMode::Phase ? Window{-std::numbers::pi, std::numbers::pi} : percentile_window(v);
  Image8 img{x.rows(), x.cols() * x.contrasts(), 1, std::vector<std::uint8_t>(v.size())};
  for (std::size_t i = 0; i < v.size(); ++i) { img.px[i] = quantize(v[i], w); }
  return img;
}

inline Window shared_error_window(std::vector<ContrastStack const *> const &methods, ContrastStack const &ref)
{
  std::vector<double> all;
  for (auto const *m : methods) {
    auto const v = preview_values(*m, PreviewMode::Error, &ref);
    all.insert(all.end(), v.begin(), v.end());
  }
  return percentile_window(all);
}

/// Five-stop perceptual ramp (dark blue → teal → green → yellow) for
/// parameter maps; background (value 0) stays black.
inline Image8 render_map(RealGrid const &map, Window w)
{
  static constexpr std::array<std::array<double, 3>, 5> stops{{{0.27, 0.00, 0.33},
                                                               {0.23, 0.32, 0.55},
                                                               {0.13, 0.57, 0.55},
                                                               {0.37, 0.79, 0.38},
                                                               {0.99, 0.91, 0.14}}};
  Image8 img{map.rows(), map.cols(), 3, std::vector<std::uint8_t>(map.size() * 3)};
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (map[i] == 0) { continue; }
    double const t = std::clamp((map[i] - w.lo) / (w.hi - w.lo), 0.0, 1.0) * 4.0;
    auto const k = std::min<std::size_t>(3, std::size_t(t));
    double const f = t - double(k);
    for (int ch = 0; ch < 3; ++ch) {
      double const c = stops[k][ch] * (1 - f) + stops[k + 1][ch] * f;
      img.px[i * 3 + ch] = std::uint8_t(std::lround(255.0 * c));
    }
  }
  return img;
}

inline void write_pgm(fs::path const &path, Image8 const &img)
{
  require(img.channels == 1, "PGM output is grayscale only");
  std::ofstream out(path, std::ios::binary);
  out << "P5\n" << img.cols << " " << img.rows << "\n255\n";
  out.write(reinterpret_cast<char const *>(img.px.data()), std::streamsize(img.px.size()));
  if (!out) { throw std::runtime_error("write failed: " + path.string()); }
}

inline void write_png(fs::path const &path, Image8 const &img)
{
  FILE *fp = std::fopen(path.c_str(), "wb");
  if (!fp) { throw std::runtime_error("cannot open " + path.string() + " for writing"); }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, png_uint_32(img.cols), png_uint_32(img.rows), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::size_t const stride = img.cols * std::size_t(img.channels);
  for (std::size_t r = 0; r < img.rows; ++r) {
    png_write_row(png, const_cast<png_bytep>(img.px.data() + r * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) { throw std::runtime_error("close failed: " + path.string()); }
}

/// Writes `<stem>.png` and `<stem>.pgm` and records both.
inline void export_preview(OutputDir &out, std::string const &stem, ContrastStack const &x, PreviewMode mode,
                           ContrastStack const *ref = nullptr, std::optional<Window> window = std::nullopt)
{
  Image8 const img = render_preview(x, mode, ref, window);
  write_png(out.path_for(stem + ".png"), img);
  out.record(stem + ".png");
  write_pgm(out.path_for(stem + ".pgm"), img);
  out.record(stem + ".pgm");
}

// Bundles ----------------------------------------------------------------------------

inline void save_stack(OutputDir &out, std::string const &rel, ContrastStack const &x)
{
  out.write_tensor(rel, mcmr::from_grids(x.planes));
}

inline ContrastStack load_stack(fs::path const &path)
{
  mcmr::Tensor const t = mcmr::read(path);
  require(t.dims.size() == 3, path.string() + ": expected a [contrast, row, col] tensor");
  return ContrastStack(mcmr::to_grids(t));
}

inline void save_sensitivities(OutputDir &out, std::string const &rel, CoilSensitivities const &s)
{
  out.write_tensor(rel, mcmr::from_grids(s.maps));
}

inline CoilSensitivities load_sensitivities(fs::path const &path)
{
  return CoilSensitivities{mcmr::to_grids(mcmr::read(path))};
}

/// kspace.mcmr [contrast, coil, row, col], mask.mcmr [contrast, row, col],
/// kspace.json with the noise level and mask provenance.
inline void save_kspace(OutputDir &out, std::string const &dir, KSpaceSet const &y)
{
  std::vector<ComplexGrid> flat;
  for (auto const &j : y.data) {
    for (auto const &g : j) { flat.push_back(g); }
  }
  out.write_tensor(dir + "/kspace.mcmr", mcmr::from_grids(flat, {y.contrasts(), y.coils()}));
  out.write_tensor(dir + "/mask.mcmr", mcmr::from_real_grids(y.mask.planes));
  json meta{{"noise_std", y.noise_std},
            {"center_rows", y.mask.center_rows},
            {"center_cols", y.mask.center_cols},
            {"target_accel", y.mask.target_accel},
            {"density_exponent", y.mask.density_exponent},
            {"seed", y.mask.seed},
            {"base_radius", y.mask.base_radius}};
  out.write_text(dir + "/kspace.json", meta.dump(2) + "\n");
}

inline json read_json(fs::path const &path)
{
  std::ifstream in(path);
  if (!in) { throw ConfigError("cannot open " + path.string()); }
  try {
    return json::parse(in);
  } catch (json::exception const &e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline KSpaceSet load_kspace(fs::path const &dir)
{
  mcmr::Tensor const t = mcmr::read(dir / "kspace.mcmr");
  require(t.dims.size() == 4, "kspace.mcmr: expected a [contrast, coil, row, col] tensor");
  auto const flat = mcmr::to_grids(t);
  KSpaceSet y;
  std::size_t const nc = t.dims[1];
  for (std::size_t j = 0; j < t.dims[0]; ++j) {
    y.data.emplace_back(flat.begin() + std::ptrdiff_t(j * nc), flat.begin() + std::ptrdiff_t((j + 1) * nc));
  }
  y.mask.planes = mcmr::to_real_grids<std::uint8_t>(mcmr::read(dir / "mask.mcmr"));
  json const meta = read_json(dir / "kspace.json");
  y.noise_std = meta.at("noise_std");
  y.mask.center_rows = meta.at("center_rows");
  y.mask.center_cols = meta.at("center_cols");
  y.mask.target_accel = meta.at("target_accel");
  y.mask.density_exponent = meta.at("density_exponent");
  y.mask.seed = meta.at("seed");
  y.mask.base_radius = meta.at("base_radius").get<std::vector<double>>();
  require(y.mask.contrasts() == y.contrasts(), "kspace: mask and data contrast counts differ");
  return y;
}

/// maps.mcmr [t1, t1rho, m0, t2] and labels.mcmr.
inline void save_phantom(OutputDir &out, std::string const &dir, ParameterMaps const &p)
{
  out.write_tensor(dir + "/maps.mcmr", mcmr::from_real_grids(std::vector<RealGrid>{p.t1, p.t1rho, p.m0, p.t2}));
  out.write_tensor(dir + "/labels.mcmr", mcmr::from_real_grid(p.labels));
}

inline ParameterMaps load_phantom(fs::path const &dir)
{
  auto const g = mcmr::to_real_grids<double>(mcmr::read(dir / "maps.mcmr"));
  require(g.size() == 4, "maps.mcmr: expected four parameter planes");
  auto const l = mcmr::to_real_grids<std::uint8_t>(mcmr::read(dir / "labels.mcmr"));
  require(l.size() == 1, "labels.mcmr: expected one plane");
  return ParameterMaps{g[0], g[1], g[2], g[3], l[0]};
}

/// maps.mcmr [t1, t1rho, m0, correlation, foreground] plus colored previews.
inline void save_maps(OutputDir &out, std::string const &dir, ParameterMapSet const &m)
{
  RealGrid fg(m.foreground.rows(), m.foreground.cols());
  for (std::size_t i = 0; i < fg.size(); ++i) { fg[i] = m.foreground[i]; }
  out.write_tensor(dir + "/maps.mcmr", mcmr::from_real_grids(std::vector<RealGrid>{m.t1, m.t1rho, m.m0, m.correlation, fg}));
  write_png(out.path_for(dir + "/t1.png"), render_map(m.t1, {600, 2000}));
  out.record(dir + "/t1.png");
  write_png(out.path_for(dir + "/t1rho.png"), render_map(m.t1rho, {20, 120}));
  out.record(dir + "/t1rho.png");
}

inline ParameterMapSet load_maps(fs::path const &dir)
{
  auto const g = mcmr::to_real_grids<double>(mcmr::read(dir / "maps.mcmr"));
  require(g.size() == 5, "maps.mcmr: expected five planes");
  ParameterMapSet m{g[0], g[1], g[2], g[3], MaskGrid(g[4].rows(), g[4].cols())};
  for (std::size_t i = 0; i < g[4].size(); ++i) { m.foreground[i] = g[4][i] != 0; }
  return m;
}

// Checkpoints ---------------------------------------------------------------------------

inline mcmr::Tensor to_mcmr(ag::Tensor const &t)
{
  mcmr::Tensor m;
  m.dtype = mcmr::DType::F64;
  for (auto d : t.shape) { m.dims.push_back(d); }
  m.values = t.data;
  return m;
}

inline ag::Tensor from_mcmr(mcmr::Tensor const &m)
{
  require(!mcmr::is_complex(m.dtype), "checkpoint tensors must be real");
  std::vector<std::size_t> shape(m.dims.begin(), m.dims.end());
  ag::Tensor t(shape);
  t.data = m.values;
  return t;
}

inline json to_json(BcnnConfig const &c)
{
  return {{"blocks", c.blocks}, {"convs", c.convs},   {"width", c.width},   {"kernel", c.kernel},
          {"prior_std", c.prior_std}, {"init_std", c.init_std}, {"gamma1", c.gamma1}, {"split_ratio", c.split_ratio}, {"alpha", c.alpha},
          {"lr", c.lr}, {"kl_scale", c.kl_scale}, {"epochs", c.epochs}, {"seed", c.seed}};
}

inline BcnnConfig bcnn_config_from_json(json const &j)
{
  BcnnConfig c;
  c.blocks = j.at("blocks");
  c.convs = j.at("convs");
  c.width = j.at("width");
  c.kernel = j.at("kernel");
  c.prior_std = j.at("prior_std");
  c.init_std = j.at("init_std");
  c.gamma1 = j.at("gamma1");
  c.split_ratio = j.at("split_ratio");
  c.alpha = j.at("alpha");
  c.lr = j.at("lr");
  c.kl_scale = j.at("kl_scale");
  c.epochs = j.at("epochs");
  c.seed = j.at("seed");
  return c;
}

/// params/NNN.mcmr for every parameter (w_ρ included), sigma/MMM.mcmr with
/// σ = softplus(ρ) per Gaussian module, and checkpoint.json.
inline void save_bcnn(OutputDir &out, std::string const &dir, BcnnModel const &m)
{
  char name[32];
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    std::snprintf(name, sizeof name, "/params/%03zu.mcmr", i);
    out.write_tensor(dir + name, to_mcmr(m.params[i]));
  }
  json gauss = json::array();
  for (std::size_t mod = 0; mod < m.modules(); ++mod) {
    ag::Tensor sig = m.params[m.rho_index(mod)];
    for (auto &v : sig.data) { v = softplus_value(v); }
    std::snprintf(name, sizeof name, "/sigma/%03zu.mcmr", mod);
    out.write_tensor(dir + name, to_mcmr(sig));
    gauss.push_back({{"mu", m.mu_index(mod)}, {"rho", m.rho_index(mod)}, {"sigma", std::string(name + 1)}});
  }
  json const meta{{"kind", "bcnn"},           {"config", to_json(m.config)}, {"coils", m.coils},
                  {"contrasts", m.contrasts}, {"params", m.params.size()},  {"gaussian_modules", gauss}};
  out.write_text(dir + "/checkpoint.json", meta.dump(2) + "\n");
}

inline BcnnModel load_bcnn(fs::path const &dir)
{
  json const meta = read_json(dir / "checkpoint.json");
  require(meta.at("kind") == "bcnn", dir.string() + ": not a BCNN checkpoint");
  BcnnModel m = build_bcnn(bcnn_config_from_json(meta.at("config")), meta.at("coils"), meta.at("contrasts"));
  require(m.params.size() == meta.at("params").get<std::size_t>(), "checkpoint parameter count mismatch");
  char name[32];
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    std::snprintf(name, sizeof name, "params/%03zu.mcmr", i);
    ag::Tensor t = from_mcmr(mcmr::read(dir / name));
    require(t.shape == m.params[i].shape, "checkpoint tensor shape mismatch at " + std::string(name));
    m.params[i] = std::move(t);
  }
  return m;
}

inline void save_score(OutputDir &out, std::string const &dir, ScoreNet const &n)
{
  char name[32];
  for (std::size_t i = 0; i < n.params.size(); ++i) {
    std::snprintf(name, sizeof name, "/params/%03zu.mcmr", i);
    out.write_tensor(dir + name, to_mcmr(n.params[i]));
    std::snprintf(name, sizeof name, "/ema/%03zu.mcmr", i);
    out.write_tensor(dir + name, to_mcmr(n.ema[i]));
  }
  ScoreConfig const &c = n.config;
  json const cfg{{"mode", c.mode == ScoreMode::Joint ? "joint" : "independent"},
                 {"width", c.width},
                 {"depth", c.depth},
                 {"kernel", c.kernel},
                 {"scale_channel", c.scale_channel},
                 {"skip", c.skip},
                 {"shared", c.shared},
                 {"lr", c.lr},
                 {"steps", c.steps},
                 {"batch", c.batch},
                 {"ema_rate", c.ema_rate},
                 {"ema_warmup", c.ema_warmup},
                 {"seed", c.seed}};
  json const meta{{"kind", "score"},
                  {"config", cfg},
                  {"contrasts", n.contrasts},
                  {"sigmas", n.schedule.sigmas},
                  {"params", n.params.size()}};
  out.write_text(dir + "/checkpoint.json", meta.dump(2) + "\n");
}

inline ScoreNet load_score(fs::path const &dir)
{
  json const meta = read_json(dir / "checkpoint.json");
  require(meta.at("kind") == "score", dir.string() + ": not a score checkpoint");
  json const &j = meta.at("config");
  ScoreConfig c;
  c.mode = j.at("mode") == "joint" ? ScoreMode::Joint : ScoreMode::Independent;
  c.width = j.at("width");
  c.depth = j.at("depth");
  c.kernel = j.at("kernel");
  c.scale_channel = j.at("scale_channel");
  c.skip = j.value("skip", false);
  c.shared = j.value("shared", false);
  c.lr = j.at("lr");
  c.steps = j.at("steps");
  c.batch = j.at("batch");
  c.ema_rate = j.at("ema_rate");
  c.ema_warmup = j.at("ema_warmup");
  c.seed = j.at("seed");
  NoiseSchedule sched;
  sched.sigmas = meta.at("sigmas").get<std::vector<double>>();
  ScoreNet n = build_score_net(c, sched, meta.at("contrasts"));
  char name[32];
  for (std::size_t i = 0; i < n.params.size(); ++i) {
    std::snprintf(name, sizeof name, "params/%03zu.mcmr", i);
    n.params[i] = from_mcmr(mcmr::read(dir / name));
    std::snprintf(name, sizeof name, "ema/%03zu.mcmr", i);
    n.ema[i] = from_mcmr(mcmr::read(dir / name));
    require(n.params[i].shape == n.ema[i].shape, "checkpoint tensor shape mismatch");
  }
  return n;
}

} // namespace ssjdm::io
