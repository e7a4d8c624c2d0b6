#pragma once

// Experiment configuration files: "[section]" headers followed by
// "key = value" lines, '#' comments. A single field table drives both
// parsing and writing, so write(read(text)) reproduces every value.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pipeline.hpp"

namespace ssjdm {

/// Sections and keys in file order.
class ConfigFile
{
public:
  struct Entry
  {
    std::string section;
    std::string key;
    std::string value;
    int line = 0;
  };

  static ConfigFile parse(std::string const &text)
  {
    ConfigFile f;
    std::istringstream in(text);
    std::string line, section;
    int n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (auto const h = line.find('#'); h != std::string::npos) { line.erase(h); }
      line = trim(line);
      if (line.empty()) { continue; }
      if (line.front() == '[') {
        if (line.back() != ']') { throw ConfigError("config line " + std::to_string(n) + ": unterminated section header"); }
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty()) { throw ConfigError("config line " + std::to_string(n) + ": empty section name"); }
        continue;
      }
      auto const eq = line.find('=');
      if (eq == std::string::npos) { throw ConfigError("config line " + std::to_string(n) + ": expected key = value"); }
      if (section.empty()) { throw ConfigError("config line " + std::to_string(n) + ": key outside any section"); }
      Entry e{section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), n};
      if (e.key.empty()) { throw ConfigError("config line " + std::to_string(n) + ": empty key"); }
      if (f.find(e.section, e.key)) {
        throw ConfigError("config line " + std::to_string(n) + ": duplicate key " + e.section + "." + e.key);
      }
      f.entries.push_back(std::move(e));
    }
    return f;
  }

  static ConfigFile load(std::string const &path)
  {
    std::ifstream in(path);
    if (!in) { throw ConfigError("cannot open config file " + path); }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  Entry const *find(std::string const &section, std::string const &key) const
  {
    for (auto const &e : entries) {
      if (e.section == section && e.key == key) { return &e; }
    }
    return nullptr;
  }

  void set(std::string const &section, std::string const &key, std::string value)
  {
    for (auto &e : entries) {
      if (e.section == section && e.key == key) {
        e.value = std::move(value);
        return;
      }
    }
    entries.push_back({section, key, std::move(value), 0});
  }

  std::string str() const
  {
    std::string out, current;
    for (auto const &e : entries) {
      if (e.section != current) {
        if (!out.empty()) { out += '\n'; }
        out += "[" + e.section + "]\n";
        current = e.section;
      }
      out += e.key + " = " + e.value + "\n";
    }
    return out;
  }

  std::vector<Entry> entries;

private:
  static std::string trim(std::string const &s)
  {
    auto const a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) { return {}; }
    return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
  }
};

// Value formatting -----------------------------------------------------------

namespace cfgval {

/// Shortest decimal form that reads back to the same double.
inline std::string fmt(double v)
{
  char buf[40];
  auto const res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
inline std::string fmt(bool v) { return v ? "true" : "false"; }
inline std::string fmt(std::string const &v) { return v; }

inline std::string fmt(std::vector<double> const &v)
{
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) { s += (i ? ", " : "") + fmt(v[i]); }
  return s;
}

inline std::string fmt(std::vector<GridSegment> const &v)
{
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    s += (i ? ", " : "") + fmt(v[i].lower) + ":" + fmt(v[i].step) + ":" + fmt(v[i].upper);
  }
  return s + "]";
}

inline std::string where(ConfigFile::Entry const &e) { return "config line " + std::to_string(e.line) + " (" + e.section + "." + e.key + ")"; }

inline double to_double(std::string const &s, ConfigFile::Entry const &e)
{
  double v = 0;
  auto const [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) { throw ConfigError(where(e) + ": expected a number, got '" + s + "'"); }
  return v;
}

inline std::uint64_t to_u64(std::string const &s, ConfigFile::Entry const &e)
{
  std::uint64_t v = 0;
  auto const [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw ConfigError(where(e) + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

inline bool to_bool(std::string const &s, ConfigFile::Entry const &e)
{
  if (s == "true") { return true; }
  if (s == "false") { return false; }
  throw ConfigError(where(e) + ": expected true or false, got '" + s + "'");
}

inline std::vector<double> to_list(std::string const &s, ConfigFile::Entry const &e)
{
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto const a = item.find_first_not_of(' '), b = item.find_last_not_of(' ');
    if (a == std::string::npos) { throw ConfigError(where(e) + ": empty list item"); }
    out.push_back(to_double(item.substr(a, b - a + 1), e));
  }
  return out;
}

} // namespace cfgval

/// Calls `v(section, key, field)` for every configurable field.
template <class V> void visit_fields(V &&v, ExperimentConfig &c)
{
  v("geometry", "rows", c.rows);
  v("geometry", "cols", c.cols);
  v("geometry", "coils", c.coils);
  v("geometry", "rr_ms", c.rr_ms);

  v("acquisition", "accelerations", c.accelerations);
  v("acquisition", "center_rows", c.center_rows);
  v("acquisition", "center_cols", c.center_cols);
  v("acquisition", "density_exponent", c.density_exponent);
  v("acquisition", "noise_std", c.noise_std);

  v("data", "seed", c.seed);
  v("data", "train_slices", c.train_slices);
  v("data", "bcnn_draws", c.bcnn_draws);

  v("bcnn", "blocks", c.bcnn.blocks);
  v("bcnn", "convs", c.bcnn.convs);
  v("bcnn", "width", c.bcnn.width);
  v("bcnn", "kernel", c.bcnn.kernel);
  v("bcnn", "prior_std", c.bcnn.prior_std);
  v("bcnn", "init_std", c.bcnn.init_std);
  v("bcnn", "gamma1", c.bcnn.gamma1);
  v("bcnn", "split_ratio", c.bcnn.split_ratio);
  v("bcnn", "alpha", c.bcnn.alpha);
  v("bcnn", "lr", c.bcnn.lr);
  v("bcnn", "kl_scale", c.bcnn.kl_scale);
  v("bcnn", "epochs", c.bcnn.epochs);

  v("score", "width", c.score.width);
  v("score", "depth", c.score.depth);
  v("score", "kernel", c.score.kernel);
  v("score", "scale_channel", c.score.scale_channel);
  v("score", "skip", c.score.skip);
  v("score", "shared", c.score.shared);
  v("score", "lr", c.score.lr);
  v("score", "steps", c.score.steps);
  v("score", "batch", c.score.batch);
  v("score", "ema_rate", c.score.ema_rate);
  v("score", "ema_warmup", c.score.ema_warmup);
  v("score", "eps_min", c.eps_min);
  v("score", "eps_max", c.eps_max);
  v("score", "scales", c.scales);

  v("sampler", "step_scale", c.sampler.step_scale);
  v("sampler", "inner_steps", c.sampler.inner_steps);
  v("sampler", "gamma2", c.sampler.gamma2);
  v("sampler", "chains", c.sampler.chains);
  v("sampler", "sign", c.sampler.sign);

  v("tv", "lambda", c.tv.lambda);
  v("tv", "max_iterations", c.tv.max_iterations);
  v("tv", "inner_iterations", c.tv.inner_iterations);
  v("tv", "tolerance", c.tv.tolerance);
  v("tv", "anisotropic", c.tv.anisotropic);

  v("grid", "t1", c.grid.t1);
  v("grid", "t1rho", c.grid.t1rho);
  v("grid", "t2", c.grid.t2);
  v("grid", "keep_duplicates", c.grid.keep_duplicates);

  v("mapping", "threshold", c.map_threshold);
  v("run", "independent", c.independent);
  v("run", "output_dir", c.output_dir);
}

namespace detail {

struct FieldWriter
{
  ConfigFile &f;
  template <class T> void operator()(char const *s, char const *k, T const &v) { f.set(s, k, put(v)); }

  template <class U>
    requires(std::is_unsigned_v<U> && !std::is_same_v<U, bool>)
  static std::string put(U v)
  {
    return std::to_string(v);
  }
  static std::string put(double v) { return cfgval::fmt(v); }
  static std::string put(bool v) { return cfgval::fmt(v); }
  static std::string put(std::string const &v) { return v; }
  static std::string put(std::vector<double> const &v) { return cfgval::fmt(v); }
  static std::string put(std::vector<GridSegment> const &v) { return v.empty() ? "[]" : cfgval::fmt(v); }
  static std::string put(DataTermSign v) { return v == DataTermSign::Descent ? "descent" : "as-printed"; }
};

struct FieldReader
{
  ConfigFile const &f;
  std::vector<std::string> seen;

  template <class T> void operator()(char const *s, char const *k, T &v)
  {
    auto const *e = f.find(s, k);
    seen.push_back(std::string(s) + "." + k);
    if (e) { get(e->value, *e, v); }
  }

  template <class U>
    requires(std::is_unsigned_v<U> && !std::is_same_v<U, bool>)
  static void get(std::string const &s, ConfigFile::Entry const &e, U &v)
  {
    v = U(cfgval::to_u64(s, e));
  }
  static void get(std::string const &s, ConfigFile::Entry const &e, double &v) { v = cfgval::to_double(s, e); }
  static void get(std::string const &s, ConfigFile::Entry const &e, bool &v) { v = cfgval::to_bool(s, e); }
  static void get(std::string const &s, ConfigFile::Entry const &, std::string &v) { v = s; }
  static void get(std::string const &s, ConfigFile::Entry const &e, std::vector<double> &v) { v = cfgval::to_list(s, e); }
  static void get(std::string const &s, ConfigFile::Entry const &e, std::vector<GridSegment> &v)
  {
    if (s == "[]" || s.empty()) {
      v.clear();
      return;
    }
    try {
      v = parse_segments(s);
    } catch (ConfigError const &err) {
      throw ConfigError(cfgval::where(e) + ": " + err.what());
    }
  }
  static void get(std::string const &s, ConfigFile::Entry const &e, DataTermSign &v)
  {
    if (s == "descent") {
      v = DataTermSign::Descent;
    } else if (s == "as-printed") {
      v = DataTermSign::AsPrinted;
    } else {
      throw ConfigError(cfgval::where(e) + ": expected descent or as-printed, got '" + s + "'");
    }
  }
};

} // namespace detail

/// Starts from the built-in defaults and overrides every key present.
/// Unknown keys are an error so typos never pass silently.
inline ExperimentConfig experiment_from_file(ConfigFile const &f)
{
  ExperimentConfig c;
  detail::FieldReader r{f, {}};
  visit_fields(r, c);
  for (auto const &e : f.entries) {
    if (std::find(r.seen.begin(), r.seen.end(), e.section + "." + e.key) == r.seen.end()) {
      throw ConfigError(cfgval::where(e) + ": unknown key");
    }
  }
  return c;
}

inline ConfigFile experiment_to_file(ExperimentConfig c)
{
  ConfigFile f;
  detail::FieldWriter w{f};
  visit_fields(w, c);
  return f;
}

inline ExperimentConfig load_experiment(std::string const &path) { return experiment_from_file(ConfigFile::load(path)); }

} // namespace ssjdm
