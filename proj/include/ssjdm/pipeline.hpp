#pragma once

// End-to-end experiment: phantoms, retrospective undersampling at each
// acceleration, BCNN training, score training on BCNN posterior draws,
// reconstruction by every method, dictionary mapping, ROI statistics.

#include <algorithm>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "baselines.hpp"
#include "bcnn.hpp"
#include "mapping.hpp"
#include "phantom.hpp"
#include "sampler.hpp"
#include "score.hpp"

namespace ssjdm {

struct ExperimentConfig
{
  // geometry
  std::size_t rows = 32;
  std::size_t cols = 32;
  std::size_t coils = 4;
  double rr_ms = 1000;
  // acquisition
  std::vector<double> accelerations{4, 8};
  std::size_t center_rows = 8;
  std::size_t center_cols = 8;
  double density_exponent = 2;
  double noise_std = 0.002;
  // data
  std::uint64_t seed = 20240611;
  std::size_t train_slices = 8;
  std::size_t bcnn_draws = 4; ///< posterior draws per training slice used as score-training data
  // modules
  BcnnConfig bcnn;
  ScoreConfig score;
  double eps_min = 0.01;
  double eps_max = 1.0;
  std::size_t scales = 64;
  SamplerConfig sampler;
  TvConfig tv;
  ParameterGridSpec grid = desk_grid();
  double map_threshold = 0.1; ///< background cut, relative to the largest voxel magnitude of the image
  bool independent = true;    ///< also train and run the per-contrast score model
  std::string output_dir = "out";

  void validate() const
  {
    require(rows >= 16 && cols >= 16, "experiment: image must be at least 16x16");
    require(coils >= 1, "experiment: need at least one coil");
    require(!accelerations.empty(), "experiment: empty acceleration list");
    for (double r : accelerations) { require(r >= 1, "experiment: accelerations must be >= 1"); }
    require(train_slices >= 1, "experiment: need at least one training slice");
    require(bcnn_draws >= 1, "experiment: need at least one BCNN draw per slice");
    require(noise_std >= 0, "experiment: noise std must be non-negative");
    require(eps_min > 0 && eps_max > eps_min && scales >= 2, "experiment: invalid noise schedule");
    require(map_threshold >= 0 && map_threshold < 1, "experiment: map threshold must lie in [0, 1)");
    bcnn.validate();
    score.validate();
    sampler.validate();
    tv.validate();
    expand_segments(grid.t1);
    expand_segments(grid.t1rho);
  }
};

/// One table row: a method's accuracy at one acceleration.
struct ReportRow
{
  double accel = 0;
  std::string method;
  double nrmse = 0;
  RoiStats t1;
  RoiStats t1rho;
};

struct ExperimentReport
{
  std::vector<ReportRow> rows;
  double truth_t1 = 0;    ///< ground-truth myocardial ROI means
  double truth_t1rho = 0;

  ReportRow const *find(double accel, std::string const &method) const
  {
    for (auto const &r : rows) {
      if (r.accel == accel && r.method == method) { return &r; }
    }
    return nullptr;
  }

  std::string csv() const
  {
    std::ostringstream os;
    os << "accel,method,nrmse,t1_mean,t1_std,t1rho_mean,t1rho_std,roi_voxels\n";
    char buf[256];
    for (auto const &r : rows) {
      std::snprintf(buf, sizeof buf, "%g,%s,%.9e,%.6f,%.6f,%.6f,%.6f,%zu\n", r.accel, r.method.c_str(), r.nrmse,
                    r.t1.mean, r.t1.std, r.t1rho.mean, r.t1rho.std, r.t1.n);
      os << buf;
    }
    return os.str();
  }
};

/// Receives intermediate results as soon as a stage produces them.
struct ArtifactSink
{
  std::function<void(std::string const &name, ContrastStack const &)> stack;
  std::function<void(std::string const &name, ParameterMaps const &)> phantom;
  std::function<void(std::string const &name, ParameterMapSet const &)> maps;
  std::function<void(std::string const &stage, std::string const &message)> log;
};

/// Rethrows with the stage name prefixed, preserving the error category.
template <class F> auto run_stage(std::string const &stage, ArtifactSink const &sink, F &&body)
{
  if (sink.log) { sink.log(stage, "start"); }
  try {
    return body();
  } catch (ConfigError const &e) {
    throw ConfigError("stage " + stage + ": " + e.what());
  } catch (NumericalError const &e) {
    throw NumericalError("stage " + stage + ": " + e.what());
  }
}

inline std::string accel_tag(double accel)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "R%g", accel);
  return buf;
}

inline std::vector<std::string> stage_plan(ExperimentConfig const &cfg)
{
  std::vector<std::string> plan{"config", "phantom", "dictionary"};
  for (double r : cfg.accelerations) {
    std::string const t = accel_tag(r);
    for (char const *s : {"acquire", "zero-fill", "tv", "train-bcnn", "reconstruct-bcnn", "score-data",
                          "train-score", "reconstruct-ssjdm"}) {
      plan.push_back(t + "/" + s);
    }
    if (cfg.independent) {
      plan.push_back(t + "/train-score-independent");
      plan.push_back(t + "/reconstruct-ssjdm-independent");
    }
    plan.push_back(t + "/map");
  }
  return plan;
}

/// A simulated 2D slice with its own phantom and coil profiles.
struct Slice
{
  ParameterMaps phantom;
  ContrastStack truth;
  CoilSensitivities sens;
  std::uint64_t seed = 0;
};

inline Slice make_slice(ExperimentConfig const &cfg, AcquisitionSchedule const &sched, std::uint64_t seed)
{
  Slice s;
  s.seed = seed;
  s.phantom = make_phantom(cfg.rows, cfg.cols, split_seed(seed, 1));
  s.truth = simulate_contrasts(s.phantom, sched);
  s.sens = make_sensitivities(cfg.coils, cfg.rows, cfg.cols, split_seed(seed, 2));
  return s;
}

inline KSpaceSet acquire(ExperimentConfig const &cfg, Slice const &s, double accel)
{
  auto const key = std::uint64_t(std::llround(accel * 1000));
  PoissonDiscOptions o;
  o.accel = accel;
  o.center_rows = cfg.center_rows;
  o.center_cols = cfg.center_cols;
  o.density_exponent = cfg.density_exponent;
  o.seed = split_seed(split_seed(s.seed, 3), key);
  o.contrasts = s.truth.contrasts();
  SamplingMask const m = make_poisson_disc_mask(cfg.rows, cfg.cols, o);
  return synthesize_kspace(s.truth, s.sens, m, cfg.noise_std, split_seed(split_seed(s.seed, 4), key));
}

/// 99th percentile of the zero-filled magnitude over all contrasts.
inline double intensity_scale(ContrastStack const &zf)
{
  std::vector<double> mags;
  for (auto const &p : zf.planes) {
    for (auto v : p.vec()) { mags.push_back(std::abs(v)); }
  }
  auto const k = std::size_t(0.99 * double(mags.size() - 1));
  std::nth_element(mags.begin(), mags.begin() + std::ptrdiff_t(k), mags.end());
  return mags[k] > 0 ? mags[k] : 1.0;
}

inline KSpaceSet scaled(KSpaceSet y, double factor)
{
  for (auto &j : y.data) {
    for (auto &g : j) { g *= factor; }
  }
  y.noise_std *= factor;
  return y;
}

inline ContrastStack scaled(ContrastStack x, double factor)
{
  x *= factor;
  return x;
}

/// A measurement in normalized units (the zero-filled image has a
/// 99th-percentile magnitude of 1) together with what is needed to undo it.
struct Measurement
{
  KSpaceSet y;
  CoilSensitivities sens;
  double scale = 1; ///< original = normalized · scale
};

inline Measurement normalize(KSpaceSet const &y, CoilSensitivities sens)
{
  double const sc = intensity_scale(zero_fill(y, sens));
  return {scaled(y, 1.0 / sc), std::move(sens), sc};
}

/// Back to original units with the measured samples restored.
inline ContrastStack finalize(ContrastStack const &x, Measurement const &m)
{
  return data_consistent(scaled(x, m.scale), scaled(m.y, m.scale), m.sens);
}

using StageLog = std::function<void(std::string const &)>;

inline BcnnModel fit_bcnn(std::vector<Measurement> const &train, BcnnConfig const &cfg, StageLog const &log = {})
{
  std::vector<BcnnExample> ex;
  for (std::size_t k = 0; k < train.size(); ++k) {
    ex.push_back(make_example(train[k].y, train[k].sens, cfg.split_ratio, split_seed(cfg.seed, 1 + k)));
  }
  return train_bcnn(ex, cfg, std::nullopt,
                    [&](BcnnModel const &, BcnnEpoch const &e) {
                      if (log) { log("epoch " + std::to_string(e.epoch) + " loss " + std::to_string(e.mean_loss)); }
                    })
      .model;
}

inline ContrastStack bcnn_mean(BcnnModel const &m, Measurement const &meas, std::size_t draws, std::uint64_t seed)
{
  auto const d = bcnn_reconstruct(m, meas.y, meas.sens, draws, seed);
  ContrastStack mean(d[0].contrasts(), d[0].rows(), d[0].cols());
  for (auto const &x : d) { mean += x; }
  mean *= 1.0 / double(d.size());
  return mean;
}

/// Posterior draws of the BCNN on every training slice, in normalized units.
inline std::vector<ContrastStack> score_training_pool(BcnnModel const &m, std::vector<Measurement> const &train,
                                                      std::size_t draws, std::uint64_t seed)
{
  std::vector<ContrastStack> pool;
  for (std::size_t k = 0; k < train.size(); ++k) {
    auto d = bcnn_reconstruct(m, train[k].y, train[k].sens, draws, split_seed(seed, k));
    for (auto &x : d) { pool.push_back(std::move(x)); }
  }
  return pool;
}

inline ScoreNet fit_score(std::vector<ContrastStack> const &pool, NoiseSchedule const &noise, ScoreConfig const &cfg,
                          StageLog const &log = {})
{
  require(!pool.empty(), "fit_score: empty training pool");
  StackSource const source = [&pool](Rng &rng) { return pool[rng.index(pool.size())]; };
  return train_score(source, noise, pool[0].contrasts(), cfg,
                     [&](std::size_t step, double loss) {
                       if (log && (step + 1) % 500 == 0) {
                         log("step " + std::to_string(step + 1) + " loss " + std::to_string(loss));
                       }
                     })
      .net;
}

/// Conditional Langevin sampling in normalized units followed by the
/// data-consistency projection. γ₂ = 0 in the config means "use the
/// measurement noise level".
inline ContrastStack ssjdm_reconstruct(ScoreNet const &net, Measurement const &meas, SamplerConfig cfg)
{
  if (cfg.gamma2 == 0) { cfg.gamma2 = meas.y.noise_std; }
  StackShape const shape{meas.y.contrasts(), meas.y.rows(), meas.y.cols()};
  ContrastStack const x =
      langevin_reconstruct(network_score(net), mri_data_grad(meas.y, meas.sens), net.schedule, cfg, shape);
  return data_consistent(x, meas.y, meas.sens);
}

/// Dictionary matching with the background cut relative to the image peak.
inline ParameterMapSet map_stack(ContrastStack const &x, Dictionary const &d, double relative_threshold)
{
  double peak = 0;
  for (auto const &p : x.planes) {
    for (auto v : p.vec()) { peak = std::max(peak, std::abs(v)); }
  }
  return map_volume(x, d, relative_threshold * peak);
}

inline ExperimentReport run_experiment(ExperimentConfig const &cfg, ArtifactSink const &sink = {})
{
  run_stage("config", sink, [&] { cfg.validate(); });
  AcquisitionSchedule const sched = default_schedule(cfg.rr_ms);
  std::uint64_t const root = cfg.seed;

  auto [test, train] = run_stage("phantom", sink, [&] {
    Slice t = make_slice(cfg, sched, split_seed(root, 1));
    std::vector<Slice> tr;
    for (std::size_t k = 0; k < cfg.train_slices; ++k) { tr.push_back(make_slice(cfg, sched, split_seed(root, 100 + k))); }
    if (sink.phantom) { sink.phantom("phantom/test", t.phantom); }
    if (sink.stack) { sink.stack("truth", t.truth); }
    return std::pair{std::move(t), std::move(tr)};
  });
  MaskGrid const myo = region_mask(test.phantom, Myocardium);

  Dictionary const dict = run_stage("dictionary", sink, [&] { return build_dictionary(cfg.grid, sched); });

  ExperimentReport report;
  report.truth_t1 = roi_stats(test.phantom.t1, myo).mean;
  report.truth_t1rho = roi_stats(test.phantom.t1rho, myo).mean;
  NoiseSchedule const noise = make_noise_schedule(cfg.eps_min, cfg.eps_max, cfg.scales);

  for (double accel : cfg.accelerations) {
    std::string const tag = accel_tag(accel);
    auto const key = std::uint64_t(std::llround(accel * 1000));
    auto stage_log = [&](std::string const &stage) -> StageLog {
      if (!sink.log) { return {}; }
      return [&sink, stage](std::string const &msg) { sink.log(stage, msg); };
    };
    std::map<std::string, ContrastStack> recon;

    auto [meas, train_meas] = run_stage(tag + "/acquire", sink, [&] {
      std::vector<Measurement> tr;
      for (auto const &s : train) { tr.push_back(normalize(acquire(cfg, s, accel), s.sens)); }
      return std::pair{normalize(acquire(cfg, test, accel), test.sens), std::move(tr)};
    });

    recon["zero-fill"] = run_stage(tag + "/zero-fill", sink, [&] { return zero_fill(meas.y, meas.sens); });
    recon["tv"] = run_stage(tag + "/tv", sink, [&] { return tv_cs_reconstruct(meas.y, meas.sens, cfg.tv).x; });

    BcnnModel const bcnn = run_stage(tag + "/train-bcnn", sink, [&] {
      BcnnConfig bc = cfg.bcnn;
      bc.seed = split_seed(split_seed(root, 10), key);
      return fit_bcnn(train_meas, bc, stage_log(tag + "/train-bcnn"));
    });
    recon["bcnn"] = run_stage(tag + "/reconstruct-bcnn", sink, [&] {
      return bcnn_mean(bcnn, meas, cfg.bcnn_draws, split_seed(split_seed(root, 11), key));
    });

    std::vector<ContrastStack> const pool = run_stage(tag + "/score-data", sink, [&] {
      return score_training_pool(bcnn, train_meas, cfg.bcnn_draws, split_seed(split_seed(root, 12), key));
    });

    auto train_and_sample = [&](ScoreMode mode, std::string const &train_stage, std::string const &rec_stage) {
      ScoreNet const net = run_stage(train_stage, sink, [&] {
        ScoreConfig sc = cfg.score;
        sc.mode = mode;
        sc.seed = split_seed(split_seed(root, mode == ScoreMode::Joint ? 20 : 21), key);
        return fit_score(pool, noise, sc, stage_log(train_stage));
      });
      return run_stage(rec_stage, sink, [&] {
        SamplerConfig sc = cfg.sampler;
        sc.seed = split_seed(split_seed(root, 30), key);
        return ssjdm_reconstruct(net, meas, sc);
      });
    };
    recon["ssjdm"] = train_and_sample(ScoreMode::Joint, tag + "/train-score", tag + "/reconstruct-ssjdm");
    if (cfg.independent) {
      recon["ssjdm-independent"] = train_and_sample(ScoreMode::Independent, tag + "/train-score-independent",
                                                    tag + "/reconstruct-ssjdm-independent");
    }

    run_stage(tag + "/map", sink, [&] {
      for (auto &[method, x] : recon) {
        ContrastStack const out = finalize(x, meas);
        ParameterMapSet const maps = map_stack(out, dict, cfg.map_threshold);
        ReportRow row;
        row.accel = accel;
        row.method = method;
        row.nrmse = nrmse(out, test.truth);
        row.t1 = roi_stats(maps.t1, myo);
        row.t1rho = roi_stats(maps.t1rho, myo);
        report.rows.push_back(row);
        if (sink.stack) { sink.stack(tag + "/" + method, out); }
        if (sink.maps) { sink.maps(tag + "/" + method, maps); }
      }
    });
  }
  return report;
}

} // namespace ssjdm
