// Command-line entry point. Every subcommand writes into its own output
// directory and finishes with a manifest.json of content hashes.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure,
// 1 anything else (I/O and the like).

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>

#include "ssjdm/config.hpp"
#include "ssjdm/io.hpp"
#include "ssjdm/pipeline.hpp"

using namespace ssjdm;
namespace fs = std::filesystem;

namespace {

ExperimentConfig load_or_default(std::string const &path)
{
  return path.empty() ? ExperimentConfig{} : load_experiment(path);
}

std::uint64_t accel_key(double accel) { return std::uint64_t(std::llround(accel * 1000)); }

/// Slice index 0 is the evaluation slice of `run`; k ≥ 1 is training slice k−1.
std::uint64_t slice_seed(ExperimentConfig const &cfg, std::size_t index)
{
  return index == 0 ? split_seed(cfg.seed, 1) : split_seed(cfg.seed, 100 + index - 1);
}

Slice load_slice(fs::path const &dir)
{
  Slice s;
  s.phantom = io::load_phantom(dir / "phantom");
  s.truth = io::load_stack(dir / "truth.mcmr");
  s.sens = io::load_sensitivities(dir / "sens.mcmr");
  s.seed = io::read_json(dir / "slice.json").at("seed");
  return s;
}

/// An acquire output directory: k-space, its coil maps, normalized.
Measurement load_measurement(fs::path const &dir)
{
  return normalize(io::load_kspace(dir), io::load_sensitivities(dir / "sens.mcmr"));
}

void write_stack(io::OutputDir &out, std::string const &stem, ContrastStack const &x)
{
  io::save_stack(out, stem + ".mcmr", x);
  io::export_preview(out, stem + "_magnitude", x, io::PreviewMode::Magnitude);
}

void print_report(ExperimentReport const &r)
{
  std::printf("%-6s %-18s %10s %10s %10s\n", "R", "method", "nrmse", "T1", "T1rho");
  for (auto const &row : r.rows) {
    std::printf("%-6g %-18s %10.5f %10.2f %10.2f\n", row.accel, row.method.c_str(), row.nrmse, row.t1.mean,
                row.t1rho.mean);
  }
  std::printf("truth myocardium: T1 %.2f ms, T1rho %.2f ms\n", r.truth_t1, r.truth_t1rho);
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Self-supervised joint diffusion model for multi-contrast MR reconstruction and T1/T1rho mapping"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "experiment config file (built-in defaults when omitted; configs/desk holds the tuned desk run)");

  // phantom
  auto *ph = app.add_subcommand("phantom", "generate a phantom slice, its contrast images and coil maps");
  std::string ph_out;
  std::size_t ph_index = 0;
  ph->add_option("--out", ph_out, "output directory")->required();
  ph->add_option("--index", ph_index, "slice index: 0 evaluation slice, k >= 1 training slice k-1");

  // acquire
  auto *aq = app.add_subcommand("acquire", "undersample a phantom slice with a Poisson-disc mask");
  std::string aq_phantom, aq_out;
  double aq_accel = 4;
  aq->add_option("--phantom", aq_phantom, "phantom directory")->required();
  aq->add_option("--accel", aq_accel, "acceleration rate R");
  aq->add_option("--out", aq_out, "output directory")->required();

  // train-bcnn
  auto *tb = app.add_subcommand("train-bcnn", "train the Bayesian reconstruction network on undersampled data");
  std::vector<std::string> tb_data;
  std::string tb_out;
  tb->add_option("--data", tb_data, "acquire output directories")->required();
  tb->add_option("--out", tb_out, "checkpoint directory")->required();

  // train-score
  auto *ts = app.add_subcommand("train-score", "train a score network on BCNN posterior draws");
  std::vector<std::string> ts_data;
  std::string ts_bcnn, ts_out, ts_mode = "joint";
  ts->add_option("--bcnn", ts_bcnn, "BCNN checkpoint")->required();
  ts->add_option("--data", ts_data, "acquire output directories")->required();
  ts->add_option("--mode", ts_mode, "joint or independent")->check(CLI::IsMember({"joint", "independent"}));
  ts->add_option("--out", ts_out, "checkpoint directory")->required();

  // reconstruct
  auto *rc = app.add_subcommand("reconstruct", "reconstruct undersampled k-space with a trained model");
  std::string rc_kspace, rc_score, rc_bcnn, rc_out;
  rc->add_option("--kspace", rc_kspace, "acquire output directory")->required();
  auto *rc_s = rc->add_option("--score", rc_score, "score checkpoint (Langevin reconstruction)");
  auto *rc_b = rc->add_option("--bcnn", rc_bcnn, "BCNN checkpoint (posterior-mean reconstruction)");
  rc_s->excludes(rc_b);
  rc->add_option("--out", rc_out, "output directory")->required();

  // baseline-tv
  auto *tv = app.add_subcommand("baseline-tv", "TV-regularized compressed sensing reconstruction");
  std::string tv_kspace, tv_out;
  double tv_lambda = -1;
  tv->add_option("--kspace", tv_kspace, "acquire output directory")->required();
  tv->add_option("--lambda", tv_lambda, "regularization weight (normalized units); default from config");
  tv->add_option("--out", tv_out, "output directory")->required();

  // map
  auto *mp = app.add_subcommand("map", "dictionary-match a reconstruction into T1/T1rho maps");
  std::string mp_recon, mp_out;
  mp->add_option("--recon", mp_recon, "reconstruction .mcmr file")->required();
  mp->add_option("--out", mp_out, "output directory")->required();

  // eval
  auto *ev = app.add_subcommand("eval", "score reconstructions against the phantom ground truth");
  std::string ev_truth, ev_out;
  std::vector<std::string> ev_recon;
  double ev_accel = 0;
  ev->add_option("--truth", ev_truth, "phantom directory")->required();
  ev->add_option("--recon", ev_recon, "method=file.mcmr pairs")->required();
  ev->add_option("--accel", ev_accel, "acceleration label for the report");
  ev->add_option("--out", ev_out, "output directory")->required();

  // run
  auto *rn = app.add_subcommand("run", "run the full experiment and write the report");
  std::string rn_out;
  bool rn_dry = false;
  rn->add_option("--out", rn_out, "output directory (overrides the config)");
  rn->add_flag("--dry-run", rn_dry, "validate the config and print the stage plan without writing anything");

  try {
    app.parse(argc, argv);
  } catch (CLI::ParseError const &e) {
    int const code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    ExperimentConfig cfg = load_or_default(config_path);
    cfg.validate();
    AcquisitionSchedule const sched = default_schedule(cfg.rr_ms);

    if (*ph) {
      io::OutputDir out(ph_out);
      Slice const s = make_slice(cfg, sched, slice_seed(cfg, ph_index));
      io::save_phantom(out, "phantom", s.phantom);
      write_stack(out, "truth", s.truth);
      io::save_sensitivities(out, "sens.mcmr", s.sens);
      out.write_text("slice.json", io::json{{"seed", s.seed}, {"index", ph_index}}.dump(2) + "\n");
      out.finish();
    } else if (*aq) {
      io::OutputDir out(aq_out);
      Slice const s = load_slice(aq_phantom);
      KSpaceSet const y = acquire(cfg, s, aq_accel);
      io::save_kspace(out, ".", y);
      io::save_sensitivities(out, "sens.mcmr", s.sens);
      write_stack(out, "zero_fill", zero_fill(y, s.sens));
      out.finish();
    } else if (*tb) {
      io::OutputDir out(tb_out);
      std::vector<Measurement> train;
      for (auto const &d : tb_data) { train.push_back(load_measurement(d)); }
      BcnnConfig bc = cfg.bcnn;
      bc.seed = split_seed(split_seed(cfg.seed, 10), accel_key(train[0].y.mask.target_accel));
      BcnnModel const m = fit_bcnn(train, bc, [](std::string const &msg) { std::cerr << "train-bcnn: " << msg << "\n"; });
      io::save_bcnn(out, ".", m);
      out.finish();
    } else if (*ts) {
      io::OutputDir out(ts_out);
      BcnnModel const m = io::load_bcnn(ts_bcnn);
      std::vector<Measurement> train;
      for (auto const &d : ts_data) { train.push_back(load_measurement(d)); }
      auto const key = accel_key(train[0].y.mask.target_accel);
      auto const pool = score_training_pool(m, train, cfg.bcnn_draws, split_seed(split_seed(cfg.seed, 12), key));
      ScoreConfig sc = cfg.score;
      sc.mode = ts_mode == "joint" ? ScoreMode::Joint : ScoreMode::Independent;
      sc.seed = split_seed(split_seed(cfg.seed, sc.mode == ScoreMode::Joint ? 20 : 21), key);
      ScoreNet const net = fit_score(pool, make_noise_schedule(cfg.eps_min, cfg.eps_max, cfg.scales), sc,
                                     [](std::string const &msg) { std::cerr << "train-score: " << msg << "\n"; });
      io::save_score(out, ".", net);
      out.finish();
    } else if (*rc) {
      if (rc_score.empty() == rc_bcnn.empty()) { throw ConfigError("reconstruct: give exactly one of --score or --bcnn"); }
      io::OutputDir out(rc_out);
      Measurement const meas = load_measurement(rc_kspace);
      auto const key = accel_key(meas.y.mask.target_accel);
      ContrastStack x;
      if (!rc_score.empty()) {
        SamplerConfig sc = cfg.sampler;
        sc.seed = split_seed(split_seed(cfg.seed, 30), key);
        x = ssjdm_reconstruct(io::load_score(rc_score), meas, sc);
      } else {
        x = bcnn_mean(io::load_bcnn(rc_bcnn), meas, cfg.bcnn_draws, split_seed(split_seed(cfg.seed, 11), key));
      }
      write_stack(out, "recon", finalize(x, meas));
      out.finish();
    } else if (*tv) {
      io::OutputDir out(tv_out);
      Measurement const meas = load_measurement(tv_kspace);
      TvConfig tc = cfg.tv;
      if (tv_lambda >= 0) { tc.lambda = tv_lambda; }
      TvResult const r = tv_cs_reconstruct(meas.y, meas.sens, tc);
      write_stack(out, "recon", finalize(r.x, meas));
      std::string trace = "iteration,objective\n";
      for (std::size_t i = 0; i < r.objective.size(); ++i) { trace += std::to_string(i) + "," + cfgval::fmt(r.objective[i]) + "\n"; }
      out.write_text("objective.csv", trace);
      out.finish();
    } else if (*mp) {
      io::OutputDir out(mp_out);
      ContrastStack const x = io::load_stack(mp_recon);
      Dictionary const d = build_dictionary(cfg.grid, sched);
      io::save_maps(out, ".", map_stack(x, d, cfg.map_threshold));
      out.finish();
    } else if (*ev) {
      io::OutputDir out(ev_out);
      Slice const s = load_slice(ev_truth);
      MaskGrid const myo = region_mask(s.phantom, Myocardium);
      Dictionary const d = build_dictionary(cfg.grid, sched);
      ExperimentReport rep;
      rep.truth_t1 = roi_stats(s.phantom.t1, myo).mean;
      rep.truth_t1rho = roi_stats(s.phantom.t1rho, myo).mean;
      std::vector<std::pair<std::string, ContrastStack>> methods;
      for (auto const &spec : ev_recon) {
        auto const eq = spec.find('=');
        if (eq == std::string::npos) { throw ConfigError("eval: --recon expects method=file, got '" + spec + "'"); }
        methods.emplace_back(spec.substr(0, eq), io::load_stack(spec.substr(eq + 1)));
      }
      std::vector<ContrastStack const *> ptrs;
      for (auto const &[name, x] : methods) { ptrs.push_back(&x); }
      io::Window const shared = io::shared_error_window(ptrs, s.truth);
      for (auto const &[name, x] : methods) {
        ParameterMapSet const maps = map_stack(x, d, cfg.map_threshold);
        rep.rows.push_back({ev_accel, name, nrmse(x, s.truth), roi_stats(maps.t1, myo), roi_stats(maps.t1rho, myo)});
        io::export_preview(out, name + "/error", x, io::PreviewMode::Error, &s.truth, shared);
        io::save_maps(out, name + "/maps", maps);
      }
      out.write_text("report.csv", rep.csv());
      out.finish();
      print_report(rep);
    } else if (*rn) {
      if (!rn_out.empty()) { cfg.output_dir = rn_out; }
      if (rn_dry) {
        std::printf("config ok; output directory %s\n", cfg.output_dir.c_str());
        for (auto const &stage : stage_plan(cfg)) { std::printf("  %s\n", stage.c_str()); }
        return 0;
      }
      io::OutputDir out(cfg.output_dir);
      out.write_text("config.ini", experiment_to_file(cfg).str());
      std::string log;
      auto const t0 = std::chrono::steady_clock::now();
      ContrastStack truth;
      std::vector<std::pair<std::string, ContrastStack>> finals;
      ArtifactSink sink;
      sink.log = [&](std::string const &stage, std::string const &msg) {
        double const t = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        char line[512];
        std::snprintf(line, sizeof line, "[%8.1fs] %s: %s\n", t, stage.c_str(), msg.c_str());
        std::cerr << line;
        log += line;
      };
      sink.phantom = [&](std::string const &name, ParameterMaps const &p) { io::save_phantom(out, name, p); };
      sink.stack = [&](std::string const &name, ContrastStack const &x) {
        write_stack(out, name, x);
        if (name == "truth") {
          truth = x;
        } else {
          finals.emplace_back(name, x);
        }
      };
      sink.maps = [&](std::string const &name, ParameterMapSet const &m) { io::save_maps(out, name + "_maps", m); };
      try {
        ExperimentReport const rep = run_experiment(cfg, sink);
        // Error images share one window per acceleration so methods compare directly.
        for (double accel : cfg.accelerations) {
          std::string const tag = accel_tag(accel) + "/";
          std::vector<ContrastStack const *> group;
          for (auto const &[name, x] : finals) {
            if (name.rfind(tag, 0) == 0) { group.push_back(&x); }
          }
          io::Window const w = io::shared_error_window(group, truth);
          for (auto const &[name, x] : finals) {
            if (name.rfind(tag, 0) == 0) { io::export_preview(out, name + "_error", x, io::PreviewMode::Error, &truth, w); }
          }
        }
        out.write_text("report.csv", rep.csv());
        out.write_text("log.txt", log);
        out.finish();
        print_report(rep);
      } catch (...) {
        out.write_text("log.txt", log);
        out.finish();
        throw;
      }
    }
    return 0;
  } catch (ConfigError const &e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (NumericalError const &e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (std::exception const &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
