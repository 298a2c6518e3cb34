// spadcorr: simulate, correlate, correct and evaluate SPAD-array photon-pair data.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "spadcorr/config.hpp"
#include "spadcorr/pipeline.hpp"
#include "spadcorr/report.hpp"
#include "spadcorr/snapshot_io.hpp"

namespace {

using namespace spadcorr;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::optional<std::uint64_t> frames;
};

void add_common(CLI::App* sub, CommonOptions& o) {
  sub->add_option("--config", o.config_path, "run configuration (key = value file)");
  sub->add_option("--set", o.overrides, "override a config key: key=value (repeatable)");
  sub->add_option("--seed", o.seed, "random seed");
  sub->add_option("--workers", o.workers, "worker threads");
}

RunConfig load(const CommonOptions& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ConfigError, "--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, cfg_detail::trim(kv.substr(0, eq)), cfg_detail::trim(kv.substr(eq + 1)));
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.workers) cfg.workers = std::max(1u, *o.workers);
  if (o.frames) cfg.frames = *o.frames;
  validate(cfg);
  return cfg;
}

MappingMode parse_mode(const std::string& s) {
  if (s == "near") return MappingMode::NearField;
  if (s == "far") return MappingMode::FarField;
  throw Error(ErrorCode::ConfigError, "mode must be near or far");
}

template <class Fn>
void with_output(const std::string& path, Fn&& fn) {
  if (path.empty() || path == "-") {
    fn(std::cout);
    return;
  }
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::ConfigError, "cannot open " + path + " for writing");
  fn(os);
}

std::string read_magic(const std::string& path) {
  auto is = open_input(path);
  char buf[8] = {};
  is.read(buf, 8);
  return std::string(buf, static_cast<std::size_t>(is.gcount()));
}

CorrectedSnapshot load_corrected(const std::string& path) {
  auto is = open_input(path);
  return read_corrected(is);
}

CorrelationAccumulator load_accumulator(const std::string& path) {
  auto is = open_input(path);
  return read_accumulator(is);
}

/// Numeric failure when any enabled method is missing from the report.
bool report_complete(const EprReport& r, const RunConfig& cfg) {
  bool ok = true;
  for (const AxisReport* a : {&r.x, &r.y})
    for (Method m : kAllMethods) {
      const auto i = static_cast<std::size_t>(m);
      if (cfg.methods[i] && !a->methods[i]) {
        std::cerr << "spadcorr: method " << to_string(m) << " failed: " << a->notes[i] << '\n';
        ok = false;
      }
    }
  return ok;
}

int emit_report(const EprReport& r, const RunConfig& cfg, const std::string& json_path, const std::string& table_path) {
  const auto expected = predict_epr(cfg.source_model());
  with_output(json_path, [&](std::ostream& os) { os << to_json(r, expected).dump(2) << '\n'; });
  if (!table_path.empty()) with_output(table_path, [&](std::ostream& os) { os << render_table(r, expected); });
  return report_complete(r, cfg) ? 0 : static_cast<int>(ErrorClass::Numeric);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SPAD-array photon-pair correlation toolkit"};
  app.require_subcommand(1);

  CommonOptions common;

  auto* sim = app.add_subcommand("simulate", "simulate frames into an event file");
  add_common(sim, common);
  std::string sim_mode, sim_out;
  sim->add_option("--mode", sim_mode, "near or far")->required();
  sim->add_option("--out", sim_out, "event file")->required();
  sim->add_option("--frames", common.frames, "number of frames");

  auto* cor = app.add_subcommand("correlate", "accumulate an event file");
  add_common(cor, common);
  std::string cor_in, cor_out;
  cor->add_option("--in", cor_in, "event file")->required();
  cor->add_option("--out", cor_out, "accumulator snapshot")->required();

  auto* corr = app.add_subcommand("correct", "accidental, cross-talk and neighbor corrections");
  add_common(corr, common);
  std::string corr_far, corr_near, corr_dir;
  corr->add_option("--far", corr_far, "far-field accumulator (source of the cross-talk estimate)");
  corr->add_option("--near", corr_near, "near-field accumulator");
  corr->add_option("--out-dir", corr_dir, "output directory")->required();

  auto* epr = app.add_subcommand("epr", "evaluate EPR variances from corrected tensors");
  add_common(epr, common);
  std::string epr_near, epr_far, epr_out, epr_table;
  epr->add_option("--near", epr_near, "near-field corrected tensor")->required();
  epr->add_option("--far", epr_far, "far-field corrected tensor")->required();
  epr->add_option("--out", epr_out, "JSON report (default stdout)");
  epr->add_option("--table", epr_table, "text table");

  auto* pipe = app.add_subcommand("pipeline", "simulate, correlate, correct and evaluate");
  add_common(pipe, common);
  std::string pipe_dir;
  pipe->add_option("--out-dir", pipe_dir, "output directory")->required();
  pipe->add_option("--frames", common.frames, "frames per field");

  auto* exp = app.add_subcommand("export", "plot data from an artifact");
  add_common(exp, common);
  std::string exp_what, exp_in, exp_out, exp_proj = "x", exp_axis = "x";
  exp->add_option("--what", exp_what, "dt-hist | matrix | projection | peak | crosstalk")
      ->required()
      ->check(CLI::IsMember({"dt-hist", "matrix", "projection", "peak", "crosstalk"}));
  exp->add_option("--in", exp_in, "accumulator or corrected tensor")->required();
  exp->add_option("--out", exp_out, "output CSV (default stdout)");
  exp->add_option("--projection", exp_proj, "x | y | sum | diff")->check(CLI::IsMember({"x", "y", "sum", "diff"}));
  exp->add_option("--axis", exp_axis, "x | y (peak export)")->check(CLI::IsMember({"x", "y"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorClass::Config);
  }

  try {
    const RunConfig cfg = load(common);

    if (*sim) {
      const SimulationSetup setup = cfg.setup(parse_mode(sim_mode));
      const std::size_t bytes = simulate_to_file(setup, cfg.frames, cfg.workers, sim_out);
      std::cerr << "wrote " << cfg.frames << " frames (" << bytes << " bytes) to " << sim_out << '\n';
      return 0;
    }

    if (*cor) {
      const CorrelatedFile r = correlate_file(cor_in, cfg.accumulator_params(), cfg.workers);
      save_file(cor_out, r.acc, write_accumulator);
      return 0;
    }

    if (*corr) {
      std::filesystem::create_directories(corr_dir);
      std::optional<CrosstalkMap> map;
      if (corr_far.empty() && (corr_near.empty() || cfg.estimate_crosstalk))
        throw Error(ErrorCode::ConfigError, "correct needs --far (cross-talk is estimated from far-field data)");
      if (!corr_far.empty()) {
        const CorrectedSnapshot far = correct(load_accumulator(corr_far), MappingMode::FarField, cfg, map);
        save_file(corr_dir + "/far.g2c", far, write_corrected);
        if (map) with_output(corr_dir + "/crosstalk.csv", [&](std::ostream& os) { write_crosstalk_csv(os, *map); });
      }
      if (!corr_near.empty()) {
        const CorrectedSnapshot near = correct(load_accumulator(corr_near), MappingMode::NearField, cfg, map);
        save_file(corr_dir + "/near.g2c", near, write_corrected);
      }
      return 0;
    }

    if (*epr) {
      const CorrectedSnapshot near = load_corrected(epr_near);
      const CorrectedSnapshot far = load_corrected(epr_far);
      if (near.mapping == MappingMode::FarField || far.mapping == MappingMode::NearField)
        throw Error(ErrorCode::ConfigError, "near/far tensors swapped");
      return emit_report(evaluate_epr(near.g2, far.g2, cfg.epr_options()), cfg, epr_out, epr_table);
    }

    if (*pipe) {
      std::filesystem::create_directories(pipe_dir);
      const PipelineResult r = run_pipeline(cfg, pipe_dir);
      if (r.crosstalk)
        with_output(pipe_dir + "/crosstalk.csv", [&](std::ostream& os) { write_crosstalk_csv(os, *r.crosstalk); });
      with_output(pipe_dir + "/dt_hist_near.csv", [&](std::ostream& os) { write_dt_hist_csv(os, r.near_acc); });
      with_output(pipe_dir + "/dt_hist_far.csv", [&](std::ostream& os) { write_dt_hist_csv(os, r.far_acc); });
      const int rc = emit_report(r.report, cfg, pipe_dir + "/report.json", pipe_dir + "/report.txt");
      std::cout << render_table(r.report, predict_epr(cfg.source_model()));
      return rc;
    }

    if (*exp) {
      const std::string magic = read_magic(exp_in);
      const bool is_acc = magic == std::string(kAccumulatorMagic, 8);
      if (!is_acc && magic != std::string(kCorrectedMagic, 8))
        throw Error(ErrorCode::BadMagic, exp_in + " is neither an accumulator nor a corrected tensor");

      if (exp_what == "dt-hist") {
        if (!is_acc) throw Error(ErrorCode::ConfigError, "dt-hist needs an accumulator snapshot");
        const auto acc = load_accumulator(exp_in);
        with_output(exp_out, [&](std::ostream& os) { write_dt_hist_csv(os, acc); });
        return 0;
      }
      if (exp_what == "crosstalk") {
        if (!is_acc) throw Error(ErrorCode::ConfigError, "crosstalk export needs a far-field accumulator snapshot");
        std::optional<CrosstalkMap> map;
        RunConfig c = cfg;
        c.estimate_crosstalk = true;
        correct(load_accumulator(exp_in), MappingMode::FarField, c, map);
        with_output(exp_out, [&](std::ostream& os) { write_crosstalk_csv(os, *map); });
        return 0;
      }

      CorrectedSnapshot snap;
      if (is_acc) {
        const auto acc = load_accumulator(exp_in);
        snap.g2 = normalize(acc);
        snap.g1 = normalized_g1(acc);
      } else {
        snap = load_corrected(exp_in);
      }
      if (exp_what == "matrix") {
        with_output(exp_out, [&](std::ostream& os) { write_matrix_csv(os, snap.g2); });
      } else if (exp_what == "projection") {
        const AxisProjections ax = project_axes(snap.g2);
        const SumDiffProjections sd = project_sum_diff(snap.g2);
        const Table2D& t = exp_proj == "x" ? ax.x : exp_proj == "y" ? ax.y : exp_proj == "sum" ? sd.plus : sd.minus;
        with_output(exp_out, [&](std::ostream& os) { write_table_csv(os, t); });
      } else {
        if (snap.mapping == MappingMode::Unspecified)
          throw Error(ErrorCode::ConfigError, "peak export needs a corrected tensor with a known mapping");
        const SumDiffProjections sd = project_sum_diff(snap.g2);
        Table2D t = snap.mapping == MappingMode::NearField ? sd.minus : sd.plus;
        if (exp_axis == "y") t = transposed(t);
        const double unit = std::pow(per_mframe_scale(snap.g2.n_frames), 2);
        const PeakProfile prof = peak_profile(t, true, unit, cfg.mask_threshold);
        std::optional<GaussianFit> fit;
        try {
          fit = fit_gaussian_1d(prof.coordinate, prof.value, prof.weight);
        } catch (const Error& e) {
          std::cerr << "spadcorr: peak fit skipped: " << e.what() << '\n';
        }
        with_output(exp_out, [&](std::ostream& os) { write_peak_csv(os, prof, fit); });
      }
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "spadcorr: " << e.what() << '\n';
    return static_cast<int>(classify(e.code()));
  } catch (const std::exception& e) {
    std::cerr << "spadcorr: " << e.what() << '\n';
    return static_cast<int>(ErrorClass::Data);
  }
  return 0;
}
