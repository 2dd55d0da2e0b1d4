#include "qdlink/cli.hpp"

#include "qdlink/calib.hpp"
#include "qdlink/config.hpp"
#include "qdlink/constants.hpp"
#include "qdlink/errors.hpp"
#include "qdlink/qtg_format.hpp"
#include "qdlink/reports.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace qdlink {

namespace {

void print_error(std::ostream& err, const std::string& kind, const std::string& message) {
  err << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << "\n";
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double pair_jitter_sigma_ps(const TimeTagStream& s) {
  return std::sqrt(2.0) * s.header.jitter_fwhm_ps / constants::fwhm_per_sigma;
}

struct SimulateArgs {
  std::string config, out, calibration;
  std::optional<std::uint64_t> seed;
  std::optional<double> duration_s;
};

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  auto cfg = load_run_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.duration_s) cfg.duration_s = *a.duration_s;
  if (!a.calibration.empty()) {
    const auto m = calibration_rotation_from_json(read_json(a.calibration));
    cfg.schedule = compensate_schedule(cfg.schedule, m);
  }
  const auto stream = simulate_schedule(cfg.qd, effective_detection(cfg), cfg.schedule,
                                        rotation_plan(cfg), cfg.duration_s, cfg.seed,
                                        cfg.simulation);
  write_qtg(a.out, stream);
  out << json{{"records", stream.records.size()},
              {"duration_s", cfg.duration_s},
              {"seed", cfg.seed},
              {"out", a.out}}
             .dump()
      << "\n";
  return kExitOk;
}

struct AnalyzeArgs {
  std::string tags, report;
  std::int64_t window_ps = 48;
  std::int64_t bin_ps = 48;
  std::int64_t range_ps = 4800;
  std::string qber = "mean3";
  double report_bin_s = 7200.0;
};

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  const auto stream = read_qtg(a.tags);
  if (stream.header.schedule.empty()) {
    throw FormatError("analysis needs the schedule from the sidecar of " + a.tags);
  }
  HistogramOptions h;
  h.bin_width_ps = a.bin_ps;
  h.range_ps = a.range_ps;
  const auto est = qber_estimator_from_string(a.qber);
  const auto hists = build_fidelity_histograms(stream, h);
  AnalysisSummary s;
  s.bin_width_ps = a.bin_ps;
  s.range_ps = a.range_ps;
  s.window_ps = a.window_ps;
  s.estimator = est;
  s.report_bin_s = a.report_bin_s;
  for (std::size_t i = 0; i < 6; ++i) {
    s.acquisition_s[i] = hists[i].acquisition_s;
    s.total_counts[i] = hists[i].total();
  }
  s.series = fidelity_timeseries(hists, a.window_ps, est);
  s.peak = peak_fidelity(s.series);
  s.trace = fidelity_trace(stream, h, a.window_ps, std::llround(s.peak.t_ps), a.report_bin_s, est);
  s.duration_s = stream.header.duration_s;
  s.record_count = stream.records.size();
  write_json(a.report, analysis_report(s));
  out << json{{"peak_fidelity", s.peak.fidelity},
              {"peak_t_ps", s.peak.t_ps},
              {"qber", s.peak.qber},
              {"report", a.report}}
             .dump()
      << "\n";
  return kExitOk;
}

struct CalibrateArgs {
  std::string tags, refs = "H,D,R", out;
  std::int64_t bin_ps = 16;
  std::int64_t range_ps = 16000;
};

int cmd_calibrate(const CalibrateArgs& a, std::ostream& out) {
  const auto stream = read_qtg(a.tags);
  const auto refs = split_list(a.refs);
  if (refs.size() != 3) throw ConfigError("--refs needs exactly three states, e.g. H,D,R");
  CalibrationOptions o;
  o.bin_width_ps = a.bin_ps;
  o.range_ps = a.range_ps;
  const auto c = calibrate_stream(stream, {refs[0], refs[1], refs[2]}, o);
  write_json(a.out, calibration_to_json(c));
  out << json{{"delta_uev", c.delta.value},
              {"orthogonality_residual", c.orthogonality_residual},
              {"signs_resolved", c.signs_resolved},
              {"out", a.out}}
             .dump()
      << "\n";
  return kExitOk;
}

struct G2Args {
  std::string tags, channel = "XX", report;
  std::int64_t bin_ps = 50;
  std::int64_t range_ps = 10000;
  double g2_source = 0.0;
};

int cmd_g2(const G2Args& a, std::ostream& out) {
  const auto stream = read_qtg(a.tags);
  const auto ch = channel_from_string(a.channel);
  HistogramOptions h;
  h.bin_width_ps = a.bin_ps;
  h.range_ps = a.range_ps;
  G2Summary s;
  s.channel = ch;
  s.histogram = build_histogram(stream, ch, ch, h);
  s.options.g2_source_zero = a.g2_source;
  s.options.jitter_sigma_ps = pair_jitter_sigma_ps(stream);
  s.result = fit_g2(s.histogram, s.options);
  write_json(a.report, g2_report(s));
  out << json{{"g2_zero", s.result.g2_zero},
              {"background_fraction", s.result.background_fraction},
              {"converged", s.result.converged},
              {"report", a.report}}
             .dump()
      << "\n";
  return kExitOk;
}

struct TuneArgs {
  std::string stark, line = "xx", report;
  double target_nm = 1311.0;
  double fss_limit_uev = 10.0;
};

int cmd_tune(const TuneArgs& a, std::ostream& out) {
  std::ifstream in(a.stark);
  if (!in) throw ConfigError("cannot open " + a.stark);
  const auto samples = parse_stark_csv(in);
  const auto line = line_from_string(a.line);
  const auto fit = fit_stark(samples, line);
  const auto plan = tune_plan(fit.params, a.target_nm, a.fss_limit_uev);
  auto j = tune_report(plan, fit, line);
  if (a.report.empty()) {
    out << j.dump(2) << "\n";
  } else {
    write_json(a.report, j);
    out << json{{"feasible", plan.feasible}, {"report", a.report}}.dump() << "\n";
  }
  return plan.feasible ? kExitOk : kExitInfeasible;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"qdlink: entangled-pair link simulator and analysis"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Monte-Carlo time tags from a run config");
  s->add_option("--config", sim.config, "Run config JSON")->required();
  s->add_option("--out", sim.out, "Output .qtg file")->required();
  s->add_option("--seed", sim.seed, "Overrides the config seed");
  s->add_option("--duration-s", sim.duration_s, "Overrides the config duration");
  s->add_option("--calibration", sim.calibration,
                "Calibration artifact; analyzers are compensated through its rotation");

  AnalyzeArgs an;
  auto* a = app.add_subcommand("analyze", "Fidelity, correlations and QBER");
  a->add_option("--tags", an.tags, "Input .qtg file")->required();
  a->add_option("--report", an.report, "Output report JSON")->required();
  a->add_option("--window-ps", an.window_ps, "Post-selection window")->capture_default_str();
  a->add_option("--bin-ps", an.bin_ps, "Histogram bin width")->capture_default_str();
  a->add_option("--range-ps", an.range_ps, "Histogram half range")->capture_default_str();
  a->add_option("--qber", an.qber, "QBER estimator: mean3, hv, hv_da")->capture_default_str();
  a->add_option("--report-bin-s", an.report_bin_s, "Time binning of the QBER trace")
      ->capture_default_str();

  CalibrateArgs ca;
  auto* c = app.add_subcommand("calibrate", "Eigenbasis calibration from co/cross runs");
  c->add_option("--tags", ca.tags, "Input .qtg file")->required();
  c->add_option("--refs", ca.refs, "Three reference states")->capture_default_str();
  c->add_option("--out", ca.out, "Output calibration JSON")->required();
  c->add_option("--bin-ps", ca.bin_ps, "Histogram bin width")->capture_default_str();
  c->add_option("--range-ps", ca.range_ps, "Histogram half range")->capture_default_str();

  G2Args g;
  auto* gc = app.add_subcommand("g2", "Autocorrelation dip fit");
  gc->add_option("--tags", g.tags, "Input .qtg file")->required();
  gc->add_option("--channel", g.channel, "X or XX")->capture_default_str();
  gc->add_option("--report", g.report, "Output report JSON")->required();
  gc->add_option("--bin-ps", g.bin_ps, "Histogram bin width")->capture_default_str();
  gc->add_option("--range-ps", g.range_ps, "Histogram half range")->capture_default_str();
  gc->add_option("--g2-source", g.g2_source, "Emitter g2(0) assumed for the background split")
      ->capture_default_str();

  TuneArgs t;
  auto* tc = app.add_subcommand("tune", "Bias for a CWDM target from Stark data");
  tc->add_option("--stark", t.stark, "CSV with v, lambda_xx_nm, lambda_x_nm, fss_uev")
      ->required();
  tc->add_option("--target", t.target_nm, "Target wavelength, nm")->required();
  tc->add_option("--fss-limit", t.fss_limit_uev, "Maximum FSS, ueV")->capture_default_str();
  tc->add_option("--line", t.line, "xx or x")->capture_default_str();
  tc->add_option("--report", t.report, "Output report JSON (stdout if omitted)");

  std::vector<const char*> argv{"qdlink"};
  for (const auto& x : args) argv.push_back(x.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    print_error(err, "usage", e.what());
    return kExitUsage;
  }

  try {
    if (s->parsed()) return cmd_simulate(sim, out);
    if (a->parsed()) return cmd_analyze(an, out);
    if (c->parsed()) return cmd_calibrate(ca, out);
    if (gc->parsed()) return cmd_g2(g, out);
    if (tc->parsed()) return cmd_tune(t, out);
  } catch (const Error& e) {
    print_error(err, e.kind(), e.what());
    return kExitError;
  } catch (const std::exception& e) {
    print_error(err, "internal", e.what());
    return kExitError;
  }
  print_error(err, "usage", "no subcommand");
  return kExitUsage;
}

}  // namespace qdlink
