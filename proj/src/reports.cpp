#include "qdlink/reports.hpp"

#include "qdlink/constants.hpp"
#include "qdlink/errors.hpp"

#include <cmath>
#include <fstream>

namespace qdlink {

namespace {

// JSON has no NaN or infinity; such values become null.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

const char* kHistNames[6] = {"hv_co", "hv_cross", "da_co", "da_cross", "rl_co", "rl_cross"};

}  // namespace

json fidelity_point_to_json(const FidelityPoint& p) {
  return {{"t_ps", num(p.t_ps)},
          {"c_hv", num(p.c_hv)},
          {"c_da", num(p.c_da)},
          {"c_rl", num(p.c_rl)},
          {"sigma_c_hv", num(p.sigma_hv)},
          {"sigma_c_da", num(p.sigma_da)},
          {"sigma_c_rl", num(p.sigma_rl)},
          {"fidelity", num(p.fidelity)},
          {"sigma_fidelity", num(p.sigma_fidelity)},
          {"qber", num(p.qber)},
          {"window_counts", p.counts}};
}

json analysis_report(const AnalysisSummary& s) {
  json hist = json::object();
  for (std::size_t i = 0; i < 6; ++i) {
    hist[kHistNames[i]] = {{"acquisition_s", num(s.acquisition_s[i])},
                           {"total_counts", s.total_counts[i]}};
  }
  json series = json::array();
  for (const auto& p : s.series) series.push_back(fidelity_point_to_json(p));
  json trace = json::array();
  for (const auto& t : s.trace) {
    json e = {{"t_begin_s", num(t.t_begin_s)}, {"t_end_s", num(t.t_end_s)},
              {"defined", t.defined}};
    if (t.defined) {
      e["fidelity"] = num(t.point.fidelity);
      e["sigma_fidelity"] = num(t.point.sigma_fidelity);
      e["qber"] = num(t.point.qber);
      e["window_counts"] = t.point.counts;
    }
    trace.push_back(e);
  }
  return {{"report", "analysis"},
          {"duration_s", num(s.duration_s)},
          {"record_count", s.record_count},
          {"bin_width_ps", s.bin_width_ps},
          {"range_ps", s.range_ps},
          {"window_ps", s.window_ps},
          {"qber_estimator", to_string(s.estimator)},
          {"report_bin_s", num(s.report_bin_s)},
          {"histograms", hist},
          {"peak", fidelity_point_to_json(s.peak)},
          {"series", series},
          {"trace", trace}};
}

json g2_report(const G2Summary& s) {
  const auto& r = s.result;
  return {{"report", "g2"},
          {"channel", to_string(s.channel)},
          {"bin_width_ps", s.histogram.bin_width_ps},
          {"t_min_ps", s.histogram.t_min_ps},
          {"counts", s.histogram.counts},
          {"acquisition_s", num(s.histogram.acquisition_s)},
          {"g2_source_zero", num(s.options.g2_source_zero)},
          {"jitter_sigma_ps", num(s.options.jitter_sigma_ps)},
          {"g2_zero", num(r.g2_zero)},
          {"sigma_g2_zero", num(r.sigma_g2_zero)},
          {"background_fraction", num(r.background_fraction)},
          {"signal_fraction", num(r.signal_fraction)},
          {"dip_amplitude", num(r.amplitude)},
          {"dip_time_ns", num(r.dip_time_ns)},
          {"t0_ps", num(r.t0_ps)},
          {"normalization_counts", num(r.normalization)},
          {"residual_norm", num(r.residual_norm)},
          {"reduced_chi2", num(r.reduced_chi2)},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"convergence_reason", r.reason}};
}

json calibration_to_json(const CalibrationResult& c) {
  json fits = json::array();
  for (std::size_t i = 0; i < c.fits.size(); ++i) {
    const auto& f = c.fits[i];
    fits.push_back({{"label", f.label},
                    {"reference", stokes_to_json(f.reference)},
                    {"theta_rad", num(f.angles.theta)},
                    {"phi_rad", num(f.angles.phi)},
                    {"sigma_theta_rad", num(f.sigma_theta)},
                    {"sigma_phi_rad", num(f.sigma_phi)},
                    {"delta_uev", num(f.delta_uev)},
                    {"sigma_delta_uev", num(f.sigma_delta_uev)},
                    {"tau_ns", num(f.tau_ns)},
                    {"sigma_tau_ns", num(f.sigma_tau_ns)},
                    {"amplitude_counts", num(f.amplitude)},
                    {"phi_identifiable", f.phi_identifiable},
                    {"insufficient_beat", f.insufficient_beat},
                    {"delta_fixed", f.delta_fixed},
                    {"converged", f.converged},
                    {"iterations", f.iterations},
                    {"reduced_chi2", num(f.reduced_chi2)},
                    {"fit_t_begin_ps", num(f.t_begin_ps)},
                    {"fit_t_end_ps", num(f.t_end_ps)},
                    {"fit_points", f.n_points},
                    {"branch", i < 3 ? c.branch[i] : 0},
                    {"measured", stokes_to_json(i < 3 ? c.measured[i] : f.measured())}});
  }
  json refs = json::object();
  const char* eig[] = {"H", "D", "R"};
  for (std::size_t i = 0; i < c.reference_states.size() && i < 3; ++i) {
    const auto& s = c.reference_states[i];
    const auto a = analyzer_for_stokes(s);
    refs[eig[i]] = {{"stokes", stokes_to_json(s)},
                    {"hwp_deg", num(a.hwp / constants::deg)},
                    {"qwp_deg", num(a.qwp / constants::deg)},
                    {"lp_deg", num(a.lp / constants::deg)}};
  }
  return {{"report", "calibration"},
          {"mueller", rotation_to_json(c.mueller)},
          {"fits", fits},
          {"delta_uev", num(c.delta.value)},
          {"sigma_delta_uev", num(c.delta.sigma)},
          {"delta_chi2", num(c.delta.chi2)},
          {"delta_dof", c.delta.dof},
          {"delta_consistent", c.delta.consistent},
          {"tau_ns", num(c.tau.value)},
          {"sigma_tau_ns", num(c.tau.sigma)},
          {"orthogonality_residual", num(c.orthogonality_residual)},
          {"runner_up_residual", num(c.runner_up_residual)},
          {"signs_resolved", c.signs_resolved},
          {"sign_chi2", num(c.sign_chi2)},
          {"sign_runner_up_chi2", num(c.sign_runner_up_chi2)},
          {"refined", c.refined},
          {"refined_reduced_chi2", num(c.refined_reduced_chi2)},
          {"reference_states", refs}};
}

MuellerRotation calibration_rotation_from_json(const json& j) {
  if (!j.is_object() || !j.contains("mueller")) {
    throw ConfigError("calibration file has no 'mueller' matrix");
  }
  return rotation_from_json(j["mueller"], "calibration.mueller");
}

json tune_report(const TunePlan& plan, const StarkFit& fit, Line line) {
  const auto& p = fit.params;
  json j = {{"report", "tune"},
            {"line", to_string(line)},
            {"feasible", plan.feasible},
            {"reason", plan.reason},
            {"message", plan.message},
            {"target_nm", num(plan.target_nm)},
            {"fss_limit_uev", num(plan.fss_limit_uev)},
            {"range_min_nm", num(plan.range_min_nm)},
            {"range_max_nm", num(plan.range_max_nm)},
            {"stark",
             {{"e0_uev", num(p.e0_uev)},
              {"p_uev_per_v", num(p.p_uev_per_v)},
              {"beta_uev_per_v2", num(p.beta_uev_per_v2)},
              {"s_min_uev", num(p.s_min_uev)},
              {"gamma_uev_per_v", num(p.gamma_uev_per_v)},
              {"v0_v", num(p.v0_v)},
              {"v_min_v", num(p.v_min)},
              {"v_max_v", num(p.v_max)},
              {"rms_lambda_nm", num(fit.rms_lambda_nm)},
              {"rms_fss_uev", num(fit.rms_fss_uev)},
              {"converged", fit.converged}}}};
  if (plan.reason != "out_of_range") {
    j["bias_v"] = num(plan.bias_v);
    j["lambda_nm"] = num(plan.lambda_nm);
    j["fss_uev"] = num(plan.fss_uev);
  }
  return j;
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("cannot open " + path.string() + " for writing");
  f << j.dump(2) << "\n";
  if (!f) throw FormatError("write failed for " + path.string());
}

json read_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path.string());
  try {
    json j;
    f >> j;
    return j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace qdlink
