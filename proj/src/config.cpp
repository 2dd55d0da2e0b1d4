#include "qdlink/config.hpp"

#include "qdlink/errors.hpp"

#include <fstream>
#include <set>

namespace qdlink {

namespace {

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : obj.items()) {
    (void)v;
    if (!ok.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

Schedule parse_schedule(const json& j, double default_dwell) {
  if (j.is_null()) return fidelity_schedule(default_dwell);
  if (j.is_string()) {
    const auto kind = j.get<std::string>();
    if (kind == "fidelity") return fidelity_schedule(default_dwell);
    if (kind == "calibration") return calibration_schedule({"H", "D", "R"}, default_dwell);
    throw ConfigError("schedule: unknown preset '" + kind + "'");
  }
  if (j.is_object()) {
    check_keys(j, {"type", "refs", "dwell_s", "cross_bases"}, "schedule");
    const double dwell = get_number(j, "dwell_s", default_dwell);
    const auto kind = j.value("type", std::string("fidelity"));
    if (kind == "fidelity") return fidelity_schedule(dwell);
    if (kind == "calibration") {
      std::vector<std::string> refs{"H", "D", "R"};
      if (j.contains("refs")) refs = j["refs"].get<std::vector<std::string>>();
      return calibration_schedule(refs, dwell, j.value("cross_bases", true));
    }
    throw ConfigError("schedule: unknown type '" + kind + "'");
  }
  if (!j.is_array()) throw ConfigError("schedule must be a preset name, object or list");
  Schedule s;
  std::uint8_t next_id = 0;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& e = j[i];
    const std::string where = "schedule[" + std::to_string(i) + "]";
    check_keys(e, {"basis_id", "label", "polarity", "analyzer_x", "analyzer_xx", "dwell_s"},
               where);
    BasisEntry b;
    const int id = e.value("basis_id", static_cast<int>(next_id));
    if (id < 0 || id > 255) throw ConfigError(where + ": basis_id must be 0..255");
    b.basis_id = static_cast<std::uint8_t>(id);
    next_id = static_cast<std::uint8_t>(id + 1);
    b.label = e.value("label", std::string("custom"));
    b.polarity = polarity_from_string(e.value("polarity", std::string("co")));
    if (!e.contains("analyzer_x") || !e.contains("analyzer_xx")) {
      throw ConfigError(where + ": analyzer_x and analyzer_xx are required");
    }
    b.analyzer_x = stokes_from_json(e["analyzer_x"], where + ".analyzer_x");
    b.analyzer_xx = stokes_from_json(e["analyzer_xx"], where + ".analyzer_xx");
    b.dwell_s = get_number(e, "dwell_s", default_dwell);
    s.push_back(b);
  }
  return s;
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  try {
    check_keys(j, {"seed", "duration_s", "dwell_s", "qd", "detection", "link",
                   "source_rotation", "schedule", "simulation"},
               "config");
    RunConfig c;
    if (j.contains("seed")) {
      if (!j["seed"].is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
      c.seed = j["seed"].get<std::uint64_t>();
    }
    c.duration_s = get_number(j, "duration_s", c.duration_s);
    const double dwell = get_number(j, "dwell_s", 600.0);

    if (j.contains("qd")) {
      const auto& q = j["qd"];
      check_keys(q, {"fss_uev", "tau_corr_ns", "tau_xx_ns", "tau_x_ns", "lambda_xx_nm",
                     "lambda_x_nm", "pair_rate_hz"},
                 "qd");
      c.qd.fss_uev = get_number(q, "fss_uev", c.qd.fss_uev);
      c.qd.tau_corr_ns = get_number(q, "tau_corr_ns", c.qd.tau_corr_ns);
      c.qd.tau_xx_ns = get_number(q, "tau_xx_ns", c.qd.tau_xx_ns);
      c.qd.tau_x_ns = get_number(q, "tau_x_ns", c.qd.tau_x_ns);
      c.qd.lambda_xx_nm = get_number(q, "lambda_xx_nm", c.qd.lambda_xx_nm);
      c.qd.lambda_x_nm = get_number(q, "lambda_x_nm", c.qd.lambda_x_nm);
      c.qd.pair_rate_hz = get_number(q, "pair_rate_hz", c.qd.pair_rate_hz);
    }
    if (j.contains("detection")) {
      const auto& d = j["detection"];
      check_keys(d, {"jitter_fwhm_ps", "efficiency_x", "efficiency_xx", "background_rate_x_hz",
                     "background_rate_xx_hz", "resolution_ps"},
                 "detection");
      auto& t = c.detection;
      t.jitter_fwhm_ps = get_number(d, "jitter_fwhm_ps", t.jitter_fwhm_ps);
      t.efficiency_x = get_number(d, "efficiency_x", t.efficiency_x);
      t.efficiency_xx = get_number(d, "efficiency_xx", t.efficiency_xx);
      t.background_rate_x_hz = get_number(d, "background_rate_x_hz", t.background_rate_x_hz);
      t.background_rate_xx_hz = get_number(d, "background_rate_xx_hz", t.background_rate_xx_hz);
      const double res = get_number(d, "resolution_ps", 1.0);
      if (!(res >= 1.0 && res <= 65535.0) || res != std::floor(res)) {
        throw ConfigError("detection.resolution_ps must be an integer in 1..65535");
      }
      c.simulation.resolution_ps = static_cast<std::uint16_t>(res);
    }
    if (j.contains("link")) {
      const auto& l = j["link"];
      check_keys(l, {"length_km", "loss_db", "rotation", "drift_rate_deg_per_hr", "classical"},
                 "link");
      c.link.length_km = get_number(l, "length_km", c.link.length_km);
      c.link.loss_db = get_number(l, "loss_db", c.link.loss_db);
      if (l.contains("rotation")) c.link.mueller = rotation_from_json(l["rotation"], "link.rotation");
      c.link.drift_rate_deg_per_hr = get_number(l, "drift_rate_deg_per_hr", 0.0);
      if (l.contains("classical")) {
        const auto& k = l["classical"];
        check_keys(k, {"launch_power_uw", "isolation_db", "k_hz_per_uw"}, "link.classical");
        c.link.classical.launch_power_uw = get_number(k, "launch_power_uw", 0.0);
        c.link.classical.isolation_db = get_number(k, "isolation_db", 0.0);
        c.link.classical.k_hz_per_uw = get_number(k, "k_hz_per_uw", 0.0);
      }
      if (!(c.link.loss_db >= 0.0)) throw ConfigError("link.loss_db must be >= 0");
      if (!(c.link.drift_rate_deg_per_hr >= 0.0)) {
        throw ConfigError("link.drift_rate_deg_per_hr must be >= 0");
      }
    }
    if (j.contains("source_rotation")) {
      c.source_rotation = rotation_from_json(j["source_rotation"], "source_rotation");
    }
    c.schedule = parse_schedule(j.contains("schedule") ? j["schedule"] : json(), dwell);
    if (j.contains("simulation")) {
      const auto& s = j["simulation"];
      check_keys(s, {"shard_s", "max_threads"}, "simulation");
      c.simulation.shard_s = get_number(s, "shard_s", c.simulation.shard_s);
      const double th = get_number(s, "max_threads", 0.0);
      if (!(th >= 0.0) || th != std::floor(th)) {
        throw ConfigError("simulation.max_threads must be a non-negative integer");
      }
      c.simulation.max_threads = static_cast<unsigned>(th);
    }
    c.qd.validate();
    c.detection.validate();
    validate_schedule(c.schedule);
    if (!(c.duration_s > 0.0)) throw ConfigError("duration_s must be positive");
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

DetectionConfig effective_detection(const RunConfig& cfg) {
  auto d = cfg.detection;
  d.efficiency_xx *= loss_to_efficiency(cfg.link.loss_db);
  const auto& k = cfg.link.classical;
  d.background_rate_xx_hz += crosstalk_background(k.launch_power_uw, k.isolation_db, k.k_hz_per_uw);
  return d;
}

RotationPlan rotation_plan(const RunConfig& cfg) {
  RotationPlan plan;
  plan.x = cfg.source_rotation;
  plan.xx = cfg.source_rotation * cfg.link.mueller;
  if (cfg.link.drift_rate_deg_per_hr > 0.0) {
    std::vector<double> hours;
    for (const auto& seg : schedule_segments(cfg.schedule, cfg.duration_s)) {
      hours.push_back(static_cast<double>(seg.t_end_ps - seg.t_begin_ps) / 3.6e15);
    }
    const auto drift = drift_rotations(cfg.link.mueller, hours, cfg.link.drift_rate_deg_per_hr,
                                       derive_seed(cfg.seed, 0xD21F7ull));
    for (const auto& m : drift) plan.xx_per_segment.push_back(cfg.source_rotation * m);
  }
  return plan;
}

Schedule compensate_schedule(const Schedule& schedule, const MuellerRotation& m) {
  Schedule out = schedule;
  const auto inv = m.inverse();
  for (auto& e : out) {
    e.analyzer_x = inv.apply(e.analyzer_x);
    e.analyzer_xx = inv.apply(e.analyzer_xx);
  }
  return out;
}

}  // namespace qdlink
