#include "qdlink/linkmodel.hpp"

#include "qdlink/constants.hpp"
#include "qdlink/errors.hpp"
#include "qdlink/lsq.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

namespace qdlink {

double loss_to_efficiency(double loss_db) {
  if (!(loss_db >= 0.0) || !std::isfinite(loss_db)) throw ConfigError("loss_db must be >= 0");
  return std::pow(10.0, -loss_db / 10.0);
}

double crosstalk_background(double launch_power_uw, double isolation_db,
                            double k_hz_per_uw) {
  if (!(launch_power_uw >= 0.0) || !(k_hz_per_uw >= 0.0) || !(isolation_db >= 0.0) ||
      !std::isfinite(isolation_db)) {
    throw ConfigError("crosstalk inputs must be non-negative and finite");
  }
  return k_hz_per_uw * launch_power_uw * std::pow(10.0, -isolation_db / 10.0);
}

std::vector<MuellerRotation> drift_rotations(const MuellerRotation& base,
                                             const std::vector<double>& segment_hours,
                                             double rate_deg_per_hr,
                                             std::uint64_t seed) {
  if (!(rate_deg_per_hr >= 0.0)) throw ConfigError("drift rate must be >= 0");
  std::vector<MuellerRotation> out;
  out.reserve(segment_hours.size());
  std::mt19937_64 rng(seed);
  MuellerRotation cur = base;
  for (std::size_t j = 0; j < segment_hours.size(); ++j) {
    if (j > 0 && rate_deg_per_hr > 0.0) {
      const auto axis = random_stokes(rng).vec();
      const double angle = rate_deg_per_hr * segment_hours[j - 1] * constants::deg;
      cur = MuellerRotation::about_axis(axis, angle) * cur;
    }
    out.push_back(cur);
  }
  return out;
}

double stark_energy_uev(double v, const StarkParams& p) {
  return p.e0_uev - p.p_uev_per_v * v - p.beta_uev_per_v2 * v * v;
}

StarkShift stark_shift(double v, const StarkParams& p) {
  const double e = stark_energy_uev(v, p);
  if (!(e > 0.0)) throw NumericError("Stark model gives a non-positive photon energy");
  return {constants::hc_uev_nm / e, v < p.v_min - 1e-12 || v > p.v_max + 1e-12};
}

double fss_vs_bias(double v, const StarkParams& p) {
  return std::hypot(p.s_min_uev, p.gamma_uev_per_v * (v - p.v0_v));
}

std::vector<StarkSample> parse_stark_csv(std::istream& in) {
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) {
      const auto b = c.find_first_not_of(" \t\r");
      const auto e = c.find_last_not_of(" \t\r");
      cells.push_back(b == std::string::npos ? "" : c.substr(b, e - b + 1));
    }
    return cells;
  };
  std::string line;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    header = split(line);
  }
  if (header.empty()) throw ConfigError("Stark CSV is empty");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  const char* names[] = {"v", "lambda_xx_nm", "lambda_x_nm", "fss_uev"};
  for (const char* n : names) {
    if (!col.count(n)) throw ConfigError(std::string("Stark CSV lacks column '") + n + "'");
  }
  std::vector<StarkSample> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    const auto cells = split(line);
    auto get = [&](const char* n) {
      const auto i = col[n];
      if (i >= cells.size()) {
        throw ConfigError("Stark CSV row " + std::to_string(row) + " is short");
      }
      try {
        std::size_t used = 0;
        const double v = std::stod(cells[i], &used);
        if (used != cells[i].size() || !std::isfinite(v)) throw std::invalid_argument("");
        return v;
      } catch (const std::exception&) {
        throw ConfigError("Stark CSV row " + std::to_string(row) + ": bad number '" +
                          cells[i] + "'");
      }
    };
    out.push_back({get("v"), get("lambda_xx_nm"), get("lambda_x_nm"), get("fss_uev")});
  }
  if (out.size() < 3) throw ConfigError("Stark CSV needs at least three rows");
  return out;
}

Line line_from_string(const std::string& s) {
  if (s == "xx" || s == "XX") return Line::kXX;
  if (s == "x" || s == "X") return Line::kX;
  throw ConfigError("unknown line '" + s + "' (xx or x)");
}

const char* to_string(Line l) { return l == Line::kXX ? "xx" : "x"; }

namespace {

// Quadratic y = c0 + c1 v + c2 v^2 by least squares.
Eigen::Vector3d quadfit(const std::vector<double>& v, const std::vector<double>& y) {
  Eigen::MatrixXd a(v.size(), 3);
  Eigen::VectorXd b(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    a(static_cast<Eigen::Index>(i), 0) = 1.0;
    a(static_cast<Eigen::Index>(i), 1) = v[i];
    a(static_cast<Eigen::Index>(i), 2) = v[i] * v[i];
    b[static_cast<Eigen::Index>(i)] = y[i];
  }
  return a.colPivHouseholderQr().solve(b);
}

}  // namespace

StarkFit fit_stark(const std::vector<StarkSample>& samples, Line line) {
  if (samples.size() < 3) throw ConfigError("need at least three Stark samples");
  std::vector<double> vs, lam, e, f2;
  for (const auto& s : samples) {
    const double l = line == Line::kXX ? s.lambda_xx_nm : s.lambda_x_nm;
    if (!(l > 0.0) || !(s.fss_uev >= 0.0)) throw ConfigError("invalid Stark sample");
    vs.push_back(s.v);
    lam.push_back(l);
    e.push_back(constants::hc_uev_nm / l);
    f2.push_back(s.fss_uev * s.fss_uev);
  }
  StarkFit fit;
  auto& p = fit.params;
  p.v_min = *std::min_element(vs.begin(), vs.end());
  p.v_max = *std::max_element(vs.begin(), vs.end());

  // Energy: exact quadratic in energy space, then least squares in nm.
  const auto c = quadfit(vs, e);
  lsq::FitProblem ep;
  ep.model = [](std::span<const double> q, double v) {
    return constants::hc_uev_nm / (q[0] - q[1] * v - q[2] * v * v);
  };
  for (std::size_t i = 0; i < vs.size(); ++i) ep.data.push_back({vs[i], lam[i], 1.0});
  ep.initial = {c[0], -c[1], -c[2]};
  ep.names = {"e0_uev", "p_uev_per_v", "beta_uev_per_v2"};
  const auto er = lsq::lm_fit(ep);
  p.e0_uev = er.params[0];
  p.p_uev_per_v = er.params[1];
  p.beta_uev_per_v2 = er.params[2];
  fit.rms_lambda_nm = er.residual_norm / std::sqrt(static_cast<double>(vs.size()));

  // FSS: delta^2 is quadratic in V, which seeds the hyperbola fit.
  const auto d = quadfit(vs, f2);
  double g2 = std::max(d[2], 1e-12);
  double v0 = -d[1] / (2.0 * g2);
  if (!std::isfinite(v0) || d[2] <= 0.0) {
    v0 = vs[static_cast<std::size_t>(std::min_element(f2.begin(), f2.end()) - f2.begin())];
  }
  const double s0 = std::sqrt(std::max(d[0] - g2 * v0 * v0, 0.0));
  lsq::FitProblem fp;
  fp.model = [](std::span<const double> q, double v) {
    return std::hypot(q[0], q[1] * (v - q[2]));
  };
  for (std::size_t i = 0; i < vs.size(); ++i) {
    fp.data.push_back({vs[i], samples[i].fss_uev, 1.0});
  }
  const double smin_min = *std::min_element(f2.begin(), f2.end());
  fp.initial = {std::max(s0, 1e-3 * std::sqrt(smin_min) + 1e-6), std::sqrt(g2), v0};
  fp.lower = {0.0, 0.0, -1e6};
  fp.upper = {1e6, 1e6, 1e6};
  fp.names = {"s_min_uev", "gamma_uev_per_v", "v0_v"};
  const auto fr = lsq::lm_fit(fp);
  p.s_min_uev = fr.params[0];
  p.gamma_uev_per_v = fr.params[1];
  p.v0_v = fr.params[2];
  fit.rms_fss_uev = fr.residual_norm / std::sqrt(static_cast<double>(vs.size()));
  fit.converged = er.converged && fr.converged;
  return fit;
}

double cwdm_center(int index) {
  if (index < 0 || index >= kCwdmChannels) throw OutOfGrid("CWDM index out of range");
  return 1271.0 + 20.0 * index;
}

CwdmChannel nearest_cwdm_channel(double lambda_nm) {
  if (!(lambda_nm >= 1261.0) || !(lambda_nm <= 1621.0)) {
    std::ostringstream m;
    m << "wavelength " << lambda_nm << " nm is outside the CWDM grid [1261, 1621] nm";
    throw OutOfGrid(m.str());
  }
  // Ceil of the half-step position sends exact midpoints down.
  const int idx = std::clamp(static_cast<int>(std::ceil((lambda_nm - 1271.0) / 20.0 - 0.5)),
                             0, kCwdmChannels - 1);
  return {cwdm_center(idx), idx};
}

TunePlan tune_plan(const StarkParams& p, double target_nm, double fss_limit_uev,
                   double tolerance_nm) {
  if (!(p.v_max > p.v_min)) throw ConfigError("Stark bias range is empty");
  if (!(tolerance_nm > 0.0)) throw ConfigError("tolerance must be positive");
  TunePlan plan;
  plan.target_nm = target_nm;
  plan.fss_limit_uev = fss_limit_uev;
  constexpr int kSamples = 800;
  std::vector<double> v(kSamples + 1), lam(kSamples + 1);
  for (int i = 0; i <= kSamples; ++i) {
    v[i] = p.v_min + (p.v_max - p.v_min) * i / kSamples;
    lam[i] = stark_shift(v[i], p).lambda_nm;
  }
  plan.range_min_nm = *std::min_element(lam.begin(), lam.end());
  plan.range_max_nm = *std::max_element(lam.begin(), lam.end());

  std::vector<double> roots;
  for (int i = 0; i < kSamples; ++i) {
    const double f0 = lam[i] - target_nm, f1 = lam[i + 1] - target_nm;
    if (f0 == 0.0) {
      roots.push_back(v[i]);
      continue;
    }
    if (!(f0 * f1 < 0.0)) continue;
    double a = v[i], b = v[i + 1], fa = f0;
    for (int it = 0; it < 200 && b - a > 1e-13; ++it) {
      const double m = 0.5 * (a + b);
      const double fm = stark_shift(m, p).lambda_nm - target_nm;
      if (std::abs(fm) < 1e-3 * tolerance_nm) {
        a = b = m;
        break;
      }
      if ((fm < 0.0) == (fa < 0.0)) {
        a = m;
        fa = fm;
      } else {
        b = m;
      }
    }
    roots.push_back(0.5 * (a + b));
  }
  if (lam[kSamples] == target_nm) roots.push_back(v[kSamples]);
  std::vector<double> good;
  for (const double r : roots) {
    if (std::abs(stark_shift(r, p).lambda_nm - target_nm) <= tolerance_nm) good.push_back(r);
  }
  if (good.empty()) {
    plan.reason = "out_of_range";
    std::ostringstream m;
    m << "target " << target_nm << " nm is outside the tunable range ["
      << plan.range_min_nm << ", " << plan.range_max_nm << "] nm";
    plan.message = m.str();
    return plan;
  }
  const double best = *std::min_element(good.begin(), good.end(), [&](double a, double b) {
    return fss_vs_bias(a, p) < fss_vs_bias(b, p);
  });
  plan.bias_v = best;
  plan.lambda_nm = stark_shift(best, p).lambda_nm;
  plan.fss_uev = fss_vs_bias(best, p);
  if (!(plan.fss_uev <= fss_limit_uev)) {
    plan.reason = "fss_limit";
    std::ostringstream m;
    m << "FSS " << plan.fss_uev << " ueV at " << best << " V exceeds the limit "
      << fss_limit_uev << " ueV";
    plan.message = m.str();
    return plan;
  }
  plan.feasible = true;
  return plan;
}

}  // namespace qdlink
