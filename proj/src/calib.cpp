#include "qdlink/calib.hpp"

#include "qdlink/constants.hpp"
#include "qdlink/errors.hpp"
#include "qdlink/lsq.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>

namespace qdlink {

using cplx = std::complex<double>;

DifferenceSeries normalized_difference(const CoincidenceHistogram& co,
                                       const CoincidenceHistogram& cross) {
  if (!co.same_binning(cross)) {
    throw BinningMismatch("co and cross histograms do not share one binning");
  }
  const double scale = co.acquisition_s > 0.0 && cross.acquisition_s > 0.0
                           ? co.acquisition_s / cross.acquisition_s
                           : 1.0;
  DifferenceSeries s;
  s.bin_width_ps = co.bin_width_ps;
  for (std::size_t i = 0; i < co.size(); ++i) {
    if (co.bin_left_ps(i) < 0) continue;
    const double a = static_cast<double>(co.counts[i]);
    const double b = static_cast<double>(cross.counts[i]) * scale;
    s.t_ps.push_back(co.bin_center_ps(i));
    s.d.push_back(a - b);
    s.sum.push_back(a + b);
    s.sigma.push_back(std::sqrt(a + b * scale));
  }
  return s;
}

namespace {

struct Rates {
  double inv_tau;  // 1/ps
  double omega;    // rad/ps
};

Rates rates(double delta_uev, double tau_ns) {
  return {1.0 / (tau_ns * constants::ps_per_ns),
          delta_uev / constants::hbar_uev_ns / constants::ps_per_ns};
}

// Mean of e^{k t} over [t - w/2, t + w/2].
cplx bin_mean_exp(cplx k, double t, double w) {
  if (w <= 0.0) return std::exp(k * t);
  const cplx kw = k * w;
  if (std::abs(kw) < 1e-6) return std::exp(k * t) * (1.0 + kw * kw / 24.0);
  return std::exp(k * (t - 0.5 * w)) * (std::exp(kw) - 1.0) / kw;
}

// Basis functions g0 (envelope) and b (complex beat) including the Gaussian
// timing blur, valid for t a few sigma past the peak.
struct BasisValues {
  double g0;
  cplx b;
};

BasisValues basis_values(double t, double w, const Rates& r, double sigma) {
  const cplx k_env(-r.inv_tau, 0.0);
  const cplx k_beat(-r.inv_tau, r.omega);
  const double s2 = sigma * sigma;
  BasisValues v;
  v.g0 = std::real(bin_mean_exp(k_env, t, w)) * std::exp(0.5 * s2 * r.inv_tau * r.inv_tau);
  v.b = bin_mean_exp(k_beat, t, w) * std::exp(0.5 * s2 * k_beat * k_beat);
  return v;
}

}  // namespace

double basis_model(double t_ps, double bin_width_ps, double amplitude,
                   double theta, double phi, double delta_uev, double tau_ns,
                   double jitter_sigma_ps) {
  const auto v = basis_values(t_ps, bin_width_ps, rates(delta_uev, tau_ns), jitter_sigma_ps);
  const double c = std::cos(theta), s = std::sin(theta);
  const cplx rot = std::polar(1.0, -2.0 * phi);
  return amplitude * (c * c * v.g0 + s * s * std::real(rot * v.b));
}

double pair_model(double t_ps, double bin_width_ps, double amplitude,
                  const StokesVector& a_xx, const StokesVector& b_x, double delta_uev,
                  double tau_ns, double jitter_sigma_ps) {
  const auto v = basis_values(t_ps, bin_width_ps, rates(delta_uev, tau_ns), jitter_sigma_ps);
  const auto& a = a_xx.vec();
  const auto& b = b_x.vec();
  const cplx z = cplx(b[1], b[2]) * cplx(a[1], a[2]);
  return amplitude * (a[0] * b[0] * v.g0 + std::real(std::conj(z) * v.b));
}

namespace {

struct Window {
  std::size_t begin = 0, end = 0;  // index range into the series
};

Window fit_window(const DifferenceSeries& s, const BasisFitOptions& o) {
  Window w;
  if (s.t_ps.empty()) return w;
  const auto peak_it = std::max_element(s.sum.begin(), s.sum.end());
  const auto peak = static_cast<std::size_t>(peak_it - s.sum.begin());
  const double peak_val = *peak_it;
  const double t_start =
      o.t_begin_ps.value_or(std::max(s.t_ps[peak] + static_cast<double>(s.bin_width_ps),
                                     4.0 * o.jitter_sigma_ps));
  std::size_t b = 0;
  while (b < s.t_ps.size() && s.t_ps[b] < t_start) ++b;
  std::size_t e = b;
  if (o.t_end_ps) {
    while (e < s.t_ps.size() && s.t_ps[e] <= *o.t_end_ps) ++e;
  } else {
    const double floor = std::max(10.0, 1e-3 * peak_val);
    for (std::size_t i = b; i < s.t_ps.size(); ++i) {
      if (s.sum[i] >= floor) e = i + 1;
    }
  }
  w.begin = b;
  w.end = e;
  return w;
}

// Slope of log(sum) against t, weighted by the counts.
double envelope_tau_ns(const DifferenceSeries& s, const Window& w) {
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = w.begin; i < w.end; ++i) {
    if (s.sum[i] <= 0.0) continue;
    const double x = s.t_ps[i], y = std::log(s.sum[i]), wt = s.sum[i];
    sw += wt; sx += wt * x; sy += wt * y; sxx += wt * x * x; sxy += wt * x * y;
  }
  const double den = sw * sxx - sx * sx;
  if (!(den > 0.0)) return -1.0;
  const double slope = (sw * sxy - sx * sy) / den;
  return slope < 0.0 ? -1.0 / slope / constants::ps_per_ns : -1.0;
}

struct ScanPoint {
  double chi2;
  double omega;  // rad/ps
  double tau_ns;
  std::array<double, 3> coef;  // a0, a1, a2
};

// Weighted linear fit d = a0 g0 + a1 Re b + a2 Im b on a uniform grid, the
// beat factors advanced by a complex recurrence.
ScanPoint scan_point(const DifferenceSeries& s, const Window& w,
                     const std::vector<double>& wt, double omega, double tau_ns,
                     double sigma, bool bin_average) {
  const double bw = static_cast<double>(s.bin_width_ps);
  const double width = bin_average ? bw : 0.0;
  const Rates r{1.0 / (tau_ns * constants::ps_per_ns), omega};
  const auto v0 = basis_values(s.t_ps[w.begin], width, r, sigma);
  const cplx q_env = std::exp(cplx(-r.inv_tau * bw, 0.0));
  const cplx q_beat = std::exp(cplx(-r.inv_tau * bw, omega * bw));
  double g0 = v0.g0;
  double br = v0.b.real(), bi = v0.b.imag();
  const double qe = q_env.real(), qr = q_beat.real(), qi = q_beat.imag();
  double n00 = 0, n01 = 0, n02 = 0, n11 = 0, n12 = 0, n22 = 0, r0 = 0, r1 = 0, r2 = 0, yy = 0;
  for (std::size_t i = w.begin; i < w.end; ++i) {
    const double wi = wt[i], di = s.d[i];
    const double wg = wi * g0, wr = wi * br, wim = wi * bi;
    n00 += wg * g0; n01 += wg * br; n02 += wg * bi;
    n11 += wr * br; n12 += wr * bi; n22 += wim * bi;
    r0 += wg * di; r1 += wr * di; r2 += wim * di;
    yy += wi * di * di;
    g0 *= qe;
    const double nr = br * qr - bi * qi;
    bi = br * qi + bi * qr;
    br = nr;
  }
  Eigen::Matrix3d n;
  n << n00, n01, n02, n01, n11, n12, n02, n12, n22;
  const Eigen::Vector3d rhs(r0, r1, r2);
  ScanPoint p{std::numeric_limits<double>::infinity(), omega, tau_ns, {0, 0, 0}};
  Eigen::LDLT<Eigen::Matrix3d> ldlt(n);
  if (ldlt.info() != Eigen::Success) return p;
  const Eigen::Vector3d a = ldlt.solve(rhs);
  if (!a.allFinite()) return p;
  p.chi2 = yy - rhs.dot(a);
  p.coef = {a[0], a[1], a[2]};
  return p;
}

bool uniform_grid(const DifferenceSeries& s, const Window& w) {
  const double bw = static_cast<double>(s.bin_width_ps);
  for (std::size_t i = w.begin + 1; i < w.end; ++i) {
    if (std::abs(s.t_ps[i] - s.t_ps[i - 1] - bw) > 1e-9) return false;
  }
  return true;
}

std::array<double, 5> start_from_scan(const ScanPoint& p) {
  const double a0 = std::max(0.0, p.coef[0]);
  const double amp = std::hypot(p.coef[1], p.coef[2]);
  const double A = std::max(a0 + amp, 1e-300);
  // theta = 0 and pi/2 are stationary points of the model; start just inside.
  const double theta = std::acos(std::sqrt(std::clamp(a0 / A, 1e-4, 1.0 - 1e-4)));
  const double phi = 0.5 * std::atan2(p.coef[2], p.coef[1]);
  const double delta = p.omega * constants::ps_per_ns * constants::hbar_uev_ns;
  return {A, theta, phi, delta, p.tau_ns};
}

// A few well separated local minima of the scan, best first.
std::vector<std::array<double, 5>> scan_starts(const DifferenceSeries& s,
                                               const Window& w,
                                               const std::vector<double>& wt,
                                               const BasisFitOptions& o) {
  const double span_ns =
      (s.t_ps[w.end - 1] - s.t_ps[w.begin] + static_cast<double>(s.bin_width_ps)) /
      constants::ps_per_ns;
  const double step = 0.2 / span_ns;  // rad/ns
  const double w_lo = o.fixed_delta_uev.value_or(o.delta_min_uev) / constants::hbar_uev_ns;
  const double w_hi = o.fixed_delta_uev.value_or(o.delta_max_uev) / constants::hbar_uev_ns;
  std::vector<double> taus;
  const double t_env = envelope_tau_ns(s, w);
  if (t_env > 0.0 && std::isfinite(t_env)) {
    taus = {0.7 * t_env, t_env, 1.4 * t_env};
  } else {
    taus = {0.3, 0.6, 1.2, 2.4, 4.8};
  }
  std::vector<ScanPoint> best;  // best tau for each omega
  for (double om = w_lo; om <= w_hi + 1e-12; om += step) {
    ScanPoint b{std::numeric_limits<double>::infinity(), 0, 0, {0, 0, 0}};
    for (const double tau : taus) {
      auto p = scan_point(s, w, wt, om / constants::ps_per_ns, tau, o.jitter_sigma_ps,
                          o.bin_average);
      if (p.chi2 < b.chi2) b = p;
    }
    best.push_back(b);
  }
  std::vector<std::size_t> minima;
  for (std::size_t i = 0; i < best.size(); ++i) {
    const bool left = i == 0 || best[i].chi2 <= best[i - 1].chi2;
    const bool right = i + 1 == best.size() || best[i].chi2 <= best[i + 1].chi2;
    if (left && right && std::isfinite(best[i].chi2)) minima.push_back(i);
  }
  std::sort(minima.begin(), minima.end(),
            [&](std::size_t a, std::size_t b) { return best[a].chi2 < best[b].chi2; });
  std::vector<std::array<double, 5>> out;
  for (std::size_t k = 0; k < minima.size() && out.size() < 3; ++k) {
    out.push_back(start_from_scan(best[minima[k]]));
  }
  return out;
}

double wrap_two_pi(double x) {
  double r = std::fmod(x, constants::two_pi);
  if (r < 0.0) r += constants::two_pi;
  if (r >= constants::two_pi) r = 0.0;
  return r;
}

}  // namespace

BasisFit fit_basis_orientation(const DifferenceSeries& series,
                               const BasisFitOptions& options) {
  const Window w = fit_window(series, options);
  if (w.end <= w.begin || w.end - w.begin < 8) {
    throw FitFailure("fit window holds fewer than 8 bins");
  }
  if (!(options.delta_min_uev > 0.0) || !(options.delta_max_uev > options.delta_min_uev)) {
    throw ConfigError("invalid delta search range");
  }
  std::vector<double> wt(series.t_ps.size(), 0.0);
  for (std::size_t i = 0; i < wt.size(); ++i) {
    wt[i] = 1.0 / std::max(series.sigma[i] * series.sigma[i], 1.0);
  }

  std::vector<std::array<double, 5>> starts;
  if (options.initial) {
    starts.push_back(*options.initial);
  } else {
    if (!uniform_grid(series, w)) throw FitFailure("difference series is not uniformly binned");
    starts = scan_starts(series, w, wt, options);
    if (starts.empty()) throw FitFailure("frequency scan found no candidate");
  }

  const double width = options.bin_average ? static_cast<double>(series.bin_width_ps) : 0.0;
  const double sigma = options.jitter_sigma_ps;
  lsq::FitProblem problem;
  problem.model = [width, sigma](std::span<const double> p, double t) {
    return basis_model(t, width, p[0], p[1], p[2], p[3], p[4], sigma);
  };
  for (std::size_t i = w.begin; i < w.end; ++i) {
    problem.data.push_back({series.t_ps[i], series.d[i], wt[i]});
  }
  problem.lower = {0.0, 0.0, -1e300, 1e-6, 1e-3};
  problem.upper = {1e300, constants::pi, 1e300, 4.0 * options.delta_max_uev, 1e3};
  if (options.fixed_delta_uev) {
    if (!(*options.fixed_delta_uev > 0.0)) throw ConfigError("fixed delta must be positive");
    problem.lower[3] = problem.upper[3] = *options.fixed_delta_uev;
  }
  problem.names = {"amplitude", "theta", "phi", "delta_uev", "tau_ns"};
  problem.scale_covariance = false;  // weights are absolute Poisson variances

  // Short runs from every start, then the most promising one to convergence.
  std::optional<lsq::FitResult> best;
  problem.max_iterations = starts.size() > 1 ? 40 : 500;
  for (const auto& s : starts) {
    problem.initial.assign(s.begin(), s.end());
    for (std::size_t j = 0; j < 5; ++j) {
      problem.initial[j] = std::clamp(problem.initial[j], problem.lower[j], problem.upper[j]);
    }
    try {
      auto r = lsq::lm_fit(problem);
      if (!best || r.cost < best->cost) best = std::move(r);
    } catch (const FitFailure&) {
      if (starts.size() == 1) throw;
    }
  }
  if (best && !best->converged) {
    problem.initial = best->params;
    problem.max_iterations = 500;
    try {
      auto r = lsq::lm_fit(problem);
      if (r.cost <= best->cost) best = std::move(r);
    } catch (const FitFailure&) {
    }
  }
  if (!best) throw FitFailure("no start point led to a fit");

  BasisFit f;
  const auto& p = best->params;
  f.amplitude = p[0];
  f.angles = PoincareAngles::make(std::clamp(p[1], 0.0, constants::pi), wrap_two_pi(p[2]));
  f.delta_uev = p[3];
  f.tau_ns = p[4];
  f.covariance = best->covariance;
  const auto sg = best->sigmas();
  f.sigma_theta = sg[1];
  f.sigma_phi = sg[2];
  f.sigma_delta_uev = sg[3];
  f.sigma_tau_ns = sg[4];
  const double s2 = std::pow(std::sin(f.angles.theta), 2);
  f.phi_identifiable = s2 > 1e-8 && f.sigma_phi < 0.35;
  f.delta_fixed = options.fixed_delta_uev.has_value();
  f.insufficient_beat =
      f.delta_fixed || s2 < 1e-3 || !(f.sigma_delta_uev < 0.25 * f.delta_uev);
  f.converged = best->converged;
  f.iterations = best->iterations;
  f.n_points = w.end - w.begin;
  f.reduced_chi2 = best->reduced_chi2(f.n_points, 5);
  f.t_begin_ps = series.t_ps[w.begin];
  f.t_end_ps = series.t_ps[w.end - 1];
  return f;
}

std::array<StokesVector, 4> branch_candidates(const StokesVector& s) {
  const auto& v = s.vec();
  return {s, StokesVector::normalized({-v[0], v[1], v[2]}),
          StokesVector::normalized({v[0], -v[1], -v[2]}), -s};
}

namespace {

void check_rank(const Eigen::Matrix3d& refs) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(refs);
  const auto sv = svd.singularValues();
  if (!(sv[0] > 0.0) || sv[2] / sv[0] < 1e-6) {
    throw RankDeficient("reference states are not linearly independent");
  }
}

// Proper rotation maximizing tr(M^T h).
Eigen::Matrix3d rotation_from_correlation(const Eigen::Matrix3d& h) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

Eigen::Matrix3d procrustes(const Eigen::Matrix3d& refs, const Eigen::Matrix3d& meas) {
  return rotation_from_correlation(meas * refs.transpose());
}

bool near_tie(double a, double b) {
  return std::abs(a - b) <= 1e-9 + 1e-9 * std::max(std::abs(a), std::abs(b));
}

Eigen::Matrix3d columns(const std::array<StokesVector, 3>& v) {
  Eigen::Matrix3d m;
  for (int i = 0; i < 3; ++i) m.col(i) = v[static_cast<std::size_t>(i)].vec();
  return m;
}

}  // namespace

MuellerRotation reconstruct_mueller(
    const std::vector<std::pair<StokesVector, StokesVector>>& pairs) {
  if (pairs.size() < 3) throw RankDeficient("need at least three reference states");
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d gram = Eigen::Matrix3d::Zero();
  for (const auto& [r, m] : pairs) {
    h += m.vec() * r.vec().transpose();
    gram += r.vec() * r.vec().transpose();
  }
  check_rank(gram);
  return MuellerRotation::from_matrix(rotation_from_correlation(h), 1e-8);
}

std::vector<StokesVector> reference_states(const MuellerRotation& m,
                                           const std::vector<StokesVector>& eigen) {
  std::vector<StokesVector> out;
  out.reserve(eigen.size());
  const auto inv = m.inverse();
  for (const auto& s : eigen) out.push_back(inv.apply(s));
  return out;
}

MuellerRotation twin_rotation(const MuellerRotation& m) {
  return MuellerRotation::about_axis({1, 0, 0}, constants::pi) * m;
}

double rotation_distance_mod_twin(const MuellerRotation& a, const MuellerRotation& b) {
  return std::min(rotation_distance(a, b), rotation_distance(twin_rotation(a), b));
}

AmbiguityResolution resolve_ambiguities(const std::array<StokesVector, 3>& fitted,
                                        const std::array<StokesVector, 3>& refs,
                                        double tolerance) {
  const Eigen::Matrix3d r = columns(refs);
  check_rank(r * r.transpose());
  std::array<std::array<StokesVector, 4>, 3> cand;
  for (std::size_t i = 0; i < 3; ++i) cand[i] = branch_candidates(fitted[i]);

  struct Scored {
    std::array<int, 3> branch;
    Eigen::Matrix3d m;
    double residual;
  };
  std::vector<Scored> all;
  all.reserve(64);
  for (int c = 0; c < 64; ++c) {
    const std::array<int, 3> br{c & 3, (c >> 2) & 3, (c >> 4) & 3};
    std::array<StokesVector, 3> meas;
    for (std::size_t i = 0; i < 3; ++i) meas[i] = cand[i][static_cast<std::size_t>(br[i])];
    const Eigen::Matrix3d mm = columns(meas);
    const Eigen::Matrix3d m = procrustes(r, mm);
    const double res = std::sqrt((m * r - mm).squaredNorm() / 3.0);
    all.push_back({br, m, res});
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < all.size(); ++k) {
    const auto& a = all[k];
    const auto& b = all[best];
    if (near_tie(a.residual, b.residual)) {
      if (a.m.trace() > b.m.trace() + 1e-12) best = k;
    } else if (a.residual < b.residual) {
      best = k;
    }
  }
  const auto& win = all[best];
  if (!(win.residual <= tolerance)) {
    throw CalibrationInconsistent(
        "no branch combination maps the references by a rotation (rms residual " +
        std::to_string(win.residual) + ")");
  }
  AmbiguityResolution out;
  out.branch = win.branch;
  for (std::size_t i = 0; i < 3; ++i) {
    out.measured[i] = cand[i][static_cast<std::size_t>(win.branch[i])];
  }
  out.rotation = MuellerRotation::from_matrix(win.m, 1e-8);
  out.rms_residual = win.residual;
  out.equivalent.push_back(out.rotation);
  out.equivalent_branch.push_back(win.branch);
  out.runner_up_residual = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(all.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return all[a].residual < all[b].residual; });
  for (const auto k : order) {
    const auto& s = all[k];
    const auto ms = MuellerRotation::from_matrix(s.m, 1e-8);
    bool seen = false;
    for (const auto& e : out.equivalent) seen = seen || rotation_distance(e, ms) < 1e-9;
    if (seen) continue;
    if (s.residual <= win.residual + kEquivalentResidual) {
      out.equivalent.push_back(ms);
      out.equivalent_branch.push_back(s.branch);
    } else {
      out.runner_up_residual = std::min(out.runner_up_residual, s.residual);
    }
  }
  return out;
}

AmbiguityResolution resolve_ambiguities(const std::array<BasisFit, 3>& fits,
                                        const std::array<StokesVector, 3>& refs,
                                        double tolerance) {
  return resolve_ambiguities(
      std::array<StokesVector, 3>{fits[0].measured(), fits[1].measured(), fits[2].measured()},
      refs, tolerance);
}

namespace {

// Upper 0.1% point of chi^2 (Wilson-Hilferty beyond two degrees of freedom).
double chi2_limit(int dof) {
  if (dof <= 0) return std::numeric_limits<double>::infinity();
  if (dof == 1) return 10.828;
  if (dof == 2) return 13.816;
  const double k = dof, z = 3.0902;
  return k * std::pow(1.0 - 2.0 / (9.0 * k) + z * std::sqrt(2.0 / (9.0 * k)), 3);
}

ConsensusValue consensus(const std::vector<BasisFit>& fits,
                         double BasisFit::*value, double BasisFit::*sigma) {
  std::vector<const BasisFit*> use;
  for (const auto& f : fits) {
    if (!f.insufficient_beat) use.push_back(&f);
  }
  if (use.empty()) {
    for (const auto& f : fits) use.push_back(&f);
  }
  ConsensusValue c;
  if (use.empty()) return c;
  std::vector<double> w;
  for (const auto* f : use) {
    const double v = f->*value, s = f->*sigma;
    w.push_back(1.0 / std::max({s * s, 1e-24 * v * v, 1e-300}));
  }
  double sw = 0.0, swv = 0.0;
  for (std::size_t i = 0; i < use.size(); ++i) {
    sw += w[i];
    swv += w[i] * (use[i]->*value);
  }
  c.value = swv / sw;
  c.sigma = std::sqrt(1.0 / sw);
  for (std::size_t i = 0; i < use.size(); ++i) {
    const double r = use[i]->*value - c.value;
    c.chi2 += w[i] * r * r;
  }
  c.dof = static_cast<int>(use.size()) - 1;
  c.consistent = c.chi2 <= chi2_limit(c.dof);
  return c;
}

}  // namespace

ConsensusValue consensus_delta(const std::vector<BasisFit>& fits) {
  return consensus(fits, &BasisFit::delta_uev, &BasisFit::sigma_delta_uev);
}

ConsensusValue consensus_tau(const std::vector<BasisFit>& fits) {
  return consensus(fits, &BasisFit::tau_ns, &BasisFit::sigma_tau_ns);
}

namespace {

// Weighted chi^2 of the cross-basis series for rotation m, amplitudes fitted
// per series and kept non-negative.
double pair_chi2(const MuellerRotation& m, const std::array<StokesVector, 3>& refs,
                 const std::vector<PairSeries>& pairs, const BasisFitOptions& o,
                 double delta_uev, double tau_ns) {
  double chi2 = 0.0;
  for (const auto& p : pairs) {
    const auto& sr = p.series;
    const Window w = fit_window(sr, o);
    const auto a = m.apply(refs[p.xx_ref]);
    const auto b = m.apply(refs[p.x_ref]);
    const double width = o.bin_average ? static_cast<double>(sr.bin_width_ps) : 0.0;
    double sff = 0.0, sfd = 0.0, sdd = 0.0;
    for (std::size_t i = w.begin; i < w.end; ++i) {
      const double wt = 1.0 / std::max(sr.sigma[i] * sr.sigma[i], 1.0);
      const double f = pair_model(sr.t_ps[i], width, 1.0, a, b, delta_uev, tau_ns,
                                  o.jitter_sigma_ps);
      sff += wt * f * f;
      sfd += wt * f * sr.d[i];
      sdd += wt * sr.d[i] * sr.d[i];
    }
    const double amp = sff > 0.0 ? std::max(0.0, sfd / sff) : 0.0;
    chi2 += sdd - 2.0 * amp * sfd + amp * amp * sff;
  }
  return chi2;
}

struct Refined {
  MuellerRotation mueller;
  double reduced_chi2;
};

// LM over a small rotation w (M = R(w) M0), delta, tau and the amplitudes.
std::optional<Refined> refine(const MuellerRotation& m0, const std::array<StokesVector, 3>& refs,
                              const std::vector<PairSeries>& series, const BasisFitOptions& o,
                              double delta_uev, double tau_ns) {
  struct Point {
    std::size_t series;
    double t;
  };
  std::vector<Point> pts;
  lsq::FitProblem problem;
  const std::size_t ns = series.size();
  std::vector<double> amp0;
  for (std::size_t k = 0; k < ns; ++k) {
    const auto& sr = series[k].series;
    const Window w = fit_window(sr, o);
    const auto a = m0.apply(refs[series[k].xx_ref]);
    const auto b = m0.apply(refs[series[k].x_ref]);
    const double width = o.bin_average ? static_cast<double>(sr.bin_width_ps) : 0.0;
    double sff = 0.0, sfd = 0.0;
    for (std::size_t i = w.begin; i < w.end; ++i) {
      const double wt = 1.0 / std::max(sr.sigma[i] * sr.sigma[i], 1.0);
      const double f = pair_model(sr.t_ps[i], width, 1.0, a, b, delta_uev, tau_ns,
                                  o.jitter_sigma_ps);
      sff += wt * f * f;
      sfd += wt * f * sr.d[i];
      problem.data.push_back({static_cast<double>(pts.size()), sr.d[i], wt});
      pts.push_back({k, sr.t_ps[i]});
    }
    amp0.push_back(sff > 0.0 ? std::max(0.0, sfd / sff) : 0.0);
  }
  if (pts.size() < 5 + ns) return std::nullopt;
  const Eigen::Matrix3d base = m0.matrix();
  problem.model = [&](std::span<const double> p, double x) {
    const auto& pt = pts[static_cast<std::size_t>(x)];
    const Eigen::Vector3d w(p[0], p[1], p[2]);
    const double angle = w.norm();
    Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
    if (angle > 0.0) r = Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
    const Eigen::Matrix3d m = r * base;
    const auto& ps = series[pt.series];
    const Eigen::Vector3d a = m * refs[ps.xx_ref].vec();
    const Eigen::Vector3d b = m * refs[ps.x_ref].vec();
    const double width = o.bin_average ? static_cast<double>(ps.series.bin_width_ps) : 0.0;
    return pair_model(pt.t, width, p[5 + pt.series], StokesVector::from_vector(a, 1e-6),
                      StokesVector::from_vector(b, 1e-6), p[3], p[4], o.jitter_sigma_ps);
  };
  problem.initial = {0.0, 0.0, 0.0, delta_uev, tau_ns};
  problem.lower = {-1e300, -1e300, -1e300, 1e-6, 1e-3};
  problem.upper = {1e300, 1e300, 1e300, 4.0 * o.delta_max_uev, 1e3};
  for (std::size_t k = 0; k < ns; ++k) {
    problem.initial.push_back(amp0[k]);
    problem.lower.push_back(0.0);
    problem.upper.push_back(1e300);
  }
  problem.max_iterations = 200;
  problem.scale_covariance = false;
  try {
    const auto r = lsq::lm_fit(problem);
    const Eigen::Vector3d w(r.params[0], r.params[1], r.params[2]);
    const double angle = w.norm();
    Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
    if (angle > 0.0) rot = Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
    return Refined{MuellerRotation::from_matrix(rot * base, 1e-8),
                   r.reduced_chi2(pts.size(), problem.initial.size())};
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace

CalibrationResult calibrate(const std::array<BasisFit, 3>& fits_in,
                            const std::vector<PairSeries>& pairs,
                            const BasisFitOptions& pair_options, double tolerance) {
  const std::array<StokesVector, 3> refs{fits_in[0].reference, fits_in[1].reference,
                                         fits_in[2].reference};
  for (const auto& p : pairs) {
    if (p.xx_ref > 2 || p.x_ref > 2) {
      throw ConfigError("difference series must name references 0..2");
    }
  }
  auto fits = fits_in;
  const auto first = consensus_delta({fits.begin(), fits.end()});
  const bool any_good = std::any_of(fits.begin(), fits.end(),
                                    [](const BasisFit& f) { return !f.insufficient_beat; });
  if (any_good) {
    for (std::size_t i = 0; i < 3; ++i) {
      if (!fits[i].insufficient_beat || fits[i].delta_fixed) continue;
      for (const auto& p : pairs) {
        if (p.xx_ref != i || p.x_ref != i) continue;
        auto o = pair_options;
        o.initial.reset();
        o.fixed_delta_uev = first.value;
        try {
          auto f = fit_basis_orientation(p.series, o);
          f.label = fits[i].label;
          f.reference = fits[i].reference;
          fits[i] = std::move(f);
        } catch (const FitFailure&) {
        }
        break;
      }
    }
  }
  const auto res = resolve_ambiguities(fits, refs, tolerance);
  CalibrationResult out;
  out.fits.assign(fits.begin(), fits.end());
  out.delta = consensus_delta(out.fits);
  out.tau = consensus_tau(out.fits);
  out.orthogonality_residual = res.rms_residual;
  out.runner_up_residual = res.runner_up_residual;

  std::vector<PairSeries> cross;
  for (const auto& p : pairs) {
    if (p.xx_ref != p.x_ref) cross.push_back(p);
  }
  std::size_t pick = 0;
  if (!cross.empty()) {
    std::vector<double> chi2;
    for (const auto& m : res.equivalent) {
      chi2.push_back(pair_chi2(m, refs, cross, pair_options, out.delta.value, out.tau.value));
    }
    for (std::size_t k = 1; k < chi2.size(); ++k) {
      if (near_tie(chi2[k], chi2[pick])) {
        if (res.equivalent[k].matrix().trace() > res.equivalent[pick].matrix().trace() + 1e-12) {
          pick = k;
        }
      } else if (chi2[k] < chi2[pick]) {
        pick = k;
      }
    }
    out.signs_resolved = true;
    out.sign_chi2 = chi2[pick];
    out.sign_runner_up_chi2 = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < chi2.size(); ++k) {
      if (rotation_distance_mod_twin(res.equivalent[k], res.equivalent[pick]) < 1e-6) continue;
      out.sign_runner_up_chi2 = std::min(out.sign_runner_up_chi2, chi2[k]);
    }
  }
  out.mueller = res.equivalent[pick];
  out.branch = res.equivalent_branch[pick];
  for (std::size_t i = 0; i < 3; ++i) {
    out.measured[i] =
        branch_candidates(fits[i].measured())[static_cast<std::size_t>(out.branch[i])];
  }
  if (!pairs.empty() && !cross.empty()) {
    if (auto r = refine(out.mueller, refs, pairs, pair_options, out.delta.value, out.tau.value)) {
      out.mueller = r->mueller;
      out.refined = true;
      out.refined_reduced_chi2 = r->reduced_chi2;
      for (std::size_t i = 0; i < 3; ++i) out.measured[i] = out.mueller.apply(refs[i]);
    }
  }
  out.reference_states = reference_states(
      out.mueller, {StokesVector::H(), StokesVector::D(), StokesVector::R()});
  return out;
}

CalibrationResult calibrate_stream(const TimeTagStream& stream,
                                   const std::array<std::string, 3>& refs,
                                   const CalibrationOptions& options) {
  auto fit_opts = options.fit;
  if (fit_opts.jitter_sigma_ps <= 0.0) {
    fit_opts.jitter_sigma_ps =
        std::sqrt(2.0) * stream.header.jitter_fwhm_ps / constants::fwhm_per_sigma;
  }
  std::array<BasisFit, 3> fits;
  std::vector<PairSeries> pairs;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto ref = StokesVector::from_label(refs[i]);
    if (!ref) throw ConfigError("unknown reference state '" + refs[i] + "'");
    const auto* co = stream.find_entry(refs[i], Polarity::kCo);
    const auto* cross = stream.find_entry(refs[i], Polarity::kCross);
    if (co == nullptr || cross == nullptr) {
      throw ConfigError("stream has no co/cross entries for reference '" + refs[i] + "'");
    }
    HistogramOptions h;
    h.bin_width_ps = options.bin_width_ps;
    h.range_ps = options.range_ps;
    h.basis_filter = {co->basis_id};
    const auto hc = build_histogram(stream, Channel::kXX, Channel::kX, h);
    h.basis_filter = {cross->basis_id};
    const auto hx = build_histogram(stream, Channel::kXX, Channel::kX, h);
    auto series = normalized_difference(hc, hx);
    fits[i] = fit_basis_orientation(series, fit_opts);
    fits[i].label = refs[i];
    fits[i].reference = *ref;
    pairs.push_back({i, i, std::move(series)});
  }
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i == j) continue;
      const auto label = refs[i] + "/" + refs[j];
      const auto* co = stream.find_entry(label, Polarity::kCo);
      const auto* cross = stream.find_entry(label, Polarity::kCross);
      if (co == nullptr || cross == nullptr) continue;
      HistogramOptions h;
      h.bin_width_ps = options.bin_width_ps;
      h.range_ps = options.range_ps;
      h.basis_filter = {co->basis_id};
      const auto hc = build_histogram(stream, Channel::kXX, Channel::kX, h);
      h.basis_filter = {cross->basis_id};
      const auto hx = build_histogram(stream, Channel::kXX, Channel::kX, h);
      pairs.push_back({i, j, normalized_difference(hc, hx)});
    }
  }
  return calibrate(fits, pairs, fit_opts);
}

}  // namespace qdlink
