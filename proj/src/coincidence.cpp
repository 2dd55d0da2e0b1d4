#include "qdlink/coincidence.hpp"

#include "qdlink/constants.hpp"
#include "qdlink/errors.hpp"
#include "qdlink/lsq.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace qdlink {

std::uint64_t CoincidenceHistogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

namespace {

void check_options(const HistogramOptions& o) {
  if (o.bin_width_ps <= 0) throw ConfigError("bin width must be positive");
  if (o.range_ps <= 0) throw ConfigError("range must be positive");
  if (o.range_ps % o.bin_width_ps != 0) {
    throw ConfigError("bin width " + std::to_string(o.bin_width_ps) +
                      " ps does not divide the range " + std::to_string(o.range_ps) +
                      " ps");
  }
}

bool in_filter(const std::vector<std::uint8_t>& filter, std::uint8_t id) {
  return filter.empty() || std::find(filter.begin(), filter.end(), id) != filter.end();
}

}  // namespace

CoincidenceHistogram build_histogram(const std::vector<Record>& records,
                                     Channel ch_a, Channel ch_b,
                                     const HistogramOptions& options) {
  check_options(options);
  CoincidenceHistogram h;
  h.bin_width_ps = options.bin_width_ps;
  h.t_min_ps = -options.range_ps;
  h.counts.assign(static_cast<std::size_t>(2 * options.range_ps / options.bin_width_ps), 0);
  h.channel_a = ch_a;
  h.channel_b = ch_b;
  h.basis_ids = options.basis_filter;

  // Event indices into `records` so self-pairs can be recognized.
  std::vector<std::size_t> a_idx, b_idx;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!in_filter(options.basis_filter, r.basis_id)) continue;
    if (r.channel == ch_a && r.t_ps >= options.t_begin_ps && r.t_ps < options.t_end_ps) {
      a_idx.push_back(i);
    }
    if (r.channel == ch_b) b_idx.push_back(i);
  }
  const std::int64_t range = options.range_ps;
  const std::int64_t bw = options.bin_width_ps;
  std::size_t lo = 0;
  for (const std::size_t ia : a_idx) {
    const std::int64_t ta = records[ia].t_ps;
    while (lo < b_idx.size() && records[b_idx[lo]].t_ps < ta - range) ++lo;
    for (std::size_t j = lo; j < b_idx.size(); ++j) {
      const std::size_t ib = b_idx[j];
      const std::int64_t d = records[ib].t_ps - ta;
      if (d >= range) break;
      if (ib == ia) continue;
      ++h.counts[static_cast<std::size_t>((d + range) / bw)];
    }
  }
  return h;
}

CoincidenceHistogram build_histogram(const TimeTagStream& stream, Channel ch_a,
                                     Channel ch_b, const HistogramOptions& options) {
  auto h = build_histogram(stream.records, ch_a, ch_b, options);
  if (!stream.header.schedule.empty() && stream.header.duration_s > 0.0) {
    h.acquisition_s = stream.acquisition_time_s(options.basis_filter,
                                                options.t_begin_ps, options.t_end_ps);
  }
  return h;
}

double correlation_coefficient(double c_pp, double c_pq) {
  return correlation_coefficient(c_pp, 1.0, c_pq, 1.0).value;
}

Coefficient correlation_coefficient(double c_pp, double t_pp_s, double c_pq,
                                    double t_pq_s) {
  if (!(c_pp >= 0.0) || !(c_pq >= 0.0)) {
    throw UndefinedCoefficient("coincidence counts must be non-negative");
  }
  if (!(t_pp_s > 0.0) || !(t_pq_s > 0.0)) {
    throw UndefinedCoefficient("acquisition times must be positive");
  }
  const double x = c_pp / t_pp_s, y = c_pq / t_pq_s;
  const double s = x + y;
  if (!(s > 0.0)) throw UndefinedCoefficient("no coincidences in either histogram");
  Coefficient c;
  c.value = std::clamp((x - y) / s, -1.0, 1.0);
  const double dx = 2.0 * y / (s * s), dy = -2.0 * x / (s * s);
  c.sigma = std::sqrt(dx * dx * c_pp / (t_pp_s * t_pp_s) +
                      dy * dy * c_pq / (t_pq_s * t_pq_s));
  return c;
}

double fidelity_from_coefficients(double c_hv, double c_da, double c_rl) {
  return (1.0 + c_hv + c_da - c_rl) / 4.0;
}

QberEstimator qber_estimator_from_string(const std::string& s) {
  if (s == "mean3") return QberEstimator::kMean3;
  if (s == "hv") return QberEstimator::kHV;
  if (s == "hv_da") return QberEstimator::kHVDA;
  throw ConfigError("unknown QBER estimator '" + s + "' (mean3, hv, hv_da)");
}

const char* to_string(QberEstimator q) {
  switch (q) {
    case QberEstimator::kMean3: return "mean3";
    case QberEstimator::kHV: return "hv";
    case QberEstimator::kHVDA: return "hv_da";
  }
  return "mean3";
}

double qber_from_coefficients(double c_hv, double c_da, double c_rl,
                              QberEstimator estimator) {
  switch (estimator) {
    case QberEstimator::kHV: return (1.0 - c_hv) / 2.0;
    case QberEstimator::kHVDA: return (1.0 - (c_hv + c_da) / 2.0) / 2.0;
    case QberEstimator::kMean3: break;
  }
  // R/L are anti-correlated for phi+, so -C_rl counts as the third contrast.
  return (1.0 - (c_hv + c_da - c_rl) / 3.0) / 2.0;
}

namespace {

struct WindowCounts {
  std::array<double, 6> c{};
  std::uint64_t total = 0;
};

std::optional<FidelityPoint> make_point(const WindowCounts& w,
                                        const std::array<double, 6>& t_s,
                                        double t_ps, QberEstimator estimator) {
  for (int b = 0; b < 3; ++b) {
    if (w.c[2 * b] + w.c[2 * b + 1] <= 0.0) return std::nullopt;
  }
  FidelityPoint p;
  p.t_ps = t_ps;
  const auto hv = correlation_coefficient(w.c[0], t_s[0], w.c[1], t_s[1]);
  const auto da = correlation_coefficient(w.c[2], t_s[2], w.c[3], t_s[3]);
  const auto rl = correlation_coefficient(w.c[4], t_s[4], w.c[5], t_s[5]);
  p.c_hv = hv.value;
  p.c_da = da.value;
  p.c_rl = rl.value;
  p.sigma_hv = hv.sigma;
  p.sigma_da = da.sigma;
  p.sigma_rl = rl.sigma;
  p.fidelity = fidelity_from_coefficients(p.c_hv, p.c_da, p.c_rl);
  p.sigma_fidelity =
      0.25 * std::sqrt(hv.sigma * hv.sigma + da.sigma * da.sigma + rl.sigma * rl.sigma);
  p.qber = qber_from_coefficients(p.c_hv, p.c_da, p.c_rl, estimator);
  p.counts = w.total;
  return p;
}

std::array<double, 6> acquisition_times(const FidelityHistograms& hists) {
  std::array<double, 6> t{};
  const bool all_timed = std::all_of(hists.begin(), hists.end(), [](const auto& h) {
    return h.acquisition_s > 0.0;
  });
  for (std::size_t i = 0; i < 6; ++i) t[i] = all_timed ? hists[i].acquisition_s : 1.0;
  return t;
}

}  // namespace

std::vector<FidelityPoint> fidelity_timeseries(const FidelityHistograms& hists,
                                               std::int64_t window_ps,
                                               QberEstimator estimator) {
  for (std::size_t i = 1; i < hists.size(); ++i) {
    if (!hists[i].same_binning(hists[0])) {
      throw BinningMismatch("fidelity histograms do not share one binning");
    }
  }
  const auto bw = hists[0].bin_width_ps;
  if (window_ps <= 0) throw ConfigError("window must be positive");
  if (window_ps % bw != 0) {
    throw BinningMismatch("window " + std::to_string(window_ps) +
                          " ps is not a multiple of the bin width " + std::to_string(bw) +
                          " ps");
  }
  const auto k = static_cast<std::size_t>(window_ps / bw);
  const auto t_s = acquisition_times(hists);
  const std::size_t n = hists[0].size();
  std::vector<FidelityPoint> out;
  if (n < k) return out;
  for (std::size_t i = 0; i + k <= n; ++i) {
    WindowCounts w;
    for (std::size_t h = 0; h < 6; ++h) {
      std::uint64_t s = 0;
      for (std::size_t j = i; j < i + k; ++j) s += hists[h].counts[j];
      w.c[h] = static_cast<double>(s);
      w.total += s;
    }
    if (auto p = make_point(w, t_s, static_cast<double>(hists[0].bin_left_ps(i)), estimator)) {
      out.push_back(*p);
    }
  }
  return out;
}

FidelityPoint peak_fidelity(const std::vector<FidelityPoint>& series) {
  if (series.empty()) throw UndefinedCoefficient("fidelity series is empty");
  std::uint64_t max_counts = 0;
  for (const auto& p : series) max_counts = std::max(max_counts, p.counts);
  const FidelityPoint* best = nullptr;
  for (const auto& p : series) {
    if (2 * p.counts < max_counts) continue;
    if (best == nullptr || p.fidelity > best->fidelity) best = &p;
  }
  return *best;
}

FidelityHistograms build_fidelity_histograms(const TimeTagStream& stream,
                                             const HistogramOptions& options) {
  FidelityHistograms out;
  const char* labels[] = {"HV", "DA", "RL"};
  for (int b = 0; b < 3; ++b) {
    for (int pol = 0; pol < 2; ++pol) {
      const auto polarity = pol == 0 ? Polarity::kCo : Polarity::kCross;
      const auto* entry = stream.find_entry(labels[b], polarity);
      if (entry == nullptr) {
        throw ConfigError(std::string("schedule has no ") + labels[b] + " " +
                          to_string(polarity) + " entry");
      }
      auto o = options;
      o.basis_filter = {entry->basis_id};
      out[static_cast<std::size_t>(2 * b + pol)] =
          build_histogram(stream, Channel::kXX, Channel::kX, o);
    }
  }
  return out;
}

std::vector<FidelityTracePoint> fidelity_trace(const TimeTagStream& stream,
                                               const HistogramOptions& options,
                                               std::int64_t window_ps,
                                               std::int64_t delay_ps,
                                               double report_bin_s,
                                               QberEstimator estimator) {
  if (!(report_bin_s > 0.0)) throw ConfigError("report bin must be positive");
  std::vector<FidelityTracePoint> out;
  const double duration = stream.header.duration_s;
  if (!(duration > 0.0)) return out;
  const auto bin_ps = std::llround(report_bin_s * constants::ps_per_s);
  const auto end_ps = std::llround(duration * constants::ps_per_s);
  for (std::int64_t t = 0; t < end_ps; t += bin_ps) {
    auto o = options;
    o.t_begin_ps = t;
    o.t_end_ps = std::min<std::int64_t>(end_ps, t + bin_ps);
    const auto hists = build_fidelity_histograms(stream, o);
    FidelityTracePoint tp;
    tp.t_begin_s = static_cast<double>(o.t_begin_ps) / constants::ps_per_s;
    tp.t_end_s = static_cast<double>(o.t_end_ps) / constants::ps_per_s;
    const bool timed = std::all_of(hists.begin(), hists.end(), [](const auto& h) {
      return h.acquisition_s > 0.0;
    });
    if (timed) {
      for (const auto& p : fidelity_timeseries(hists, window_ps, estimator)) {
        if (std::llround(p.t_ps) == delay_ps) {
          tp.point = p;
          tp.defined = true;
        }
      }
    }
    out.push_back(tp);
  }
  return out;
}

namespace {

// exp(z^2) erfc(z) for z >= 0.
double erfcx(double z) {
  if (z < 20.0) return std::exp(z * z) * std::erfc(z);
  const double z2 = z * z;
  return 1.0 / (z * std::sqrt(constants::pi)) *
         (1.0 - 1.0 / (2.0 * z2) + 3.0 / (4.0 * z2 * z2));
}

// One side of exp(-|t|/tau) convolved with a unit Gaussian of rms sigma.
double conv_side(double t, double tau, double sigma) {
  const double z = (sigma / tau - t / sigma) / std::sqrt(2.0);
  if (z > 0.0) return std::exp(-t * t / (2.0 * sigma * sigma)) * erfcx(z);
  return std::exp(sigma * sigma / (2.0 * tau * tau) - t / tau) * std::erfc(z);
}

double dip_shape(double t, double tau, double sigma) {
  if (sigma <= 0.0) return std::exp(-std::abs(t) / tau);
  return 0.5 * (conv_side(t, tau, sigma) + conv_side(-t, tau, sigma));
}

// Mean of the dip shape over [l, r].
double dip_bin_average(double l, double r, double tau, double sigma) {
  if (sigma <= 0.0) {
    auto prim = [tau](double x) {
      return std::copysign(tau * (-std::expm1(-std::abs(x) / tau)), x);
    };
    return (prim(r) - prim(l)) / (r - l);
  }
  // Simpson, 4 panels: the shape is smooth on the bin scale.
  const double h = (r - l) / 4.0;
  double s = dip_shape(l, tau, sigma) + dip_shape(r, tau, sigma);
  s += 4.0 * (dip_shape(l + h, tau, sigma) + dip_shape(l + 3 * h, tau, sigma));
  s += 2.0 * dip_shape(l + 2 * h, tau, sigma);
  return s / 12.0;
}

}  // namespace

G2Result fit_g2(const CoincidenceHistogram& hist, const G2Options& options) {
  if (hist.counts.empty() || hist.total() == 0) {
    throw FitFailure("g2 histogram is empty");
  }
  if (!(options.g2_source_zero >= 0.0) || !(options.g2_source_zero < 1.0)) {
    throw ConfigError("g2_source_zero must lie in [0, 1)");
  }
  const double bw = static_cast<double>(hist.bin_width_ps);
  const std::size_t n = hist.size();
  const double span = bw * static_cast<double>(n);
  const double half = 0.5 * span;
  const double sigma = std::max(0.0, options.jitter_sigma_ps);

  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = hist.bin_center_ps(i);
    ys[i] = static_cast<double>(hist.counts[i]);
  }
  const double center = hist.bin_center_ps(0) + 0.5 * (span - bw);

  // Start values from the outer plateau and the dip area.
  double outer = 0.0;
  int n_outer = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(xs[i] - center) >= 0.5 * half) {
      outer += ys[i];
      ++n_outer;
    }
  }
  const double n0 = n_outer > 0 && outer > 0.0
                        ? outer / n_outer
                        : static_cast<double>(hist.total()) / static_cast<double>(n);
  double min_smooth = n0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (std::abs(xs[i] - center) > 0.25 * half) continue;
    min_smooth = std::min(min_smooth, (ys[i - 1] + ys[i] + ys[i + 1]) / 3.0);
  }
  const double a0 = std::clamp(1.0 - min_smooth / n0, 0.0, 1.0);
  double deficit = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(xs[i] - center) < 0.5 * half) deficit += (n0 - ys[i]) * bw;
  }
  const double tau_lo = std::max(0.1 * bw, 0.2 * sigma);
  const double tau_hi = span;
  double tau0 = a0 > 0.02 ? deficit / (2.0 * n0 * a0) : 0.1 * span;
  tau0 = std::clamp(tau0, 2.0 * tau_lo, 0.5 * tau_hi);

  lsq::FitProblem problem;
  problem.model = [bw, sigma](std::span<const double> p, double x) {
    const double l = x - 0.5 * bw - p[3], r = x + 0.5 * bw - p[3];
    return p[0] * (1.0 - p[1] * dip_bin_average(l, r, p[2], sigma));
  };
  problem.data = lsq::poisson_weighted(xs, ys);
  // An autocorrelation holds every pair at +t and -t; halve the weights so
  // the errors count each pair once.
  const double dup = hist.channel_a == hist.channel_b ? 2.0 : 1.0;
  for (auto& d : problem.data) d.weight /= dup;
  problem.scale_covariance = false;
  problem.initial = {n0, a0, tau0, center};
  problem.lower = {1e-12, -1.0, tau_lo, center - 5.0 * bw};
  problem.upper = {1e300, 1.0, tau_hi, center + 5.0 * bw};
  problem.names = {"normalization", "amplitude", "dip_time_ps", "t0_ps"};
  problem.tolerances = {1e-10, 1e-10, 1e-14};
  problem.max_iterations = 500;

  const auto fit = lsq::lm_fit(problem);
  G2Result r;
  r.normalization = fit.params[0];
  r.amplitude = fit.params[1];
  r.dip_time_ns = fit.params[2] / constants::ps_per_ns;
  r.t0_ps = fit.params[3];
  r.g2_zero = std::max(0.0, 1.0 - r.amplitude);
  const auto sig = fit.sigmas();
  r.sigma_g2_zero = sig.size() > 1 ? sig[1] : 0.0;
  const double rho2 = std::clamp(r.amplitude / (1.0 - options.g2_source_zero), 0.0, 1.0);
  r.signal_fraction = std::sqrt(rho2);
  r.background_fraction = 1.0 - r.signal_fraction;
  r.residual_norm = fit.residual_norm * std::sqrt(dup);
  r.reduced_chi2 = fit.reduced_chi2(n, 4) * dup;
  r.iterations = fit.iterations;
  r.converged = fit.converged;
  r.reason = lsq::to_string(fit.reason);
  return r;
}

}  // namespace qdlink
