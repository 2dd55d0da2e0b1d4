#pragma once

// Start-stop coincidence histograms, correlation coefficients, Bell-state
// fidelity series, QBER and g2 autocorrelation fits.

#include "qdlink/timetag.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace qdlink {

struct CoincidenceHistogram {
  std::int64_t bin_width_ps = 48;
  std::int64_t t_min_ps = 0;  // left edge of bin 0
  std::vector<std::uint64_t> counts;
  Channel channel_a = Channel::kXX;
  Channel channel_b = Channel::kX;
  std::vector<std::uint8_t> basis_ids;  // empty = all
  double acquisition_s = 0.0;           // 0 when the stream has no schedule

  std::size_t size() const { return counts.size(); }
  std::int64_t bin_left_ps(std::size_t i) const {
    return t_min_ps + static_cast<std::int64_t>(i) * bin_width_ps;
  }
  double bin_center_ps(std::size_t i) const {
    return static_cast<double>(bin_left_ps(i)) + 0.5 * static_cast<double>(bin_width_ps);
  }
  std::uint64_t total() const;
  bool same_binning(const CoincidenceHistogram& o) const {
    return bin_width_ps == o.bin_width_ps && t_min_ps == o.t_min_ps &&
           counts.size() == o.counts.size();
  }
};

struct HistogramOptions {
  std::vector<std::uint8_t> basis_filter;  // both events must match; empty = all
  std::int64_t bin_width_ps = 48;
  std::int64_t range_ps = 4800;  // delays in [-range, +range)
  // Only start (channel a) events inside [t_begin, t_end) are used.
  std::int64_t t_begin_ps = INT64_MIN;
  std::int64_t t_end_ps = INT64_MAX;
};

// Counts of t_b - t_a over all pairs; for ch_a == ch_b self-pairs are skipped.
CoincidenceHistogram build_histogram(const TimeTagStream& stream, Channel ch_a,
                                     Channel ch_b, const HistogramOptions& options);
// Same on a raw sorted record list (acquisition_s stays 0).
CoincidenceHistogram build_histogram(const std::vector<Record>& records,
                                     Channel ch_a, Channel ch_b,
                                     const HistogramOptions& options);

// (c_pp - c_pq) / (c_pp + c_pq); throws UndefinedCoefficient on zero total.
double correlation_coefficient(double c_pp, double c_pq);

struct Coefficient {
  double value = 0.0;
  double sigma = 0.0;  // Poisson propagation
};
// Coefficient of the rates c/t; pass t = 1 for raw counts.
Coefficient correlation_coefficient(double c_pp, double t_pp_s, double c_pq,
                                    double t_pq_s);

double fidelity_from_coefficients(double c_hv, double c_da, double c_rl);

enum class QberEstimator {
  kMean3,  // mean error over HV, DA, RL
  kHV,     // (1 - C_hv) / 2
  kHVDA,   // mean over HV and DA
};
QberEstimator qber_estimator_from_string(const std::string& s);
const char* to_string(QberEstimator q);
double qber_from_coefficients(double c_hv, double c_da, double c_rl,
                              QberEstimator estimator = QberEstimator::kMean3);

struct FidelityPoint {
  double t_ps = 0.0;  // left edge of the integration window
  double c_hv = 0.0, c_da = 0.0, c_rl = 0.0;
  double sigma_hv = 0.0, sigma_da = 0.0, sigma_rl = 0.0;
  double fidelity = 0.0;
  double sigma_fidelity = 0.0;
  double qber = 0.0;
  std::uint64_t counts = 0;  // all six histograms, inside the window
};

// Order: HV co, HV cross, DA co, DA cross, RL co, RL cross.
using FidelityHistograms = std::array<CoincidenceHistogram, 6>;

// Counts are integrated over [t, t + window) for every bin start t; points
// where any basis has no counts are omitted. Throws BinningMismatch.
std::vector<FidelityPoint> fidelity_timeseries(
    const FidelityHistograms& hists, std::int64_t window_ps,
    QberEstimator estimator = QberEstimator::kMean3);

// Highest-fidelity point among those holding at least half of the maximum
// window counts; throws UndefinedCoefficient on an empty series.
FidelityPoint peak_fidelity(const std::vector<FidelityPoint>& series);

// Histograms (a = XX, b = X) for the six HV/DA/RL co/cross schedule entries.
// Throws ConfigError if the schedule lacks one of them.
FidelityHistograms build_fidelity_histograms(const TimeTagStream& stream,
                                             const HistogramOptions& options);

struct FidelityTracePoint {
  double t_begin_s = 0.0;
  double t_end_s = 0.0;
  FidelityPoint point;
  bool defined = false;
};

// Fidelity and QBER per acquisition-time bin, evaluated at the window that
// starts at `delay_ps` (typically the peak of the full-data series).
std::vector<FidelityTracePoint> fidelity_trace(const TimeTagStream& stream,
                                               const HistogramOptions& options,
                                               std::int64_t window_ps,
                                               std::int64_t delay_ps,
                                               double report_bin_s,
                                               QberEstimator estimator);

struct G2Options {
  // g2 of the emitter alone at zero delay; the background fraction is
  // inferred relative to it.
  double g2_source_zero = 0.0;
  // Gaussian rms of the pair timing difference; folded into the dip shape.
  double jitter_sigma_ps = 0.0;
};

struct G2Result {
  double g2_zero = 1.0;              // dip depth at t0, jitter removed
  double background_fraction = 0.0;  // 1 - rho
  double signal_fraction = 1.0;      // rho
  double amplitude = 0.0;            // dip amplitude a = 1 - g2_zero
  double dip_time_ns = 0.0;
  double t0_ps = 0.0;
  double normalization = 0.0;  // counts per bin far from the dip
  double sigma_g2_zero = 0.0;
  double residual_norm = 0.0;
  double reduced_chi2 = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string reason;
};

// Fits N [1 - a exp(-|t - t0| / tau_d)] (bin-averaged, Poisson weights).
// Throws FitFailure on an empty histogram.
G2Result fit_g2(const CoincidenceHistogram& hist, const G2Options& options = {});

}  // namespace qdlink
