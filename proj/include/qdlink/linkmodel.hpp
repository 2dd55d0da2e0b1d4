#pragma once

// Link-level models: loss, fiber rotation drift, classical crosstalk, Stark
// tuning of the emission lines and the fine-structure splitting, and CWDM
// channel planning.

#include "qdlink/polmath.hpp"

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace qdlink {

struct ClassicalChannel {
  double launch_power_uw = 0.0;
  double isolation_db = 0.0;
  double k_hz_per_uw = 0.0;  // counts per second per uW after isolation
};

struct LinkConfig {
  double length_km = 15.0;
  double loss_db = 0.0;  // total system + fiber loss on the transmitted arm
  MuellerRotation mueller;
  double drift_rate_deg_per_hr = 0.0;
  ClassicalChannel classical;
};

// 10^(-loss/10); throws ConfigError on negative loss.
double loss_to_efficiency(double loss_db);

// k P 10^(-isolation/10); throws ConfigError on negative inputs.
double crosstalk_background(double launch_power_uw, double isolation_db,
                            double k_hz_per_uw);

// Random-walk drift: segment 0 sees `base`; segment j adds a rotation by
// rate * (duration of segment j-1) about a fresh random axis.
std::vector<MuellerRotation> drift_rotations(const MuellerRotation& base,
                                             const std::vector<double>& segment_hours,
                                             double rate_deg_per_hr,
                                             std::uint64_t seed);

// E(V) = e0 - p V - beta V^2 (ueV), FSS(V) = sqrt(s_min^2 + gamma^2 (V - v0)^2).
struct StarkParams {
  double e0_uev = 0.0;
  double p_uev_per_v = 0.0;
  double beta_uev_per_v2 = 0.0;
  double s_min_uev = 0.0;
  double gamma_uev_per_v = 0.0;
  double v0_v = 0.0;
  double v_min = -3.8;  // calibrated bias range
  double v_max = 0.0;
};

struct StarkShift {
  double lambda_nm = 0.0;
  bool extrapolated = false;  // bias outside [v_min, v_max]
};

double stark_energy_uev(double v, const StarkParams& p);
StarkShift stark_shift(double v, const StarkParams& p);
double fss_vs_bias(double v, const StarkParams& p);

struct StarkSample {
  double v = 0.0;
  double lambda_xx_nm = 0.0;
  double lambda_x_nm = 0.0;
  double fss_uev = 0.0;
};

// CSV with a header naming v, lambda_xx_nm, lambda_x_nm, fss_uev (any order).
// Throws ConfigError on malformed input.
std::vector<StarkSample> parse_stark_csv(std::istream& in);

enum class Line { kXX, kX };
Line line_from_string(const std::string& s);
const char* to_string(Line l);

struct StarkFit {
  StarkParams params;
  double rms_lambda_nm = 0.0;
  double rms_fss_uev = 0.0;
  bool converged = false;
};

// Fits the energy model of one line in wavelength space and the FSS model,
// both by lm_fit; the bias range is taken from the samples.
StarkFit fit_stark(const std::vector<StarkSample>& samples, Line line);

struct CwdmChannel {
  double center_nm = 0.0;
  int index = 0;  // 0 = 1271 nm ... 17 = 1611 nm
};

inline constexpr int kCwdmChannels = 18;
double cwdm_center(int index);
// Nearest grid center; an exact midpoint goes to the lower channel.
// Throws OutOfGrid outside [1261, 1621] nm.
CwdmChannel nearest_cwdm_channel(double lambda_nm);

struct TunePlan {
  bool feasible = false;
  std::string reason;  // "", "out_of_range", "fss_limit"
  std::string message;
  double target_nm = 0.0;
  double bias_v = 0.0;
  double lambda_nm = 0.0;
  double fss_uev = 0.0;
  double fss_limit_uev = 0.0;
  double range_min_nm = 0.0;  // tunable wavelengths over the bias range
  double range_max_nm = 0.0;
};

// Bisection for stark_shift(V) = target inside [v_min, v_max]; among several
// solutions the one with the smallest FSS wins.
TunePlan tune_plan(const StarkParams& p, double target_nm, double fss_limit_uev,
                   double tolerance_nm = 0.01);

}  // namespace qdlink
