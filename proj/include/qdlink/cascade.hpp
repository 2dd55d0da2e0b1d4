#pragma once

// Two-photon correlations of a biexciton cascade and a Monte-Carlo generator
// of time-tagged XX / X detections.
//
// Frames: a MuellerRotation handed to the simulator maps an analyzer's
// laboratory Stokes vector into the emitter eigenframe (a_qd = M a_lab). This
// is the same map the calibration reconstructs from S_m = M S_r.

#include "qdlink/polmath.hpp"
#include "qdlink/timetag.hpp"

#include <cstdint>

namespace qdlink {

struct QDParams {
  double fss_uev = 5.6;
  // Decay constant of the polarization correlation. It includes the X
  // lifetime, so tau_corr_ns <= tau_x_ns; equality means no extra dephasing.
  double tau_corr_ns = 1.5;
  double tau_xx_ns = 1.0;
  double tau_x_ns = 1.5;
  double lambda_xx_nm = 1310.00;
  double lambda_x_nm = 1321.45;
  double pair_rate_hz = 5e6;

  void validate() const;  // throws ConfigError
  SourceSnapshot snapshot() const;
};

struct DetectionConfig {
  StokesVector analyzer_x;   // analyzer on the X arm (laboratory frame)
  StokesVector analyzer_xx;  // analyzer on the XX arm (laboratory frame)
  double jitter_fwhm_ps = 60.0;  // per detector
  double efficiency_x = 1.0;
  double efficiency_xx = 1.0;
  // Unpolarized background photon rates arriving at each analyzer.
  double background_rate_x_hz = 0.0;
  double background_rate_xx_hz = 0.0;

  void validate() const;  // throws ConfigError
};

// Phase delta t / hbar of the |VV> component after delay t.
double beat_phase(double delta_uev, double t_ps);
// Beat period h / delta in ps.
double beat_period_ps(double delta_uev);

// Co-polarized coincidence probability for an analyzer state at Poincare
// angles (theta, phi) in the eigenframe, used on both photons.
double p_co(double theta, double phi, double delta_uev, double t_ps);

// State of the X photon after projecting XX onto the (theta, phi) state.
StokesVector conditional_x_state(double theta, double phi, double delta_uev,
                                 double t_ps);
// General form: XX projected onto `xx_projection` (eigenframe), with the
// cascade phase `phase_rad` accumulated.
StokesVector conditional_x_state(const StokesVector& xx_projection,
                                 double phase_rad);

// Probability that XX passes `analyzer_xx` and X passes `analyzer_x` (both in
// the eigenframe) for a coherent pair with the given phase.
double joint_pass_probability(const StokesVector& analyzer_x,
                              const StokesVector& analyzer_xx,
                              double phase_rad);

struct SimulationOptions {
  std::uint8_t basis_id = 0;
  std::uint16_t resolution_ps = 1;
  // Shards are simulated independently with derived seeds and concatenated;
  // the layout depends only on these options, never on the thread count.
  double shard_s = 0.25;
  unsigned max_threads = 0;  // 0 = hardware concurrency
};

// Monte-Carlo run of a single analyzer configuration over [0, duration_s).
TimeTagStream simulate_pairs(const QDParams& qd, const DetectionConfig& det,
                             const MuellerRotation& mueller_x,
                             const MuellerRotation& mueller_xx,
                             double duration_s, std::uint64_t seed,
                             const SimulationOptions& options = {});

// Per-segment rotation hook (drift); identity when unset.
struct RotationPlan {
  MuellerRotation x;
  MuellerRotation xx;
  std::vector<MuellerRotation> xx_per_segment;  // optional, overrides xx
};

// Runs a full schedule; analyzers come from the schedule entries, the rest of
// `det` applies to every segment.
TimeTagStream simulate_schedule(const QDParams& qd, const DetectionConfig& det,
                                const Schedule& schedule,
                                const RotationPlan& rotations,
                                double duration_s, std::uint64_t seed,
                                const SimulationOptions& options = {});

// SplitMix64 finalizer used to derive independent per-shard seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace qdlink
