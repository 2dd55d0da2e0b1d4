#pragma once

// Detection-basis calibration: time-resolved co/cross correlations in three
// reference bases give the eigenframe view S_m of each reference state S_r;
// S_m = M S_r then fixes the rotation M, and M^T S_eigen are the reference
// states that line the detectors up with the emitter eigenbasis.

#include "qdlink/coincidence.hpp"
#include "qdlink/polmath.hpp"

#include <Eigen/Core>

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace qdlink {

// d = c_co - c_cross on the non-negative delay side.
struct DifferenceSeries {
  std::int64_t bin_width_ps = 0;
  std::vector<double> t_ps;   // bin centers
  std::vector<double> d;      // difference
  std::vector<double> sigma;  // Poisson error of d
  std::vector<double> sum;    // c_co + c_cross (same scaling as d)
};

// When both histograms carry acquisition times the cross histogram is scaled
// to the co dwell. Throws BinningMismatch.
DifferenceSeries normalized_difference(const CoincidenceHistogram& co,
                                       const CoincidenceHistogram& cross);

struct BasisFitOptions {
  // Rms of the X - XX timing difference; the beat is damped accordingly.
  double jitter_sigma_ps = 0.0;
  bool bin_average = true;
  // Fit window; unset start = max(peak + 1 bin, 4 sigma), unset end = last
  // bin whose co + cross count stays above max(10, 1e-3 peak).
  std::optional<double> t_begin_ps;
  std::optional<double> t_end_ps;
  double delta_min_uev = 0.2;
  double delta_max_uev = 40.0;
  // Optional start point [A, theta, phi, delta_uev, tau_ns]; skips the scan.
  std::optional<std::array<double, 5>> initial;
  // Holds delta at this value (scan and fit) when set.
  std::optional<double> fixed_delta_uev;
};

struct BasisFit {
  std::string label;
  StokesVector reference;  // S_r (laboratory frame)
  PoincareAngles angles;   // eigenframe view of S_r, one of four branches
  double delta_uev = 0.0;
  double tau_ns = 0.0;
  double amplitude = 0.0;
  Eigen::Matrix<double, 5, 5> covariance = Eigen::Matrix<double, 5, 5>::Zero();
  double sigma_theta = 0.0, sigma_phi = 0.0, sigma_delta_uev = 0.0, sigma_tau_ns = 0.0;
  bool phi_identifiable = true;
  bool insufficient_beat = false;  // delta is not constrained by this basis
  bool delta_fixed = false;        // refitted with delta held at the consensus
  bool converged = false;
  int iterations = 0;
  double reduced_chi2 = 0.0;
  double t_begin_ps = 0.0, t_end_ps = 0.0;
  std::size_t n_points = 0;

  StokesVector measured() const { return angles_to_stokes(angles); }
};

// Model value of d at the bin [t - w/2, t + w/2] (w = 0: point value).
double basis_model(double t_ps, double bin_width_ps, double amplitude,
                   double theta, double phi, double delta_uev, double tau_ns,
                   double jitter_sigma_ps = 0.0);

// Fits d(t) = A e^{-t/tau} (cos^2 theta + sin^2 theta cos(delta t / hbar - 2 phi)).
BasisFit fit_basis_orientation(const DifferenceSeries& series,
                               const BasisFitOptions& options = {});

// Difference series with the XX analyzer on reference `xx_ref` and the X
// analyzer on reference `x_ref`. Equal indices are the co/cross series of one
// basis. Those cannot tell S_m from -S_m; the cross-basis ones (different
// indices) fix the relative signs.
struct PairSeries {
  std::size_t xx_ref = 0;
  std::size_t x_ref = 0;
  DifferenceSeries series;
};

// d for eigenframe analyzers a (XX) and b (X):
// A e^{-t/tau} [a1 b1 + Re(conj((b2 + i b3)(a2 + i a3)) e^{i delta t / hbar})].
double pair_model(double t_ps, double bin_width_ps, double amplitude,
                  const StokesVector& a_xx, const StokesVector& b_x, double delta_uev,
                  double tau_ns, double jitter_sigma_ps = 0.0);

// Candidates (theta, phi), (pi - theta, phi), (theta, phi + pi),
// (pi - theta, phi + pi) give the same d(t); in Stokes terms: identity, flip
// of s1, flip of s2 and s3, flip of all.
std::array<StokesVector, 4> branch_candidates(const StokesVector& s);

struct AmbiguityResolution {
  std::array<StokesVector, 3> measured;
  std::array<int, 3> branch{};  // index into branch_candidates
  MuellerRotation rotation;
  double rms_residual = 0.0;        // rms |M S_r - S_m| of the winner
  double runner_up_residual = 0.0;  // best combination outside `equivalent`
  // Distinct rotations scoring within kEquivalentResidual of the winner,
  // winner first, with their branch choices.
  std::vector<MuellerRotation> equivalent;
  std::vector<std::array<int, 3>> equivalent_branch;
};

inline constexpr double kEquivalentResidual = 0.05;

// Scores all 4^3 combinations by the Procrustes residual. Flipping the sign
// of two S_m keeps them a rotated orthonormal triple, so for orthogonal
// references four rotations tie, and each also ties with its twin
// R_pi(s1) M, which leaves the Bell state invariant. The tie goes to the larger
// trace; `equivalent` lists the rest for resolution with PairSeries. Throws
// CalibrationInconsistent when even the best combination is not close to a
// rotation.
AmbiguityResolution resolve_ambiguities(const std::array<BasisFit, 3>& fits,
                                        const std::array<StokesVector, 3>& refs,
                                        double tolerance = 0.2);
AmbiguityResolution resolve_ambiguities(const std::array<StokesVector, 3>& fitted,
                                        const std::array<StokesVector, 3>& refs,
                                        double tolerance = 0.2);

// Least-squares proper rotation (Procrustes with det +1) taking refs to
// measured. Throws RankDeficient when the references are degenerate.
MuellerRotation reconstruct_mueller(
    const std::vector<std::pair<StokesVector, StokesVector>>& pairs);

// M^{-1} S_eigen = M^T S_eigen.
std::vector<StokesVector> reference_states(const MuellerRotation& m,
                                           const std::vector<StokesVector>& eigen);

// The twin of m: R_pi(s1) m.
MuellerRotation twin_rotation(const MuellerRotation& m);
// Rotation distance modulo the twin ambiguity.
double rotation_distance_mod_twin(const MuellerRotation& a, const MuellerRotation& b);

struct ConsensusValue {
  double value = 0.0;
  double sigma = 0.0;
  double chi2 = 0.0;  // spread about the mean in units of the fit errors
  int dof = 0;
  bool consistent = true;
};

// Inverse-variance mean over bases with a usable beat (all bases as fallback).
ConsensusValue consensus_delta(const std::vector<BasisFit>& fits);
ConsensusValue consensus_tau(const std::vector<BasisFit>& fits);

struct CalibrationResult {
  MuellerRotation mueller;
  std::vector<BasisFit> fits;
  std::array<StokesVector, 3> measured;
  std::array<int, 3> branch{};
  ConsensusValue delta;
  ConsensusValue tau;
  double orthogonality_residual = 0.0;
  double runner_up_residual = 0.0;
  // Sign selection from cross-basis series: chi^2 of the chosen rotation and
  // of the best alternative that is not its twin.
  bool signs_resolved = false;
  double sign_chi2 = 0.0;
  double sign_runner_up_chi2 = 0.0;
  // Joint fit of M, delta, tau and one amplitude per series over all series;
  // `measured` then holds M S_r.
  bool refined = false;
  double refined_reduced_chi2 = 0.0;
  std::vector<StokesVector> reference_states;  // for H, D, R eigenstates
};

// Without cross-basis series the sign ambiguity is left to the trace
// tie-break; with co/cross series as well the result is refined jointly.
// Co/cross series also let bases flagged insufficient_beat be refitted with
// delta held at the consensus of the others.
// `pair_options` supplies jitter, bin averaging and window for the series.
CalibrationResult calibrate(const std::array<BasisFit, 3>& fits,
                            const std::vector<PairSeries>& pairs = {},
                            const BasisFitOptions& pair_options = {},
                            double tolerance = 0.2);

struct CalibrationOptions {
  std::int64_t bin_width_ps = 16;
  std::int64_t range_ps = 16000;
  BasisFitOptions fit;  // jitter taken from the stream header when 0
};

// Runs the whole chain on a stream recorded with a calibration schedule (co
// and cross entries labelled by reference state name, cross-basis entries
// labelled "<xx ref>/<x ref>", used when present).
CalibrationResult calibrate_stream(const TimeTagStream& stream,
                                   const std::array<std::string, 3>& refs,
                                   const CalibrationOptions& options = {});

}  // namespace qdlink
