#pragma once

// Stokes-vector algebra on the Poincare sphere.
//
// Conventions used throughout the project:
//   H = (1, 0, 0), D = (0, 1, 0), R = (0, 0, 1).
//   The Jones state cos(theta/2)|H> + sin(theta/2) e^{i phi}|V> has Stokes
//   vector (cos theta, sin theta cos phi, sin theta sin phi), so R is
//   (|H> + i|V>)/sqrt(2). Flipping this handedness only flips the sign of
//   every s3 component (and hence of C_RL) consistently.
//   Rotations act on the right-hand rule: a rotation by +pi/2 about s3 maps
//   H to D.

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>

namespace qdlink {

inline constexpr double kUnitTolerance = 1e-9;

class StokesVector {
 public:
  StokesVector() : v_(1.0, 0.0, 0.0) {}

  // Throws NormalizationError if the norm deviates from 1 by more than tol.
  static StokesVector from_components(double s1, double s2, double s3,
                                      double tol = kUnitTolerance);
  static StokesVector from_vector(const Eigen::Vector3d& v,
                                  double tol = kUnitTolerance);
  // Rescales any non-zero, finite vector onto the sphere.
  static StokesVector normalized(const Eigen::Vector3d& v);

  static StokesVector H() { return StokesVector({1, 0, 0}); }
  static StokesVector V() { return StokesVector({-1, 0, 0}); }
  static StokesVector D() { return StokesVector({0, 1, 0}); }
  static StokesVector A() { return StokesVector({0, -1, 0}); }
  static StokesVector R() { return StokesVector({0, 0, 1}); }
  static StokesVector L() { return StokesVector({0, 0, -1}); }
  // One of "H", "V", "D", "A", "R", "L".
  static std::optional<StokesVector> from_label(std::string_view label);

  double s1() const { return v_[0]; }
  double s2() const { return v_[1]; }
  double s3() const { return v_[2]; }
  double operator[](int i) const { return v_[i]; }
  const Eigen::Vector3d& vec() const { return v_; }

  double dot(const StokesVector& o) const { return v_.dot(o.v_); }
  StokesVector operator-() const { return StokesVector(-v_); }

  friend bool operator==(const StokesVector&, const StokesVector&) = default;

 private:
  explicit StokesVector(const Eigen::Vector3d& v) : v_(v) {}
  Eigen::Vector3d v_;
};

// Great-circle angle between two Stokes vectors, radians.
double great_circle_angle(const StokesVector& a, const StokesVector& b);

// Uniform on the sphere.
StokesVector random_stokes(std::mt19937_64& rng);

struct PoincareAngles {
  double theta = 0.0;  // [0, pi], measured from H
  double phi = 0.0;    // [0, 2 pi)

  // Reduces phi modulo 2 pi; rejects non-finite input and theta outside
  // [0, pi] (beyond a rounding slack).
  static PoincareAngles make(double theta, double phi);
};

StokesVector angles_to_stokes(const PoincareAngles& a);
// Poles return phi = 0.
PoincareAngles stokes_to_angles(const StokesVector& s);
// Same as above for raw components; throws NormalizationError when not unit.
PoincareAngles stokes_to_angles(double s1, double s2, double s3);

// Proper rotation of the Poincare sphere (the lossless part of a Mueller
// matrix). The invariant M^T M = I, det M = +1 holds for every instance.
class MuellerRotation {
 public:
  MuellerRotation() : m_(Eigen::Matrix3d::Identity()) {}

  static MuellerRotation identity() { return {}; }
  // Throws InvalidRotation unless orthogonal with det +1 within tol.
  static MuellerRotation from_matrix(const Eigen::Matrix3d& m,
                                     double tol = kUnitTolerance);
  // Right-handed rotation by angle (radians) about axis; axis need not be
  // normalized but must be non-zero.
  static MuellerRotation about_axis(const Eigen::Vector3d& axis, double angle);
  // Haar-uniform random rotation.
  static MuellerRotation random(std::mt19937_64& rng);

  const Eigen::Matrix3d& matrix() const { return m_; }
  MuellerRotation inverse() const { return MuellerRotation(m_.transpose()); }
  StokesVector apply(const StokesVector& s) const;

  friend MuellerRotation operator*(const MuellerRotation& a,
                                   const MuellerRotation& b) {
    return MuellerRotation(a.m_ * b.m_);
  }

 private:
  explicit MuellerRotation(const Eigen::Matrix3d& m) : m_(m) {}
  Eigen::Matrix3d m_;
};

// Angle of the relative rotation a^T b, in radians, stable near zero.
double rotation_distance(const MuellerRotation& a, const MuellerRotation& b);

// Checks the rotation invariants on a raw matrix.
bool is_proper_rotation(const Eigen::Matrix3d& m, double tol = kUnitTolerance);

StokesVector apply_rotation(const MuellerRotation& m, const StokesVector& s);

// Generalized Malus law: transmission probability of a pure photon state
// through a projector onto `analyzer`. Exactly complementary:
// p(a, s) + p(-a, s) == 1 in floating point.
double projection_probability(const StokesVector& analyzer,
                              const StokesVector& photon);

// Polarization analyzer in propagation order: half-wave plate, quarter-wave
// plate, linear polarizer. Angles are fast-axis / transmission-axis angles
// from horizontal, radians.
struct AnalyzerSetting {
  double hwp = 0.0;
  double qwp = 0.0;
  double lp = 0.0;
};

// Waveplate with fast axis at `angle` and retardance `retardance`: a
// right-handed rotation by the retardance about (cos 2a, sin 2a, 0).
MuellerRotation retarder(double angle, double retardance);

// The input polarization state that the analyzer transmits with certainty.
StokesVector analyzer_to_stokes(const AnalyzerSetting& setting);

// A waveplate setting (LP fixed at 0) whose projection state is `target`.
AnalyzerSetting analyzer_for_stokes(const StokesVector& target);

}  // namespace qdlink
