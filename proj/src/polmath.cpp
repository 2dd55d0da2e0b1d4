#include "qdlink/polmath.hpp"

#include "qdlink/constants.hpp"
#include "qdlink/errors.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace qdlink {

namespace {

std::string describe(const Eigen::Vector3d& v) {
  std::ostringstream os;
  os.precision(17);
  os << "(" << v[0] << ", " << v[1] << ", " << v[2] << ")";
  return os.str();
}

double wrap_two_pi(double phi) {
  double r = std::fmod(phi, constants::two_pi);
  if (r < 0.0) r += constants::two_pi;
  if (r >= constants::two_pi) r = 0.0;
  return r;
}

}  // namespace

StokesVector StokesVector::from_components(double s1, double s2, double s3,
                                           double tol) {
  return from_vector(Eigen::Vector3d(s1, s2, s3), tol);
}

StokesVector StokesVector::from_vector(const Eigen::Vector3d& v, double tol) {
  const double n = v.norm();
  if (!std::isfinite(n) || std::abs(n - 1.0) > tol) {
    throw NormalizationError("Stokes vector " + describe(v) +
                             " is not unit norm");
  }
  return StokesVector(v);
}

StokesVector StokesVector::normalized(const Eigen::Vector3d& v) {
  const double n = v.norm();
  if (!std::isfinite(n) || n == 0.0) {
    throw NormalizationError("cannot normalize Stokes vector " + describe(v));
  }
  return StokesVector(v / n);
}

std::optional<StokesVector> StokesVector::from_label(std::string_view label) {
  if (label == "H") return H();
  if (label == "V") return V();
  if (label == "D") return D();
  if (label == "A") return A();
  if (label == "R") return R();
  if (label == "L") return L();
  return std::nullopt;
}

double great_circle_angle(const StokesVector& a, const StokesVector& b) {
  // atan2 form stays accurate for nearly (anti)parallel vectors.
  return std::atan2(a.vec().cross(b.vec()).norm(), a.dot(b));
}

StokesVector random_stokes(std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  for (;;) {
    Eigen::Vector3d v(n01(rng), n01(rng), n01(rng));
    if (v.norm() > 1e-12) return StokesVector::normalized(v);
  }
}

PoincareAngles PoincareAngles::make(double theta, double phi) {
  if (!std::isfinite(theta) || !std::isfinite(phi)) {
    throw NormalizationError("Poincare angles must be finite");
  }
  constexpr double slack = 1e-12;
  if (theta < -slack || theta > constants::pi + slack) {
    throw NormalizationError("theta outside [0, pi]");
  }
  return {std::clamp(theta, 0.0, constants::pi), wrap_two_pi(phi)};
}

StokesVector angles_to_stokes(const PoincareAngles& a) {
  const double st = std::sin(a.theta);
  return StokesVector::normalized(Eigen::Vector3d(
      std::cos(a.theta), st * std::cos(a.phi), st * std::sin(a.phi)));
}

PoincareAngles stokes_to_angles(const StokesVector& s) {
  const double r = std::hypot(s.s2(), s.s3());
  const double theta = std::atan2(r, s.s1());
  const double phi = r == 0.0 ? 0.0 : wrap_two_pi(std::atan2(s.s3(), s.s2()));
  return {theta, phi};
}

PoincareAngles stokes_to_angles(double s1, double s2, double s3) {
  return stokes_to_angles(StokesVector::from_components(s1, s2, s3));
}

bool is_proper_rotation(const Eigen::Matrix3d& m, double tol) {
  if (!m.allFinite()) return false;
  const double orth = (m.transpose() * m - Eigen::Matrix3d::Identity())
                          .cwiseAbs()
                          .maxCoeff();
  return orth <= tol && std::abs(m.determinant() - 1.0) <= tol;
}

MuellerRotation MuellerRotation::from_matrix(const Eigen::Matrix3d& m,
                                             double tol) {
  if (!is_proper_rotation(m, tol)) {
    std::ostringstream os;
    os << "matrix is not a proper rotation (det = " << m.determinant() << ")";
    throw InvalidRotation(os.str());
  }
  return MuellerRotation(m);
}

MuellerRotation MuellerRotation::about_axis(const Eigen::Vector3d& axis,
                                            double angle) {
  const double n = axis.norm();
  if (!std::isfinite(n) || n == 0.0 || !std::isfinite(angle)) {
    throw InvalidRotation("rotation axis must be finite and non-zero");
  }
  return MuellerRotation(
      Eigen::AngleAxisd(angle, axis / n).toRotationMatrix());
}

MuellerRotation MuellerRotation::random(std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::Quaterniond q;
  do {
    q = Eigen::Quaterniond(n01(rng), n01(rng), n01(rng), n01(rng));
  } while (q.norm() < 1e-12);
  q.normalize();
  return MuellerRotation(q.toRotationMatrix());
}

StokesVector MuellerRotation::apply(const StokesVector& s) const {
  // Re-normalize away the last-ulp drift of the product.
  return StokesVector::normalized(m_ * s.vec());
}

double rotation_distance(const MuellerRotation& a, const MuellerRotation& b) {
  const double f = (a.matrix() - b.matrix()).norm() / (2.0 * std::sqrt(2.0));
  return 2.0 * std::asin(std::min(1.0, f));
}

StokesVector apply_rotation(const MuellerRotation& m, const StokesVector& s) {
  return m.apply(s);
}

double projection_probability(const StokesVector& analyzer,
                              const StokesVector& photon) {
  // Evaluate on the non-negative branch and complement the other one, so the
  // result for -analyzer is exactly 1 minus this one.
  const double c = std::clamp(analyzer.dot(photon), -1.0, 1.0);
  if (c >= 0.0) return 0.5 + 0.5 * c;
  return 1.0 - (0.5 + 0.5 * (-c));
}

MuellerRotation retarder(double angle, double retardance) {
  return MuellerRotation::about_axis(
      Eigen::Vector3d(std::cos(2.0 * angle), std::sin(2.0 * angle), 0.0),
      retardance);
}

StokesVector analyzer_to_stokes(const AnalyzerSetting& setting) {
  if (!std::isfinite(setting.hwp) || !std::isfinite(setting.qwp) ||
      !std::isfinite(setting.lp)) {
    throw ConfigError("analyzer angles must be finite");
  }
  // Transmitted state after the LP is its axis; run the plates backwards.
  const Eigen::Vector3d lp_axis(std::cos(2.0 * setting.lp),
                                std::sin(2.0 * setting.lp), 0.0);
  const MuellerRotation hwp = retarder(setting.hwp, constants::pi);
  const MuellerRotation qwp = retarder(setting.qwp, constants::pi / 2.0);
  return StokesVector::normalized(hwp.matrix().transpose() *
                                  (qwp.matrix().transpose() * lp_axis));
}

AnalyzerSetting analyzer_for_stokes(const StokesVector& target) {
  // With LP at 0 the QWP at q produces (cos^2 2q, cos 2q sin 2q, sin 2q); the
  // HWP then mirrors the linear part about azimuth 2h and negates s3.
  const double q = -0.5 * std::asin(std::clamp(target.s3(), -1.0, 1.0));
  const double psi = std::atan2(target.s2(), target.s1());
  return {(psi + 2.0 * q) / 4.0, q, 0.0};
}

}  // namespace qdlink
