#include "oracles.hpp"
#include "qdlink/errors.hpp"
#include "qdlink/polmath.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace qdlink;

namespace {

std::array<double, 3> arr(const StokesVector& s) { return {s.s1(), s.s2(), s.s3()}; }

double jones_overlap(const std::array<double, 3>& a, const std::array<double, 3>& s) {
  const auto ja = oracle::jones_of(a), js = oracle::jones_of(s);
  return std::norm(std::conj(ja[0]) * js[0] + std::conj(ja[1]) * js[1]);
}

}  // namespace

TEST_SUITE("polmath") {

TEST_CASE("named states follow the H/D/R convention") {
  CHECK(StokesVector::H().vec() == Eigen::Vector3d(1, 0, 0));
  CHECK(StokesVector::D().vec() == Eigen::Vector3d(0, 1, 0));
  CHECK(StokesVector::R().vec() == Eigen::Vector3d(0, 0, 1));
  CHECK(*StokesVector::from_label("L") == StokesVector::L());
  CHECK_FALSE(StokesVector::from_label("Q").has_value());
  // R is (|H> + i|V>)/sqrt 2 in the Jones picture.
  const auto r = oracle::stokes_of({oracle::cplx(1, 0), oracle::cplx(0, 1)});
  CHECK(r[2] == doctest::Approx(1.0));
}

TEST_CASE("normalization is enforced") {
  CHECK_THROWS_AS(StokesVector::from_components(1.0, 0.1, 0.0), NormalizationError);
  CHECK_THROWS_AS(StokesVector::from_components(NAN, 0.0, 0.0), NormalizationError);
  CHECK_NOTHROW(StokesVector::from_components(1.0 + 1e-12, 0.0, 0.0));
  CHECK_THROWS_AS(StokesVector::normalized(Eigen::Vector3d::Zero()), NormalizationError);
  const auto n = StokesVector::normalized({3, 4, 0});
  CHECK(n.s1() == doctest::Approx(0.6));
  CHECK_THROWS_AS(stokes_to_angles(0.5, 0.5, 0.5), NormalizationError);
}

TEST_CASE("angles round trip and match the Jones parametrization") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const auto s = random_stokes(rng);
    const auto a = stokes_to_angles(s);
    CHECK(a.theta >= 0.0);
    CHECK(a.theta <= oracle::kPi);
    CHECK(a.phi >= 0.0);
    CHECK(a.phi < 2 * oracle::kPi);
    CHECK(great_circle_angle(angles_to_stokes(a), s) < 1e-7);
    const auto o = oracle::stokes_of(oracle::jones_state(a.theta, a.phi));
    for (int k = 0; k < 3; ++k) CHECK(o[k] == doctest::Approx(s[k]).epsilon(1e-9));
  }
  CHECK(stokes_to_angles(StokesVector::H()).phi == 0.0);
  CHECK_THROWS_AS(PoincareAngles::make(4.0, 0.0), Error);
  CHECK(PoincareAngles::make(1.0, -0.5).phi == doctest::Approx(2 * oracle::kPi - 0.5));
}

TEST_CASE("rotations keep their invariants") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const auto m = MuellerRotation::random(rng);
    CHECK(is_proper_rotation(m.matrix()));
    CHECK(rotation_distance(m * m.inverse(), MuellerRotation::identity()) < 1e-7);
  }
  Eigen::Matrix3d reflect = Eigen::Matrix3d::Identity();
  reflect(2, 2) = -1;
  CHECK_THROWS_AS(MuellerRotation::from_matrix(reflect), InvalidRotation);
  CHECK_THROWS_AS(MuellerRotation::from_matrix(2.0 * Eigen::Matrix3d::Identity()), InvalidRotation);
  CHECK_THROWS_AS(MuellerRotation::about_axis(Eigen::Vector3d::Zero(), 1.0), Error);

  const auto q = MuellerRotation::about_axis({0, 0, 1}, oracle::kPi / 2);
  CHECK(great_circle_angle(q.apply(StokesVector::H()), StokesVector::D()) < 1e-12);
  const auto r = MuellerRotation::about_axis({1, 1, 0}, 0.37);
  CHECK(rotation_distance(r, MuellerRotation::identity()) == doctest::Approx(0.37));
  CHECK(rotation_distance(MuellerRotation::about_axis({0, 1, 0}, 1e-9),
                          MuellerRotation::identity()) == doctest::Approx(1e-9));
}

TEST_CASE("projection probability agrees with the Jones overlap") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_stokes(rng), s = random_stokes(rng);
    CHECK(projection_probability(a, s) == doctest::Approx(jones_overlap(arr(a), arr(s))));
    CHECK(projection_probability(a, s) + projection_probability(-a, s) == 1.0);
  }
  CHECK(projection_probability(StokesVector::H(), StokesVector::V()) == doctest::Approx(0.0));
}

TEST_CASE("analyzer settings match the waveplate oracle") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> ang(-oracle::kPi, oracle::kPi);
  for (int i = 0; i < 200; ++i) {
    const AnalyzerSetting set{ang(rng), ang(rng), ang(rng)};
    const auto got = analyzer_to_stokes(set);
    const auto want = oracle::analyzer_state(set.hwp, set.qwp, set.lp);
    for (int k = 0; k < 3; ++k) CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-9));
  }
  // HWP at 22.5 deg turns the H projector into D.
  const auto d = analyzer_to_stokes({oracle::kPi / 8, 0.0, 0.0});
  CHECK(great_circle_angle(d, StokesVector::D()) < 1e-9);

  for (int i = 0; i < 100; ++i) {
    const auto t = random_stokes(rng);
    const auto set = analyzer_for_stokes(t);
    CHECK(set.lp == 0.0);
    CHECK(great_circle_angle(analyzer_to_stokes(set), t) < 1e-7);
  }
}

TEST_CASE("retarder acts like the Jones waveplate") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(0.0, 2 * oracle::kPi);
  for (int i = 0; i < 100; ++i) {
    const double angle = u(rng), ret = u(rng);
    const auto s = random_stokes(rng);
    const auto got = retarder(angle, ret).apply(s);
    const auto want =
        oracle::stokes_of(oracle::act(oracle::waveplate(angle, ret), oracle::jones_of(arr(s))));
    for (int k = 0; k < 3; ++k) CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-9));
  }
}

}  // TEST_SUITE
