#include "oracles.hpp"
#include "qdlink/calib.hpp"
#include "qdlink/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace qdlink;

namespace {

std::array<double, 3> arr(const Eigen::Vector3d& v) { return {v[0], v[1], v[2]}; }

// 2 A e^{-t/tau} [P(a, b) - P(a, -b)] from the Jones amplitude.
double pair_oracle(double t, double amp, const StokesVector& a, const StokesVector& b,
                   double delta, double tau_ns) {
  const double alpha = delta * t * 1e-3 / oracle::kHbar;
  const double pc = oracle::joint_probability(arr(b.vec()), arr(a.vec()), alpha);
  const double px = oracle::joint_probability(arr(-b.vec()), arr(a.vec()), alpha);
  return 2.0 * amp * std::exp(-t / (tau_ns * 1e3)) * (pc - px);
}

const std::array<StokesVector, 3> kRefs{StokesVector::H(), StokesVector::D(), StokesVector::R()};

DifferenceSeries series_through(const MuellerRotation& m, const StokesVector& r_xx,
                                const StokesVector& r_x) {
  DifferenceSeries s;
  s.bin_width_ps = 16;
  const auto a = m.apply(r_xx), b = m.apply(r_x);
  for (double t = 8.0; t < 14000.0; t += 16.0) {
    const double d = pair_oracle(t, 1e5, a, b, 5.6, 1.5);
    const double sum = 2e5 * std::exp(-t / 1500.0);
    s.t_ps.push_back(t);
    s.d.push_back(d);
    s.sum.push_back(sum);
    s.sigma.push_back(std::sqrt(sum));
  }
  return s;
}

}  // namespace

TEST_SUITE("calib") {

TEST_CASE("co-basis model equals the Jones prediction") {
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double th = oracle::kPi * u(rng), ph = 2 * oracle::kPi * u(rng);
    const double t = 50.0 + 5000.0 * u(rng), delta = 15.0 * u(rng);
    const auto s = angles_to_stokes(PoincareAngles::make(th, ph));
    const double got = basis_model(t, 0.0, 3.0, th, ph, delta, 1.2);
    CHECK(got == doctest::Approx(pair_oracle(t, 3.0, s, s, delta, 1.2)).epsilon(1e-9));
  }
}

TEST_CASE("cross-basis model equals the Jones prediction") {
  std::mt19937_64 rng(67);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_stokes(rng), b = random_stokes(rng);
    const double t = 50.0 + 5000.0 * u(rng), delta = 15.0 * u(rng);
    const double got = pair_model(t, 0.0, 2.0, a, b, delta, 1.4);
    CHECK(got == doctest::Approx(pair_oracle(t, 2.0, a, b, delta, 1.4)).epsilon(1e-9));
  }
}

TEST_CASE("bin averaging and jitter blur against quadrature") {
  const auto a = StokesVector::normalized({0.3, 0.8, -0.5});
  const auto b = StokesVector::normalized({-0.2, 0.4, 0.9});
  const double w = 48.0, sigma = 30.0;
  for (double t : {300.0, 1234.0, 4000.0}) {
    double bin = 0.0;
    const int n = 200;
    for (int k = 0; k <= n; ++k) {
      const double x = t - w / 2 + w * k / n;
      const double c = (k == 0 || k == n) ? 1 : (k % 2 ? 4 : 2);
      bin += c * pair_oracle(x, 1.0, a, b, 7.0, 1.5);
    }
    bin *= (w / n) / 3.0 / w;
    CHECK(pair_model(t, w, 1.0, a, b, 7.0, 1.5) == doctest::Approx(bin).epsilon(1e-8));

    // Gaussian convolution of the causal-side expression over +-8 sigma.
    double blur = 0.0;
    const int m = 800;
    for (int k = 0; k <= m; ++k) {
      const double u = -8 * sigma + 16 * sigma * k / m;
      const double c = (k == 0 || k == m) ? 1 : (k % 2 ? 4 : 2);
      const double g = std::exp(-0.5 * u * u / (sigma * sigma)) / (sigma * std::sqrt(2 * oracle::kPi));
      blur += c * g * pair_oracle(t - u, 1.0, a, b, 7.0, 1.5);
    }
    blur *= (16 * sigma / m) / 3.0;
    CHECK(pair_model(t, 0.0, 1.0, a, b, 7.0, 1.5, sigma) == doctest::Approx(blur).epsilon(1e-7));
  }
}

TEST_CASE("branch candidates share one co-basis curve") {
  std::mt19937_64 rng(71);
  for (int i = 0; i < 20; ++i) {
    const auto s = random_stokes(rng);
    const auto c = branch_candidates(s);
    CHECK(c[0] == s);
    for (const auto& x : c) {
      const auto ang = stokes_to_angles(x), ref = stokes_to_angles(s);
      for (double t : {100.0, 900.0, 2500.0}) {
        CHECK(basis_model(t, 16, 1, ang.theta, ang.phi, 5.6, 1.5) ==
              doctest::Approx(basis_model(t, 16, 1, ref.theta, ref.phi, 5.6, 1.5)));
      }
    }
  }
}

TEST_CASE("twin rotation is invisible to every analyzer pair") {
  std::mt19937_64 rng(73);
  for (int i = 0; i < 20; ++i) {
    const auto m = MuellerRotation::random(rng);
    const auto tw = twin_rotation(m);
    CHECK(rotation_distance(twin_rotation(tw), m) < 1e-9);
    CHECK(rotation_distance_mod_twin(tw, m) < 1e-9);
    const auto a = random_stokes(rng), b = random_stokes(rng);
    CHECK(pair_model(500, 16, 1, m.apply(a), m.apply(b), 5.6, 1.5) ==
          doctest::Approx(pair_model(500, 16, 1, tw.apply(a), tw.apply(b), 5.6, 1.5)));
  }
}

TEST_CASE("Procrustes reconstruction from exact pairs") {
  std::mt19937_64 rng(79);
  for (int i = 0; i < 50; ++i) {
    const auto m = MuellerRotation::random(rng);
    std::vector<std::pair<StokesVector, StokesVector>> pairs;
    for (int k = 0; k < 4; ++k) {
      const auto r = random_stokes(rng);
      pairs.push_back({r, m.apply(r)});
    }
    CHECK(rotation_distance(reconstruct_mueller(pairs), m) < 1e-9);
  }
  std::vector<std::pair<StokesVector, StokesVector>> two{{StokesVector::H(), StokesVector::H()},
                                                         {StokesVector::D(), StokesVector::D()}};
  CHECK_THROWS_AS(reconstruct_mueller(two), RankDeficient);
  two.push_back({StokesVector::V(), StokesVector::V()});
  CHECK_THROWS_AS(reconstruct_mueller(two), RankDeficient);

  const auto m = MuellerRotation::about_axis({0, 0, 1}, 0.4);
  const auto labs = reference_states(m, {StokesVector::H()});
  CHECK(great_circle_angle(m.apply(labs[0]), StokesVector::H()) < 1e-12);
}

TEST_CASE("single-basis data leave sign flips unresolved") {
  std::mt19937_64 rng(83);
  const auto m = MuellerRotation::random(rng);
  std::array<StokesVector, 3> fitted;
  for (int k = 0; k < 3; ++k) fitted[k] = m.apply(kRefs[k]);
  const auto res = resolve_ambiguities(fitted, kRefs);
  CHECK(res.rms_residual < 1e-9);
  bool found = false;
  for (const auto& e : res.equivalent) found = found || rotation_distance_mod_twin(e, m) < 1e-9;
  CHECK(found);
  CHECK(res.equivalent.size() > 1);
}

TEST_CASE("cross-basis series select the true rotation") {
  std::mt19937_64 rng(89);
  BasisFitOptions fo;
  fo.bin_average = false;
  for (int trial = 0; trial < 3; ++trial) {
    const auto m = MuellerRotation::random(rng);
    std::array<BasisFit, 3> fits;
    std::vector<PairSeries> pairs;
    for (std::size_t i = 0; i < 3; ++i) {
      pairs.push_back({i, i, series_through(m, kRefs[i], kRefs[i])});
      fits[i] = fit_basis_orientation(pairs.back().series, fo);
      fits[i].reference = kRefs[i];
      CHECK(fits[i].delta_uev == doctest::Approx(5.6).epsilon(1e-6));
    }
    for (auto [i, j] : {std::pair<std::size_t, std::size_t>{0, 1}, {0, 2}, {1, 2}}) {
      pairs.push_back({i, j, series_through(m, kRefs[i], kRefs[j])});
    }
    const auto c = calibrate(fits, pairs, fo);
    CHECK(c.signs_resolved);
    CHECK(c.refined);
    CHECK(rotation_distance_mod_twin(c.mueller, m) < 1e-6);
    CHECK(c.tau.value == doctest::Approx(1.5).epsilon(1e-6));
  }
}

TEST_CASE("consensus of basis fits") {
  std::vector<BasisFit> fits(3);
  fits[0].delta_uev = 5.0, fits[0].sigma_delta_uev = 0.1;
  fits[1].delta_uev = 5.2, fits[1].sigma_delta_uev = 0.1;
  fits[2].delta_uev = 9.0, fits[2].sigma_delta_uev = 0.1;
  fits[2].insufficient_beat = true;
  const auto c = consensus_delta(fits);
  CHECK(c.value == doctest::Approx(5.1));
  CHECK(c.sigma == doctest::Approx(0.1 / std::sqrt(2.0)));
  CHECK(c.dof == 1);
  CHECK(c.consistent);
  fits[1].delta_uev = 7.0;
  CHECK_FALSE(consensus_delta(fits).consistent);
}

TEST_CASE("normalized difference") {
  CoincidenceHistogram co, cross;
  co.bin_width_ps = cross.bin_width_ps = 10;
  co.t_min_ps = cross.t_min_ps = -20;
  co.counts = {5, 5, 30, 20};
  cross.counts = {1, 1, 10, 10};
  co.acquisition_s = 2.0;
  cross.acquisition_s = 1.0;
  const auto s = normalized_difference(co, cross);
  REQUIRE(s.t_ps.size() == 2);
  CHECK(s.t_ps[0] == 5.0);
  CHECK(s.d[0] == 10.0);
  CHECK(s.sum[0] == 50.0);
  CHECK(s.sigma[0] == doctest::Approx(std::sqrt(30.0 + 10.0 * 4.0)));
  cross.counts.push_back(0);
  CHECK_THROWS_AS(normalized_difference(co, cross), BinningMismatch);
}

TEST_CASE("calibration schedule layout") {
  const auto s = calibration_schedule({"H", "D", "R"}, 2.0);
  REQUIRE(s.size() == 12);
  CHECK(s[1].polarity == Polarity::kCross);
  CHECK(s[1].analyzer_x == StokesVector::V());
  CHECK(s[6].label == "H/D");
  CHECK(s[6].analyzer_xx == StokesVector::H());
  CHECK(s[6].analyzer_x == StokesVector::D());
  CHECK(s[11].label == "D/R");
  CHECK(s[11].analyzer_x == StokesVector::L());
  CHECK(s[11].basis_id == 11);
  CHECK(calibration_schedule({"H", "D", "R"}, 2.0, false).size() == 6);
  CHECK_THROWS_AS(calibration_schedule({"H", "Q"}), ConfigError);
}

}  // TEST_SUITE
