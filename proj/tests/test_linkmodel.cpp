#include "qdlink/errors.hpp"
#include "qdlink/linkmodel.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace qdlink;

namespace {

constexpr double kHc = 1239.841984e6;  // ueV nm

StarkParams sample_params() {
  StarkParams p;
  p.e0_uev = kHc / 1300.0;
  p.p_uev_per_v = 2000.0;
  p.beta_uev_per_v2 = 1500.0;
  p.s_min_uev = 0.8;
  p.gamma_uev_per_v = 2.0;
  p.v0_v = -1.8;
  return p;
}

}  // namespace

TEST_SUITE("linkmodel") {

TEST_CASE("loss and crosstalk") {
  CHECK(loss_to_efficiency(0.0) == 1.0);
  CHECK(loss_to_efficiency(10.0) == doctest::Approx(0.1));
  CHECK(loss_to_efficiency(3.0) == doctest::Approx(0.501187).epsilon(1e-5));
  CHECK_THROWS_AS(loss_to_efficiency(-1.0), ConfigError);
  CHECK(crosstalk_background(100.0, 60.0, 2e7) == doctest::Approx(2e3));
  CHECK(crosstalk_background(0.0, 60.0, 2e7) == 0.0);
  CHECK_THROWS_AS(crosstalk_background(1.0, -3.0, 1.0), ConfigError);
}

TEST_CASE("drift steps have the configured angle") {
  const auto base = MuellerRotation::about_axis({1, 0, 0}, 0.3);
  const std::vector<double> hours{0.5, 0.5, 1.0, 2.0};
  const auto a = drift_rotations(base, hours, 4.0, 9);
  const auto b = drift_rotations(base, hours, 4.0, 9);
  REQUIRE(a.size() == 4);
  const double deg = std::acos(-1.0) / 180.0;
  CHECK(rotation_distance(a[0], base) == 0.0);
  for (std::size_t j = 1; j < a.size(); ++j) {
    CHECK(rotation_distance(a[j], b[j]) == 0.0);
    CHECK(rotation_distance(a[j - 1], a[j]) ==
          doctest::Approx(4.0 * hours[j - 1] * deg).epsilon(1e-9));
  }
  const auto still = drift_rotations(base, hours, 0.0, 9);
  CHECK(rotation_distance(still.back(), base) < 1e-12);
}

TEST_CASE("CWDM grid") {
  CHECK(cwdm_center(0) == 1271.0);
  CHECK(cwdm_center(17) == 1611.0);
  CHECK(nearest_cwdm_channel(1310.0).center_nm == 1311.0);
  CHECK(nearest_cwdm_channel(1310.0).index == 2);
  CHECK(nearest_cwdm_channel(1301.0).center_nm == 1291.0);  // midpoint goes low
  CHECK(nearest_cwdm_channel(1261.0).index == 0);
  CHECK(nearest_cwdm_channel(1621.0).index == 17);
  CHECK_THROWS_AS(nearest_cwdm_channel(1260.9), OutOfGrid);
  CHECK_THROWS_AS(nearest_cwdm_channel(1700.0), OutOfGrid);
  CHECK_THROWS_AS(cwdm_center(18), Error);
}

TEST_CASE("Stark model values") {
  const auto p = sample_params();
  CHECK(stark_energy_uev(0.0, p) == doctest::Approx(p.e0_uev));
  CHECK(stark_energy_uev(-2.0, p) == doctest::Approx(p.e0_uev + 4000.0 - 6000.0));
  CHECK(stark_shift(0.0, p).lambda_nm == doctest::Approx(1300.0));
  CHECK(stark_shift(-2.0, p).lambda_nm == doctest::Approx(kHc / (p.e0_uev - 2000.0)));
  CHECK_FALSE(stark_shift(-1.0, p).extrapolated);
  CHECK(stark_shift(-4.0, p).extrapolated);
  CHECK(fss_vs_bias(-1.8, p) == doctest::Approx(0.8));
  CHECK(fss_vs_bias(0.2, p) == doctest::Approx(std::sqrt(0.64 + 16.0)));
}

TEST_CASE("Stark fit recovers noiseless data") {
  const auto p = sample_params();
  std::vector<StarkSample> samples;
  for (int i = 0; i <= 19; ++i) {
    const double v = -3.8 + 0.2 * i;
    samples.push_back({v, stark_shift(v, p).lambda_nm, 1321.0, fss_vs_bias(v, p)});
  }
  const auto f = fit_stark(samples, Line::kXX);
  CHECK(f.converged);
  CHECK(f.rms_lambda_nm < 1e-6);
  CHECK(f.rms_fss_uev < 1e-6);
  CHECK(f.params.p_uev_per_v == doctest::Approx(2000.0).epsilon(1e-5));
  CHECK(f.params.beta_uev_per_v2 == doctest::Approx(1500.0).epsilon(1e-5));
  CHECK(f.params.s_min_uev == doctest::Approx(0.8).epsilon(1e-5));
  CHECK(f.params.v0_v == doctest::Approx(-1.8).epsilon(1e-5));
  CHECK(f.params.v_min == doctest::Approx(-3.8));
  CHECK(f.params.v_max == doctest::Approx(0.0));
  CHECK_THROWS_AS(fit_stark({samples[0], samples[1]}, Line::kX), ConfigError);
}

TEST_CASE("tune plan outcomes") {
  const auto p = sample_params();
  auto plan = tune_plan(p, stark_shift(-1.0, p).lambda_nm, 10.0);
  CHECK(plan.feasible);
  CHECK(plan.reason.empty());
  CHECK(std::abs(plan.lambda_nm - plan.target_nm) <= 0.01);
  // Two biases give the same wavelength; the lower FSS wins.
  CHECK(plan.fss_uev <= fss_vs_bias(-1.0, p) + 1e-9);

  plan = tune_plan(p, 1500.0, 10.0);
  CHECK_FALSE(plan.feasible);
  CHECK(plan.reason == "out_of_range");
  CHECK(plan.range_max_nm > plan.range_min_nm);

  plan = tune_plan(p, stark_shift(-0.2, p).lambda_nm, 0.5);
  CHECK_FALSE(plan.feasible);
  CHECK(plan.reason == "fss_limit");
}

TEST_CASE("Stark CSV parsing") {
  std::istringstream ok("# comment\nfss_uev, v, lambda_x_nm, lambda_xx_nm\n1.0,-1,1321,1310\n\n2.0,0,1322,1311\n3.0,1,1323,1312\n");
  const auto s = parse_stark_csv(ok);
  REQUIRE(s.size() == 3);
  CHECK(s[0].v == -1.0);
  CHECK(s[1].lambda_xx_nm == 1311.0);
  CHECK(s[0].fss_uev == 1.0);

  std::istringstream missing("v,lambda_xx_nm,fss_uev\n0,1310,1\n");
  CHECK_THROWS_AS(parse_stark_csv(missing), ConfigError);
  std::istringstream garbage("v,lambda_xx_nm,lambda_x_nm,fss_uev\n0,13x0,1,1\n");
  CHECK_THROWS_AS(parse_stark_csv(garbage), ConfigError);
  std::istringstream shortrow("v,lambda_xx_nm,lambda_x_nm,fss_uev\n0,1310\n");
  CHECK_THROWS_AS(parse_stark_csv(shortrow), ConfigError);
  std::istringstream empty("");
  CHECK_THROWS_AS(parse_stark_csv(empty), ConfigError);
  CHECK(line_from_string("xx") == Line::kXX);
  CHECK_THROWS_AS(line_from_string("y"), ConfigError);
}

}  // TEST_SUITE
