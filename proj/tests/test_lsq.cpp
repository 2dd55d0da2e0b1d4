#include "qdlink/errors.hpp"
#include "qdlink/lsq.hpp"

#include <Eigen/LU>
#include <doctest.h>

#include <cmath>
#include <random>

using namespace qdlink;
using namespace qdlink::lsq;

namespace {

double decay(std::span<const double> p, double x) { return p[0] * std::exp(-x / p[1]) + p[2]; }

FitProblem decay_problem(std::vector<double> truth, std::vector<double> start) {
  FitProblem f;
  f.model = decay;
  for (int i = 0; i < 60; ++i) {
    const double x = 0.25 * i;
    f.data.push_back({x, decay(truth, x), 1.0});
  }
  f.initial = std::move(start);
  return f;
}

}  // namespace

TEST_SUITE("lsq") {

TEST_CASE("recovers an exact exponential decay") {
  auto f = decay_problem({5.0, 2.0, 0.5}, {1.0, 1.0, 0.0});
  const auto r = lm_fit(f);
  CHECK(r.converged);
  CHECK(r.params[0] == doctest::Approx(5.0).epsilon(1e-8));
  CHECK(r.params[1] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(r.params[2] == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(r.cost < 1e-16);
  for (std::size_t i = 1; i < r.accepted_costs.size(); ++i) {
    CHECK(r.accepted_costs[i] <= r.accepted_costs[i - 1]);
  }
}

TEST_CASE("linear model covariance matches the normal equations") {
  // y = a + b x with unit weights: cov = (X^T X)^-1 sigma^2.
  FitProblem f;
  f.model = [](std::span<const double> p, double x) { return p[0] + p[1] * x; };
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 0.1);
  Eigen::Matrix2d xtx = Eigen::Matrix2d::Zero();
  for (int i = 0; i < 40; ++i) {
    const double x = i * 0.1;
    f.data.push_back({x, 1.0 + 2.0 * x + noise(rng), 100.0});
    xtx(0, 0) += 100.0;
    xtx(0, 1) += 100.0 * x;
    xtx(1, 1) += 100.0 * x * x;
  }
  xtx(1, 0) = xtx(0, 1);
  f.initial = {0.0, 0.0};
  f.scale_covariance = false;
  const auto r = lm_fit(f);
  const Eigen::Matrix2d want = xtx.inverse();
  CHECK(r.covariance(0, 0) == doctest::Approx(want(0, 0)).epsilon(1e-6));
  CHECK(r.covariance(1, 1) == doctest::Approx(want(1, 1)).epsilon(1e-6));
  CHECK(r.covariance(0, 1) == doctest::Approx(want(0, 1)).epsilon(1e-6));
  CHECK(r.sigmas()[1] == doctest::Approx(std::sqrt(want(1, 1))));
  CHECK(r.reduced_chi2(40, 2) == doctest::Approx(2.0 * r.cost / 38.0));
}

TEST_CASE("bounds and fixed parameters") {
  auto f = decay_problem({5.0, 2.0, 0.5}, {1.0, 1.0, 0.7});
  f.lower = {0.0, 0.1, 0.7};
  f.upper = {10.0, 1.5, 0.7};
  const auto r = lm_fit(f);
  CHECK(r.params[2] == 0.7);
  CHECK(r.params[1] <= 1.5);
  CHECK(r.covariance(2, 2) == 0.0);
}

TEST_CASE("invalid problems are rejected") {
  auto f = decay_problem({1, 1, 0}, {1, 1});
  f.initial = {1.0, 1.0};
  CHECK_NOTHROW(lm_fit(decay_problem({1, 1, 0}, {1, 1, 0})));
  f.data.clear();
  CHECK_THROWS_AS(lm_fit(f), ConfigError);

  auto g = decay_problem({1, 1, 0}, {1, 1, 0});
  g.lower = {0.0, 0.0};
  CHECK_THROWS_AS(lm_fit(g), ConfigError);
  g.lower = {2.0, 0.0, 0.0};
  g.upper = {1.0, 5.0, 5.0};
  CHECK_THROWS_AS(lm_fit(g), ConfigError);

  auto h = decay_problem({1, 1, 0}, {1, 0, 0});
  CHECK_THROWS_AS(lm_fit(h), NumericError);
}

TEST_CASE("numeric jacobian against the analytic derivative") {
  const std::vector<double> p{3.0, 1.7, -0.2};
  std::vector<double> xs;
  for (int i = 0; i < 10; ++i) xs.push_back(0.3 * i);
  const auto j = numeric_jacobian(decay, p, xs);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = std::exp(-xs[i] / p[1]);
    CHECK(j(i, 0) == doctest::Approx(e).epsilon(1e-7));
    CHECK(j(i, 1) == doctest::Approx(p[0] * e * xs[i] / (p[1] * p[1])).epsilon(1e-6));
    CHECK(j(i, 2) == doctest::Approx(1.0).epsilon(1e-9));
  }
  // One-sided near a bound.
  const std::vector<double> lo{3.0, 0.0, -1.0}, hi{4.0, 5.0, 1.0};
  const auto jb = numeric_jacobian(decay, p, xs, lo, hi);
  CHECK(jb(3, 0) == doctest::Approx(std::exp(-xs[3] / p[1])).epsilon(1e-5));

  const Model bad = [](std::span<const double> q, double x) { return std::log(q[0]) * x; };
  const std::vector<double> q0{1e-30};
  const std::vector<std::string> names{"a"};
  CHECK_THROWS_AS(numeric_jacobian(bad, q0, xs, {}, {}, names), NumericError);
}

TEST_CASE("poisson weights") {
  const std::vector<double> xs{0, 1, 2}, ys{0, 4, 100};
  const auto d = poisson_weighted(xs, ys);
  CHECK(d[0].weight == 1.0);
  CHECK(d[1].weight == doctest::Approx(0.25));
  CHECK(d[2].weight == doctest::Approx(0.01));
}

}  // TEST_SUITE
