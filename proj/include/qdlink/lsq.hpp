#pragma once

// Bounded Levenberg-Marquardt for small dense curve fits.

#include <Eigen/Core>

#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace qdlink::lsq {

using Model = std::function<double(std::span<const double> params, double x)>;

struct DataPoint {
  double x = 0.0;
  double y = 0.0;
  double weight = 1.0;  // multiplies the squared residual
};

struct Tolerances {
  double gradient = 1e-12;  // max |projected gradient| of the cost
  double step = 1e-12;      // |step| <= step * (|p| + step)
  double cost = 1e-15;      // relative cost decrease on an accepted step
};

struct FitProblem {
  Model model;
  std::vector<DataPoint> data;
  std::vector<double> initial;
  // Empty means unbounded. A parameter with lower == upper is held fixed.
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<std::string> names;  // optional, used in diagnostics
  Tolerances tolerances;
  int max_iterations = 200;
  // Scale the covariance by the reduced chi^2 (appropriate when the weights
  // are only relative).
  bool scale_covariance = true;
};

enum class Convergence {
  kGradient,
  kStep,
  kCost,
  kMaxIterations,
};

const char* to_string(Convergence c);

struct FitResult {
  std::vector<double> params;
  Eigen::MatrixXd covariance;  // zero rows/cols for fixed parameters
  double cost = 0.0;           // 0.5 * sum w r^2
  double residual_norm = 0.0;  // sqrt(sum w r^2)
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  Convergence reason = Convergence::kMaxIterations;
  std::vector<double> accepted_costs;  // cost after each accepted step

  std::vector<double> sigmas() const;
  double reduced_chi2(std::size_t n_points, std::size_t n_free) const;
};

// Validates the problem and runs the fit. Throws ConfigError on an invalid
// problem, NumericError when the model is non-finite at the start point, and
// FitFailure when the normal equations stay singular under maximal damping.
FitResult lm_fit(const FitProblem& problem);

// d model(params, x_i) / d params_j by central differences with step
// h_j = max(eps^(1/3) |p_j|, eps^(1/3)). Falls back to a one-sided difference
// when the central stencil would leave [lower, upper]. Throws NumericError
// naming the parameter if the model is non-finite on the stencil.
Eigen::MatrixXd numeric_jacobian(const Model& model,
                                 std::span<const double> params,
                                 std::span<const double> xs,
                                 std::span<const double> lower = {},
                                 std::span<const double> upper = {},
                                 std::span<const std::string> names = {});

// Data triples with count-statistics weights 1 / max(y, 1).
std::vector<DataPoint> poisson_weighted(std::span<const double> xs,
                                        std::span<const double> ys);

}  // namespace qdlink::lsq
