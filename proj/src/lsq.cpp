#include "qdlink/lsq.hpp"

#include "qdlink/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace qdlink::lsq {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string param_label(std::span<const std::string> names, std::size_t j) {
  std::ostringstream os;
  if (j < names.size() && !names[j].empty()) {
    os << "'" << names[j] << "' (index " << j << ")";
  } else {
    os << "index " << j;
  }
  return os.str();
}

double lower_of(std::span<const double> lower, std::size_t j) {
  return lower.empty() ? -kInf : lower[j];
}
double upper_of(std::span<const double> upper, std::size_t j) {
  return upper.empty() ? kInf : upper[j];
}

Eigen::MatrixXd jacobian_columns(const Model& model,
                                 std::span<const double> params,
                                 std::span<const double> xs,
                                 std::span<const double> lower,
                                 std::span<const double> upper,
                                 std::span<const std::string> names,
                                 std::span<const std::size_t> cols);

class Problem {
 public:
  explicit Problem(const FitProblem& p) : p_(p) { validate(); }

  std::size_t n() const { return p_.initial.size(); }
  std::size_t m() const { return p_.data.size(); }
  double lo(std::size_t j) const { return lower_of(p_.lower, j); }
  double hi(std::size_t j) const { return upper_of(p_.upper, j); }
  const std::vector<std::size_t>& free() const { return free_; }

  std::vector<double> clamp(std::vector<double> p) const {
    for (std::size_t j = 0; j < n(); ++j) p[j] = std::clamp(p[j], lo(j), hi(j));
    return p;
  }

  // sqrt(w) (y - f); returns false if any entry is non-finite.
  bool residuals(const std::vector<double>& params, Eigen::VectorXd& r) const {
    r.resize(static_cast<Eigen::Index>(m()));
    for (std::size_t i = 0; i < m(); ++i) {
      const auto& d = p_.data[i];
      const double f = p_.model(params, d.x);
      r[static_cast<Eigen::Index>(i)] = std::sqrt(d.weight) * (d.y - f);
    }
    return r.allFinite();
  }

  // Jacobian of the weighted residuals w.r.t. the free parameters.
  Eigen::MatrixXd jacobian(const std::vector<double>& params) const {
    Eigen::MatrixXd j = jacobian_columns(p_.model, params, xs_, p_.lower,
                                         p_.upper, p_.names, free_);
    for (std::size_t i = 0; i < m(); ++i) {
      j.row(static_cast<Eigen::Index>(i)) *= -std::sqrt(p_.data[i].weight);
    }
    return j;
  }

 private:
  void validate() {
    if (!p_.model) throw ConfigError("fit problem has no model");
    if (p_.initial.empty()) throw ConfigError("fit problem has no parameters");
    if ((!p_.lower.empty() && p_.lower.size() != n()) ||
        (!p_.upper.empty() && p_.upper.size() != n())) {
      throw ConfigError("bound vectors must match the parameter count");
    }
    for (std::size_t j = 0; j < n(); ++j) {
      if (!std::isfinite(p_.initial[j])) {
        throw ConfigError("initial value of parameter " +
                          param_label(p_.names, j) + " is not finite");
      }
      if (!(lo(j) <= hi(j))) {
        throw ConfigError("bounds of parameter " + param_label(p_.names, j) +
                          " are not ordered");
      }
      if (lo(j) < hi(j)) free_.push_back(j);
    }
    xs_.reserve(m());
    for (const auto& d : p_.data) {
      if (!std::isfinite(d.x) || !std::isfinite(d.y) || !std::isfinite(d.weight) ||
          d.weight < 0.0) {
        throw ConfigError("data points must be finite with non-negative weight");
      }
      xs_.push_back(d.x);
    }
    if (m() < std::max<std::size_t>(free_.size(), 1)) {
      throw ConfigError("fewer data points than free parameters");
    }
    if (p_.max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
  }

  const FitProblem& p_;
  std::vector<std::size_t> free_;
  std::vector<double> xs_;
};

Eigen::MatrixXd pseudo_inverse_spd(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const Eigen::VectorXd ev = es.eigenvalues();
  const double cutoff = 1e-14 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
  for (Eigen::Index k = 0; k < ev.size(); ++k) {
    if (ev[k] > cutoff) inv[k] = 1.0 / ev[k];
  }
  const Eigen::MatrixXd v = es.eigenvectors();
  Eigen::MatrixXd c = v * inv.asDiagonal() * v.transpose();
  return 0.5 * (c + c.transpose());
}

}  // namespace

const char* to_string(Convergence c) {
  switch (c) {
    case Convergence::kGradient: return "gradient";
    case Convergence::kStep: return "step";
    case Convergence::kCost: return "cost";
    case Convergence::kMaxIterations: return "max_iterations";
  }
  return "unknown";
}

std::vector<double> FitResult::sigmas() const {
  std::vector<double> s(params.size(), 0.0);
  for (std::size_t j = 0; j < s.size() && static_cast<Eigen::Index>(j) < covariance.rows(); ++j) {
    s[j] = std::sqrt(std::max(0.0, covariance(static_cast<Eigen::Index>(j),
                                              static_cast<Eigen::Index>(j))));
  }
  return s;
}

double FitResult::reduced_chi2(std::size_t n_points, std::size_t n_free) const {
  if (n_points <= n_free) return 0.0;
  return 2.0 * cost / static_cast<double>(n_points - n_free);
}

namespace {

// Columns `cols` of the model Jacobian, in that order.
Eigen::MatrixXd jacobian_columns(const Model& model,
                                 std::span<const double> params,
                                 std::span<const double> xs,
                                 std::span<const double> lower,
                                 std::span<const double> upper,
                                 std::span<const std::string> names,
                                 std::span<const std::size_t> cols) {
  static const double kCbrtEps = std::cbrt(std::numeric_limits<double>::epsilon());
  Eigen::MatrixXd j(static_cast<Eigen::Index>(xs.size()),
                    static_cast<Eigen::Index>(cols.size()));
  std::vector<double> p(params.begin(), params.end());
  std::vector<double> f_plus(xs.size()), f_minus(xs.size());

  for (std::size_t k = 0; k < cols.size(); ++k) {
    const std::size_t c = cols[k];
    const double p0 = params[c];
    const double h = std::max(kCbrtEps * std::abs(p0), kCbrtEps);
    const double lo = lower_of(lower, c);
    const double hi = upper_of(upper, c);
    double up = p0 + h, down = p0 - h;
    if (up > hi && down >= lo) up = p0;          // backward difference
    else if (down < lo && up <= hi) down = p0;   // forward difference
    // Divide by the realized stencil width, not the nominal one.
    const double width = up - down;

    auto eval = [&](double value, std::vector<double>& out) {
      p[c] = value;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        out[i] = model(p, xs[i]);
        if (!std::isfinite(out[i])) {
          std::ostringstream os;
          os << "model is non-finite at x = " << xs[i]
             << " while differentiating parameter " << param_label(names, c);
          throw NumericError(os.str());
        }
      }
    };
    eval(up, f_plus);
    eval(down, f_minus);
    p[c] = p0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      j(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          (f_plus[i] - f_minus[i]) / width;
    }
  }
  return j;
}

}  // namespace

Eigen::MatrixXd numeric_jacobian(const Model& model,
                                 std::span<const double> params,
                                 std::span<const double> xs,
                                 std::span<const double> lower,
                                 std::span<const double> upper,
                                 std::span<const std::string> names) {
  if ((!lower.empty() && lower.size() != params.size()) ||
      (!upper.empty() && upper.size() != params.size())) {
    throw ConfigError("bound vectors must match the parameter count");
  }
  std::vector<std::size_t> cols(params.size());
  for (std::size_t c = 0; c < cols.size(); ++c) cols[c] = c;
  return jacobian_columns(model, params, xs, lower, upper, names, cols);
}

std::vector<DataPoint> poisson_weighted(std::span<const double> xs,
                                        std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ConfigError("x and y sizes differ");
  std::vector<DataPoint> out;
  out.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out.push_back({xs[i], ys[i], 1.0 / std::max(ys[i], 1.0)});
  }
  return out;
}

FitResult lm_fit(const FitProblem& problem) {
  const Problem prob(problem);
  const auto& free = prob.free();
  const auto nf = static_cast<Eigen::Index>(free.size());
  const auto& tol = problem.tolerances;

  FitResult out;
  std::vector<double> p = prob.clamp(problem.initial);
  Eigen::VectorXd r;
  if (!prob.residuals(p, r)) {
    throw NumericError("model is non-finite at the initial parameters");
  }
  double cost = 0.5 * r.squaredNorm();
  out.evaluations = 1;

  auto finish = [&](bool converged, Convergence reason) {
    out.params = p;
    out.cost = cost;
    out.residual_norm = std::sqrt(2.0 * cost);
    out.converged = converged;
    out.reason = reason;
    const auto n = static_cast<Eigen::Index>(prob.n());
    out.covariance = Eigen::MatrixXd::Zero(n, n);
    if (nf > 0) {
      const Eigen::MatrixXd j = prob.jacobian(p);
      Eigen::MatrixXd cov = pseudo_inverse_spd(j.transpose() * j);
      if (problem.scale_covariance) {
        cov *= out.reduced_chi2(prob.m(), free.size());
      }
      for (Eigen::Index a = 0; a < nf; ++a)
        for (Eigen::Index b = 0; b < nf; ++b)
          out.covariance(static_cast<Eigen::Index>(free[a]),
                         static_cast<Eigen::Index>(free[b])) = cov(a, b);
    }
    return out;
  };

  if (nf == 0) return finish(true, Convergence::kGradient);

  double lambda = -1.0;
  double nu = 2.0;
  Eigen::VectorXd r_trial;

  for (int iter = 0; iter < problem.max_iterations; ++iter) {
    out.iterations = iter + 1;
    const Eigen::MatrixXd j = prob.jacobian(p);
    out.evaluations += 2 * static_cast<int>(nf);
    const Eigen::MatrixXd jtj = j.transpose() * j;
    const Eigen::VectorXd g = j.transpose() * r;

    // Scale-free gradient test on the projected gradient.
    const double rnorm = r.norm();
    double worst = 0.0;
    for (Eigen::Index c = 0; c < nf; ++c) {
      const std::size_t k = free[c];
      const bool at_lo = p[k] <= prob.lo(k) && g[c] > 0.0;
      const bool at_hi = p[k] >= prob.hi(k) && g[c] < 0.0;
      if (at_lo || at_hi) continue;
      const double denom = j.col(c).norm() * rnorm;
      if (denom > 0.0) worst = std::max(worst, std::abs(g[c]) / denom);
    }
    if (rnorm == 0.0 || worst <= tol.gradient) {
      return finish(true, Convergence::kGradient);
    }

    const Eigen::VectorXd diag = jtj.diagonal();
    const double dmax = std::max(diag.maxCoeff(), 1e-300);
    if (lambda < 0.0) lambda = 1e-3;  // relative to the Marquardt diagonal

    for (;;) {
      Eigen::MatrixXd a = jtj;
      for (Eigen::Index c = 0; c < nf; ++c) {
        a(c, c) += lambda * std::max(diag[c], 1e-12 * dmax);
      }
      Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
      Eigen::VectorXd h;
      bool ok = ldlt.info() == Eigen::Success;
      if (ok) {
        h = ldlt.solve(-g);
        ok = h.allFinite();
      }
      if (!ok) {
        lambda *= nu;
        nu *= 2.0;
        if (lambda > 1e30 || !std::isfinite(lambda)) {
          throw FitFailure("normal equations remain singular under maximal damping");
        }
        continue;
      }

      std::vector<double> trial = p;
      for (Eigen::Index c = 0; c < nf; ++c) trial[free[c]] += h[c];
      trial = prob.clamp(std::move(trial));
      Eigen::VectorXd h_eff(nf);
      double pnorm2 = 0.0;
      for (Eigen::Index c = 0; c < nf; ++c) {
        h_eff[c] = trial[free[c]] - p[free[c]];
        pnorm2 += p[free[c]] * p[free[c]];
      }
      const bool step_small =
          h_eff.norm() <= tol.step * (std::sqrt(pnorm2) + tol.step);

      double cost_trial = std::numeric_limits<double>::infinity();
      if (prob.residuals(trial, r_trial)) cost_trial = 0.5 * r_trial.squaredNorm();
      ++out.evaluations;

      if (cost_trial < cost) {
        const double rel = (cost - cost_trial) / std::max(cost, 1e-300);
        p = std::move(trial);
        r = r_trial;
        cost = cost_trial;
        out.accepted_costs.push_back(cost);
        lambda = std::max(lambda / 3.0, 1e-300);
        nu = 2.0;
        if (step_small) return finish(true, Convergence::kStep);
        if (rel <= tol.cost) return finish(true, Convergence::kCost);
        break;
      }
      if (step_small) return finish(true, Convergence::kStep);
      lambda *= nu;
      nu *= 2.0;
      if (lambda > 1e30 || !std::isfinite(lambda)) {
        // No representable step lowers the cost: a numerical minimum.
        return finish(true, Convergence::kStep);
      }
    }
  }
  return finish(false, Convergence::kMaxIterations);
}

}  // namespace qdlink::lsq
