#pragma once

// Levenberg-Marquardt for weighted nonlinear least squares with a
// central-difference Jacobian, Marquardt diagonal scaling and t-based
// confidence intervals from the reduced-chi-square-scaled covariance.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "micromotion/errors.hpp"

namespace micromotion {

struct LmOptions {
  int max_iterations = 200;
  // Converged when max_j |J_j . r| / |J_j| <= gradient_tolerance * max(|r|, 1),
  // i.e. the residual is orthogonal to every Jacobian column to this cosine.
  // Cost decreases stop being resolvable in double precision near a cosine of
  // sqrt(eps) ~ 1.5e-8, so the default sits well above that floor.
  double gradient_tolerance = 1e-6;
  double initial_damping = 1e-3;
  double damping_factor = 10.0;
  double max_damping = 1e20;
  double jacobian_step = 1e-6;
  // Per-parameter magnitude used to size finite-difference steps when the
  // parameter itself is near zero. Empty means 1 for every parameter.
  std::vector<double> typical;
  double confidence = 0.95;
};

struct LmResult {
  Eigen::VectorXd params;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd ci95;
  Eigen::VectorXd residuals;  // weighted, at params
  double chi2 = 0.0;
  double reduced_chi2 = 0.0;
  int dof = 0;
  int iterations = 0;
  int evaluations = 0;
  double gradient_measure = 0.0;
  bool converged = false;
  bool singular = false;
};

/// Two-sided Student-t quantile, e.g. 1.96-ish for large dof at 95%.
inline double t_quantile(int dof, double confidence = 0.95) {
  if (dof < 1) throw InsufficientDataError("t_quantile: need at least one degree of freedom");
  boost::math::students_t dist(static_cast<double>(dof));
  return boost::math::quantile(dist, 0.5 + confidence / 2.0);
}

/// Central-difference Jacobian of a vector function. Step for parameter j is
/// step * max(|p_j|, typical_j).
template <class Residual>
Eigen::MatrixXd numeric_jacobian(Residual&& residual, const Eigen::VectorXd& params, double step,
                                 std::span<const double> typical = {}) {
  const Eigen::Index n = params.size();
  Eigen::MatrixXd jac;
  Eigen::VectorXd probe = params;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double scale = typical.empty() ? 1.0 : typical[static_cast<std::size_t>(j)];
    const double h_nominal = step * std::max(std::abs(params[j]), scale);
    volatile double up_v = params[j] + h_nominal;
    volatile double down_v = params[j] - h_nominal;
    const double up = up_v;
    const double down = down_v;

    probe[j] = up;
    const Eigen::VectorXd r_up = residual(probe);
    probe[j] = down;
    const Eigen::VectorXd r_down = residual(probe);
    probe[j] = params[j];

    if (j == 0) jac.resize(r_up.size(), n);
    jac.col(j) = (r_up - r_down) / (up - down);
  }
  return jac;
}

namespace detail {

inline bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

inline double gradient_measure(const Eigen::MatrixXd& jac, const Eigen::VectorXd& r) {
  const Eigen::VectorXd g = jac.transpose() * r;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < jac.cols(); ++j) {
    const double norm = jac.col(j).norm();
    if (norm > 0.0) worst = std::max(worst, std::abs(g[j]) / norm);
  }
  return worst / std::max(r.norm(), 1.0);
}

}  // namespace detail

/// Minimises |residual(p)|^2 where residual returns sqrt(w_i) (y_i - f_i(p)).
/// Non-convergence is reported through LmResult::converged; a singular normal
/// matrix at a converged point throws DegenerateFitError.
template <class Residual>
LmResult levenberg_marquardt(Residual&& residual, Eigen::VectorXd init, const LmOptions& options = {}) {
  const Eigen::Index n = init.size();
  if (!init.allFinite()) throw InitializationError("levenberg_marquardt: non-finite initial parameters");

  LmResult out;
  Eigen::VectorXd p = std::move(init);
  Eigen::VectorXd r = residual(p);
  ++out.evaluations;
  if (!detail::all_finite(r)) throw InitializationError("levenberg_marquardt: non-finite residual at start");
  const Eigen::Index m = r.size();
  if (m < n + 1) throw InsufficientDataError("levenberg_marquardt: need at least #params + 1 observations");

  double cost = r.squaredNorm();
  double lambda = options.initial_damping;
  auto jacobian = [&](const Eigen::VectorXd& at) {
    out.evaluations += 2 * static_cast<int>(n);
    return numeric_jacobian(residual, at, options.jacobian_step, options.typical);
  };

  Eigen::MatrixXd jac = jacobian(p);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    out.gradient_measure = detail::gradient_measure(jac, r);
    if (out.gradient_measure <= options.gradient_tolerance) {
      out.converged = true;
      break;
    }

    const Eigen::MatrixXd normal = jac.transpose() * jac;
    const Eigen::VectorXd gradient = jac.transpose() * r;
    Eigen::VectorXd diag = normal.diagonal();
    for (Eigen::Index j = 0; j < n; ++j) diag[j] = std::max(diag[j], 1e-300);

    bool accepted = false;
    while (lambda <= options.max_damping) {
      Eigen::MatrixXd damped = normal;
      damped.diagonal() += lambda * diag;
      const Eigen::VectorXd step = damped.ldlt().solve(-gradient);
      const Eigen::VectorXd trial = p + step;
      if (step.allFinite() && trial.allFinite()) {
        const Eigen::VectorXd r_trial = residual(trial);
        ++out.evaluations;
        if (detail::all_finite(r_trial)) {
          const double trial_cost = r_trial.squaredNorm();
          if (trial_cost < cost) {
            p = trial;
            r = r_trial;
            cost = trial_cost;
            lambda = std::max(lambda / options.damping_factor, 1e-12);
            accepted = true;
            break;
          }
        }
      }
      lambda *= options.damping_factor;
    }
    if (!accepted) break;  // stalled: no downhill step at any damping
    ++out.iterations;
    jac = jacobian(p);
  }
  if (!out.converged) {
    out.gradient_measure = detail::gradient_measure(jac, r);
    out.converged = out.gradient_measure <= options.gradient_tolerance;
  }

  out.params = p;
  out.residuals = r;
  out.chi2 = cost;
  out.dof = static_cast<int>(m - n);
  out.reduced_chi2 = cost / out.dof;

  // Covariance from the column-scaled normal matrix so that wildly different
  // parameter magnitudes do not masquerade as singularity.
  const Eigen::MatrixXd normal = jac.transpose() * jac;
  Eigen::VectorXd scale(n);
  bool singular = false;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!(normal(j, j) > 0.0)) singular = true;
    scale[j] = normal(j, j) > 0.0 ? 1.0 / std::sqrt(normal(j, j)) : 0.0;
  }
  if (!singular) {
    const Eigen::MatrixXd scaled = scale.asDiagonal() * normal * scale.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 1e-13 * hi)) {
      singular = true;
    } else {
      const Eigen::MatrixXd inv = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
                                  eig.eigenvectors().transpose();
      out.covariance = out.reduced_chi2 * (scale.asDiagonal() * inv * scale.asDiagonal());
      out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
    }
  }
  out.singular = singular;
  if (singular) {
    if (out.converged) throw DegenerateFitError("levenberg_marquardt: singular normal matrix at the solution");
    out.covariance = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
  }
  const double t = t_quantile(out.dof, options.confidence);
  out.ci95 = t * out.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  return out;
}

/// Weighted curve fit: model(params) returns predictions for every
/// observation; weights are inverse variances.
template <class Model>
LmResult weighted_curve_fit(Model&& model, std::span<const double> y, std::span<const double> weights,
                            Eigen::VectorXd init, const LmOptions& options = {}) {
  if (y.size() != weights.size()) throw DataError("weighted_curve_fit: y and weights differ in length");
  std::vector<double> root_w(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0.0)) throw DataError("weighted_curve_fit: weights must be non-negative");
    root_w[i] = std::sqrt(weights[i]);
  }
  auto residual = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd {
    const Eigen::VectorXd f = model(p);
    Eigen::VectorXd r(static_cast<Eigen::Index>(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i)
      r[static_cast<Eigen::Index>(i)] = root_w[i] * (y[i] - f[static_cast<Eigen::Index>(i)]);
    return r;
  };
  return levenberg_marquardt(residual, std::move(init), options);
}

}  // namespace micromotion
