#pragma once

// Photon-correlation analysis: sinusoid fit of rf-phase-binned fluorescence
// and the zero crossing of signed visibility versus control voltage.

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "micromotion/errors.hpp"
#include "micromotion/levenberg_marquardt.hpp"
#include "micromotion/simulator.hpp"

namespace micromotion {

/// N(phi) = offset (1 + visibility sin(phi + phase)).
struct SinusoidFit {
  double amplitude = 0.0;
  double phase = 0.0;  // rad, in (-pi, pi]
  double offset = 0.0;
  double visibility = 0.0;  // in [0, 1]
  double amplitude_error = 0.0;
  double phase_error = 0.0;
  double offset_error = 0.0;
  double visibility_error = 0.0;
  double relative_residual = 0.0;  // |N - fit| / |N|

  /// Visibility carrying the sign of cos(phase): the modulation phase flips
  /// by pi when the ion crosses the rf null.
  double signed_visibility() const { return std::cos(phase) >= 0.0 ? visibility : -visibility; }
};

/// Linear least squares on {1, sin phi, cos phi}. Standard errors propagate
/// Poisson variance max(model, 1) per bin through the linear estimator.
inline SinusoidFit fit_sinusoid(std::span<const double> phases, std::span<const double> counts) {
  if (phases.size() != counts.size()) throw DataError("fit_sinusoid: phases and counts differ in length");
  if (phases.size() < 8) throw DataError("fit_sinusoid: need at least 8 phase bins");
  double total = 0.0;
  for (double c : counts) {
    if (!(c >= 0.0) || !std::isfinite(c)) throw DataError("fit_sinusoid: counts must be finite and >= 0");
    total += c;
  }
  if (!(total > 0.0)) throw DataError("fit_sinusoid: histogram has no counts");

  const auto n = static_cast<Eigen::Index>(phases.size());
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd y(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double phi = phases[static_cast<std::size_t>(k)];
    design(k, 0) = 1.0;
    design(k, 1) = std::sin(phi);
    design(k, 2) = std::cos(phi);
    y[k] = counts[static_cast<std::size_t>(k)];
  }
  const Eigen::Matrix3d normal = design.transpose() * design;
  Eigen::LDLT<Eigen::Matrix3d> ldlt(normal);
  if (ldlt.info() != Eigen::Success || !(std::abs(ldlt.vectorD().minCoeff()) > 1e-12 * n))
    throw DataError("fit_sinusoid: phase bins do not constrain a sinusoid");
  const Eigen::MatrixXd estimator = ldlt.solve(design.transpose());  // 3 x n
  const Eigen::Vector3d theta = estimator * y;

  const Eigen::VectorXd fitted = design * theta;
  Eigen::VectorXd variance(n);
  for (Eigen::Index k = 0; k < n; ++k) variance[k] = std::max(fitted[k], 1.0);
  const Eigen::Matrix3d cov = estimator * variance.asDiagonal() * estimator.transpose();

  SinusoidFit fit;
  const double offset = theta[0];
  const double s = theta[1];
  const double c = theta[2];
  fit.offset = offset;
  fit.amplitude = std::hypot(s, c);
  fit.phase = std::atan2(c, s);
  fit.offset_error = std::sqrt(cov(0, 0));
  fit.relative_residual = (y - fitted).norm() / y.norm();

  if (!(offset > 0.0)) throw DataError("fit_sinusoid: non-positive fitted offset");
  if (fit.amplitude > 0.0) {
    const double da_ds = s / fit.amplitude;
    const double da_dc = c / fit.amplitude;
    fit.amplitude_error =
        std::sqrt(da_ds * da_ds * cov(1, 1) + da_dc * da_dc * cov(2, 2) + 2.0 * da_ds * da_dc * cov(1, 2));
    const double a2 = fit.amplitude * fit.amplitude;
    const double dp_ds = -c / a2;
    const double dp_dc = s / a2;
    fit.phase_error =
        std::sqrt(dp_ds * dp_ds * cov(1, 1) + dp_dc * dp_dc * cov(2, 2) + 2.0 * dp_ds * dp_dc * cov(1, 2));
  } else {
    fit.amplitude_error = std::sqrt(0.5 * (cov(1, 1) + cov(2, 2)));
    fit.phase_error = constants::pi;
  }

  const double v = fit.amplitude / offset;
  // dV = dA / O - V dO / O, with the A-O covariance from the estimator.
  double cov_ao = 0.0;
  if (fit.amplitude > 0.0) cov_ao = (s * cov(1, 0) + c * cov(2, 0)) / fit.amplitude;
  const double var_v = (fit.amplitude_error * fit.amplitude_error - 2.0 * v * cov_ao + v * v * cov(0, 0)) /
                       (offset * offset);
  fit.visibility = std::min(v, 1.0);
  fit.visibility_error = std::sqrt(std::max(var_v, 0.0));
  return fit;
}

inline SinusoidFit fit_sinusoid(const CorrelationHistogram& hist) {
  std::vector<double> counts(hist.counts.begin(), hist.counts.end());
  return fit_sinusoid(hist.phases, counts);
}

struct VisibilityPoint {
  double voltage = 0.0;
  double signed_visibility = 0.0;
  double std_error = 0.0;
};

inline VisibilityPoint visibility_point(const CorrelationHistogram& hist) {
  if (!hist.voltage) throw DataError("visibility_point: histogram carries no voltage");
  const SinusoidFit fit = fit_sinusoid(hist);
  return {*hist.voltage, fit.signed_visibility(), fit.visibility_error};
}

struct ZeroCrossing {
  double voltage = 0.0;
  double ci95 = 0.0;
  double slope = 0.0;      // visibility per volt
  double intercept = 0.0;  // visibility at 0 V
  bool extrapolated = false;  // no sign change among the points
};

/// Weighted straight-line fit of signed visibility against voltage; the root
/// -intercept/slope with a delta-method t-interval from the reduced-chi-square
/// scaled covariance.
inline ZeroCrossing visibility_zero_crossing(const std::vector<VisibilityPoint>& points) {
  if (points.size() < 3) throw InsufficientDataError("visibility_zero_crossing: need at least 3 points");
  bool all_positive_errors = true;
  for (const auto& p : points) {
    if (!(p.std_error >= 0.0)) throw DataError("visibility_zero_crossing: std_error must be >= 0");
    if (!(p.std_error > 0.0)) all_positive_errors = false;
  }

  double sw = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (const auto& p : points) {
    const double w = all_positive_errors ? 1.0 / (p.std_error * p.std_error) : 1.0;
    sw += w;
    sx += w * p.voltage;
    sy += w * p.signed_visibility;
    sxx += w * p.voltage * p.voltage;
    sxy += w * p.voltage * p.signed_visibility;
  }
  const double det = sw * sxx - sx * sx;
  if (!(det > 0.0)) throw DataError("visibility_zero_crossing: voltages do not span a line");
  ZeroCrossing out;
  out.slope = (sw * sxy - sx * sy) / det;
  out.intercept = (sxx * sy - sx * sxy) / det;
  if (out.slope == 0.0) throw DataError("visibility_zero_crossing: zero slope");

  double chi2 = 0.0;
  for (const auto& p : points) {
    const double w = all_positive_errors ? 1.0 / (p.std_error * p.std_error) : 1.0;
    const double r = p.signed_visibility - (out.intercept + out.slope * p.voltage);
    chi2 += w * r * r;
  }
  const int dof = static_cast<int>(points.size()) - 2;
  const double scale = chi2 / dof;
  const double var_intercept = scale * sxx / det;
  const double var_slope = scale * sw / det;
  const double cov_is = -scale * sx / det;

  out.voltage = -out.intercept / out.slope;
  const double root = out.voltage;
  const double var_root =
      (var_intercept + root * root * var_slope + 2.0 * root * cov_is) / (out.slope * out.slope);
  out.ci95 = t_quantile(dof) * std::sqrt(std::max(var_root, 0.0));

  bool has_positive = false;
  bool has_negative = false;
  for (const auto& p : points) {
    has_positive |= p.signed_visibility > 0.0;
    has_negative |= p.signed_visibility < 0.0;
  }
  out.extrapolated = !(has_positive && has_negative);
  return out;
}

}  // namespace micromotion
