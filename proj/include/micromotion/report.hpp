#pragma once

// JSON reports for scan fits, correlation analyses and monitor runs.

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "micromotion/correlation.hpp"
#include "micromotion/drift.hpp"
#include "micromotion/fit.hpp"

namespace micromotion {

inline constexpr int kCurveSamples = 200;

inline std::string to_string(QuadraticTerm q) {
  switch (q) {
    case QuadraticTerm::automatic: return "automatic";
    case QuadraticTerm::floated: return "floated";
    case QuadraticTerm::pinned: return "pinned";
  }
  return "?";
}

inline nlohmann::json model_spec_json(const ModelSpec& spec) {
  return {{"kind", to_string(spec.kind)},
          {"order", spec.order},
          {"pulse_time_s", spec.pulse_time},
          {"float_pulse_time", spec.float_pulse_time},
          {"lamb_dicke", spec.lamb_dicke},
          {"quadratic_term", to_string(spec.quadratic)}};
}

/// Complete fit report. Field-equivalent values need the trap's field gain.
inline nlohmann::json fit_report_json(const FitResult& fit, const std::vector<ScanRecord>& records,
                                      const std::optional<TrapConfig>& trap) {
  using nlohmann::json;
  json report;
  report["model"] = model_spec_json(fit.spec);
  report["converged"] = fit.converged;
  report["iterations"] = fit.iterations;
  report["dof"] = fit.dof;
  report["residual_norm"] = fit.residual_norm;
  report["reduced_chi2"] = fit.reduced_chi2;

  json params = json::object();
  json ci = json::object();
  for (Param p : kAllParams) {
    if (fit.spec.kind == ModelKind::fluorescence_scan && (p == Param::n_ph || p == Param::t_p)) continue;
    if (fit.spec.kind == ModelKind::raman_scan && p == Param::background) continue;
    params[to_string(p)] = fit.params[p];
  }
  json floated = json::array();
  for (Param p : fit.floated) {
    floated.push_back(to_string(p));
    ci[to_string(p)] = fit.ci95[p];
  }
  report["params"] = params;
  report["floated"] = floated;
  report["ci95"] = ci;
  json cov = json::array();
  for (Eigen::Index i = 0; i < fit.covariance.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < fit.covariance.cols(); ++j) row.push_back(fit.covariance(i, j));
    cov.push_back(row);
  }
  report["covariance"] = cov;

  report["compensation"] = {{"voltage_V", fit.compensation_voltage()},
                            {"ci95_V", fit.compensation_ci95()},
                            {"beta_ci95", fit.compensation_ci95() * fit.params.b1}};
  if (trap && trap->field_gain > 0.0) {
    report["compensation"]["field_gain_V_per_m_per_V"] = trap->field_gain;
    report["compensation"]["field_V_per_m"] = voltage_to_field(fit.compensation_voltage(), *trap);
    report["compensation"]["field_ci95_V_per_m"] = voltage_to_field(fit.compensation_ci95(), *trap);
  }

  const ScanObservations obs = prepare_observations(records, fit.spec.kind);
  const auto model = detail::scan_predictions(obs, fit.spec, fit.params);
  const char* measured_unit = fit.spec.kind == ModelKind::raman_scan ? "probability" : "counts_per_shot";
  json points = json::array();
  for (std::size_t i = 0; i < obs.voltage.size(); ++i) {
    points.push_back({{"voltage_V", obs.voltage[i]},
                      {"measured", obs.value[i]},
                      {"model", model[i]},
                      {"sigma", std::sqrt(obs.variance[i])},
                      {"weighted_residual", (obs.value[i] - model[i]) / std::sqrt(obs.variance[i])}});
  }
  report["measured_unit"] = measured_unit;
  report["points"] = points;

  json curve = json::array();
  const double lo = obs.voltage.front();
  const double hi = obs.voltage.back();
  for (int k = 0; k < kCurveSamples; ++k) {
    const double v = lo + (hi - lo) * k / (kCurveSamples - 1);
    curve.push_back({{"voltage_V", v}, {"model", evaluate_fit(fit, v)}});
  }
  report["curve"] = curve;
  return report;
}

inline nlohmann::json sinusoid_json(const SinusoidFit& fit) {
  return {{"amplitude_counts", fit.amplitude},   {"amplitude_error_counts", fit.amplitude_error},
          {"phase_rad", fit.phase},              {"phase_error_rad", fit.phase_error},
          {"offset_counts", fit.offset},         {"offset_error_counts", fit.offset_error},
          {"visibility", fit.visibility},        {"visibility_error", fit.visibility_error},
          {"signed_visibility", fit.signed_visibility()}, {"relative_residual", fit.relative_residual}};
}

inline nlohmann::json zero_crossing_json(const ZeroCrossing& zc, const std::optional<TrapConfig>& trap) {
  nlohmann::json out = {{"voltage_V", zc.voltage},
                        {"ci95_V", zc.ci95},
                        {"slope_per_V", zc.slope},
                        {"intercept", zc.intercept},
                        {"extrapolated", zc.extrapolated}};
  if (trap && trap->field_gain > 0.0) {
    out["field_V_per_m"] = voltage_to_field(zc.voltage, *trap);
    out["field_ci95_V_per_m"] = voltage_to_field(zc.ci95, *trap);
  }
  return out;
}

inline nlohmann::json waterfall_sidecar_json(const WaterfallFrame& frame) {
  return {{"voltages_V", frame.voltages},
          {"timestamps_s", frame.timestamps},
          {"scans", frame.probabilities.size()},
          {"values", "raw measured success fraction"},
          {"matrix_file", "waterfall.csv"}};
}

}  // namespace micromotion
