#pragma once

// Fits of the Bessel-modulated scan models to voltage-scan data:
//   raman:        P(V)  = f_N[a J_n(b0 + b1 v + b2 v^2); t_p],  v = V - c
//   fluorescence: N(V)  = (a J_n(b0 + b1 v + b2 v^2))^2 + background
// c is the compensation voltage.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "micromotion/constants.hpp"
#include "micromotion/errors.hpp"
#include "micromotion/levenberg_marquardt.hpp"
#include "micromotion/physics.hpp"
#include "micromotion/simulator.hpp"

namespace micromotion {

enum class ModelKind { raman_scan, fluorescence_scan, sinusoid, visibility_line };

inline std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::raman_scan: return "raman_scan";
    case ModelKind::fluorescence_scan: return "fluorescence_scan";
    case ModelKind::sinusoid: return "sinusoid";
    case ModelKind::visibility_line: return "visibility_line";
  }
  return "unknown";
}

enum class QuadraticTerm { automatic, floated, pinned };

struct ModelSpec {
  ModelKind kind = ModelKind::raman_scan;
  int order = 0;
  double pulse_time = 0.0;  // s, commanded pulse
  bool float_pulse_time = false;
  double lamb_dicke = 0.0;
  QuadraticTerm quadratic = QuadraticTerm::automatic;

  void validate() const {
    if (kind != ModelKind::raman_scan && kind != ModelKind::fluorescence_scan)
      throw ConfigError("scan fits require kind raman_scan or fluorescence_scan");
    if (order < 0 || order > kMaxBesselOrder) throw ConfigError("model: order must lie in [0, 10]");
    if (kind == ModelKind::raman_scan && !(pulse_time > 0.0))
      throw ConfigError("model: raman scans need pulse_time > 0");
    if (!(lamb_dicke >= 0.0 && lamb_dicke < 1.0)) throw ConfigError("model: lamb_dicke must lie in [0, 1)");
  }
};

enum class Param { a, b0, b1, b2, c, n_ph, t_p, background };

inline constexpr std::array<Param, 8> kAllParams{Param::a,    Param::b0,   Param::b1,  Param::b2,
                                                 Param::c,    Param::n_ph, Param::t_p, Param::background};

inline std::string to_string(Param p) {
  switch (p) {
    case Param::a: return "a";
    case Param::b0: return "b0";
    case Param::b1: return "b1";
    case Param::b2: return "b2";
    case Param::c: return "c";
    case Param::n_ph: return "n_ph";
    case Param::t_p: return "t_p";
    case Param::background: return "background";
  }
  return "?";
}

/// Scan-model parameters. For fluorescence fits `a` is the square root of the
/// on-null carrier count per exposure and n_ph, t_p are unused.
struct ParamVector {
  double a = 0.0;
  double b0 = 0.0;
  double b1 = 0.0;
  double b2 = 0.0;
  double c = 0.0;
  double n_ph = 0.0;
  double t_p = 0.0;
  double background = 0.0;

  double& operator[](Param p) {
    switch (p) {
      case Param::a: return a;
      case Param::b0: return b0;
      case Param::b1: return b1;
      case Param::b2: return b2;
      case Param::c: return c;
      case Param::n_ph: return n_ph;
      case Param::t_p: return t_p;
      case Param::background: return background;
    }
    return a;
  }
  double operator[](Param p) const { return const_cast<ParamVector&>(*this)[p]; }

  ScanModelParams scan() const { return {a, b0, b1, b2, c, n_ph}; }
};

struct ParamHints {
  std::optional<double> a, b0, b1, b2, c, n_ph, t_p, background;

  std::optional<double> operator[](Param p) const {
    switch (p) {
      case Param::a: return a;
      case Param::b0: return b0;
      case Param::b1: return b1;
      case Param::b2: return b2;
      case Param::c: return c;
      case Param::n_ph: return n_ph;
      case Param::t_p: return t_p;
      case Param::background: return background;
    }
    return std::nullopt;
  }

  static ParamHints from(const ParamVector& p) {
    return {p.a, p.b0, p.b1, p.b2, p.c, p.n_ph, p.t_p, p.background};
  }
};

struct FitResult {
  ModelSpec spec;
  ParamVector params;
  ParamVector ci95;  // zero for parameters held fixed
  std::vector<Param> floated;
  Eigen::MatrixXd covariance;  // over `floated`, in that order
  std::vector<double> residuals;  // weighted (data - model) / sigma per point
  double residual_norm = 0.0;
  double reduced_chi2 = 0.0;
  int dof = 0;
  int iterations = 0;
  double gradient_measure = 0.0;  // final LM orthogonality measure
  bool converged = false;

  double compensation_voltage() const { return params.c; }
  double compensation_ci95() const { return ci95.c; }
  bool is_floated(Param p) const { return std::find(floated.begin(), floated.end(), p) != floated.end(); }
};

/// Voltage-scan data prepared for fitting, sorted by voltage.
struct ScanObservations {
  std::vector<double> voltage;
  std::vector<double> value;     // success fraction or counts per exposure
  std::vector<double> variance;  // of `value`
};

namespace detail {

inline bool peaks_at_null(const ModelSpec& spec) { return spec.order == 0; }

// Largest |J_n| on the first lobe and its location.
inline std::pair<double, double> first_lobe_peak(int order) {
  if (order == 0) return {1.0, 0.0};
  double best = 0.0;
  double where = 0.0;
  for (int i = 1; i <= 20000; ++i) {
    const double x = i * 1e-3;
    const double j = std::abs(bessel_j(order, x));
    if (j > best) {
      best = j;
      where = x;
    } else if (x > where + 1.0) {
      break;
    }
  }
  return {best, where};
}

inline constexpr double kFirstZeroJ0 = 2.404825557695773;

// Least-squares y = p0 + p1 x + p2 x^2, returns p2.
inline double quadratic_curvature(const std::vector<double>& x, const std::vector<double>& y) {
  Eigen::MatrixXd design(static_cast<Eigen::Index>(x.size()), 3);
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    design(r, 0) = 1.0;
    design(r, 1) = x[i];
    design(r, 2) = x[i] * x[i];
    rhs[r] = y[i];
  }
  return design.colPivHouseholderQr().solve(rhs)[2];
}

}  // namespace detail

/// Sorts records by voltage and attaches counting-statistics variances:
/// raman p(1-p)/shots with p(1-p) floored at 0.25/shots, fluorescence
/// max(counts, 1)/shots^2 on counts per exposure.
inline ScanObservations prepare_observations(const std::vector<ScanRecord>& records, ModelKind kind) {
  std::vector<ScanRecord> sorted = records;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ScanRecord& l, const ScanRecord& r) { return l.voltage < r.voltage; });
  ScanObservations obs;
  for (const auto& rec : sorted) {
    if (rec.shots < 1) throw DataError("scan record with shots < 1");
    const double n = rec.shots;
    if (kind == ModelKind::raman_scan) {
      if (!rec.successes) throw DataError("raman fit needs records with successes");
      if (*rec.successes < 0 || *rec.successes > rec.shots) throw DataError("successes outside [0, shots]");
      const double p = *rec.successes / n;
      obs.voltage.push_back(rec.voltage);
      obs.value.push_back(p);
      obs.variance.push_back(std::max(p * (1.0 - p), 0.25 / n) / n);
    } else {
      if (!rec.photon_counts) throw DataError("fluorescence fit needs records with photon counts");
      if (*rec.photon_counts < 0) throw DataError("negative photon count");
      const double counts = static_cast<double>(*rec.photon_counts);
      obs.voltage.push_back(rec.voltage);
      obs.value.push_back(counts / n);
      obs.variance.push_back(std::max(counts, 1.0) / (n * n));
    }
  }
  return obs;
}

/// Inverts the thermal contrast curve: the mean phonon number at which a
/// pulse of area pi * peak_coupling reaches `contrast`. Clamped to [0, 200].
inline double estimate_mean_phonons(double contrast, double peak_coupling, double lamb_dicke) {
  auto contrast_at = [&](double n) {
    return ThermalProfile({n, lamb_dicke}).population(peak_coupling, constants::pi);
  };
  constexpr double kMaxPhonons = 200.0;
  double lo = 0.0;
  double hi = kMaxPhonons;
  if (contrast >= contrast_at(lo)) return lo;
  if (contrast <= contrast_at(hi)) return hi;
  // Tabulate then bisect inside the bracketing cell.
  constexpr int kGrid = 400;
  double previous_n = 0.0;
  for (int i = 1; i <= kGrid; ++i) {
    const double n = kMaxPhonons * std::pow(static_cast<double>(i) / kGrid, 2.0);
    if (contrast_at(n) <= contrast) {
      lo = previous_n;
      hi = n;
      break;
    }
    previous_n = n;
  }
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (contrast_at(mid) > contrast)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

/// Starting point for a scan fit, derived from the data alone.
inline ParamVector initial_guess(const std::vector<ScanRecord>& records, const ModelSpec& spec) {
  spec.validate();
  const ScanObservations obs = prepare_observations(records, spec.kind);
  const std::size_t n = obs.voltage.size();
  if (n < 3) throw InitializationError("initial_guess: need at least 3 points");

  std::vector<double> smooth(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = std::min(n - 1, i + 1);
    double sum = 0.0;
    for (std::size_t k = lo; k <= hi; ++k) sum += obs.value[k];
    smooth[i] = sum / static_cast<double>(hi - lo + 1);
  }

  const bool peak = detail::peaks_at_null(spec);
  const auto [lo_it, hi_it] = std::minmax_element(smooth.begin(), smooth.end());
  std::size_t search_lo = 0;
  std::size_t search_hi = n - 1;
  if (!peak) {
    // Sideband zeros recur away from the null; when both first lobes are in
    // the scan, the null is the dip between the two highest maxima.
    const auto top = static_cast<std::size_t>(hi_it - smooth.begin());
    const double depth = 0.5 * (*hi_it + *lo_it);
    std::optional<std::size_t> partner;
    for (std::size_t i = 1; i + 1 < n; ++i) {
      if (i == top || smooth[i] < smooth[i - 1] || smooth[i] < smooth[i + 1]) continue;
      const std::size_t a = std::min(i, top);
      const std::size_t b = std::max(i, top);
      const double dip = *std::min_element(smooth.begin() + static_cast<std::ptrdiff_t>(a),
                                           smooth.begin() + static_cast<std::ptrdiff_t>(b) + 1);
      if (dip > depth) continue;
      if (!partner || smooth[i] > smooth[*partner]) partner = i;
    }
    if (partner) {
      search_lo = std::min(*partner, top);
      search_hi = std::max(*partner, top);
    }
  }
  std::size_t extremum = search_lo;
  for (std::size_t i = search_lo + 1; i <= search_hi; ++i) {
    if (peak ? smooth[i] > smooth[extremum] : smooth[i] < smooth[extremum]) extremum = i;
  }
  double noise = 0.0;
  for (double v : obs.variance) noise += std::sqrt(v);
  noise /= static_cast<double>(n);
  if (*hi_it - *lo_it <= 2.0 * noise) throw InitializationError("initial_guess: data are flat within noise");
  if (extremum == 0 || extremum == n - 1)
    throw InitializationError("initial_guess: no interior extremum in the scan");

  ParamVector guess;
  guess.c = obs.voltage[extremum];
  guess.b0 = 0.0;
  guess.b2 = 0.0;
  const double lobe_peak = detail::first_lobe_peak(spec.order).first;

  if (spec.kind == ModelKind::raman_scan) {
    guess.t_p = spec.pulse_time;
    guess.a = constants::pi / spec.pulse_time;
    guess.n_ph = estimate_mean_phonons(*hi_it, lobe_peak, spec.lamb_dicke);
  } else {
    if (peak) {
      guess.background = std::max(*lo_it, 0.0);
      guess.a = std::sqrt(std::max(*hi_it - guess.background, 1e-12));
    } else {
      guess.background = std::max(smooth[extremum], 0.0);
      guess.a = std::sqrt(std::max(*hi_it - guess.background, 1e-12)) / lobe_peak;
    }
  }

  // b1: match the curvature of a local quadratic fit around the extremum.
  const std::size_t w_lo = extremum >= 3 ? extremum - 3 : 0;
  const std::size_t w_hi = std::min(n - 1, extremum + 3);
  std::vector<double> wx;
  std::vector<double> wy;
  for (std::size_t i = w_lo; i <= w_hi; ++i) {
    wx.push_back(obs.voltage[i] - guess.c);
    wy.push_back(obs.value[i]);
  }
  const double half_width = std::max(std::abs(wx.front()), std::abs(wx.back()));
  const double data_curvature = detail::quadratic_curvature(wx, wy);

  const ThermalProfile profile({guess.n_ph, spec.lamb_dicke});
  auto model_curvature = [&](double b1) {
    std::vector<double> my(wx.size());
    for (std::size_t i = 0; i < wx.size(); ++i) {
      const double j = bessel_j(spec.order, b1 * wx[i]);
      if (spec.kind == ModelKind::raman_scan)
        my[i] = profile.population(guess.a * j, spec.pulse_time);
      else
        my[i] = guess.a * guess.a * j * j + guess.background;
    }
    return detail::quadratic_curvature(wx, my);
  };

  // Reach = |beta| at the window edge. The first grid cell where the model
  // curvature passes the data curvature wins; otherwise the closest match.
  constexpr int kGrid = 300;
  constexpr double kReachLo = 0.02;
  constexpr double kReachHi = 6.0;
  double best_reach = kReachLo;
  double best_gap = std::numeric_limits<double>::infinity();
  double previous_reach = 0.0;
  double previous_gap = 0.0;
  for (int i = 0; i <= kGrid; ++i) {
    const double reach = kReachLo * std::pow(kReachHi / kReachLo, static_cast<double>(i) / kGrid);
    const double gap = model_curvature(reach / half_width) - data_curvature;
    if (i > 0 && (gap > 0.0) != (previous_gap > 0.0)) {
      best_reach = previous_reach + (reach - previous_reach) * previous_gap / (previous_gap - gap);
      break;
    }
    if (std::abs(gap) < best_gap) {
      best_gap = std::abs(gap);
      best_reach = reach;
    }
    previous_reach = reach;
    previous_gap = gap;
  }
  guess.b1 = best_reach / half_width;
  return guess;
}

/// Whether the quadratic beta term is floated for this scan and slope.
inline bool floats_quadratic(const ModelSpec& spec, double span, double b1) {
  switch (spec.quadratic) {
    case QuadraticTerm::floated: return true;
    case QuadraticTerm::pinned: return false;
    case QuadraticTerm::automatic: break;
  }
  const double unit_range = 2.0 * detail::kFirstZeroJ0 / std::abs(b1);
  return span > 0.2 * unit_range;
}

namespace detail {

inline std::vector<double> scan_predictions(const ScanObservations& obs, const ModelSpec& spec,
                                            const ParamVector& p) {
  std::vector<double> out(obs.voltage.size());
  if (spec.kind == ModelKind::raman_scan) {
    const ThermalProfile profile({std::abs(p.n_ph), spec.lamb_dicke});
    for (std::size_t i = 0; i < out.size(); ++i) {
      ParamVector q = p;
      q.n_ph = std::abs(p.n_ph);
      out[i] = scan_model(obs.voltage[i], q.scan(), spec.order, p.t_p, profile);
    }
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double j = bessel_j(spec.order, scan_beta(obs.voltage[i], p.scan()));
      out[i] = p.a * p.a * j * j + p.background;
    }
  }
  return out;
}

}  // namespace detail

/// Model value of the fitted curve at one voltage.
inline double evaluate_fit(const FitResult& fit, double voltage) {
  ScanObservations one{{voltage}, {0.0}, {1.0}};
  return detail::scan_predictions(one, fit.spec, fit.params)[0];
}

/// Weighted residual norm of `params` against the data; used to compare
/// parameter sets without running a fit.
inline double scan_residual_norm(const std::vector<ScanRecord>& records, const ModelSpec& spec,
                                 const ParamVector& params) {
  const ScanObservations obs = prepare_observations(records, spec.kind);
  const auto model = detail::scan_predictions(obs, spec, params);
  double sum = 0.0;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const double r = obs.value[i] - model[i];
    sum += r * r / obs.variance[i];
  }
  return std::sqrt(sum);
}

inline FitResult fit_scan(const std::vector<ScanRecord>& records, const ModelSpec& spec,
                          const std::optional<ParamHints>& hints = std::nullopt,
                          const LmOptions& lm_options = {}) {
  spec.validate();
  const ScanObservations obs = prepare_observations(records, spec.kind);
  if (obs.voltage.size() < 8) throw InsufficientDataError("scan fit needs at least 8 points");

  ParamVector start;
  bool have_start = false;
  const bool complete = hints && hints->c && hints->b1 &&
                       (spec.kind == ModelKind::raman_scan ? hints->n_ph.has_value() : hints->a.has_value());
  if (complete) {
    // Complete warm start: skip the data-driven guess.
    start.a = hints->a.value_or(constants::pi / spec.pulse_time);
    start.b1 = *hints->b1;
    start.c = *hints->c;
    start.t_p = spec.pulse_time;
    have_start = true;
  }
  if (!have_start) start = initial_guess(records, spec);
  if (hints) {
    for (Param p : kAllParams)
      if (auto v = (*hints)[p]) start[p] = *v;
  }
  if (spec.kind == ModelKind::raman_scan && !(hints && hints->t_p)) start.t_p = spec.pulse_time;
  if (start.b1 < 0.0) {
    start.b0 = -start.b0;
    start.b1 = -start.b1;
    start.b2 = -start.b2;
  }

  const double span = obs.voltage.back() - obs.voltage.front();
  std::vector<Param> floated;
  if (spec.kind == ModelKind::raman_scan) {
    // a is held at pi / t_p; it trades off against n_ph in the peak contrast.
    if (spec.float_pulse_time) floated.push_back(Param::t_p);
    floated.push_back(Param::b1);
    if (floats_quadratic(spec, span, start.b1)) floated.push_back(Param::b2);
    floated.push_back(Param::c);
    floated.push_back(Param::n_ph);
  } else {
    floated.push_back(Param::a);
    floated.push_back(Param::b1);
    if (floats_quadratic(spec, span, start.b1)) floated.push_back(Param::b2);
    floated.push_back(Param::c);
    floated.push_back(Param::background);
  }
  if (obs.voltage.size() < floated.size() + 1) throw InsufficientDataError("scan fit: too few points");

  Eigen::VectorXd init(static_cast<Eigen::Index>(floated.size()));
  LmOptions options = lm_options;
  options.typical.clear();
  const double b1_scale = std::max(std::abs(start.b1), 1e-12);
  for (std::size_t k = 0; k < floated.size(); ++k) {
    init[static_cast<Eigen::Index>(k)] = start[floated[k]];
    double typical = 1.0;
    switch (floated[k]) {
      case Param::a: typical = std::max(std::abs(start.a), 1e-12); break;
      case Param::b1: typical = b1_scale; break;
      case Param::b2: typical = b1_scale / std::max(span, 1e-300); break;
      case Param::c: typical = std::max(span, 1e-300); break;
      case Param::n_ph: typical = 1.0; break;
      case Param::t_p: typical = spec.pulse_time; break;
      case Param::background: typical = std::max(start.a * start.a, 1.0); break;
      case Param::b0: typical = 1.0; break;
    }
    options.typical.push_back(typical);
  }

  std::vector<double> root_w(obs.variance.size());
  for (std::size_t i = 0; i < root_w.size(); ++i) root_w[i] = 1.0 / std::sqrt(obs.variance[i]);

  auto unpack = [&](const Eigen::VectorXd& x) {
    ParamVector p = start;
    for (std::size_t k = 0; k < floated.size(); ++k) p[floated[k]] = x[static_cast<Eigen::Index>(k)];
    return p;
  };
  auto residual = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    Eigen::VectorXd r(static_cast<Eigen::Index>(obs.voltage.size()));
    try {
      const auto model = detail::scan_predictions(obs, spec, unpack(x));
      for (std::size_t i = 0; i < model.size(); ++i)
        r[static_cast<Eigen::Index>(i)] = root_w[i] * (obs.value[i] - model[i]);
    } catch (const DomainError&) {
      r.setConstant(std::numeric_limits<double>::quiet_NaN());
    } catch (const NumericError&) {
      r.setConstant(std::numeric_limits<double>::quiet_NaN());
    } catch (const ConfigError&) {
      r.setConstant(std::numeric_limits<double>::quiet_NaN());
    }
    return r;
  };

  const LmResult lm = levenberg_marquardt(residual, init, options);

  FitResult fit;
  fit.spec = spec;
  fit.floated = floated;
  fit.params = unpack(lm.params);
  fit.params.n_ph = std::abs(fit.params.n_ph);
  fit.covariance = lm.covariance;
  for (std::size_t k = 0; k < floated.size(); ++k) fit.ci95[floated[k]] = lm.ci95[static_cast<Eigen::Index>(k)];
  fit.residuals.assign(lm.residuals.data(), lm.residuals.data() + lm.residuals.size());
  fit.residual_norm = std::sqrt(lm.chi2);
  fit.reduced_chi2 = lm.reduced_chi2;
  fit.dof = lm.dof;
  fit.iterations = lm.iterations;
  fit.gradient_measure = lm.gradient_measure;
  fit.converged = lm.converged;

  // beta -> -beta leaves every model unchanged; report b1 > 0.
  if (fit.params.b1 < 0.0) {
    fit.params.b0 = -fit.params.b0;
    fit.params.b1 = -fit.params.b1;
    fit.params.b2 = -fit.params.b2;
    for (std::size_t k = 0; k < floated.size(); ++k) {
      if (floated[k] != Param::b0 && floated[k] != Param::b1 && floated[k] != Param::b2) continue;
      const auto idx = static_cast<Eigen::Index>(k);
      fit.covariance.row(idx) *= -1.0;
      fit.covariance.col(idx) *= -1.0;
    }
  }
  return fit;
}

inline FitResult fit_bessel_scan(const std::vector<ScanRecord>& records, const ModelSpec& spec,
                                 const std::optional<ParamHints>& hints = std::nullopt,
                                 const LmOptions& lm_options = {}) {
  if (spec.kind != ModelKind::raman_scan) throw ConfigError("fit_bessel_scan expects a raman_scan model");
  return fit_scan(records, spec, hints, lm_options);
}

inline FitResult fit_fluorescence_scan(const std::vector<ScanRecord>& records, const ModelSpec& spec,
                                       const std::optional<ParamHints>& hints = std::nullopt,
                                       const LmOptions& lm_options = {}) {
  if (spec.kind != ModelKind::fluorescence_scan)
    throw ConfigError("fit_fluorescence_scan expects a fluorescence_scan model");
  return fit_scan(records, spec, hints, lm_options);
}

/// Electric field equivalent of a control voltage (or of a voltage CI).
inline double voltage_to_field(double value, const TrapConfig& trap) {
  if (!(trap.field_gain > 0.0)) throw ConfigError("voltage_to_field: field_gain must be > 0");
  return trap.field_gain * value;
}

inline double field_to_voltage(double field, const TrapConfig& trap) {
  if (!(trap.field_gain > 0.0)) throw ConfigError("field_to_voltage: field_gain must be > 0");
  return field / trap.field_gain;
}

}  // namespace micromotion
