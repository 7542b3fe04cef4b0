#pragma once

// Seeded synthetic instrument: voltage scans (Raman state detection or
// weak-repump fluorescence), rf-phase-binned photon-correlation histograms
// and repeated scans under a drifting stray field.
//
// Every scan point draws from its own generator seeded with
// (seed, scan index, point index), so results do not depend on evaluation
// order.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "micromotion/constants.hpp"
#include "micromotion/errors.hpp"
#include "micromotion/physics.hpp"
#include "micromotion/presets.hpp"

namespace micromotion {

enum class ScanMode { raman, fluorescence };

inline std::string to_string(ScanMode mode) { return mode == ScanMode::raman ? "raman" : "fluorescence"; }

inline ScanMode scan_mode_from_string(const std::string& s) {
  if (s == "raman") return ScanMode::raman;
  if (s == "fluorescence") return ScanMode::fluorescence;
  throw ConfigError("unknown scan mode '" + s + "' (expected raman or fluorescence)");
}

struct ScanPlan {
  std::vector<double> voltages;
  int shots_per_point = 100;
  int order = 0;
  double pulse_time = 0.0;  // s
  ScanMode mode = ScanMode::raman;
  double shot_overhead = 10e-3;  // s of cooling/detection per shot
  double spam_flip = 0.0;        // symmetric readout flip probability
  double dark_counts = 0.0;      // mean background counts per exposure

  void validate() const {
    if (voltages.empty()) throw ConfigError("plan: voltages must be non-empty");
    for (double v : voltages)
      if (!std::isfinite(v)) throw ConfigError("plan: voltages must be finite");
    if (voltages.size() > 1) {
      const bool up = voltages[1] > voltages[0];
      for (std::size_t i = 1; i < voltages.size(); ++i) {
        if (up ? !(voltages[i] > voltages[i - 1]) : !(voltages[i] < voltages[i - 1]))
          throw ConfigError("plan: voltages must be strictly monotone");
      }
    }
    if (shots_per_point < 1) throw ConfigError("plan: shots_per_point must be >= 1");
    if (order < 0 || order > kMaxBesselOrder) throw ConfigError("plan: order must lie in [0, 10]");
    if (!(pulse_time >= 0.0)) throw ConfigError("plan: pulse_time must be >= 0");
    if (!(shot_overhead >= 0.0)) throw ConfigError("plan: shot_overhead must be >= 0");
    if (!(spam_flip >= 0.0 && spam_flip < 0.5)) throw ConfigError("plan: spam_flip must lie in [0, 0.5)");
    if (!(dark_counts >= 0.0)) throw ConfigError("plan: dark_counts must be >= 0");
  }
};

/// Evenly spaced voltage grid including both ends.
inline std::vector<double> linear_grid(double start, double stop, int points) {
  if (points < 2) throw ConfigError("grid: need at least 2 points");
  std::vector<double> grid(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) grid[i] = start + (stop - start) * i / (points - 1);
  return grid;
}

/// E_stray(t) = constant + linear_drift t + charging_amplitude (1 - exp(-t / tau)).
struct StrayFieldModel {
  double constant = 0.0;            // V/m
  double linear_drift = 0.0;        // (V/m)/s
  double charging_amplitude = 0.0;  // V/m
  double charging_timescale = 1.0;  // s

  double at(double t) const {
    double field = constant + linear_drift * t;
    if (charging_amplitude != 0.0) field += charging_amplitude * (1.0 - std::exp(-t / charging_timescale));
    return field;
  }

  void validate() const {
    if (!std::isfinite(constant) || !std::isfinite(linear_drift) || !std::isfinite(charging_amplitude))
      throw ConfigError("stray: fields must be finite");
    if (charging_amplitude != 0.0 && !(charging_timescale > 0.0))
      throw ConfigError("stray: charging_timescale must be > 0 when charging_amplitude != 0");
  }
};

/// One scan point. Raman records carry successes, fluorescence records
/// carry photon_counts, never both.
struct ScanRecord {
  double timestamp = 0.0;  // s from series start
  double voltage = 0.0;    // V
  int shots = 0;
  std::optional<int> successes;
  std::optional<long long> photon_counts;

  double fraction() const { return successes ? static_cast<double>(*successes) / shots : 0.0; }
};

/// Trap, ion and laser together with the bare carrier Rabi frequency.
struct Apparatus {
  TrapConfig trap;
  IonSpecies ion;
  LaserGeometry laser;
  double rabi_frequency = 0.0;  // rad/s

  static Apparatus from_preset(const Preset& p) { return {p.trap, p.ion, p.laser, p.rabi_frequency}; }

  void validate() const {
    trap.validate();
    ion.validate();
    laser.validate();
    if (!(rabi_frequency > 0.0)) throw ConfigError("rabi_frequency must be > 0");
  }
};

namespace detail {

inline std::mt19937_64 point_generator(std::uint64_t seed, std::uint64_t scan_index, std::uint64_t point_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(scan_index), static_cast<std::uint32_t>(point_index)};
  return std::mt19937_64(seq);
}

inline int draw_binomial(std::mt19937_64& rng, int trials, double p) {
  if (trials <= 0 || p <= 0.0) return 0;
  if (p >= 1.0) return trials;
  return std::binomial_distribution<int>(trials, p)(rng);
}

inline long long draw_poisson(std::mt19937_64& rng, double mean) {
  if (!(mean > 0.0)) return 0;
  return std::poisson_distribution<long long>(mean)(rng);
}

}  // namespace detail

/// Time spent on one scan point.
inline double point_duration(const ScanPlan& plan, const FluorescenceConfig* fluo) {
  const double per_shot =
      plan.mode == ScanMode::raman ? plan.pulse_time + plan.shot_overhead
                                   : (fluo ? fluo->detection_time : 0.0) + plan.shot_overhead;
  return plan.shots_per_point * per_shot;
}

inline double scan_duration(const ScanPlan& plan, const FluorescenceConfig* fluo) {
  return static_cast<double>(plan.voltages.size()) * point_duration(plan, fluo);
}

/// Expected signal at one voltage: success probability (raman) or mean
/// photon count per exposure (fluorescence).
inline double expected_signal(const ScanPlan& plan, const Apparatus& app, double voltage, double stray_field,
                              const ThermalProfile& profile, const FluorescenceConfig* fluo) {
  const ModulationDepth beta = beta_from_voltage(voltage, stray_field, app.trap, app.ion, app.laser);
  if (plan.mode == ScanMode::raman)
    return profile.population(app.rabi_frequency * bessel_j(plan.order, beta.beta), plan.pulse_time);
  return fluorescence_model(plan.order, beta, *fluo) + plan.dark_counts;
}

/// Simulates one voltage scan. Point i starts at
/// start_time + i * point_duration and sees the stray field at that instant.
inline std::vector<ScanRecord> simulate_scan(const ScanPlan& plan, const Apparatus& app,
                                             const StrayFieldModel& stray, const ThermalState& thermal,
                                             const std::optional<FluorescenceConfig>& fluo, std::uint64_t seed,
                                             double start_time = 0.0, std::uint64_t scan_index = 0) {
  plan.validate();
  app.validate();
  stray.validate();
  if (plan.mode == ScanMode::fluorescence && !fluo)
    throw ConfigError("plan: fluorescence mode requires a fluorescence configuration");
  if (plan.mode == ScanMode::raman && fluo)
    throw ConfigError("plan: fluorescence configuration given for a raman-mode scan");
  if (fluo) fluo->validate();

  const FluorescenceConfig* fluo_ptr = fluo ? &*fluo : nullptr;
  const ThermalProfile profile(thermal);
  const double dt = point_duration(plan, fluo_ptr);

  std::vector<ScanRecord> records;
  records.reserve(plan.voltages.size());
  for (std::size_t i = 0; i < plan.voltages.size(); ++i) {
    ScanRecord rec;
    rec.timestamp = start_time + static_cast<double>(i) * dt;
    rec.voltage = plan.voltages[i];
    rec.shots = plan.shots_per_point;
    auto rng = detail::point_generator(seed, scan_index, i);
    const double signal = expected_signal(plan, app, rec.voltage, stray.at(rec.timestamp), profile, fluo_ptr);
    if (plan.mode == ScanMode::raman) {
      int bright = detail::draw_binomial(rng, rec.shots, signal);
      if (plan.spam_flip > 0.0) {
        bright = detail::draw_binomial(rng, bright, 1.0 - plan.spam_flip) +
                 detail::draw_binomial(rng, rec.shots - bright, plan.spam_flip);
      }
      rec.successes = bright;
    } else {
      rec.photon_counts = detail::draw_poisson(rng, signal * rec.shots);
    }
    records.push_back(rec);
  }
  return records;
}

/// A scan tagged with its start time.
struct TimedScan {
  double timestamp = 0.0;
  std::vector<ScanRecord> records;
};

/// Repeated scans, scan i starting at i * cadence, with the stray field
/// advancing continuously across the series.
inline std::vector<TimedScan> simulate_drift_series(const ScanPlan& plan, const Apparatus& app,
                                                    const StrayFieldModel& stray, const ThermalState& thermal,
                                                    const std::optional<FluorescenceConfig>& fluo, int repeat,
                                                    double cadence, std::uint64_t seed) {
  if (repeat < 2) throw ConfigError("drift series: repeat must be >= 2");
  const double duration = scan_duration(plan, fluo ? &*fluo : nullptr);
  if (!(cadence >= duration * (1.0 - 1e-12)))
    throw ConfigError("drift series: cadence shorter than one scan (" + std::to_string(duration) + " s)");
  std::vector<TimedScan> series;
  series.reserve(static_cast<std::size_t>(repeat));
  for (int i = 0; i < repeat; ++i) {
    const double start = i * cadence;
    series.push_back({start, simulate_scan(plan, app, stray, thermal, fluo, seed, start, static_cast<std::uint64_t>(i))});
  }
  return series;
}

struct CorrelationConfig {
  int phase_bins = 32;
  double mean_rate = 0.0;  // counts/s
  double duration = 0.0;   // s
  double doppler_gain = 1.0;

  void validate() const {
    if (phase_bins < 8) throw ConfigError("correlation: phase_bins must be >= 8");
    if (!(mean_rate > 0.0)) throw ConfigError("correlation: mean_rate must be > 0");
    if (!(duration > 0.0)) throw ConfigError("correlation: duration must be > 0");
    if (!(doppler_gain > 0.0)) throw ConfigError("correlation: doppler_gain must be > 0");
  }
};

/// Photon counts binned by rf phase; phases are bin centres in [0, 2pi).
struct CorrelationHistogram {
  std::vector<double> phases;
  std::vector<long long> counts;
  std::optional<double> voltage;

  long long total() const {
    long long t = 0;
    for (long long c : counts) t += c;
    return t;
  }
};

inline std::vector<double> phase_bin_centres(int bins) {
  std::vector<double> phases(static_cast<std::size_t>(bins));
  for (int k = 0; k < bins; ++k) phases[k] = constants::two_pi * (k + 0.5) / bins;
  return phases;
}

/// Visibility of the correlation signal for a given modulation depth in the
/// linear Doppler model, V = min(g |beta|, 1).
inline double correlation_visibility(const CorrelationConfig& config, ModulationDepth beta) {
  return std::min(config.doppler_gain * std::abs(beta.beta), 1.0);
}

/// Counts ~ Poisson((R T / bins)(1 + V sin(phi + phi0))) with phi0 = 0 for
/// beta >= 0 and pi otherwise.
inline CorrelationHistogram simulate_correlation_histogram(const CorrelationConfig& config, ModulationDepth beta,
                                                           std::uint64_t seed, std::uint64_t stream = 0) {
  config.validate();
  const double visibility = correlation_visibility(config, beta);
  const double phase0 = beta.beta >= 0.0 ? 0.0 : constants::pi;
  const double per_bin = config.mean_rate * config.duration / config.phase_bins;

  CorrelationHistogram hist;
  hist.phases = phase_bin_centres(config.phase_bins);
  hist.counts.resize(hist.phases.size());
  for (std::size_t k = 0; k < hist.phases.size(); ++k) {
    auto rng = detail::point_generator(seed, stream, k);
    hist.counts[k] = detail::draw_poisson(rng, per_bin * (1.0 + visibility * std::sin(hist.phases[k] + phase0)));
  }
  return hist;
}

/// One correlation histogram per control voltage under a static stray field.
inline std::vector<CorrelationHistogram> simulate_correlation_series(const std::vector<double>& voltages,
                                                                     const CorrelationConfig& config,
                                                                     const Apparatus& app, double stray_field,
                                                                     std::uint64_t seed) {
  app.validate();
  std::vector<CorrelationHistogram> series;
  series.reserve(voltages.size());
  for (std::size_t i = 0; i < voltages.size(); ++i) {
    const ModulationDepth beta = beta_from_voltage(voltages[i], stray_field, app.trap, app.ion, app.laser);
    auto hist = simulate_correlation_histogram(config, beta, seed, i);
    hist.voltage = voltages[i];
    series.push_back(std::move(hist));
  }
  return series;
}

}  // namespace micromotion
