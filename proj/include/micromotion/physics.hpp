#pragma once

// Micromotion physics: ion displacement from a static field, the phase
// modulation depth it produces on a momentum-transferring transition, and
// the resulting pi-pulse, thermal Rabi and weak-repump fluorescence signals.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "micromotion/constants.hpp"
#include "micromotion/errors.hpp"
#include "micromotion/special_functions.hpp"

namespace micromotion {

struct IonSpecies {
  std::string name;
  double mass_amu = 0.0;

  double mass_kg() const { return mass_amu * constants::atomic_mass_unit; }

  void validate() const {
    if (!(mass_amu > 0.0) || !std::isfinite(mass_amu))
      throw ConfigError("ion mass must be positive");
  }
};

inline IonSpecies ytterbium_171() { return {"171Yb+", constants::ytterbium_171_mass_amu}; }

/// Trap parameters for the probed axis. Frequencies are angular (rad/s).
struct TrapConfig {
  double rf_frequency = 0.0;
  double secular_frequency = 0.0;
  double q_parameter = 0.0;
  double axis_angle = 0.0;  // rad, between static displacement and micromotion
  double field_gain = 0.0;  // K, (V/m) per V on the control electrode

  void validate() const {
    if (!(rf_frequency > 0.0)) throw ConfigError("trap: rf_frequency must be > 0");
    if (!(secular_frequency > 0.0)) throw ConfigError("trap: secular_frequency must be > 0");
    if (!(secular_frequency < rf_frequency))
      throw ConfigError("trap: secular_frequency must be below rf_frequency");
    if (!(q_parameter > 0.0 && q_parameter < 0.9))
      throw ConfigError("trap: q_parameter must lie in (0, 0.9)");
    if (!(axis_angle >= 0.0 && axis_angle < constants::pi / 2))
      throw ConfigError("trap: axis_angle must lie in [0, pi/2)");
    if (!std::isfinite(field_gain)) throw ConfigError("trap: field_gain must be finite");
  }
};

/// Momentum transfer of the probing transition. geometry_factor multiplies the
/// single-photon wavenumber: 2 for counter-propagating Raman beams, sqrt(2)
/// for perpendicular beams, 1 for a single beam.
struct LaserGeometry {
  double wavelength = 0.0;  // m
  double geometry_factor = 1.0;
  double projection = 1.0;  // cosine between momentum transfer and micromotion

  double wavenumber() const { return geometry_factor * constants::two_pi / wavelength * projection; }

  void validate() const {
    if (!(wavelength > 0.0)) throw ConfigError("laser: wavelength must be > 0");
    if (!(geometry_factor > 0.0 && geometry_factor <= 2.0))
      throw ConfigError("laser: geometry_factor must lie in (0, 2]");
    if (!(projection > 0.0 && projection <= 1.0))
      throw ConfigError("laser: projection must lie in (0, 1]");
  }
};

struct ThermalState {
  double mean_phonons = 0.0;
  double lamb_dicke = 0.0;

  void validate() const {
    if (!(mean_phonons >= 0.0) || !std::isfinite(mean_phonons))
      throw ConfigError("thermal: mean_phonons must be >= 0");
    if (!(lamb_dicke >= 0.0 && lamb_dicke < 1.0))
      throw ConfigError("thermal: lamb_dicke must lie in [0, 1)");
  }
};

struct FluorescenceConfig {
  double collection_efficiency = 0.0;
  double cycling_rate = 0.0;    // 1/s
  double detection_time = 0.0;  // s

  /// eta * Gamma * t_det, the square root of the on-null carrier signal.
  double amplitude() const { return collection_efficiency * cycling_rate * detection_time; }

  void validate() const {
    if (!(collection_efficiency > 0.0 && collection_efficiency <= 1.0))
      throw ConfigError("fluorescence: collection_efficiency must lie in (0, 1]");
    if (!(cycling_rate > 0.0)) throw ConfigError("fluorescence: cycling_rate must be > 0");
    if (!(detection_time > 0.0)) throw ConfigError("fluorescence: detection_time must be > 0");
  }
};

/// Signed phase-modulation index. Every model is even in beta.
struct ModulationDepth {
  double beta = 0.0;
};

/// u0 = e * field / (m * w_x^2). Sign follows the field.
inline double displacement_from_field(double field, const TrapConfig& trap, const IonSpecies& ion) {
  const double w = trap.secular_frequency;
  return constants::elementary_charge * field / (ion.mass_kg() * w * w);
}

/// beta = k * q * u0 / 2
inline ModulationDepth modulation_depth(double u0, const LaserGeometry& laser, const TrapConfig& trap) {
  return {laser.wavenumber() * trap.q_parameter * u0 / 2.0};
}

/// d(beta)/d(field), (V/m)^-1.
inline double beta_per_field(const TrapConfig& trap, const IonSpecies& ion, const LaserGeometry& laser) {
  return modulation_depth(displacement_from_field(1.0, trap, ion), laser, trap).beta;
}

inline ModulationDepth beta_from_voltage(double delta_v, double stray_field, const TrapConfig& trap,
                                         const IonSpecies& ion, const LaserGeometry& laser) {
  const double field = trap.field_gain * delta_v + stray_field;
  return modulation_depth(displacement_from_field(field, trap, ion), laser, trap);
}

/// |sin(pi J_n(beta) / 2)|^2, the population after a nominal pi pulse on the
/// n-th micromotion sideband.
inline double pi_pulse_probability(int order, ModulationDepth beta) {
  const double s = std::sin(constants::pi * bessel_j(order, beta.beta) / 2.0);
  return s * s;
}

// The neglected tail mass is kept far below finite-difference resolution so
// that the term count changing with n_ph does not show up in Jacobians.
inline constexpr double kThermalMassTarget = 1e-15;
inline constexpr std::size_t kMaxPhononTerms = 200000;

/// Thermal occupation weights and phonon-dependent carrier couplings for one
/// (mean phonon number, Lamb-Dicke parameter) pair. Reusable across pulse
/// areas, which is what makes scan fits cheap.
class ThermalProfile {
 public:
  explicit ThermalProfile(const ThermalState& state) : state_(state) {
    state.validate();
    const double n = state.mean_phonons;
    const std::size_t cap = static_cast<std::size_t>(40.0 * (n + 1.0) + 20.0);
    if (cap > kMaxPhononTerms)
      throw NumericError("thermal profile: mean phonon number too large for truncation");

    // Tail beyond term m is exactly ratio^(m+1).
    const double ratio = n / (n + 1.0);
    double weight = 1.0 / (n + 1.0);
    double tail = ratio;
    for (std::size_t m = 0; m <= cap; ++m) {
      weights_.push_back(weight);
      if (tail <= kThermalMassTarget) break;
      weight *= ratio;
      tail *= ratio;
    }
    if (tail > kThermalMassTarget)
      throw NumericError("thermal profile: truncation did not reach the probability-mass target");
    mass_ = 1.0 - tail;

    // Omega_m / Omega = exp(-eta^2 / 2) L_m(eta^2)
    const double eta2 = state.lamb_dicke * state.lamb_dicke;
    const double debye_waller = std::exp(-eta2 / 2.0);
    couplings_ = laguerre_table(static_cast<int>(weights_.size()) - 1, eta2);
    for (double& c : couplings_) c *= debye_waller;
  }

  /// sum_m p_m sin^2(Omega_m t / 2) for Omega_m = coupling_m * base_rabi.
  double population(double base_rabi, double pulse_time) const {
    const double half_area = 0.5 * base_rabi * pulse_time;
    double total = 0.0;
    for (std::size_t m = 0; m < weights_.size(); ++m) {
      const double s = std::sin(couplings_[m] * half_area);
      total += weights_[m] * s * s;
    }
    return total;
  }

  const ThermalState& state() const { return state_; }
  std::span<const double> weights() const { return weights_; }
  std::span<const double> couplings() const { return couplings_; }
  double captured_mass() const { return mass_; }

 private:
  ThermalState state_;
  std::vector<double> weights_;
  std::vector<double> couplings_;
  double mass_ = 0.0;
};

/// Rabi population after pulse_time averaged over a thermal phonon
/// distribution. base_rabi already carries the J_n(beta) factor.
inline double thermal_rabi_population(double base_rabi, double pulse_time, const ThermalState& thermal) {
  if (!(pulse_time >= 0.0)) throw DomainError("thermal_rabi_population: pulse_time must be >= 0");
  return ThermalProfile(thermal).population(base_rabi, pulse_time);
}

/// Parameters of the voltage-scan model P(V) = f_N[a J_n(b0 + b1 v + b2 v^2); t]
/// with v = V - c.
struct ScanModelParams {
  double a = 0.0;  // rad/s
  double b0 = 0.0;
  double b1 = 0.0;  // beta per volt
  double b2 = 0.0;  // beta per volt^2
  double c = 0.0;   // V
  double n_ph = 0.0;
};

inline double scan_beta(double delta_v, const ScanModelParams& p) {
  const double v = delta_v - p.c;
  return p.b0 + p.b1 * v + p.b2 * v * v;
}

inline double scan_model(double delta_v, const ScanModelParams& params, int order, double pulse_time,
                         const ThermalProfile& profile) {
  const double j = bessel_j(order, scan_beta(delta_v, params));
  return profile.population(params.a * j, pulse_time);
}

inline double scan_model(double delta_v, const ScanModelParams& params, int order, double pulse_time,
                         double lamb_dicke) {
  const ThermalProfile profile({params.n_ph, lamb_dicke});
  return scan_model(delta_v, params, order, pulse_time, profile);
}

/// (J_n(beta) * eta * Gamma * t_det)^2, the low-intensity weak-repump signal.
inline double fluorescence_model(int order, ModulationDepth beta, const FluorescenceConfig& fluo) {
  const double s = bessel_j(order, beta.beta) * fluo.amplitude();
  return s * s;
}

/// Ion position along the micromotion direction:
/// [u0 + u1 cos(w_x t + phi)] [(q/2) cos(w_rf t) + cos(theta)].
inline double micromotion_trajectory(double t, double u0, double u1, double secular_phase,
                                     const TrapConfig& trap) {
  const double envelope = u0 + u1 * std::cos(trap.secular_frequency * t + secular_phase);
  return envelope * (trap.q_parameter / 2.0 * std::cos(trap.rf_frequency * t) + std::cos(trap.axis_angle));
}

}  // namespace micromotion
