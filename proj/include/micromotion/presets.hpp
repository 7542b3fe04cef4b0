#pragma once

// Named trap presets: a microfabricated surface trap probed by
// counter-propagating 355 nm Raman beams and a four-blade trap probed by
// perpendicular Raman beams, both holding a single 171Yb+ ion.

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "micromotion/constants.hpp"
#include "micromotion/physics.hpp"

namespace micromotion {

struct Preset {
  std::string name;
  TrapConfig trap;
  IonSpecies ion;
  LaserGeometry laser;
  ThermalState thermal;
  double rabi_frequency = 0.0;  // rad/s, carrier without micromotion

  double pi_time() const { return constants::pi / rabi_frequency; }
};

/// eta = k * sqrt(hbar / (2 m w_x))
inline double lamb_dicke_parameter(const LaserGeometry& laser, const TrapConfig& trap, const IonSpecies& ion) {
  return laser.wavenumber() * std::sqrt(constants::reduced_planck / (2.0 * ion.mass_kg() * trap.secular_frequency));
}

// q is not known for either trap. It is chosen so that beta per unit field
// matches measured sensitivities:
//   surface: 0.091 / 5.1 (V/m)^-1 with e/(m w_x^2) = 5.585e-9 m/(V/m) and
//            k = 2 * 2pi / 355 nm  ->  q = 0.1805
//   blade:   0.093 / 3.1 (V/m)^-1 with e/(m w_x^2) = 9.151e-9 m/(V/m) and
//            k = sqrt(2) * 2pi / 355 nm  ->  q = 0.2620
// The surface trap couples to the 1.6 MHz radial mode (the 1.4 MHz mode is
// the other candidate).
inline Preset surface_trap_preset() {
  Preset p;
  p.name = "surface-trap";
  p.trap.rf_frequency = constants::two_pi * 22.2e6;
  p.trap.secular_frequency = constants::two_pi * 1.6e6;
  p.trap.q_parameter = 0.1805;
  p.trap.axis_angle = 0.0;
  p.trap.field_gain = 2880.0;
  p.ion = ytterbium_171();
  p.laser = {355e-9, 2.0, 1.0};
  // Doppler-cooled: n ~ Gamma / (2 w_x) with Gamma = 2pi * 19.6 MHz.
  p.thermal = {6.0, std::round(lamb_dicke_parameter(p.laser, p.trap, p.ion) * 1000.0) / 1000.0};
  p.rabi_frequency = constants::two_pi * 50e3;
  return p;
}

inline Preset blade_trap_preset() {
  Preset p;
  p.name = "blade-trap";
  p.trap.rf_frequency = constants::two_pi * 15.3e6;
  p.trap.secular_frequency = constants::two_pi * 1.25e6;
  p.trap.q_parameter = 0.2620;
  p.trap.axis_angle = 0.0;
  p.trap.field_gain = 0.2238;
  p.ion = ytterbium_171();
  p.laser = {355e-9, std::numbers::sqrt2, 1.0};
  p.thermal = {8.0, std::round(lamb_dicke_parameter(p.laser, p.trap, p.ion) * 1000.0) / 1000.0};
  p.rabi_frequency = constants::two_pi * 50e3;
  return p;
}

inline std::vector<std::string> preset_names() { return {"surface-trap", "blade-trap"}; }

inline std::optional<Preset> find_preset(std::string_view name) {
  if (name == "surface-trap") return surface_trap_preset();
  if (name == "blade-trap") return blade_trap_preset();
  return std::nullopt;
}

}  // namespace micromotion
