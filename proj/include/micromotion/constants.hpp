#pragma once

#include <numbers>

namespace micromotion::constants {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

// CODATA 2018
inline constexpr double elementary_charge = 1.602176634e-19;  // C
inline constexpr double atomic_mass_unit = 1.66053906660e-27; // kg
inline constexpr double reduced_planck = 1.054571817e-34;     // J s

inline constexpr double ytterbium_171_mass_amu = 170.9363258;

}  // namespace micromotion::constants
