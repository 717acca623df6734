#ifndef LIDEPHASE_CONSTANTS_HPP
#define LIDEPHASE_CONSTANTS_HPP

#include <numbers>

namespace lidephase {

// CODATA 2018.
struct PhysicalConstants {
  static constexpr double mu_B = 9.2740100783e-24;    // J/T
  static constexpr double h = 6.62607015e-34;         // J s
  static constexpr double hbar = h / (2.0 * std::numbers::pi);
  static constexpr double mu_0 = 1.25663706212e-6;    // T m/A
  static constexpr double amu = 1.66053906660e-27;    // kg
};

}  // namespace lidephase

#endif  // LIDEPHASE_CONSTANTS_HPP
