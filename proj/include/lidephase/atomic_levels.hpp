#ifndef LIDEPHASE_ATOMIC_LEVELS_HPP
#define LIDEPHASE_ATOMIC_LEVELS_HPP

// Zeeman structure of J = 1/2 alkali ground states.
//
// Sign convention: the Zeeman Hamiltonian is H_Z = -mu_B B (gJ Jz + gI Iz), so
// the linear-regime energy of |F, M_F> is -g_F mu_B M_F B with g_F > 0 for the
// upper hyperfine level. Energies are measured from the hyperfine centroid.

#include <cmath>
#include <compare>
#include <cstdlib>
#include <string>
#include <vector>

#include "lidephase/constants.hpp"
#include "lidephase/errors.hpp"

namespace lidephase {

/// Angular-momentum quantum number stored as twice its value.
class HalfInteger {
 public:
  constexpr HalfInteger() = default;
  static constexpr HalfInteger from_twice(int twice) { return HalfInteger(twice); }
  static HalfInteger from_double(double value) {
    const double twice = 2.0 * value;
    const double rounded = std::round(twice);
    if (std::abs(twice - rounded) > 1e-9) {
      throw DomainError("not a half-integer: " + std::to_string(value));
    }
    return HalfInteger(static_cast<int>(rounded));
  }

  constexpr int twice() const { return twice_; }
  constexpr double value() const { return 0.5 * twice_; }

  constexpr auto operator<=>(const HalfInteger&) const = default;
  constexpr HalfInteger operator-() const { return HalfInteger(-twice_); }

 private:
  constexpr explicit HalfInteger(int twice) : twice_(twice) {}
  int twice_ = 0;
};

namespace literals {
constexpr HalfInteger operator""_hi(long double v) {
  return HalfInteger::from_twice(static_cast<int>(2.0L * v + (v >= 0 ? 0.5L : -0.5L)));
}
constexpr HalfInteger operator""_hi(unsigned long long v) {
  return HalfInteger::from_twice(static_cast<int>(2 * v));
}
}  // namespace literals

struct Sublevel {
  HalfInteger F;
  HalfInteger M;

  constexpr auto operator<=>(const Sublevel&) const = default;
};

inline std::string to_string(const Sublevel& s) {
  auto fmt = [](HalfInteger q) {
    return q.twice() % 2 == 0 ? std::to_string(q.twice() / 2) : std::to_string(q.twice()) + "/2";
  };
  return "(F=" + fmt(s.F) + ", M_F=" + fmt(s.M) + ")";
}

struct IsotopeSpec {
  std::string name;
  double mass_kg = 0.0;
  HalfInteger nuclear_spin;
  double hfs_splitting_J = 0.0;  // ground-state hyperfine interval
  double g_J = 2.0;
  double g_I = 0.0;
  double abundance = 0.0;
};

inline void validate(const IsotopeSpec& iso) {
  if (!(iso.mass_kg > 0.0) || !std::isfinite(iso.mass_kg)) {
    throw DomainError(iso.name + ": mass must be positive");
  }
  if (!(iso.hfs_splitting_J > 0.0) || !std::isfinite(iso.hfs_splitting_J)) {
    throw DomainError(iso.name + ": hyperfine splitting must be positive");
  }
  if (iso.nuclear_spin.twice() < 1) {
    throw DomainError(iso.name + ": nuclear spin must be at least 1/2");
  }
  if (!(iso.abundance >= 0.0 && iso.abundance <= 1.0)) {
    throw DomainError(iso.name + ": abundance must lie in [0, 1]");
  }
  if (!std::isfinite(iso.g_J) || !std::isfinite(iso.g_I)) {
    throw DomainError(iso.name + ": g-factors must be finite");
  }
}

namespace presets {

// Hyperfine intervals: 7Li 803.504 MHz, 6Li 228.205 MHz (ground state).
inline IsotopeSpec li6() {
  return {"Li6", 6.0151228874 * PhysicalConstants::amu, HalfInteger::from_twice(2),
          228.2052598e6 * PhysicalConstants::h, 2.0, 0.0, 0.076};
}

inline IsotopeSpec li7() {
  return {"Li7", 7.0160034366 * PhysicalConstants::amu, HalfInteger::from_twice(3),
          803.5040866e6 * PhysicalConstants::h, 2.0, 0.0, 0.924};
}

}  // namespace presets

inline HalfInteger upper_level(const IsotopeSpec& iso) {
  return HalfInteger::from_twice(iso.nuclear_spin.twice() + 1);
}

inline HalfInteger lower_level(const IsotopeSpec& iso) {
  return HalfInteger::from_twice(iso.nuclear_spin.twice() - 1);
}

inline bool is_ground_level(const IsotopeSpec& iso, HalfInteger F) {
  return F == upper_level(iso) || F == lower_level(iso);
}

inline void check_sublevel(const IsotopeSpec& iso, const Sublevel& s) {
  if (!is_ground_level(iso, s.F)) {
    throw DomainError(iso.name + ": F=" + std::to_string(s.F.value()) +
                      " is not a ground hyperfine level");
  }
  if (std::abs(s.M.twice()) > s.F.twice() || (s.F.twice() - s.M.twice()) % 2 != 0) {
    throw DomainError(iso.name + ": invalid sublevel " + to_string(s));
  }
}

/// All 2(2I+1) ground-state sublevels, upper level first, M_F descending.
inline std::vector<Sublevel> sublevels(const IsotopeSpec& iso) {
  std::vector<Sublevel> out;
  for (HalfInteger F : {upper_level(iso), lower_level(iso)}) {
    for (int m2 = F.twice(); m2 >= -F.twice(); m2 -= 2) {
      out.push_back({F, HalfInteger::from_twice(m2)});
    }
  }
  return out;
}

/// Landé factor of hyperfine level F for J = 1/2.
inline double lande_g(const IsotopeSpec& iso, HalfInteger F) {
  if (!is_ground_level(iso, F)) {
    throw DomainError(iso.name + ": F=" + std::to_string(F.value()) +
                      " is not a ground hyperfine level");
  }
  const double f = F.value();
  const double i = iso.nuclear_spin.value();
  constexpr double j = 0.5;
  const double ff = f * (f + 1.0);
  const double ii = i * (i + 1.0);
  const double jj = j * (j + 1.0);
  return iso.g_J * (ff - ii + jj) / (2.0 * ff) + iso.g_I * (ff + ii - jj) / (2.0 * ff);
}

/// Hyperfine energy of level F relative to the centroid.
inline double hyperfine_offset(const IsotopeSpec& iso, HalfInteger F) {
  const double two_i_plus_1 = iso.nuclear_spin.twice() + 1.0;
  const double i = iso.nuclear_spin.value();
  if (F == upper_level(iso)) return iso.hfs_splitting_J * i / two_i_plus_1;
  if (F == lower_level(iso)) return -iso.hfs_splitting_J * (i + 1.0) / two_i_plus_1;
  throw DomainError(iso.name + ": F=" + std::to_string(F.value()) +
                    " is not a ground hyperfine level");
}

inline double zeeman_energy_linear(const IsotopeSpec& iso, const Sublevel& s, double field_T) {
  check_sublevel(iso, s);
  if (s.M.twice() == 0) return 0.0;
  return -lande_g(iso, s.F) * PhysicalConstants::mu_B * s.M.value() * field_T;
}

/// Slope dE/dB of the linear Zeeman energy.
inline double zeeman_slope_linear(const IsotopeSpec& iso, const Sublevel& s) {
  check_sublevel(iso, s);
  if (s.M.twice() == 0) return 0.0;
  return -lande_g(iso, s.F) * PhysicalConstants::mu_B * s.M.value();
}

inline constexpr double kDefaultFieldCeiling_T = 1.0;

namespace detail {

struct BreitRabiTerms {
  double value;
  double slope;
};

inline BreitRabiTerms breit_rabi(const IsotopeSpec& iso, const Sublevel& s, double field_T,
                                 double ceiling_T) {
  check_sublevel(iso, s);
  if (!(field_T >= 0.0) || !std::isfinite(field_T)) {
    throw DomainError("Breit-Rabi: field magnitude must be finite and non-negative");
  }
  if (field_T > ceiling_T) {
    throw DomainError("Breit-Rabi: field " + std::to_string(field_T) +
                      " T exceeds the ground-manifold validity ceiling of " +
                      std::to_string(ceiling_T) + " T");
  }
  constexpr double mu_B = PhysicalConstants::mu_B;
  const double dE = iso.hfs_splitting_J;
  const double i = iso.nuclear_spin.value();
  const double two_i_plus_1 = 2.0 * i + 1.0;
  const double m = s.M.value();
  const bool upper = s.F == upper_level(iso);

  // Stretched states do not mix; their energy is exactly linear.
  if (upper && std::abs(s.M.twice()) == iso.nuclear_spin.twice() + 1) {
    const double sign = s.M.twice() > 0 ? 1.0 : -1.0;
    const double slope = -sign * mu_B * (0.5 * iso.g_J + iso.g_I * i);
    return {dE * i / two_i_plus_1 + slope * field_T, slope};
  }

  const double dx_dB = (iso.g_J - iso.g_I) * mu_B / dE;
  const double x = dx_dB * field_T;
  const double root = std::sqrt(1.0 - 4.0 * m * x / two_i_plus_1 + x * x);
  const double branch = upper ? 1.0 : -1.0;
  const double value = -dE / (2.0 * two_i_plus_1) - iso.g_I * mu_B * m * field_T +
                       branch * 0.5 * dE * root;
  const double slope = -iso.g_I * mu_B * m +
                       branch * 0.5 * dE * (x - 2.0 * m / two_i_plus_1) / root * dx_dB;
  return {value, slope};
}

}  // namespace detail

/// Breit-Rabi eigenvalue of the state adiabatically connected to (F, M_F).
inline double zeeman_energy_breit_rabi(const IsotopeSpec& iso, const Sublevel& s, double field_T,
                                       double ceiling_T = kDefaultFieldCeiling_T) {
  return detail::breit_rabi(iso, s, field_T, ceiling_T).value;
}

/// dE/dB of the Breit-Rabi eigenvalue.
inline double zeeman_slope_breit_rabi(const IsotopeSpec& iso, const Sublevel& s, double field_T,
                                      double ceiling_T = kDefaultFieldCeiling_T) {
  return detail::breit_rabi(iso, s, field_T, ceiling_T).slope;
}

enum class EnergyModel { linear, breit_rabi };

inline const char* to_string(EnergyModel mode) {
  return mode == EnergyModel::linear ? "linear" : "breit-rabi";
}

inline EnergyModel parse_energy_model(const std::string& text) {
  if (text == "linear") return EnergyModel::linear;
  if (text == "breit-rabi" || text == "breit_rabi") return EnergyModel::breit_rabi;
  throw DomainError("unknown energy model '" + text + "' (expected linear|breit-rabi)");
}

/// Local dE/dB used by the path-integral phase.
inline double zeeman_slope(const IsotopeSpec& iso, const Sublevel& s, double field_T,
                           EnergyModel mode, double ceiling_T = kDefaultFieldCeiling_T) {
  return mode == EnergyModel::linear ? zeeman_slope_linear(iso, s)
                                     : zeeman_slope_breit_rabi(iso, s, field_T, ceiling_T);
}

}  // namespace lidephase

#endif  // LIDEPHASE_ATOMIC_LEVELS_HPP
