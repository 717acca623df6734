#ifndef LIDEPHASE_FIELD_GEOMETRY_HPP
#define LIDEPHASE_FIELD_GEOMETRY_HPP

// Gradient coil and three-grating interferometer geometry.
//
// Coordinates: atoms travel along +z, the two interferometer arms separate
// along x and the beam midline is x = y = 0. The second grating sits at
// z = 0 by default. The coil axis is parallel to x; its center is at
// (center_offset_x, 0, axial_position), so a positive current and offset
// give a field magnitude that grows toward +x across the beams.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "lidephase/atomic_levels.hpp"
#include "lidephase/constants.hpp"
#include "lidephase/errors.hpp"
#include "lidephase/quadrature.hpp"

namespace lidephase {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline double norm(Vec3 v) { return std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z); }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

struct CoilSpec {
  double radius_m = 0.015;
  int turns = 5;
  double center_offset_x_m = 0.007;
  double axial_position_m = -0.04;  // relative to the second grating
  double current_A = 0.0;
};

inline void validate(const CoilSpec& coil) {
  if (!(coil.radius_m > 0.0) || !std::isfinite(coil.radius_m)) {
    throw DomainError("coil radius must be positive");
  }
  if (coil.turns < 1) throw DomainError("coil turns must be at least 1");
  if (!std::isfinite(coil.current_A)) throw DomainError("coil current must be finite");
  if (!std::isfinite(coil.center_offset_x_m) || !std::isfinite(coil.axial_position_m)) {
    throw DomainError("coil position must be finite");
  }
}

inline CoilSpec with_current(CoilSpec coil, double current_A) {
  coil.current_A = current_A;
  return coil;
}

struct InterferometerGeometry {
  double z1_m = -0.605;
  double z2_m = 0.0;
  double z3_m = 0.605;
  double laser_wavelength_m = 671e-9;
  int order = 1;
  Vec3 ambient_field_T{};

  double grating_period() const { return 0.5 * laser_wavelength_m; }
  double laser_wavevector() const { return 2.0 * std::numbers::pi / laser_wavelength_m; }
  double grating_spacing() const { return z2_m - z1_m; }
};

inline InterferometerGeometry symmetric_geometry(double grating_spacing_m, double wavelength_m,
                                                 int order) {
  InterferometerGeometry g;
  g.z1_m = -grating_spacing_m;
  g.z2_m = 0.0;
  g.z3_m = grating_spacing_m;
  g.laser_wavelength_m = wavelength_m;
  g.order = order;
  return g;
}

inline void validate(const InterferometerGeometry& g) {
  if (!(g.z1_m < g.z2_m && g.z2_m < g.z3_m)) {
    throw DomainError("grating positions must satisfy z1 < z2 < z3");
  }
  const double l1 = g.z2_m - g.z1_m;
  const double l2 = g.z3_m - g.z2_m;
  if (std::abs(l1 - l2) > 1e-12 * std::max(l1, l2)) {
    throw DomainError("grating spacings must be equal (symmetric Mach-Zehnder)");
  }
  if (!(g.laser_wavelength_m > 0.0)) throw DomainError("laser wavelength must be positive");
  if (g.order < 1) throw DomainError("diffraction order must be a positive integer");
}

/// Minimum distance to the conductor below which the field is refused.
inline constexpr double kConductorExclusion_m = 1e-6;

/// Exact field of the circular coil (all turns at one radius).
inline Vec3 loop_field(const CoilSpec& coil, Vec3 point) {
  constexpr double mu0 = PhysicalConstants::mu_0;
  const double R = coil.radius_m;
  const double a = point.x - coil.center_offset_x_m;  // axial coordinate
  const Vec3 transverse{0.0, point.y, point.z - coil.axial_position_m};
  const double rho = norm(transverse);

  const double alpha2 = (rho - R) * (rho - R) + a * a;
  if (alpha2 < kConductorExclusion_m * kConductorExclusion_m) {
    throw SingularityError("field point within 1e-6 m of the coil conductor");
  }
  const double NI = coil.turns * coil.current_A;
  const double r2 = rho * rho + a * a;
  const double R2 = R * R;

  double b_axial = 0.0;
  double b_radial = 0.0;
  if (rho < 1e-5 * R) {
    // Near-axis expansion; error O((rho/R)^2) relative.
    const double s = R2 + a * a;
    b_axial = mu0 * NI * R2 / (2.0 * s * std::sqrt(s));
    b_radial = 3.0 * mu0 * NI * R2 * a * rho / (4.0 * s * s * std::sqrt(s));
  } else {
    const double beta2 = R2 + r2 + 2.0 * R * rho;
    const double beta = std::sqrt(beta2);
    const double k2 = std::max(0.0, 1.0 - alpha2 / beta2);
    const double k = std::sqrt(k2);
    const double K = std::comp_ellint_1(k);
    const double E = std::comp_ellint_2(k);
    const double c = mu0 * NI / std::numbers::pi;
    b_axial = c / (2.0 * alpha2 * beta) * ((R2 - r2) * E + alpha2 * K);
    b_radial = c * a / (2.0 * alpha2 * beta * rho) * ((R2 + r2) * E - alpha2 * K);
  }

  Vec3 field{b_axial, 0.0, 0.0};
  if (rho > 0.0) {
    field = field + (b_radial / rho) * transverse;
  }
  return field;
}

/// |B| on the beam midline (coil plus optional uniform ambient field).
inline double midline_field(const CoilSpec& coil, const InterferometerGeometry& geom, double x,
                            double z) {
  return norm(loop_field(coil, {x, 0.0, z}) + geom.ambient_field_T);
}

namespace detail {
inline void require_inside(const InterferometerGeometry& geom, double z) {
  if (!(z >= geom.z1_m && z <= geom.z3_m)) {
    throw DomainError("z outside the interferometer [z1, z3]");
  }
}
}  // namespace detail

inline constexpr double kGradientStep_m = 1e-6;

/// d|B|/dx across the midline at z, by Richardson-extrapolated central differences.
inline double gradient_profile(const CoilSpec& coil, const InterferometerGeometry& geom, double z) {
  detail::require_inside(geom, z);
  if (coil.current_A == 0.0 && geom.ambient_field_T == Vec3{}) return 0.0;
  const double h = kGradientStep_m;
  auto central = [&](double step) {
    return (midline_field(coil, geom, step, z) - midline_field(coil, geom, -step, z)) /
           (2.0 * step);
  };
  const double coarse = central(h);
  const double fine = central(0.5 * h);
  const double extrapolated = (4.0 * fine - coarse) / 3.0;
  // The closed form cancels to about (r/R)^2 relative far from the coil.
  const double scale = midline_field(coil, geom, 0.0, z);
  const double dz = z - coil.axial_position_m;
  const double conditioning =
      std::max(1.0, (dz * dz + coil.center_offset_x_m * coil.center_offset_x_m) /
                        (coil.radius_m * coil.radius_m));
  const double roundoff =
      256.0 * std::numeric_limits<double>::epsilon() * conditioning * scale / h;
  if (std::abs(fine - coarse) > 1e-4 * std::abs(extrapolated) + roundoff) {
    throw NumericalError("finite-difference gradient unstable at z = " + std::to_string(z));
  }
  return extrapolated;
}

/// Diffraction angle between the arms, 2 p h / (m v a).
inline double diffraction_angle(const InterferometerGeometry& geom, double mass_kg, double v) {
  if (!(v > 0.0)) throw DomainError("velocity must be positive");
  return 2.0 * geom.order * PhysicalConstants::h / (mass_kg * v * geom.grating_period());
}

/// Distance along the arms from the nearest beam splitter, before the angle factor.
inline double arm_lever(const InterferometerGeometry& geom, double z) {
  detail::require_inside(geom, z);
  return z <= geom.z2_m ? z - geom.z1_m : geom.z3_m - z;
}

inline double path_separation(const InterferometerGeometry& geom, double mass_kg, double v,
                              double z) {
  const double theta = diffraction_angle(geom, mass_kg, v);
  return theta * arm_lever(geom, z);
}

namespace detail {
inline std::vector<double> phase_breaks(const CoilSpec& coil, const InterferometerGeometry& geom) {
  std::vector<double> breaks{geom.z1_m, geom.z2_m, geom.z3_m};
  for (double dz : {-coil.radius_m, 0.0, coil.radius_m}) {
    const double zc = coil.axial_position_m + dz;
    if (zc > geom.z1_m && zc < geom.z3_m) breaks.push_back(zc);
  }
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
  return breaks;
}
}  // namespace detail

struct PhaseIntegralOptions {
  double rel_tol = 1e-8;
  int max_intervals = 2000;
  double field_ceiling_T = kDefaultFieldCeiling_T;
};

/// Differential phase between the arms for sublevel s at velocity v,
/// -(1/(hbar v)) * integral of (dE/dB) (d|B|/dx) dx(z) dz.
inline double phase_integral(const CoilSpec& coil, const InterferometerGeometry& geom,
                             const IsotopeSpec& iso, const Sublevel& s, double v,
                             EnergyModel mode, const PhaseIntegralOptions& opts = {}) {
  validate(coil);
  validate(geom);
  check_sublevel(iso, s);
  if (!(v > 0.0)) throw DomainError("velocity must be positive");
  if (coil.current_A == 0.0 && geom.ambient_field_T == Vec3{}) return 0.0;

  const double linear_slope = zeeman_slope_linear(iso, s);
  if (mode == EnergyModel::linear && linear_slope == 0.0) return 0.0;

  auto integrand = [&](double z) {
    const double gradient = gradient_profile(coil, geom, z);
    const double slope =
        mode == EnergyModel::linear
            ? linear_slope
            : zeeman_slope_breit_rabi(iso, s, midline_field(coil, geom, 0.0, z),
                                      opts.field_ceiling_T);
    return slope * gradient * path_separation(geom, iso.mass_kg, v, z);
  };
  QuadratureOptions q;
  q.rel_tol = opts.rel_tol;
  q.max_intervals = opts.max_intervals;
  const auto result = integrate_adaptive(integrand, detail::phase_breaks(coil, geom), q);
  return -result.value / (PhysicalConstants::hbar * v);
}

/// Geometry factor C in  dphi = C p g_F M_F I / (m v^2).
struct CouplingConstant {
  double value = 0.0;  // rad kg m^2 s^-2 A^-1
};

/// Evaluates the geometry-only integral with a 1 A reference current.
inline CouplingConstant reduce_to_coupling(const CoilSpec& coil, const InterferometerGeometry& geom,
                                           double rel_tol = 1e-10) {
  validate(coil);
  validate(geom);
  const CoilSpec unit = with_current(coil, 1.0);
  auto integrand = [&](double z) { return gradient_profile(unit, geom, z) * arm_lever(geom, z); };
  QuadratureOptions q;
  q.rel_tol = rel_tol;
  const auto integral = integrate_adaptive(integrand, detail::phase_breaks(unit, geom), q);
  const double per_unit = PhysicalConstants::mu_B / PhysicalConstants::hbar * 2.0 *
                          PhysicalConstants::h / geom.grating_period();
  return {per_unit * integral.value};
}

/// Phase from the factorized scaling law.
inline double coupling_phase(CouplingConstant C, int order, double g_F_times_M, double current_A,
                             double mass_kg, double v) {
  return C.value * order * g_F_times_M * current_A / (mass_kg * v * v);
}

struct FieldProfileRow {
  double z_m;
  double field_T;
  double gradient_T_per_m;
  double separation_m;
};

/// Samples |B|, d|B|/dx and dx(z) on n_points uniform z values in [z1, z3].
inline std::vector<FieldProfileRow> field_profile(const CoilSpec& coil,
                                                  const InterferometerGeometry& geom,
                                                  double mass_kg, double v, int n_points) {
  validate(coil);
  validate(geom);
  if (n_points < 2) throw DomainError("field profile needs at least two points");
  std::vector<FieldProfileRow> rows;
  rows.reserve(n_points);
  for (int i = 0; i < n_points; ++i) {
    const double z = i + 1 == n_points
                         ? geom.z3_m
                         : geom.z1_m + (geom.z3_m - geom.z1_m) * i / (n_points - 1);
    rows.push_back({z, midline_field(coil, geom, 0.0, z), gradient_profile(coil, geom, z),
                    path_separation(geom, mass_kg, v, z)});
  }
  return rows;
}

}  // namespace lidephase

#endif  // LIDEPHASE_FIELD_GEOMETRY_HPP
