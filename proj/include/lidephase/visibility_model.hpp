#ifndef LIDEPHASE_VISIBILITY_MODEL_HPP
#define LIDEPHASE_VISIBILITY_MODEL_HPP

// Incoherent sum of sublevel fringes averaged over the beam velocity
// distribution. The complex fringe amplitude
//
//   Z = sum_{F,M_F} P(F,M_F) integral P(v) exp(i dphi(F,M_F,v)) dv
//
// has |Z| = relative visibility and arg Z = fringe phase shift.

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "lidephase/atomic_levels.hpp"
#include "lidephase/errors.hpp"
#include "lidephase/field_geometry.hpp"
#include "lidephase/quadrature.hpp"

namespace lidephase {

/// Gaussian velocity acceptance of the interferometer around the Bragg velocity.
struct Transmission {
  double center_m_per_s = 1065.0;
  double speed_ratio = 20.0;
};

struct BeamSpec {
  double u_m_per_s = 1065.0;
  double speed_ratio = 9.0;
  std::optional<Transmission> transmission;
  bool v3_prefactor = false;
  bool monochromatic = false;
};

inline void validate(const BeamSpec& beam) {
  if (!(beam.u_m_per_s > 0.0) || !std::isfinite(beam.u_m_per_s)) {
    throw DomainError("beam: most probable velocity must be positive");
  }
  if (!(beam.speed_ratio > 1.0) || !std::isfinite(beam.speed_ratio)) {
    throw DomainError("beam: parallel speed ratio must exceed 1");
  }
  if (beam.transmission) {
    if (!(beam.transmission->center_m_per_s > 0.0)) {
      throw DomainError("beam: transmission center velocity must be positive");
    }
    if (!(beam.transmission->speed_ratio > 0.0)) {
      throw DomainError("beam: transmission width parameter must be positive");
    }
  }
}

/// Integration support u(1 -/+ 6/S). The lower edge is held at 0.1 u for
/// very broad beams so the 1/v^2 phase stays finite.
inline std::pair<double, double> velocity_support(const BeamSpec& beam) {
  const double u = beam.u_m_per_s;
  const double half = 6.0 / beam.speed_ratio;
  return {std::max(u * (1.0 - half), 0.1 * u), u * (1.0 + half)};
}

/// Unnormalized density: source distribution times optional v^3 and T(v).
inline double velocity_weight(const BeamSpec& beam, double v) {
  if (!(v > 0.0)) return 0.0;
  const double u = beam.u_m_per_s;
  const double t = (v - u) * beam.speed_ratio / u;
  double w = beam.speed_ratio / (u * std::sqrt(std::numbers::pi)) * std::exp(-t * t);
  if (beam.v3_prefactor) w *= (v / u) * (v / u) * (v / u);
  if (beam.transmission) {
    const double c = beam.transmission->center_m_per_s;
    const double tt = (v - c) * beam.transmission->speed_ratio / c;
    w *= std::exp(-tt * tt);
  }
  return w;
}

inline constexpr int kVelocityPanels = 8;

namespace detail {
inline std::vector<double> velocity_breaks(const BeamSpec& beam) {
  const auto [lo, hi] = velocity_support(beam);
  std::vector<double> b(kVelocityPanels + 1);
  for (int i = 0; i <= kVelocityPanels; ++i) b[i] = lo + (hi - lo) * i / kVelocityPanels;
  b.back() = hi;
  return b;
}
}  // namespace detail

/// Velocity density P(v). Plain supersonic form unless the v^3 factor or the
/// transmission is enabled, in which case the product is renormalized on the
/// integration support.
class VelocityDistribution {
 public:
  explicit VelocityDistribution(BeamSpec beam) : beam_(std::move(beam)) {
    validate(beam_);
    if (beam_.v3_prefactor || beam_.transmission) {
      QuadratureOptions q;
      q.rel_tol = 1e-13;
      norm_ = integrate_adaptive([this](double v) { return velocity_weight(beam_, v); },
                                 detail::velocity_breaks(beam_), q)
                  .value;
      if (!(norm_ > 0.0)) throw NumericalError("velocity distribution has no weight on support");
    }
  }

  double operator()(double v) const { return velocity_weight(beam_, v) / norm_; }
  const BeamSpec& beam() const { return beam_; }

 private:
  BeamSpec beam_;
  double norm_ = 1.0;
};

inline double velocity_pdf(const BeamSpec& beam, double v) {
  return VelocityDistribution(beam)(v);
}

struct SublevelPopulation {
  std::vector<std::pair<Sublevel, double>> entries;

  double total_weight() const {
    double w = 0.0;
    for (const auto& e : entries) w += e.second;
    return w;
  }
};

inline void validate(const SublevelPopulation& pop, const IsotopeSpec& iso) {
  if (pop.entries.empty()) throw DomainError("population is empty");
  std::vector<Sublevel> seen;
  for (const auto& [s, w] : pop.entries) {
    check_sublevel(iso, s);
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw DomainError("population weight of " + to_string(s) + " must be non-negative");
    }
    if (std::find(seen.begin(), seen.end(), s) != seen.end()) {
      throw DomainError("population lists " + to_string(s) + " twice");
    }
    seen.push_back(s);
  }
  if (std::abs(pop.total_weight() - 1.0) > 1e-12) {
    throw DomainError("population weights must sum to 1");
  }
}

/// Equal weight on every ground sublevel.
inline SublevelPopulation unpumped_population(const IsotopeSpec& iso) {
  const auto all = sublevels(iso);
  SublevelPopulation pop;
  for (const auto& s : all) pop.entries.push_back({s, 1.0 / static_cast<double>(all.size())});
  return pop;
}

/// Equal weight on the M_F sublevels of a single hyperfine level F.
inline SublevelPopulation pumped_population(const IsotopeSpec& iso, HalfInteger F) {
  if (!is_ground_level(iso, F)) {
    throw DomainError(iso.name + ": cannot pump into F=" + std::to_string(F.value()));
  }
  SublevelPopulation pop;
  const int n = F.twice() + 1;
  for (int m2 = F.twice(); m2 >= -F.twice(); m2 -= 2) {
    pop.entries.push_back({{F, HalfInteger::from_twice(m2)}, 1.0 / n});
  }
  return pop;
}

struct VisibilityPoint {
  double current_A = 0.0;
  double visibility = 1.0;
  double phase_rad = 0.0;
  std::optional<double> sigma_visibility;
  std::optional<double> sigma_phase;
};

struct FringeSum {
  double visibility = 1.0;
  double phase_rad = 0.0;
};

struct VelocityAverageOptions {
  double rel_tol = 1e-10;
  double abs_tol = 1e-12;
  int max_intervals = 20000;
};

namespace detail {

inline FringeSum to_fringe_sum(std::complex<double> z) {
  return {std::min(std::abs(z), 1.0), z == std::complex<double>{} ? 0.0 : std::arg(z)};
}

/// Averages a normalized phasor sum S(v) over the velocity distribution.
template <typename PhasorFn>
FringeSum average_over_velocity(const BeamSpec& beam, PhasorFn&& phasor,
                                const VelocityAverageOptions& opts) {
  validate(beam);
  if (beam.monochromatic) return to_fringe_sum(phasor(beam.u_m_per_s));
  const VelocityDistribution pdf(beam);
  const auto breaks = velocity_breaks(beam);
  QuadratureOptions q;
  q.rel_tol = opts.rel_tol;
  q.abs_tol = opts.abs_tol;
  q.max_intervals = opts.max_intervals;
  // Integrating P(v) * complex(1, 0) through the same path makes Z exactly 1
  // when every phase vanishes.
  const auto norm = integrate_adaptive(
      [&](double v) { return std::complex<double>(pdf(v), 0.0); }, breaks, q);
  const auto z = integrate_adaptive([&](double v) { return pdf(v) * phasor(v); }, breaks, q);
  return to_fringe_sum(z.value / norm.value.real());
}

}  // namespace detail

/// Velocity-averaged fringe amplitude for one isotope with an arbitrary
/// per-sublevel phase function phase_fn(Sublevel, v).
template <typename PhaseFn>
FringeSum complex_fringe_sum(const SublevelPopulation& pop, const BeamSpec& beam,
                             PhaseFn&& phase_fn, const VelocityAverageOptions& opts = {}) {
  const double total = pop.total_weight();
  if (!(total > 0.0)) throw DomainError("population has zero total weight");
  auto phasor = [&](double v) {
    std::complex<double> sum{};
    for (const auto& [s, w] : pop.entries) {
      if (w == 0.0) continue;
      const double phi = phase_fn(s, v);
      if (!std::isfinite(phi)) throw NumericalError("phase function returned a non-finite value");
      sum += w * std::polar(1.0, phi);
    }
    return sum / total;
  };
  return detail::average_over_velocity(beam, phasor, opts);
}

/// First-order analytic washout of a single sublevel: exp(-(dphi_u / S)^2).
inline double envelope_approximation(double phase_at_u, double speed_ratio) {
  if (!(speed_ratio > 1.0)) throw DomainError("envelope: speed ratio must exceed 1");
  const double r = phase_at_u / speed_ratio;
  return std::exp(-r * r);
}

/// One isotope contributing to the detected fringes.
struct IsotopeComponent {
  IsotopeSpec isotope;
  SublevelPopulation population;
  double weight = 1.0;  // share of the I = 0 fringe signal
};

/// Full coil geometry. current_scale multiplies every applied current, i.e.
/// rescales the coil strength without changing its shape.
struct GeometryPhaseModel {
  CoilSpec coil;
  InterferometerGeometry geometry;
  double current_scale = 1.0;
};

using PhaseModel = std::variant<CouplingConstant, GeometryPhaseModel>;

/// Phase of one sublevel written as coefficient / v^2.
struct PhasorTerm {
  double weight;
  double coefficient;  // rad m^2 s^-2
};

namespace detail {

inline std::vector<PhasorTerm> merge_terms(std::vector<PhasorTerm> terms) {
  std::map<double, double> merged;
  for (const auto& t : terms) {
    if (t.weight == 0.0) continue;
    merged[t.coefficient] += t.weight;
  }
  std::vector<PhasorTerm> out;
  out.reserve(merged.size());
  for (const auto& [k, w] : merged) out.push_back({w, k});
  return out;
}

}  // namespace detail

/// Velocity average of sum_t w_t exp(i k_t / v^2) / sum_t w_t.
inline FringeSum average_phasor_terms(const std::vector<PhasorTerm>& raw_terms,
                                      const BeamSpec& beam,
                                      const VelocityAverageOptions& opts = {}) {
  auto terms = detail::merge_terms(raw_terms);
  if (terms.empty()) throw DomainError("no populated sublevels");
  double total = 0.0;
  for (const auto& t : terms) total += t.weight;
  for (auto& t : terms) t.weight /= total;
  auto phasor = [&](double v) {
    const double inv_v2 = 1.0 / (v * v);
    std::complex<double> sum{};
    for (const auto& t : terms) {
      sum += t.coefficient == 0.0 ? std::complex<double>(t.weight, 0.0)
                                  : t.weight * std::polar(1.0, t.coefficient * inv_v2);
    }
    return sum;
  };
  return detail::average_over_velocity(beam, phasor, opts);
}

struct VisibilityCurveOptions {
  VelocityAverageOptions velocity;
  PhaseIntegralOptions phase;
};

/// Phase coefficients (dphi * v^2) for every populated sublevel of every
/// component at one applied current.
inline std::vector<PhasorTerm> phasor_terms(const std::vector<IsotopeComponent>& components,
                                            const PhaseModel& model, int order, double current_A,
                                            EnergyModel mode, double reference_velocity,
                                            const PhaseIntegralOptions& phase_opts = {}) {
  std::vector<PhasorTerm> terms;
  double component_total = 0.0;
  for (const auto& c : components) component_total += c.weight;
  for (const auto& c : components) {
    const double share = c.weight / component_total;
    const double pop_total = c.population.total_weight();
    for (const auto& [s, w] : c.population.entries) {
      if (w == 0.0 || share == 0.0) continue;
      double k = 0.0;
      if (const auto* C = std::get_if<CouplingConstant>(&model)) {
        if (mode != EnergyModel::linear) {
          throw DomainError("Breit-Rabi phases need the full coil geometry, not only C");
        }
        k = coupling_phase(*C, order, lande_g(c.isotope, s.F) * s.M.value(), current_A,
                           c.isotope.mass_kg, 1.0);
      } else {
        const auto& g = std::get<GeometryPhaseModel>(model);
        auto geom = g.geometry;
        geom.order = order;
        const CoilSpec coil = with_current(g.coil, current_A * g.current_scale);
        const double v = reference_velocity;
        k = phase_integral(coil, geom, c.isotope, s, v, mode, phase_opts) * v * v;
      }
      terms.push_back({share * w / pop_total, k});
    }
  }
  return terms;
}

/// Relative visibility and phase versus applied current.
inline std::vector<VisibilityPoint> visibility_curve(
    const std::vector<IsotopeComponent>& components, const BeamSpec& beam,
    const PhaseModel& model, int order, std::span<const double> currents, EnergyModel mode,
    const VisibilityCurveOptions& opts = {}) {
  validate(beam);
  if (components.empty()) throw DomainError("visibility_curve: no isotope components");
  double total = 0.0;
  for (const auto& c : components) {
    validate(c.isotope);
    validate(c.population, c.isotope);
    if (!(c.weight >= 0.0)) throw DomainError("isotope weights must be non-negative");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) throw DomainError("isotope weights must sum to 1");
  if (order < 1) throw DomainError("diffraction order must be a positive integer");
  for (double I : currents) {
    if (!(I >= 0.0) || !std::isfinite(I)) throw DomainError("currents must be non-negative");
  }

  // In linear mode the geometry only enters through C.
  PhaseModel effective = model;
  if (mode == EnergyModel::linear) {
    if (const auto* g = std::get_if<GeometryPhaseModel>(&model)) {
      auto geom = g->geometry;
      geom.order = order;
      effective = CouplingConstant{reduce_to_coupling(g->coil, geom).value * g->current_scale};
    }
  }

  std::vector<VisibilityPoint> out;
  out.reserve(currents.size());
  for (double I : currents) {
    if (I == 0.0) {
      out.push_back({I, 1.0, 0.0, std::nullopt, std::nullopt});
      continue;
    }
    const auto terms =
        phasor_terms(components, effective, order, I, mode, beam.u_m_per_s, opts.phase);
    const auto sum = average_phasor_terms(terms, beam, opts.velocity);
    out.push_back({I, sum.visibility, sum.phase_rad, std::nullopt, std::nullopt});
  }
  return out;
}

}  // namespace lidephase

#endif  // LIDEPHASE_VISIBILITY_MODEL_HPP
