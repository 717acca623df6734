#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include "lidephase/visibility_model.hpp"
#include "oracles.hpp"

using namespace lidephase;
using namespace lidephase::literals;

namespace {

constexpr double kPi = std::numbers::pi;
const CouplingConstant kC{1.404379424145622e-19};

/// Current that gives phase alpha (at the most probable velocity) to a
/// sublevel with g_F M_F = 1.
double current_for_phase(double alpha, const IsotopeSpec& iso, double u, int order = 1) {
  return alpha * iso.mass_kg * u * u / (kC.value * order);
}

BeamSpec beam(double S, bool mono = false) {
  BeamSpec b;
  b.speed_ratio = S;
  b.monochromatic = mono;
  return b;
}

double single_visibility(const std::vector<IsotopeComponent>& comps, const BeamSpec& b, double I,
                         int order = 1) {
  const double cur[] = {I};
  return visibility_curve(comps, b, kC, order, cur, EnergyModel::linear)[0].visibility;
}

std::vector<IsotopeComponent> one(const IsotopeSpec& iso, SublevelPopulation pop) {
  return {{iso, std::move(pop), 1.0}};
}

double wrapped_difference(double a, double b) {
  return std::remainder(a - b, 2.0 * kPi);
}

}  // namespace

TEST(VelocityDistribution, PeakNormalizationAndWidth) {
  const BeamSpec b = beam(8.5);
  const double u = b.u_m_per_s;
  EXPECT_NEAR(velocity_pdf(b, u), 8.5 / (u * std::sqrt(kPi)), 1e-15);
  const auto [lo, hi] = velocity_support(b);
  const auto total = oracle::riemann([&](double v) { return velocity_pdf(b, v); },
                                     [](double) { return 0.0; }, lo, hi, 1000000);
  EXPECT_NEAR(total.real(), 1.0, 1e-8);
  // Full width at 1/e of the peak is 2u/S.
  const double half = u / 8.5;
  EXPECT_NEAR(velocity_pdf(b, u + half), velocity_pdf(b, u) / std::numbers::e, 1e-15);
  EXPECT_NEAR(velocity_pdf(b, u - half), velocity_pdf(b, u) / std::numbers::e, 1e-15);
  EXPECT_NEAR(2.0 * half, 250.6, 0.05);
}

TEST(VelocityDistribution, ExtraFactorsStayNormalized) {
  BeamSpec b = beam(5.0);
  b.v3_prefactor = true;
  b.transmission = Transmission{1000.0, 12.0};
  const VelocityDistribution pdf(b);
  const auto [lo, hi] = velocity_support(b);
  const auto total = oracle::riemann([&](double v) { return pdf(v); },
                                     [](double) { return 0.0; }, lo, hi, 1000000);
  EXPECT_NEAR(total.real(), 1.0, 1e-8);
}

TEST(VelocityDistribution, SupportAndValidation) {
  const auto [lo, hi] = velocity_support(beam(12.0));
  EXPECT_DOUBLE_EQ(lo, 1065.0 * 0.5);
  EXPECT_DOUBLE_EQ(hi, 1065.0 * 1.5);
  EXPECT_DOUBLE_EQ(velocity_support(beam(2.0)).first, 106.5);
  EXPECT_THROW(velocity_pdf(beam(1.0), 1000.0), DomainError);
  BeamSpec b = beam(9.0);
  b.u_m_per_s = -1.0;
  EXPECT_THROW(velocity_pdf(b, 1000.0), DomainError);
}

TEST(FringeSum, ZeroPhaseIsUnitAmplitude) {
  const auto pop = unpumped_population(presets::li7());
  const auto z = complex_fringe_sum(pop, beam(9.0), [](const Sublevel&, double) { return 0.0; });
  EXPECT_EQ(z.visibility, 1.0);
  EXPECT_EQ(z.phase_rad, 0.0);
}

TEST(FringeSum, MonochromaticSingleSublevelKeepsFullVisibility) {
  SublevelPopulation pop;
  pop.entries.push_back({{2_hi, 2_hi}, 1.0});
  for (double alpha : {0.3, 2.0, -1.1, 7.0}) {
    const auto z =
        complex_fringe_sum(pop, beam(9.0, true), [&](const Sublevel&, double) { return alpha; });
    EXPECT_NEAR(z.visibility, 1.0, 1e-15);
    EXPECT_NEAR(wrapped_difference(z.phase_rad, alpha), 0.0, 1e-14);
  }
}

TEST(VisibilityCurve, ZeroCurrentIsExactlyOne) {
  const auto iso = presets::li7();
  const double cur[] = {0.0, 1.0};
  const auto pts = visibility_curve(one(iso, unpumped_population(iso)), beam(9.0), kC, 1, cur,
                                    EnergyModel::linear);
  EXPECT_EQ(pts[0].visibility, 1.0);
  EXPECT_EQ(pts[0].phase_rad, 0.0);
  EXPECT_LT(pts[1].visibility, 1.0);
}

TEST(VisibilityCurve, MonochromaticLi7MatchesClosedForm) {
  const auto iso = presets::li7();
  const BeamSpec b = beam(9.0, true);
  const auto comps = one(iso, unpumped_population(iso));
  for (int k = 0; k <= 160; ++k) {
    const double alpha = 8.0 * kPi * k / 160.0;
    const double ref = std::abs((2.0 + 4.0 * std::cos(alpha / 2.0) + 2.0 * std::cos(alpha)) / 8.0);
    EXPECT_NEAR(single_visibility(comps, b, current_for_phase(alpha, iso, b.u_m_per_s)), ref, 1e-6)
        << "alpha=" << alpha;
  }
}

TEST(VisibilityCurve, MonochromaticLi6RevivesAtThreeFastPeriods) {
  const auto iso = presets::li6();
  const BeamSpec b = beam(9.0, true);
  const auto comps = one(iso, unpumped_population(iso));
  auto Z = [&](double alpha) {
    const double cur[] = {current_for_phase(alpha, iso, b.u_m_per_s)};
    const auto pt = visibility_curve(comps, b, kC, 1, cur, EnergyModel::linear)[0];
    return std::polar(pt.visibility, pt.phase_rad);
  };
  // Every half-integer M_F phasor is back to +1 only after a 4 pi rotation,
  // i.e. three periods of the fastest sublevel.
  EXPECT_NEAR(std::abs(Z(6.0 * kPi) - 1.0), 0.0, 1e-9);
  for (int k = 1; k < 600; ++k) {
    EXPECT_GT(std::abs(Z(6.0 * kPi * k / 600.0) - 1.0), 1e-4) << k;
  }
  // Half way every phasor is -1: full contrast, fringes inverted.
  EXPECT_NEAR(std::abs(Z(3.0 * kPi) + 1.0), 0.0, 1e-9);
}

TEST(VisibilityCurve, MatchesRiemannSumOracle) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ratio(4.0, 30.0);
  std::uniform_real_distribution<double> alpha(0.1, 25.0);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int k = 0; k < 10; ++k) {
    const auto iso = coin(rng) ? presets::li7() : presets::li6();
    const auto pop = coin(rng) ? unpumped_population(iso) : pumped_population(iso, lower_level(iso));
    const int order = 1 + coin(rng);
    const BeamSpec b = beam(ratio(rng));
    const double I = current_for_phase(alpha(rng), iso, b.u_m_per_s, order);
    const double cur[] = {I};
    const auto pt = visibility_curve(one(iso, pop), b, kC, order, cur, EnergyModel::linear)[0];

    const auto [lo, hi] = velocity_support(b);
    auto weight = [&](double v) { return oracle::supersonic_density(b.u_m_per_s, b.speed_ratio, v); };
    std::complex<double> z{};
    for (const auto& [s, w] : pop.entries) {
      const double gm = lande_g(iso, s.F) * s.M.value();
      auto phase = [&](double v) { return kC.value * order * gm * I / (iso.mass_kg * v * v); };
      z += w * oracle::riemann(weight, phase, lo, hi, 1000000);
    }
    z /= oracle::riemann(weight, [](double) { return 0.0; }, lo, hi, 1000000).real();
    EXPECT_NEAR(pt.visibility, std::abs(z), 1e-6) << "config " << k;
    if (std::abs(z) > 1e-3) {
      EXPECT_NEAR(wrapped_difference(pt.phase_rad, std::arg(z)), 0.0, 1e-6 / std::abs(z));
    }
  }
}

TEST(VisibilityCurve, StaysWithinUnitInterval) {
  const auto iso = presets::li6();
  std::vector<double> cur;
  for (int k = 0; k <= 80; ++k) cur.push_back(0.25 * k);
  for (double S : {3.0, 9.0, 40.0}) {
    for (const auto& pt : visibility_curve(one(iso, unpumped_population(iso)), beam(S), kC, 2, cur,
                                           EnergyModel::linear)) {
      EXPECT_GE(pt.visibility, 0.0);
      EXPECT_LE(pt.visibility, 1.0);
    }
  }
}

TEST(VisibilityCurve, SymmetricPopulationHasNoPhaseAndIsEvenInCurrent) {
  const auto iso = presets::li7();
  const auto pop = unpumped_population(iso);
  std::vector<double> cur;
  for (int k = 1; k <= 20; ++k) cur.push_back(0.7 * k);
  for (const auto& pt : visibility_curve(one(iso, pop), beam(9.0), kC, 1, cur, EnergyModel::linear)) {
    if (pt.visibility > 1e-6) {
      EXPECT_NEAR(wrapped_difference(pt.phase_rad, std::round(pt.phase_rad / kPi) * kPi), 0.0,
                  1e-12);
    }
  }
  // Reversing the current is the same as relabelling M_F -> -M_F.
  for (double I : {1.3, 4.0, 11.0}) {
    auto with_current = [&](double sign) {
      return complex_fringe_sum(pop, beam(9.0), [&](const Sublevel& s, double v) {
        return coupling_phase(kC, 1, lande_g(iso, s.F) * s.M.value(), sign * I, iso.mass_kg, v);
      });
    };
    EXPECT_NEAR(with_current(1.0).visibility, with_current(-1.0).visibility, 1e-12);
  }
}

TEST(VisibilityCurve, NarrowerBeamRevivesHigher) {
  const auto iso = presets::li7();
  const auto comps = one(iso, unpumped_population(iso));
  for (double alpha : {4.0 * kPi, 8.0 * kPi}) {
    double previous = 0.0;
    for (double S : {5.0, 9.0, 14.5, 30.0, 80.0}) {
      const BeamSpec b = beam(S);
      const double V = single_visibility(comps, b, current_for_phase(alpha, iso, b.u_m_per_s));
      EXPECT_GT(V, previous) << "S=" << S << " alpha=" << alpha;
      previous = V;
    }
  }
}

TEST(VisibilityCurve, DoublingOrderHalvesFirstMinimumCurrent) {
  const auto iso = presets::li7();
  SublevelPopulation pop;
  pop.entries = {{{2_hi, 1_hi}, 0.5}, {{2_hi, -1_hi}, 0.5}};
  const auto comps = one(iso, pop);
  auto first_minimum = [&](int order) {
    // Bracket the first dip of |<cos phi>| and refine by golden section.
    double a = 0.0;
    double b = current_for_phase(2.0 * kPi, iso, 1065.0, order);
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - g * (b - a);
    double d = a + g * (b - a);
    auto V = [&](double I) { return single_visibility(comps, beam(9.0), I, order); };
    double fc = V(c);
    double fd = V(d);
    while (b - a > 1e-12 * b) {
      if (fc < fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - g * (b - a);
        fc = V(c);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + g * (b - a);
        fd = V(d);
      }
    }
    return 0.5 * (a + b);
  };
  const double I1 = first_minimum(1);
  const double I2 = first_minimum(2);
  EXPECT_NEAR(I1 / I2, 2.0, 2e-6);
}

TEST(VisibilityCurve, PumpedLowerLevelTendsToOneThird) {
  const auto iso = presets::li7();
  const auto comps = one(iso, pumped_population(iso, 1_hi));
  for (double S : {5.0, 9.0, 14.5}) {
    const BeamSpec b = beam(S);
    // |dphi_u| of M_F = +-1 in the lower level is half the g_F M_F = 1 phase.
    for (double factor : {5.0, 6.0, 8.0}) {
      const double I = current_for_phase(2.0 * factor * S, iso, b.u_m_per_s);
      EXPECT_NEAR(single_visibility(comps, b, I), 1.0 / 3.0, 0.01) << "S=" << S;
    }
  }
}

TEST(VisibilityCurve, IsotopeMixtureAddsPhasors) {
  const auto li6 = presets::li6();
  const auto li7 = presets::li7();
  const std::vector<IsotopeComponent> mix{{li6, unpumped_population(li6), 0.92},
                                          {li7, unpumped_population(li7), 0.08}};
  const BeamSpec b = beam(9.0);
  for (double I : {0.8, 2.5, 6.0}) {
    const double cur[] = {I};
    const auto pt = visibility_curve(mix, b, kC, 1, cur, EnergyModel::linear)[0];
    std::complex<double> z{};
    for (const auto& c : mix) {
      const auto part = complex_fringe_sum(c.population, b, [&](const Sublevel& s, double v) {
        return coupling_phase(kC, 1, lande_g(c.isotope, s.F) * s.M.value(), I, c.isotope.mass_kg, v);
      });
      z += c.weight * std::polar(part.visibility, part.phase_rad);
    }
    EXPECT_NEAR(pt.visibility, std::abs(z), 1e-9);
  }
}

TEST(VisibilityCurve, TransmissionNarrowsTheEffectiveBeam) {
  const auto iso = presets::li7();
  SublevelPopulation pop;
  pop.entries.push_back({{2_hi, 2_hi}, 1.0});
  const auto comps = one(iso, pop);
  BeamSpec broad = beam(6.0);
  BeamSpec filtered = broad;
  filtered.transmission = Transmission{1065.0, 15.0};
  for (double alpha : {2.0, 4.0, 6.0}) {
    const double I = current_for_phase(alpha, iso, 1065.0);
    EXPECT_GT(single_visibility(comps, filtered, I), single_visibility(comps, broad, I) + 0.05);
  }
}

TEST(VisibilityCurve, BreitRabiModeReducesToLinearAtLowCurrent) {
  const auto iso = presets::li6();
  const GeometryPhaseModel geometry{CoilSpec{}, InterferometerGeometry{}, 1.0};
  const auto comps = one(iso, unpumped_population(iso));
  const double low[] = {0.2};
  const auto lin = visibility_curve(comps, beam(9.0), geometry, 1, low, EnergyModel::linear)[0];
  const auto br = visibility_curve(comps, beam(9.0), geometry, 1, low, EnergyModel::breit_rabi)[0];
  EXPECT_NEAR(br.visibility, lin.visibility, 1e-3);
  const double high[] = {15.0};
  const auto lin_h = visibility_curve(comps, beam(9.0), geometry, 1, high, EnergyModel::linear)[0];
  const auto br_h = visibility_curve(comps, beam(9.0), geometry, 1, high, EnergyModel::breit_rabi)[0];
  EXPECT_GT(std::abs(br_h.visibility - lin_h.visibility), 1e-3);
  EXPECT_THROW(visibility_curve(comps, beam(9.0), kC, 1, high, EnergyModel::breit_rabi),
               DomainError);
}

TEST(VisibilityCurve, RejectsBadInputs) {
  const auto iso = presets::li7();
  auto comps = one(iso, unpumped_population(iso));
  const double negative[] = {-1.0};
  EXPECT_THROW(visibility_curve(comps, beam(9.0), kC, 1, negative, EnergyModel::linear),
               DomainError);
  const double ok[] = {1.0};
  EXPECT_THROW(visibility_curve(comps, beam(9.0), kC, 0, ok, EnergyModel::linear), DomainError);
  comps[0].weight = 0.5;
  EXPECT_THROW(visibility_curve(comps, beam(9.0), kC, 1, ok, EnergyModel::linear), DomainError);
  comps = one(iso, unpumped_population(iso));
  comps[0].population.entries[0].second += 0.1;
  EXPECT_THROW(visibility_curve(comps, beam(9.0), kC, 1, ok, EnergyModel::linear), DomainError);
  EXPECT_THROW(pumped_population(iso, 1.5_hi), DomainError);
}

TEST(EnvelopeApproximation, Definition) {
  EXPECT_EQ(envelope_approximation(0.0, 9.0), 1.0);
  EXPECT_NEAR(envelope_approximation(9.0, 9.0), std::exp(-1.0), 1e-15);
  EXPECT_THROW(envelope_approximation(1.0, 0.5), DomainError);
}

TEST(EnvelopeApproximation, ConvergesToQuadratureForNarrowBeams) {
  // The analytic washout is the leading term of an expansion in 1/S; at
  // fixed dphi_u/S its relative error falls like 1/S^2.
  for (double r : {0.5, 1.0}) {
    double previous = 1.0;
    for (double S : {15.0, 30.0, 60.0, 120.0}) {
      const BeamSpec b = beam(S);
      const double a = r * S;
      const auto q = average_phasor_terms({{1.0, a * b.u_m_per_s * b.u_m_per_s}}, b);
      const double rel = std::abs(q.visibility / envelope_approximation(a, S) - 1.0);
      EXPECT_LT(rel, 5.0 / (S * S)) << "S=" << S << " r=" << r;
      EXPECT_LT(rel, 0.35 * previous);
      previous = rel;
    }
  }
}
