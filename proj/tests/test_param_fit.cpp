#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "lidephase/param_fit.hpp"

using namespace lidephase;
using namespace lidephase::literals;

namespace {

constexpr double kC = 1.404379424145622e-19;

VisibilityModelConfig pumped_li7(double S, int order = 1) {
  VisibilityModelConfig m;
  m.primary = presets::li7();
  m.primary_population = pumped_population(m.primary, 1_hi);
  m.beam.speed_ratio = S;
  m.coupling = {kC};
  m.order = order;
  return m;
}

std::vector<double> grid(double hi, int n) {
  std::vector<double> out;
  for (int i = 0; i < n; ++i) out.push_back(hi * i / (n - 1));
  return out;
}

std::vector<VisibilityPoint> synthetic(const VisibilityModelConfig& truth,
                                       const std::vector<double>& currents, double noise,
                                       std::uint64_t seed) {
  auto pts = evaluate_model(truth, currents);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& p : pts) {
    if (noise > 0.0) {
      p.visibility += noise * gauss(rng);
      p.sigma_visibility = noise;
    }
  }
  return pts;
}

FitProblem problem_for(std::vector<VisibilityPoint> data, VisibilityModelConfig start) {
  FitProblem p;
  p.data = std::move(data);
  p.model = std::move(start);
  p.free = {{FitParameter::coupling, kC, kC / 10.0, kC * 10.0},
            {FitParameter::speed_ratio, 9.0, 2.0, 100.0}};
  return p;
}

}  // namespace

TEST(ParameterNames, RoundTrip) {
  for (auto p : {FitParameter::coupling, FitParameter::coil_distance, FitParameter::speed_ratio,
                 FitParameter::contamination}) {
    EXPECT_EQ(parse_fit_parameter(to_string(p)), p);
  }
  EXPECT_THROW(parse_fit_parameter("mass"), DomainError);
}

TEST(VisibilityFit, RecoversNoiselessTruth) {
  const auto truth = pumped_li7(11.0);
  auto start = truth;
  start.coupling.value = 0.7 * kC;
  auto prob = problem_for(synthetic(truth, grid(6.0, 20), 0.0, 0), start);
  prob.free[0].initial = 0.7 * kC;
  const auto res = fit_visibility(prob);
  EXPECT_NEAR(res.estimate(FitParameter::coupling).value, kC, 1e-6 * kC);
  EXPECT_NEAR(res.estimate(FitParameter::speed_ratio).value, 11.0, 1e-6 * 11.0);
  EXPECT_LT(res.chi2, 1e-12);
  EXPECT_TRUE(res.uniform_weights);
  EXPECT_EQ(res.model_values.size(), 20u);
  EXPECT_EQ(res.starts.size(), 5u);
}

TEST(VisibilityFit, StandardErrorsCoverTruth) {
  const auto truth = pumped_li7(9.0);
  int covered = 0;
  constexpr int trials = 60;
  for (int k = 0; k < trials; ++k) {
    const auto res = fit_visibility(problem_for(synthetic(truth, grid(6.0, 20), 0.02, 100 + k), truth));
    const auto& s = res.estimate(FitParameter::speed_ratio);
    covered += std::abs(s.value - 9.0) <= 3.0 * s.standard_error;
    EXPECT_FALSE(res.uniform_weights);
  }
  EXPECT_GE(covered, 0.9 * trials);
}

TEST(VisibilityFit, RecoversContaminationFraction) {
  VisibilityModelConfig truth;
  truth.primary = presets::li6();
  truth.primary_population = unpumped_population(truth.primary);
  truth.contaminant = presets::li7();
  truth.contaminant_population = unpumped_population(presets::li7());
  truth.contamination = 0.08;
  truth.beam.speed_ratio = 9.0;
  truth.coupling = {kC};
  auto start = truth;
  start.contamination = 0.02;
  auto prob = problem_for(synthetic(truth, grid(8.0, 25), 0.0, 0), start);
  prob.free.push_back({FitParameter::contamination, 0.02, 0.0, 1.0});
  const auto res = fit_visibility(prob);
  EXPECT_NEAR(res.estimate(FitParameter::contamination).value, 0.08, 1e-5);
  EXPECT_NEAR(res.estimate(FitParameter::speed_ratio).value, 9.0, 1e-4);
}

TEST(VisibilityFit, CouplingAndCoilDistanceGiveTheSameCurve) {
  VisibilityModelConfig truth = pumped_li7(9.0);
  truth.geometry = GeometryPhaseModel{CoilSpec{}, InterferometerGeometry{}, 1.0};
  truth.coupling = reduce_to_coupling(truth.geometry->coil, truth.geometry->geometry);
  const auto data = synthetic(truth, grid(6.0, 20), 0.02, 4);

  auto by_c = problem_for(data, truth);
  by_c.lsq.x_tol = 1e-12;
  by_c.lsq.g_tol = 1e-14;
  auto by_d = by_c;
  by_d.model.parameterization = CouplingParameterization::coil_distance;
  by_d.free[0] = {FitParameter::coil_distance, 0.007, 0.002, 0.05};
  const auto rc = fit_visibility(by_c);
  const auto rd = fit_visibility(by_d);
  ASSERT_EQ(rc.model_values.size(), rd.model_values.size());
  for (std::size_t i = 0; i < rc.model_values.size(); ++i) {
    EXPECT_NEAR(rc.model_values[i], rd.model_values[i], 1e-8) << i;
  }
  EXPECT_NEAR(rc.chi2, rd.chi2, 1e-8 * rc.chi2);
  // C implied by the fitted coil position is the fitted C.
  const auto& fitted = *rd.fitted_model.geometry;
  EXPECT_NEAR(reduce_to_coupling(fitted.coil, fitted.geometry).value,
              rc.estimate(FitParameter::coupling).value, 1e-6 * kC);
}

TEST(VisibilityFit, ResidualsAreOrthogonalToJacobian) {
  const auto truth = pumped_li7(9.0);
  auto prob = problem_for(synthetic(truth, grid(6.0, 20), 0.02, 8), truth);
  prob.lsq.x_tol = 1e-12;
  prob.lsq.g_tol = 1e-14;
  const auto res = fit_visibility(prob);
  const auto& J = res.jacobian;
  const auto& r = res.weighted_residuals;
  for (Eigen::Index k = 0; k < J.cols(); ++k) {
    EXPECT_LE(std::abs(J.col(k).dot(r)), 1e-6 * J.col(k).norm() * r.norm()) << k;
  }
}

TEST(VisibilityFit, NarrowTransmissionRaisesEffectiveSpeedRatio) {
  auto beam_truth = [](int order, double transmission_ratio) {
    auto m = pumped_li7(7.0, order);
    m.beam.transmission = Transmission{1065.0, transmission_ratio};
    return m;
  };
  const auto t1 = beam_truth(1, 8.0);
  const auto t2 = beam_truth(2, 20.0);
  auto p1 = problem_for(synthetic(t1, grid(6.0, 20), 0.0, 0), pumped_li7(9.0, 1));
  auto p2 = problem_for(synthetic(t2, grid(3.0, 20), 0.0, 0), pumped_li7(9.0, 2));
  const double s1 = fit_visibility(p1).estimate(FitParameter::speed_ratio).value;
  const double s2 = fit_visibility(p2).estimate(FitParameter::speed_ratio).value;
  EXPECT_GT(s1, 7.0);
  EXPECT_GT(s2, s1);
}

TEST(VisibilityFit, ParallelAndSerialStartsAgree) {
  const auto truth = pumped_li7(14.5, 2);
  auto prob = problem_for(synthetic(truth, grid(3.0, 20), 0.02, 12), truth);
  const auto a = fit_visibility(prob);
  prob.parallel_starts = false;
  const auto b = fit_visibility(prob);
  EXPECT_EQ(a.start_index, b.start_index);
  for (std::size_t j = 0; j < a.estimates.size(); ++j) {
    EXPECT_EQ(a.estimates[j].value, b.estimates[j].value);
  }
}

TEST(VisibilityFit, FlagsParameterPinnedAtBound) {
  const auto truth = pumped_li7(9.0);
  auto prob = problem_for(synthetic(truth, grid(6.0, 20), 0.0, 0), truth);
  prob.free[1] = {FitParameter::speed_ratio, 6.0, 2.0, 7.0};
  prob.start_speed_ratios = {5.0, 6.5};
  const auto res = fit_visibility(prob);
  EXPECT_TRUE(res.estimate(FitParameter::speed_ratio).at_bound);
  EXPECT_FALSE(res.estimate(FitParameter::coupling).at_bound);
}

TEST(VisibilityFit, BreitRabiModeRecoversCoupling) {
  VisibilityModelConfig truth = pumped_li7(9.0);
  truth.mode = EnergyModel::breit_rabi;
  truth.geometry = GeometryPhaseModel{CoilSpec{}, InterferometerGeometry{}, 1.0};
  truth.coupling = {1.1 * kC};
  auto start = truth;
  auto prob = problem_for(synthetic(truth, grid(6.0, 10), 0.0, 0), start);
  prob.free = {{FitParameter::coupling, kC, kC / 10.0, kC * 10.0}};
  const auto res = fit_visibility(prob);
  EXPECT_NEAR(res.estimate(FitParameter::coupling).value, 1.1 * kC, 1e-5 * kC);
}

TEST(VisibilityFit, ReportsEveryFailedStart) {
  const auto truth = pumped_li7(9.0);
  auto prob = problem_for(synthetic(truth, grid(6.0, 20), 0.02, 1), truth);
  prob.lsq.max_iterations = 0;
  try {
    fit_visibility(prob);
    FAIL() << "expected FitError";
  } catch (const FitError& e) {
    const std::string what = e.what();
    for (const char* s : {"start 0", "start 4", "S_par=25", "iteration limit"}) {
      EXPECT_NE(what.find(s), std::string::npos) << s << " missing in: " << what;
    }
  }
}

TEST(VisibilityFit, ValidatesTheProblem) {
  const auto truth = pumped_li7(9.0);
  const auto data = synthetic(truth, grid(6.0, 20), 0.0, 0);
  auto prob = problem_for({data.begin(), data.begin() + 3}, truth);
  EXPECT_THROW(fit_visibility(prob), DomainError);
  prob = problem_for(data, truth);
  prob.free.push_back({FitParameter::contamination, 0.1, 0.0, 1.0});
  EXPECT_THROW(fit_visibility(prob), DomainError);
  prob = problem_for(data, truth);
  prob.free[1].lower = 20.0;
  EXPECT_THROW(fit_visibility(prob), DomainError);
  prob = problem_for(data, truth);
  prob.free.push_back(prob.free[0]);
  EXPECT_THROW(fit_visibility(prob), DomainError);
  prob = problem_for(data, truth);
  prob.free[0] = {FitParameter::coil_distance, 0.007, 0.002, 0.05};
  EXPECT_THROW(fit_visibility(prob), DomainError);
  prob = problem_for(data, truth);
  prob.data[2].current_A = -1.0;
  EXPECT_THROW(fit_visibility(prob), DomainError);
}

TEST(ProfileUncertainty, MinimumSitsAtTheEstimate) {
  const auto truth = pumped_li7(9.0);
  const auto prob = problem_for(synthetic(truth, grid(6.0, 20), 0.02, 21), truth);
  const auto res = fit_visibility(prob);
  const auto& s = res.estimate(FitParameter::speed_ratio);
  std::vector<double> values;
  const double step = 0.5 * s.standard_error;
  for (int k = -4; k <= 4; ++k) values.push_back(s.value + k * step);
  const auto prof = profile_uncertainty(prob, res, FitParameter::speed_ratio, values);
  std::size_t best = 0;
  for (std::size_t i = 0; i < prof.size(); ++i) {
    ASSERT_TRUE(prof[i].valid);
    EXPECT_GE(prof[i].chi2, res.chi2 - 1e-6);
    if (prof[i].chi2 < prof[best].chi2) best = i;
  }
  EXPECT_EQ(best, 4u);
  // Quadratic near the minimum: one standard error costs about one unit of chi^2.
  EXPECT_NEAR(prof[6].chi2 - res.chi2, 1.0, 0.3);
  EXPECT_NEAR(prof[2].chi2 - res.chi2, 1.0, 0.3);
}

TEST(ProfileUncertainty, FlatWhenDataCannotConstrain) {
  const auto truth = pumped_li7(9.0);
  std::vector<VisibilityPoint> data(4);
  for (auto& d : data) {
    d.current_A = 0.0;
    d.visibility = 1.0;
  }
  auto prob = problem_for(data, truth);
  prob.free = {{FitParameter::coupling, kC, kC / 10.0, kC * 10.0},
               {FitParameter::speed_ratio, 9.0, 2.0, 100.0}};
  const auto res = fit_visibility(prob);
  const double values[] = {0.5 * kC, kC, 3.0 * kC};
  const auto prof = profile_uncertainty(prob, res, FitParameter::coupling, values);
  for (const auto& p : prof) {
    ASSERT_TRUE(p.valid);
    EXPECT_NEAR(p.chi2, prof[0].chi2, 1e-12);
  }
}

TEST(ProfileUncertainty, UnitDeltaChi2IntervalCoversTruth) {
  const auto truth = pumped_li7(9.0);
  int covered = 0;
  constexpr int trials = 100;
  for (int k = 0; k < trials; ++k) {
    const auto prob = problem_for(synthetic(truth, grid(6.0, 20), 0.02, 700 + k), truth);
    const auto res = fit_visibility(prob);
    const double at_truth[] = {9.0};
    const auto prof = profile_uncertainty(prob, res, FitParameter::speed_ratio, at_truth);
    covered += prof[0].valid && prof[0].chi2 - res.chi2 <= 1.0;
  }
  EXPECT_GE(covered, 0.6 * trials);
}

TEST(ProfileUncertainty, RejectsFixedParameter) {
  const auto truth = pumped_li7(9.0);
  const auto prob = problem_for(synthetic(truth, grid(6.0, 20), 0.0, 0), truth);
  const auto res = fit_visibility(prob);
  const double v[] = {0.1};
  EXPECT_THROW(profile_uncertainty(prob, res, FitParameter::contamination, v), DomainError);
}
