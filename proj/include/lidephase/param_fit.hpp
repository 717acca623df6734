#ifndef LIDEPHASE_PARAM_FIT_HPP
#define LIDEPHASE_PARAM_FIT_HPP

// Least-squares estimation of the coupling constant (or coil distance), the
// parallel speed ratio and an optional isotope contamination fraction from
// relative-visibility curves.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lidephase/errors.hpp"
#include "lidephase/field_geometry.hpp"
#include "lidephase/least_squares.hpp"
#include "lidephase/visibility_model.hpp"

namespace lidephase {

enum class FitParameter { coupling, coil_distance, speed_ratio, contamination };

inline const char* to_string(FitParameter p) {
  switch (p) {
    case FitParameter::coupling: return "C";
    case FitParameter::coil_distance: return "coil_distance_m";
    case FitParameter::speed_ratio: return "S_par";
    case FitParameter::contamination: return "f";
  }
  return "?";
}

inline FitParameter parse_fit_parameter(const std::string& name) {
  if (name == "C" || name == "coupling") return FitParameter::coupling;
  if (name == "coil_distance" || name == "coil_distance_m") return FitParameter::coil_distance;
  if (name == "S_par" || name == "speed_ratio") return FitParameter::speed_ratio;
  if (name == "f" || name == "contamination") return FitParameter::contamination;
  throw DomainError("unknown fit parameter '" + name + "'");
}

enum class CouplingParameterization { coupling, coil_distance };

/// Forward model behind a visibility fit. Fixed values live here; free
/// parameters override them during the fit.
struct VisibilityModelConfig {
  IsotopeSpec primary = presets::li7();
  SublevelPopulation primary_population = unpumped_population(presets::li7());
  std::optional<IsotopeSpec> contaminant;
  std::optional<SublevelPopulation> contaminant_population;
  double contamination = 0.0;  // fraction of the I = 0 fringe signal
  int order = 1;
  EnergyModel mode = EnergyModel::linear;
  BeamSpec beam;
  CouplingConstant coupling;
  std::optional<GeometryPhaseModel> geometry;
  CouplingParameterization parameterization = CouplingParameterization::coupling;
};

inline void set_parameter(VisibilityModelConfig& cfg, FitParameter p, double value) {
  switch (p) {
    case FitParameter::coupling: cfg.coupling.value = value; break;
    case FitParameter::coil_distance:
      if (!cfg.geometry) throw DomainError("coil distance needs a coil geometry");
      cfg.geometry->coil.center_offset_x_m = value;
      break;
    case FitParameter::speed_ratio: cfg.beam.speed_ratio = value; break;
    case FitParameter::contamination: cfg.contamination = value; break;
  }
}

inline double get_parameter(const VisibilityModelConfig& cfg, FitParameter p) {
  switch (p) {
    case FitParameter::coupling: return cfg.coupling.value;
    case FitParameter::coil_distance:
      if (!cfg.geometry) throw DomainError("coil distance needs a coil geometry");
      return cfg.geometry->coil.center_offset_x_m;
    case FitParameter::speed_ratio: return cfg.beam.speed_ratio;
    case FitParameter::contamination: return cfg.contamination;
  }
  return 0.0;
}

inline std::vector<IsotopeComponent> model_components(const VisibilityModelConfig& cfg) {
  std::vector<IsotopeComponent> out;
  if (cfg.contaminant) {
    if (!cfg.contaminant_population) throw DomainError("contaminant needs a population");
    out.push_back({cfg.primary, cfg.primary_population, 1.0 - cfg.contamination});
    out.push_back({*cfg.contaminant, *cfg.contaminant_population, cfg.contamination});
  } else {
    out.push_back({cfg.primary, cfg.primary_population, 1.0});
  }
  return out;
}

/// Phase model implied by the configuration. In Breit-Rabi mode a free C is
/// realized by scaling the coil strength of the fixed geometry.
inline PhaseModel model_phase(const VisibilityModelConfig& cfg,
                              std::optional<double> geometry_coupling = std::nullopt) {
  if (cfg.parameterization == CouplingParameterization::coil_distance) {
    if (!cfg.geometry) throw DomainError("coil-distance parameterization needs a coil geometry");
    return *cfg.geometry;
  }
  if (cfg.mode == EnergyModel::breit_rabi) {
    if (!cfg.geometry) throw DomainError("Breit-Rabi mode needs a coil geometry");
    GeometryPhaseModel g = *cfg.geometry;
    const double c_geom = geometry_coupling ? *geometry_coupling
                                            : reduce_to_coupling(g.coil, g.geometry).value;
    g.current_scale = cfg.coupling.value / c_geom;
    return g;
  }
  return cfg.coupling;
}

inline std::vector<VisibilityPoint> evaluate_model(const VisibilityModelConfig& cfg,
                                                   std::span<const double> currents,
                                                   const VisibilityCurveOptions& opts = {},
                                                   std::optional<double> geometry_coupling =
                                                       std::nullopt) {
  return visibility_curve(model_components(cfg), cfg.beam, model_phase(cfg, geometry_coupling),
                          cfg.order, currents, cfg.mode, opts);
}

struct ParameterSpec {
  FitParameter parameter;
  double initial;
  double lower;
  double upper;
};

struct FitProblem {
  std::vector<VisibilityPoint> data;
  VisibilityModelConfig model;
  std::vector<ParameterSpec> free;
  std::vector<double> start_speed_ratios{5.0, 8.5, 12.0, 16.0, 25.0};
  VisibilityCurveOptions curve_options;
  LsqOptions lsq;
  bool parallel_starts = true;
};

struct ParameterEstimate {
  FitParameter parameter;
  double value = 0.0;
  double standard_error = 0.0;
  bool at_bound = false;
};

struct StartDiagnostics {
  std::size_t index = 0;
  double initial_speed_ratio = 0.0;
  bool converged = false;
  double chi2 = std::numeric_limits<double>::infinity();
  int iterations = 0;
  std::string message;
};

struct FitResult {
  std::vector<ParameterEstimate> estimates;
  double chi2 = 0.0;
  double chi2_reduced = 0.0;
  std::vector<double> model_values;
  std::vector<double> residuals;  // data - model
  int iterations = 0;
  int evaluations = 0;
  double last_step_norm = 0.0;
  std::size_t start_index = 0;
  std::vector<StartDiagnostics> starts;
  bool uniform_weights = false;
  Eigen::MatrixXd jacobian;           // weighted residual Jacobian, scaled parameters
  Eigen::VectorXd weighted_residuals;
  VisibilityModelConfig fitted_model;

  const ParameterEstimate& estimate(FitParameter p) const {
    for (const auto& e : estimates) {
      if (e.parameter == p) return e;
    }
    throw DomainError(std::string("parameter ") + to_string(p) + " was not fitted");
  }
};

namespace detail {

inline void validate_problem(const FitProblem& problem) {
  if (problem.free.empty()) throw DomainError("fit problem has no free parameters");
  if (problem.data.size() < problem.free.size() + 2) {
    throw DomainError("fit problem needs at least two more data points than free parameters");
  }
  for (std::size_t i = 0; i < problem.free.size(); ++i) {
    const auto& p = problem.free[i];
    if (!std::isfinite(p.lower) || !std::isfinite(p.upper) || !(p.lower < p.upper)) {
      throw DomainError(std::string("bounds of ") + to_string(p.parameter) + " must be finite");
    }
    if (!(p.initial >= p.lower && p.initial <= p.upper)) {
      throw DomainError(std::string("initial ") + to_string(p.parameter) + " outside bounds");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (problem.free[j].parameter == p.parameter) {
        throw DomainError(std::string("parameter ") + to_string(p.parameter) + " listed twice");
      }
    }
    if (p.parameter == FitParameter::contamination && !problem.model.contaminant) {
      throw DomainError("contamination is free but no contaminant isotope is configured");
    }
    if (p.parameter == FitParameter::coil_distance &&
        problem.model.parameterization != CouplingParameterization::coil_distance) {
      throw DomainError("coil distance is free but the coupling parameterization is selected");
    }
    if (p.parameter == FitParameter::coupling &&
        problem.model.parameterization != CouplingParameterization::coupling) {
      throw DomainError("C is free but the coil-distance parameterization is selected");
    }
  }
  for (const auto& d : problem.data) {
    if (!(d.current_A >= 0.0) || !std::isfinite(d.visibility)) {
      throw DomainError("visibility data must have finite values and non-negative currents");
    }
  }
}

inline double parameter_scale(const ParameterSpec& p) {
  switch (p.parameter) {
    case FitParameter::coupling:
    case FitParameter::coil_distance: return std::abs(p.initial) > 0.0 ? std::abs(p.initial) : 1.0;
    default: return 1.0;
  }
}

/// Weighted residual function over scaled parameters.
class VisibilityObjective {
 public:
  explicit VisibilityObjective(const FitProblem& problem) : problem_(problem) {
    for (const auto& d : problem.data) currents_.push_back(d.current_A);
    uniform_ = !std::all_of(problem.data.begin(), problem.data.end(), [](const auto& d) {
      return d.sigma_visibility && *d.sigma_visibility > 0.0;
    });
    for (const auto& d : problem.data) sigma_.push_back(uniform_ ? 1.0 : *d.sigma_visibility);
    for (const auto& p : problem.free) scale_.push_back(parameter_scale(p));
    const auto& m = problem.model;
    if (m.mode == EnergyModel::breit_rabi &&
        m.parameterization == CouplingParameterization::coupling && m.geometry) {
      geometry_coupling_ = reduce_to_coupling(m.geometry->coil, m.geometry->geometry).value;
    }
  }

  VisibilityModelConfig config_at(const Eigen::VectorXd& x) const {
    VisibilityModelConfig cfg = problem_.model;
    for (std::size_t j = 0; j < problem_.free.size(); ++j) {
      set_parameter(cfg, problem_.free[j].parameter, x[static_cast<Eigen::Index>(j)] * scale_[j]);
    }
    return cfg;
  }

  std::vector<double> model(const Eigen::VectorXd& x) const {
    const auto points = evaluate_model(config_at(x), currents_, problem_.curve_options,
                                       geometry_coupling_);
    std::vector<double> v;
    v.reserve(points.size());
    for (const auto& p : points) v.push_back(p.visibility);
    return v;
  }

  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const {
    const auto v = model(x);
    Eigen::VectorXd r(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      r[static_cast<Eigen::Index>(i)] = (v[i] - problem_.data[i].visibility) / sigma_[i];
    }
    return r;
  }

  const std::vector<double>& scale() const { return scale_; }
  bool uniform_weights() const { return uniform_; }

 private:
  const FitProblem& problem_;
  std::vector<double> currents_;
  std::vector<double> sigma_;
  std::vector<double> scale_;
  bool uniform_ = true;
  std::optional<double> geometry_coupling_;
};

inline Eigen::VectorXd scaled_bounds(const FitProblem& problem, const std::vector<double>& scale,
                                     bool upper) {
  Eigen::VectorXd b(static_cast<Eigen::Index>(problem.free.size()));
  for (std::size_t j = 0; j < problem.free.size(); ++j) {
    const auto& p = problem.free[j];
    const double lo = std::min(p.lower / scale[j], p.upper / scale[j]);
    const double hi = std::max(p.lower / scale[j], p.upper / scale[j]);
    b[static_cast<Eigen::Index>(j)] = upper ? hi : lo;
  }
  return b;
}

inline FitResult assemble_result(const FitProblem& problem, const VisibilityObjective& objective,
                                 const LsqResult& lsq) {
  FitResult res;
  const auto& scale = objective.scale();
  const auto n = problem.data.size();
  const auto k = problem.free.size();
  res.chi2 = lsq.chi2;
  res.chi2_reduced = lsq.chi2 / static_cast<double>(n - k);
  res.uniform_weights = objective.uniform_weights();
  res.iterations = lsq.iterations;
  res.evaluations = lsq.evaluations;
  res.last_step_norm = lsq.last_step_norm;
  res.jacobian = lsq.jacobian;
  res.weighted_residuals = lsq.residuals;
  res.fitted_model = objective.config_at(lsq.x);
  res.model_values = objective.model(lsq.x);
  for (std::size_t i = 0; i < n; ++i) {
    res.residuals.push_back(problem.data[i].visibility - res.model_values[i]);
  }
  const Eigen::MatrixXd cov = lsq_covariance(lsq.jacobian);
  const double variance_scale = res.uniform_weights ? res.chi2_reduced : 1.0;
  for (std::size_t j = 0; j < k; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const auto& p = problem.free[j];
    ParameterEstimate e;
    e.parameter = p.parameter;
    e.value = lsq.x[jj] * scale[j];
    e.standard_error = std::sqrt(cov(jj, jj) * variance_scale) * scale[j];
    const double x = lsq.x[jj];
    const double tol = 1e-9 * (1.0 + std::abs(x));
    e.at_bound = std::abs(x - p.lower / scale[j]) <= tol || std::abs(x - p.upper / scale[j]) <= tol;
    res.estimates.push_back(e);
  }
  return res;
}

}  // namespace detail

/// Multi-start bounded Levenberg-Marquardt fit. The start with the lowest
/// chi^2 wins; ties go to the lowest start index.
inline FitResult fit_visibility(const FitProblem& problem) {
  detail::validate_problem(problem);
  const detail::VisibilityObjective objective(problem);
  const auto& scale = objective.scale();
  const Eigen::VectorXd lo = detail::scaled_bounds(problem, scale, false);
  const Eigen::VectorXd hi = detail::scaled_bounds(problem, scale, true);

  Eigen::VectorXd base(static_cast<Eigen::Index>(problem.free.size()));
  std::optional<Eigen::Index> speed_index;
  for (std::size_t j = 0; j < problem.free.size(); ++j) {
    base[static_cast<Eigen::Index>(j)] = problem.free[j].initial / scale[j];
    if (problem.free[j].parameter == FitParameter::speed_ratio) {
      speed_index = static_cast<Eigen::Index>(j);
    }
  }
  std::vector<Eigen::VectorXd> starts;
  if (speed_index && !problem.start_speed_ratios.empty()) {
    for (double s : problem.start_speed_ratios) {
      Eigen::VectorXd x = base;
      x[*speed_index] = std::clamp(s, lo[*speed_index], hi[*speed_index]);
      starts.push_back(x);
    }
  } else {
    starts.push_back(base);
  }

  struct Outcome {
    std::optional<LsqResult> lsq;
    std::string error;
  };
  auto run = [&](const Eigen::VectorXd& x0) {
    Outcome o;
    try {
      o.lsq = levenberg_marquardt(objective, x0, lo, hi, problem.lsq);
    } catch (const std::exception& e) {
      o.error = e.what();
    }
    return o;
  };

  std::vector<Outcome> outcomes;
  if (problem.parallel_starts && starts.size() > 1) {
    std::vector<std::future<Outcome>> futures;
    for (const auto& x0 : starts) futures.push_back(std::async(std::launch::async, run, x0));
    for (auto& f : futures) outcomes.push_back(f.get());
  } else {
    for (const auto& x0 : starts) outcomes.push_back(run(x0));
  }

  std::vector<StartDiagnostics> diagnostics;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    StartDiagnostics d;
    d.index = i;
    d.initial_speed_ratio = speed_index ? starts[i][*speed_index]
                                        : get_parameter(problem.model, FitParameter::speed_ratio);
    if (outcomes[i].lsq) {
      const auto& l = *outcomes[i].lsq;
      d.converged = l.converged;
      d.chi2 = l.chi2;
      d.iterations = l.iterations;
      d.message = l.message;
      if (l.converged && (!best || l.chi2 < outcomes[*best].lsq->chi2)) best = i;
    } else {
      d.message = outcomes[i].error;
    }
    diagnostics.push_back(d);
  }
  if (!best) {
    std::ostringstream msg;
    msg << "visibility fit failed from every start:";
    for (const auto& d : diagnostics) {
      msg << "\n  start " << d.index << " (S_par=" << d.initial_speed_ratio << "): " << d.message;
    }
    throw FitError(msg.str());
  }
  FitResult res = detail::assemble_result(problem, objective, *outcomes[*best].lsq);
  res.start_index = *best;
  res.starts = std::move(diagnostics);
  return res;
}

struct ProfilePoint {
  double value = 0.0;
  double chi2 = std::numeric_limits<double>::infinity();
  bool valid = false;
};

/// chi^2 profile of one free parameter; the others are re-optimized from the
/// best fit at every grid value. Failed re-optimizations are marked invalid.
inline std::vector<ProfilePoint> profile_uncertainty(const FitProblem& problem,
                                                     const FitResult& result,
                                                     FitParameter parameter,
                                                     std::span<const double> grid) {
  detail::validate_problem(problem);
  const auto it = std::find_if(problem.free.begin(), problem.free.end(),
                               [&](const auto& p) { return p.parameter == parameter; });
  if (it == problem.free.end()) {
    throw DomainError(std::string("profile: ") + to_string(parameter) + " is not a free parameter");
  }

  std::vector<ProfilePoint> out;
  out.reserve(grid.size());
  for (double value : grid) {
    ProfilePoint pt;
    pt.value = value;
    try {
      FitProblem sub = problem;
      sub.model = result.fitted_model;
      set_parameter(sub.model, parameter, value);
      sub.free.clear();
      for (const auto& p : problem.free) {
        if (p.parameter == parameter) continue;
        ParameterSpec q = p;
        q.initial = std::clamp(result.estimate(p.parameter).value, p.lower, p.upper);
        sub.free.push_back(q);
      }
      if (sub.free.empty()) {
        const detail::VisibilityObjective objective(problem);
        Eigen::VectorXd x(1);
        x[0] = value / objective.scale()[0];
        pt.chi2 = objective(x).squaredNorm();
        pt.valid = std::isfinite(pt.chi2);
      } else {
        const detail::VisibilityObjective objective(sub);
        const auto& scale = objective.scale();
        Eigen::VectorXd x0(static_cast<Eigen::Index>(sub.free.size()));
        for (std::size_t j = 0; j < sub.free.size(); ++j) {
          x0[static_cast<Eigen::Index>(j)] = sub.free[j].initial / scale[j];
        }
        const auto lsq = levenberg_marquardt(objective, x0, detail::scaled_bounds(sub, scale, false),
                                             detail::scaled_bounds(sub, scale, true), sub.lsq);
        pt.chi2 = lsq.chi2;
        pt.valid = lsq.converged && std::isfinite(lsq.chi2);
      }
    } catch (const std::exception&) {
      pt.valid = false;
    }
    out.push_back(pt);
  }
  return out;
}

}  // namespace lidephase

#endif  // LIDEPHASE_PARAM_FIT_HPP
