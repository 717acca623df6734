#ifndef LIDEPHASE_FRINGE_ANALYSIS_HPP
#define LIDEPHASE_FRINGE_ANALYSIS_HPP

// Raw fringe scans (counts versus third-mirror position x3): sinusoid fits
// with Poisson weights, burst rejection, drift correction against I = 0
// reference scans, and a seeded scan generator.
//
// Scan model: counts(x3) = dwell * [bg + A (1 + V cos(2 p k_L x3 + phi))].

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lidephase/errors.hpp"
#include "lidephase/least_squares.hpp"
#include "lidephase/visibility_model.hpp"

namespace lidephase {

/// Maps an angle to (-pi, pi].
inline double wrap_phase(double phi) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::remainder(phi, two_pi);
  if (w <= -std::numbers::pi) w += two_pi;
  return w;
}

/// Adds the multiple of 2 pi that brings phi closest to reference.
inline double nearest_branch(double phi, double reference) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  return phi + two_pi * std::round((reference - phi) / two_pi);
}

struct FringeSample {
  double x3_m = 0.0;
  double counts = 0.0;
};

struct FringeScan {
  std::vector<FringeSample> samples;
  double dwell_s = 0.1;
  double background_cps = 0.0;
  double current_A = 0.0;
  int order = 1;
  double laser_wavevector = 2.0 * std::numbers::pi / 671e-9;
  double timestamp_s = 0.0;

  double fringe_period() const { return std::numbers::pi / (order * laser_wavevector); }
};

inline void validate(const FringeScan& scan) {
  if (scan.samples.size() < 8) throw DomainError("fringe scan needs at least 8 samples");
  if (!(scan.dwell_s > 0.0)) throw DomainError("fringe scan dwell time must be positive");
  if (!(scan.background_cps >= 0.0)) throw DomainError("background rate must be non-negative");
  if (scan.order < 1) throw DomainError("diffraction order must be a positive integer");
  if (!(scan.laser_wavevector > 0.0)) throw DomainError("laser wavevector must be positive");
  double lo = scan.samples.front().x3_m;
  double hi = lo;
  for (const auto& s : scan.samples) {
    if (!(s.counts >= 0.0) || !std::isfinite(s.counts)) {
      throw DomainError("fringe counts must be finite and non-negative");
    }
    lo = std::min(lo, s.x3_m);
    hi = std::max(hi, s.x3_m);
  }
  if (hi - lo < scan.fringe_period() * (1.0 - 1e-9)) {
    throw DomainError("fringe scan must span at least one fringe period");
  }
}

struct FringeFit {
  double mean_level_cps = 0.0;  // A
  double visibility = 0.0;
  double phase_rad = 0.0;
  double background_cps = 0.0;
  double sigma_mean_level = 0.0;
  double sigma_visibility = 0.0;
  double sigma_phase = 0.0;
  double sigma_background = 0.0;
  double chi2_reduced = 0.0;
  bool degenerate = false;
  std::size_t samples_used = 0;
  int iterations = 0;
};

struct FringeFitOptions {
  /// Co-fit the background with a Gaussian prior centred on the measured
  /// value; the scan model alone cannot separate bg from A.
  bool fit_background = false;
  double background_prior_sigma_cps = 1.0;
  LsqOptions lsq{};
};

namespace detail {

inline double fringe_argument(const FringeScan& scan, double x) {
  return 2.0 * scan.order * scan.laser_wavevector * x;
}

inline double poisson_variance(double counts) { return std::max(counts, 1.0); }

}  // namespace detail

inline FringeFit fit_fringe(const FringeScan& scan, const FringeFitOptions& opts = {}) {
  validate(scan);
  const std::size_t n = scan.samples.size();
  const double dwell = scan.dwell_s;
  const double bg = scan.background_cps;

  // Linear start: counts - dwell*bg = dwell*(a0 + a1 cos + a2 sin).
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd target(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = scan.samples[i];
    const double w = 1.0 / std::sqrt(detail::poisson_variance(s.counts));
    const double arg = detail::fringe_argument(scan, s.x3_m);
    design(i, 0) = w * dwell;
    design(i, 1) = w * dwell * std::cos(arg);
    design(i, 2) = w * dwell * std::sin(arg);
    target[i] = w * (s.counts - dwell * bg);
  }
  const Eigen::Vector3d a = design.colPivHouseholderQr().solve(target);
  if (!(a[0] > 0.0)) throw FitError("fringe fit: no signal above background");
  const double A0 = a[0];
  const double V0 = std::min(std::hypot(a[1], a[2]) / A0, 1.0);
  const double phi0 = std::atan2(-a[2], a[1]);

  // Nonlinear polish in scaled parameters (A/A0, V, phi[, bg/A0]).
  const bool with_bg = opts.fit_background;
  const Eigen::Index np = with_bg ? 4 : 3;
  constexpr double inf = std::numeric_limits<double>::infinity();
  Eigen::VectorXd x0(np), lo(np), hi(np);
  x0.head<3>() << 1.0, V0, phi0;
  lo.head<3>() << 0.0, 0.0, -inf;
  hi.head<3>() << inf, 1.0, inf;
  if (with_bg) {
    x0[3] = bg / A0;
    lo[3] = 0.0;
    hi[3] = inf;
  }

  auto residuals = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd r(with_bg ? n + 1 : n);
    const double A = x[0] * A0;
    const double b = with_bg ? x[3] * A0 : bg;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = scan.samples[i];
      const double model =
          dwell * (b + A * (1.0 + x[1] * std::cos(detail::fringe_argument(scan, s.x3_m) + x[2])));
      r[i] = (model - s.counts) / std::sqrt(detail::poisson_variance(s.counts));
    }
    if (with_bg) r[n] = (b - bg) / opts.background_prior_sigma_cps;
    return r;
  };

  const auto lsq = levenberg_marquardt(residuals, x0, lo, hi, opts.lsq);
  if (!lsq.converged) throw FitError("fringe fit did not converge: " + lsq.message);

  const Eigen::MatrixXd cov = lsq_covariance(lsq.jacobian);
  FringeFit fit;
  fit.mean_level_cps = lsq.x[0] * A0;
  fit.visibility = lsq.x[1];
  fit.phase_rad = wrap_phase(lsq.x[2]);
  fit.background_cps = with_bg ? lsq.x[3] * A0 : bg;
  fit.sigma_mean_level = std::sqrt(cov(0, 0)) * A0;
  fit.sigma_visibility = std::sqrt(cov(1, 1));
  fit.sigma_phase = std::sqrt(cov(2, 2));
  fit.sigma_background = with_bg ? std::sqrt(cov(3, 3)) * A0 : 0.0;
  const double dof = static_cast<double>(n) - 3.0;
  fit.chi2_reduced = lsq.chi2 / dof;
  fit.degenerate = fit.visibility >= 1.0 - 1e-9 || fit.visibility <= 1e-9;
  fit.samples_used = n;
  fit.iterations = lsq.iterations;
  return fit;
}

/// Expected counts of a sample under a fitted model.
inline double fringe_model_counts(const FringeScan& scan, const FringeFit& fit, double x3) {
  return scan.dwell_s *
         (fit.background_cps +
          fit.mean_level_cps *
              (1.0 + fit.visibility * std::cos(detail::fringe_argument(scan, x3) + fit.phase_rad)));
}

struct OutlierOptions {
  double k_sigma = 5.0;
  double max_fraction = 0.10;
};

struct OutlierResult {
  FringeScan scan;                    // cleaned
  std::vector<std::size_t> removed;   // indices into the input scan, ascending
};

/// Iteratively refits and drops the worst sample while its Poisson-normalized
/// residual exceeds k_sigma.
inline OutlierResult reject_outliers(const FringeScan& scan, const OutlierOptions& opts = {}) {
  if (scan.samples.size() < 12) throw DomainError("outlier rejection needs at least 12 samples");
  validate(scan);
  const auto limit = static_cast<std::size_t>(std::floor(opts.max_fraction * scan.samples.size()));

  std::vector<std::size_t> kept(scan.samples.size());
  for (std::size_t i = 0; i < kept.size(); ++i) kept[i] = i;
  std::vector<std::size_t> removed;

  auto subset = [&] {
    FringeScan s = scan;
    s.samples.clear();
    for (std::size_t i : kept) s.samples.push_back(scan.samples[i]);
    return s;
  };

  while (true) {
    const FringeScan current = subset();
    const FringeFit fit = fit_fringe(current);
    double worst = 0.0;
    std::size_t worst_pos = 0;
    for (std::size_t j = 0; j < current.samples.size(); ++j) {
      const auto& s = current.samples[j];
      const double expected = fringe_model_counts(current, fit, s.x3_m);
      const double z = std::abs(s.counts - expected) / std::sqrt(std::max(expected, 1.0));
      if (z > worst) {
        worst = z;
        worst_pos = j;
      }
    }
    if (worst <= opts.k_sigma) break;
    removed.push_back(kept[worst_pos]);
    kept.erase(kept.begin() + static_cast<std::ptrdiff_t>(worst_pos));
    if (removed.size() > limit) {
      throw DataQualityError("outlier rejection would remove more than " +
                             std::to_string(static_cast<int>(opts.max_fraction * 100)) +
                             "% of the samples");
    }
  }
  std::sort(removed.begin(), removed.end());
  return {subset(), removed};
}

/// A fitted scan with its acquisition time and coil current.
struct TimedFit {
  FringeFit fit;
  double current_A = 0.0;
  double timestamp_s = 0.0;
};

struct RelativeSeriesOptions {
  bool allow_extrapolation = false;
};

namespace detail {

inline void require_monotone(const std::vector<TimedFit>& fits, const char* what) {
  for (std::size_t i = 1; i < fits.size(); ++i) {
    if (fits[i].timestamp_s < fits[i - 1].timestamp_s) {
      throw DataQualityError(std::string(what) + " timestamps are not monotone");
    }
  }
}

}  // namespace detail

/// V_r = V / V_ref(t) and dphi = phi - phi_ref(t), with the reference linearly
/// interpolated in time between the bracketing I = 0 scans. Phases are
/// continued onto the branch nearest the previous point of the series.
inline std::vector<VisibilityPoint> relative_series(const std::vector<TimedFit>& scans,
                                                    const std::vector<TimedFit>& references,
                                                    const RelativeSeriesOptions& opts = {}) {
  if (references.empty()) throw DataQualityError("relative series needs at least one reference");
  detail::require_monotone(scans, "scan");
  detail::require_monotone(references, "reference");

  std::vector<VisibilityPoint> out;
  out.reserve(scans.size());
  std::optional<double> previous_phase;
  for (const auto& scan : scans) {
    const double t = scan.timestamp_s;
    auto after = std::lower_bound(
        references.begin(), references.end(), t,
        [](const TimedFit& r, double time) { return r.timestamp_s < time; });
    std::size_t ia, ib;
    if (after != references.end() && after->timestamp_s == t) {
      ia = ib = static_cast<std::size_t>(after - references.begin());
    } else if (after == references.begin() || after == references.end()) {
      if (!opts.allow_extrapolation) {
        throw DataQualityError("scan at t=" + std::to_string(t) +
                               " s lies outside the reference time bracket");
      }
      if (references.size() == 1) {
        ia = ib = 0;
      } else if (after == references.begin()) {
        ia = 0;
        ib = 1;
      } else {
        ia = references.size() - 2;
        ib = references.size() - 1;
      }
    } else {
      ib = static_cast<std::size_t>(after - references.begin());
      ia = ib - 1;
    }

    const auto& ra = references[ia].fit;
    const auto& rb = references[ib].fit;
    const double ta = references[ia].timestamp_s;
    const double tb = references[ib].timestamp_s;
    const double w = tb == ta ? 0.0 : (t - ta) / (tb - ta);

    const double v_ref = ra.visibility + w * (rb.visibility - ra.visibility);
    const double phi_ref = ra.phase_rad + w * wrap_phase(rb.phase_rad - ra.phase_rad);
    const double sv_ref = std::hypot((1.0 - w) * ra.sigma_visibility, w * rb.sigma_visibility);
    const double sp_ref = std::hypot((1.0 - w) * ra.sigma_phase, w * rb.sigma_phase);
    if (!(v_ref > 0.0)) throw DataQualityError("reference visibility is zero");

    const auto& f = scan.fit;
    VisibilityPoint p;
    p.current_A = scan.current_A;
    p.visibility = f.visibility / v_ref;
    const double rel_v = f.visibility > 0.0 ? f.sigma_visibility / f.visibility : 0.0;
    p.sigma_visibility = f.visibility > 0.0
                             ? p.visibility * std::hypot(rel_v, sv_ref / v_ref)
                             : f.sigma_visibility / v_ref;
    double dphi = wrap_phase(f.phase_rad - phi_ref);
    if (previous_phase) dphi = nearest_branch(dphi, *previous_phase);
    previous_phase = dphi;
    p.phase_rad = dphi;
    p.sigma_phase = std::hypot(f.sigma_phase, sp_ref);
    out.push_back(p);
  }
  return out;
}

/// Fits every scan (after optional outlier rejection) and forms the relative series.
inline std::vector<VisibilityPoint> relative_series(const std::vector<FringeScan>& scans,
                                                    const std::vector<FringeScan>& references,
                                                    const RelativeSeriesOptions& opts = {}) {
  auto fit_all = [](const std::vector<FringeScan>& in) {
    std::vector<TimedFit> out;
    out.reserve(in.size());
    for (const auto& s : in) out.push_back({fit_fringe(s), s.current_A, s.timestamp_s});
    return out;
  };
  return relative_series(fit_all(scans), fit_all(references), opts);
}

struct ScanSynthesis {
  double mean_level_cps = 5000.0;
  double visibility = 0.75;
  double phase_rad = 0.0;
  double background_cps = 0.0;
  double dwell_s = 0.1;
  double x_start_m = 0.0;
  double x_step_m = 10e-9;
  int n_points = 50;
  int order = 1;
  double laser_wavevector = 2.0 * std::numbers::pi / 671e-9;
  double current_A = 0.0;
  double timestamp_s = 0.0;
  bool poisson_noise = true;
};

/// Seeded scan; without noise the counts are the exact expectations.
inline FringeScan synthesize_scan(const ScanSynthesis& truth, std::uint64_t seed) {
  if (!(truth.visibility >= 0.0 && truth.visibility <= 1.0)) {
    throw DomainError("synthetic visibility must lie in [0, 1]");
  }
  if (truth.n_points < 1) throw DomainError("synthetic scan needs at least one point");
  if (!(truth.dwell_s > 0.0)) throw DomainError("dwell time must be positive");
  FringeScan scan;
  scan.dwell_s = truth.dwell_s;
  scan.background_cps = truth.background_cps;
  scan.current_A = truth.current_A;
  scan.order = truth.order;
  scan.laser_wavevector = truth.laser_wavevector;
  scan.timestamp_s = truth.timestamp_s;
  std::mt19937_64 rng(seed);
  for (int i = 0; i < truth.n_points; ++i) {
    const double x = truth.x_start_m + i * truth.x_step_m;
    const double arg = 2.0 * truth.order * truth.laser_wavevector * x + truth.phase_rad;
    const double mean =
        truth.dwell_s *
        (truth.background_cps + truth.mean_level_cps * (1.0 + truth.visibility * std::cos(arg)));
    double counts = mean;
    if (truth.poisson_noise && mean > 0.0) {
      std::poisson_distribution<std::int64_t> poisson(mean);
      counts = static_cast<double>(poisson(rng));
    }
    scan.samples.push_back({x, counts});
  }
  return scan;
}

}  // namespace lidephase

#endif  // LIDEPHASE_FRINGE_ANALYSIS_HPP
