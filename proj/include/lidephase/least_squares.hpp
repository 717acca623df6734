#ifndef LIDEPHASE_LEAST_SQUARES_HPP
#define LIDEPHASE_LEAST_SQUARES_HPP

// Box-constrained Levenberg-Marquardt (damped Gauss-Newton) on weighted
// residuals r(x). Steps are clipped onto the bounds; the Jacobian comes from
// forward differences while iterating and from central differences for the
// final polish step and the reported covariance.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <string>
#include <vector>

namespace lidephase {

struct LsqOptions {
  int max_iterations = 200;
  double x_tol = 1e-8;           // relative parameter step
  double g_tol = 1e-10;          // projected gradient, infinity norm
  double fd_relative_step = 1e-6;
  double initial_damping = 1e-3;
  bool central_polish = true;
  double central_relative_step = 1e-5;
};

struct LsqResult {
  Eigen::VectorXd x;
  Eigen::VectorXd residuals;
  Eigen::MatrixXd jacobian;
  double chi2 = 0.0;
  int iterations = 0;
  int evaluations = 0;
  double last_step_norm = 0.0;
  bool converged = false;
  std::string message;
};

namespace detail {

inline Eigen::VectorXd clip(const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                            const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

template <typename Fn>
Eigen::MatrixXd forward_jacobian(Fn& f, const Eigen::VectorXd& x, const Eigen::VectorXd& r,
                                 const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                                 double rel_step, int& evaluations) {
  Eigen::MatrixXd J(r.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    double h = rel_step * (1.0 + std::abs(x[j]));
    if (x[j] + h > hi[j]) h = x[j] - h >= lo[j] ? -h : 0.5 * (lo[j] - x[j]);
    if (h == 0.0) {
      J.col(j).setZero();
      continue;
    }
    Eigen::VectorXd xp = x;
    xp[j] += h;
    const Eigen::VectorXd rp = f(xp);
    ++evaluations;
    J.col(j) = (rp - r) / h;
  }
  return J;
}

template <typename Fn>
Eigen::MatrixXd central_jacobian(Fn& f, const Eigen::VectorXd& x, const Eigen::VectorXd& r,
                                 const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                                 double rel_step, int& evaluations) {
  Eigen::MatrixXd J(r.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = rel_step * (1.0 + std::abs(x[j]));
    if (x[j] - h < lo[j] || x[j] + h > hi[j]) {
      // Against a bound: one-sided, as while iterating.
      Eigen::MatrixXd one = forward_jacobian(f, x, r, lo, hi, rel_step, evaluations);
      J.col(j) = one.col(j);
      continue;
    }
    Eigen::VectorXd xp = x;
    Eigen::VectorXd xm = x;
    xp[j] += h;
    xm[j] -= h;
    const Eigen::VectorXd rp = f(xp);
    const Eigen::VectorXd rm = f(xm);
    evaluations += 2;
    J.col(j) = (rp - rm) / (2.0 * h);
  }
  return J;
}

}  // namespace detail

/// Minimizes |r(x)|^2 subject to lo <= x <= hi. f must return the weighted
/// residual vector; it may throw for inadmissible x, which counts as a
/// rejected step.
template <typename Fn>
LsqResult levenberg_marquardt(Fn&& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& lo,
                              const Eigen::VectorXd& hi, const LsqOptions& opts = {}) {
  LsqResult res;
  res.x = detail::clip(x0, lo, hi);
  res.residuals = f(res.x);
  res.evaluations = 1;
  res.chi2 = res.residuals.squaredNorm();
  if (!std::isfinite(res.chi2)) {
    res.message = "objective not finite at the starting point";
    return res;
  }

  // One undamped Gauss-Newton step with a central-difference Jacobian removes
  // the O(h) bias of the forward differences in the located minimum.
  auto polish = [&] {
    if (!opts.central_polish) return;
    res.jacobian = detail::central_jacobian(f, res.x, res.residuals, lo, hi,
                                            opts.central_relative_step,
                                            res.evaluations);
    const Eigen::MatrixXd& J = res.jacobian;
    const Eigen::VectorXd delta =
        (J.transpose() * J).ldlt().solve(-(J.transpose() * res.residuals));
    if (!delta.allFinite()) return;
    const Eigen::VectorXd trial = detail::clip(res.x + delta, lo, hi);
    try {
      Eigen::VectorXd r_trial = f(trial);
      ++res.evaluations;
      const double chi2_trial = r_trial.squaredNorm();
      if (std::isfinite(chi2_trial) && chi2_trial <= res.chi2) {
        res.x = trial;
        res.residuals = std::move(r_trial);
        res.chi2 = chi2_trial;
        res.jacobian = detail::central_jacobian(f, res.x, res.residuals, lo, hi,
                                                opts.central_relative_step,
                                                res.evaluations);
      }
    } catch (const std::exception&) {
    }
  };

  const Eigen::Index n = res.x.size();
  double damping = opts.initial_damping;
  bool jacobian_current = false;

  for (res.iterations = 0; res.iterations < opts.max_iterations; ++res.iterations) {
    if (!jacobian_current) {
      res.jacobian = detail::forward_jacobian(f, res.x, res.residuals, lo, hi,
                                              opts.fd_relative_step, res.evaluations);
      jacobian_current = true;
    }
    const Eigen::MatrixXd& J = res.jacobian;
    const Eigen::VectorXd g = J.transpose() * res.residuals;

    Eigen::VectorXd projected = g;
    for (Eigen::Index j = 0; j < n; ++j) {
      if ((res.x[j] <= lo[j] && g[j] > 0.0) || (res.x[j] >= hi[j] && g[j] < 0.0)) {
        projected[j] = 0.0;
      }
    }
    if (projected.lpNorm<Eigen::Infinity>() <= opts.g_tol) {
      res.converged = true;
      res.message = "gradient below tolerance";
      polish();
      return res;
    }

    const Eigen::MatrixXd A = J.transpose() * J;
    Eigen::VectorXd scale = A.diagonal();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!(scale[j] > 0.0)) scale[j] = 1.0;
    }

    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd damped = A;
      damped.diagonal() += damping * scale;
      const Eigen::VectorXd delta = damped.ldlt().solve(-g);
      const Eigen::VectorXd trial = detail::clip(res.x + delta, lo, hi);
      const Eigen::VectorXd step = trial - res.x;
      const double step_norm = step.norm();

      if (step_norm <= opts.x_tol * (res.x.norm() + opts.x_tol)) {
        res.last_step_norm = step_norm;
        res.converged = true;
        res.message = "parameter step below tolerance";
        polish();
        return res;
      }

      Eigen::VectorXd r_trial;
      double chi2_trial = std::numeric_limits<double>::infinity();
      try {
        r_trial = f(trial);
        chi2_trial = r_trial.squaredNorm();
      } catch (const std::exception&) {
        chi2_trial = std::numeric_limits<double>::infinity();
      }
      ++res.evaluations;

      if (std::isfinite(chi2_trial) && chi2_trial < res.chi2) {
        res.x = trial;
        res.residuals = std::move(r_trial);
        res.chi2 = chi2_trial;
        res.last_step_norm = step_norm;
        damping = std::max(damping / 3.0, 1e-12);
        jacobian_current = false;
        accepted = true;
        if (step_norm <= opts.x_tol * (res.x.norm() + opts.x_tol)) {
          res.jacobian = detail::forward_jacobian(f, res.x, res.residuals, lo, hi,
                                                  opts.fd_relative_step, res.evaluations);
          res.converged = true;
          res.message = "parameter step below tolerance";
          polish();
          return res;
        }
      } else {
        damping *= 4.0;
        if (damping > 1e16) {
          res.message = "damping overflow: no descent direction found";
          return res;
        }
      }
    }
  }
  res.message = "iteration limit reached";
  return res;
}

/// Parameter covariance (J^T J)^-1. Directions the data do not constrain get
/// infinite variance.
inline Eigen::MatrixXd lsq_covariance(const Eigen::MatrixXd& jacobian) {
  const Eigen::Index n = jacobian.cols();
  const Eigen::MatrixXd A = jacobian.transpose() * jacobian;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A);
  const Eigen::VectorXd& values = eig.eigenvalues();
  const Eigen::MatrixXd& vectors = eig.eigenvectors();
  const double vmax = values.cwiseAbs().maxCoeff();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
  std::vector<bool> unconstrained(n, false);
  for (Eigen::Index k = 0; k < n; ++k) {
    if (!(vmax > 0.0) || values[k] <= 1e-14 * vmax) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (std::abs(vectors(j, k)) > 1e-8) unconstrained[j] = true;
      }
      continue;
    }
    cov += vectors.col(k) * vectors.col(k).transpose() / values[k];
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (unconstrained[j]) cov(j, j) = std::numeric_limits<double>::infinity();
  }
  return cov;
}

}  // namespace lidephase

#endif  // LIDEPHASE_LEAST_SQUARES_HPP
