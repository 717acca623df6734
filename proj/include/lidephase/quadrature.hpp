#ifndef LIDEPHASE_QUADRATURE_HPP
#define LIDEPHASE_QUADRATURE_HPP

// Globally adaptive Gauss-Kronrod (10/21 point) integration for real or
// complex integrands. The interval with the largest error estimate is
// bisected until  error <= max(abs_tol, rel_tol * |I|).

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <initializer_list>
#include <queue>
#include <string>
#include <type_traits>
#include <vector>

#include "lidephase/errors.hpp"

namespace lidephase {

struct QuadratureOptions {
  double rel_tol = 1e-8;
  double abs_tol = 0.0;
  int max_intervals = 4000;
};

template <typename T>
struct QuadratureResult {
  T value{};
  double error = 0.0;
  int evaluations = 0;
  int intervals = 0;
};

namespace detail {

// QUADPACK qk21 nodes and weights.
inline constexpr std::array<double, 11> kKronrodNodes = {
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
    0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
    0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
    0.294392862701460198131126603103866, 0.148874338981631210884826001129720,
    0.000000000000000000000000000000000};

inline constexpr std::array<double, 5> kGaussWeights = {
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
    0.295524224714752870173892994651338};

inline constexpr std::array<double, 11> kKronrodWeights = {
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
    0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
    0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077958109831074, 0.134709217311473325928054001771707,
    0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
    0.149445554002916905664936468389821};

template <typename T>
struct Panel {
  double a;
  double b;
  T value;
  double error;
  bool operator<(const Panel& other) const { return error < other.error; }
};

template <typename T, typename F>
Panel<T> gauss_kronrod_21(F& f, double a, double b) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const T fc = f(center);
  T kronrod = fc * kKronrodWeights[10];
  T gauss{};
  for (int j = 0; j < 10; ++j) {
    const double dx = half * kKronrodNodes[j];
    const T sum = f(center - dx) + f(center + dx);
    kronrod += sum * kKronrodWeights[j];
    if (j % 2 == 1) gauss += sum * kGaussWeights[j / 2];
  }
  kronrod *= half;
  gauss *= half;
  return {a, b, kronrod, std::abs(kronrod - gauss)};
}

}  // namespace detail

/// Integrates f over consecutive panels [breaks[0], breaks[1]], ...
template <typename F>
auto integrate_adaptive(F&& f, const std::vector<double>& breaks,
                        const QuadratureOptions& opts = {})
    -> QuadratureResult<std::decay_t<decltype(f(0.0))>> {
  using T = std::decay_t<decltype(f(0.0))>;
  if (breaks.size() < 2) throw DomainError("integrate_adaptive: need at least two break points");

  std::priority_queue<detail::Panel<T>> queue;
  T total{};
  double total_error = 0.0;
  int evaluations = 0;
  for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
    if (!(breaks[k] <= breaks[k + 1])) {
      throw DomainError("integrate_adaptive: break points must be ascending");
    }
    if (breaks[k] == breaks[k + 1]) continue;
    auto panel = detail::gauss_kronrod_21<T>(f, breaks[k], breaks[k + 1]);
    evaluations += 21;
    total += panel.value;
    total_error += panel.error;
    queue.push(panel);
  }

  auto tolerance = [&] { return std::max(opts.abs_tol, opts.rel_tol * std::abs(total)); };
  while (!queue.empty() && total_error > tolerance()) {
    if (static_cast<int>(queue.size()) >= opts.max_intervals) {
      throw NumericalError("adaptive quadrature did not converge: error " +
                           std::to_string(total_error) + " after " +
                           std::to_string(queue.size()) + " intervals");
    }
    const auto worst = queue.top();
    queue.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b)) {
      throw NumericalError("adaptive quadrature: interval collapsed below machine resolution");
    }
    auto left = detail::gauss_kronrod_21<T>(f, worst.a, mid);
    auto right = detail::gauss_kronrod_21<T>(f, mid, worst.b);
    evaluations += 42;
    total += (left.value + right.value) - worst.value;
    total_error += (left.error + right.error) - worst.error;
    queue.push(left);
    queue.push(right);
  }

  // Re-sum to avoid drift from the running updates.
  T sum{};
  double err = 0.0;
  const int intervals = static_cast<int>(queue.size());
  std::vector<detail::Panel<T>> panels;
  panels.reserve(queue.size());
  while (!queue.empty()) {
    panels.push_back(queue.top());
    queue.pop();
  }
  std::sort(panels.begin(), panels.end(),
            [](const auto& l, const auto& r) { return l.a < r.a; });
  for (const auto& p : panels) {
    sum += p.value;
    err += p.error;
  }
  return {sum, err, evaluations, intervals};
}

template <typename F>
auto integrate_adaptive(F&& f, double a, double b, const QuadratureOptions& opts = {}) {
  return integrate_adaptive(std::forward<F>(f), std::vector<double>{a, b}, opts);
}

}  // namespace lidephase

#endif  // LIDEPHASE_QUADRATURE_HPP
