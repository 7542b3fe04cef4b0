#pragma once

// Bessel functions of the first kind J_n(x) for small integer orders and
// Laguerre polynomials L_n(x).

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "micromotion/errors.hpp"

namespace micromotion {

inline constexpr int kMaxBesselOrder = 10;
inline constexpr double kMaxBesselArgument = 50.0;

namespace detail {

// Below this argument the ascending series is used; above it, Miller's
// downward recurrence. At x = 12 the largest series term is ~4e3, so the
// cancellation error stays below 1e-12.
inline constexpr double kBesselSeriesLimit = 12.0;

inline double bessel_j_series(int order, double x) {
  const double half = 0.5 * x;
  double term = 1.0;
  for (int k = 1; k <= order; ++k) term *= half / k;
  double sum = term;
  const double step = -half * half;
  for (int k = 1; k < 200; ++k) {
    term *= step / (static_cast<double>(k) * static_cast<double>(k + order));
    sum += term;
    if (k > half && std::abs(term) < 1e-20) break;
  }
  return sum;
}

// Downward recurrence from an order far above max(order, x), normalised with
// J_0 + 2 * sum_k J_2k = 1.
inline double bessel_j_miller(int order, double x) {
  const int reach = std::max(order, static_cast<int>(x));
  const int start = 2 * ((reach + 30 + static_cast<int>(std::sqrt(40.0 * reach))) / 2);
  constexpr double kRescaleAbove = 1e250;

  double upper = 0.0;    // J_{k+1}
  double current = 1e-30;  // J_k, arbitrary seed
  double result = 0.0;
  double norm = 0.0;
  for (int k = start; k > 0; --k) {
    const double lower = 2.0 * k / x * current - upper;
    upper = current;
    current = lower;
    if (std::abs(current) > kRescaleAbove) {
      current /= kRescaleAbove;
      upper /= kRescaleAbove;
      result /= kRescaleAbove;
      norm /= kRescaleAbove;
    }
    const int index = k - 1;
    if (index == order) result = current;
    if (index > 0 && index % 2 == 0) norm += 2.0 * current;
  }
  norm += current;
  return result / norm;
}

}  // namespace detail

/// J_n(x) for 0 <= n <= 10 and |x| <= 50, absolute error below 1e-10.
inline double bessel_j(int order, double x) {
  if (order < 0 || order > kMaxBesselOrder)
    throw DomainError("bessel_j: order " + std::to_string(order) + " outside [0, 10]");
  if (!std::isfinite(x) || std::abs(x) > kMaxBesselArgument)
    throw DomainError("bessel_j: argument " + std::to_string(x) + " outside [-50, 50]");

  const double ax = std::abs(x);
  double value;
  if (ax == 0.0)
    value = order == 0 ? 1.0 : 0.0;
  else if (ax <= detail::kBesselSeriesLimit)
    value = detail::bessel_j_series(order, ax);
  else
    value = detail::bessel_j_miller(order, ax);

  // J_n(-x) = (-1)^n J_n(x)
  return (x < 0.0 && order % 2 == 1) ? -value : value;
}

/// Laguerre polynomial L_n(x), x >= 0, by the three-term recurrence.
inline double laguerre(int order, double x) {
  if (order < 0 || !(x >= 0.0) || !std::isfinite(x))
    throw DomainError("laguerre: requires order >= 0 and finite x >= 0");
  if (order == 0) return 1.0;
  double previous = 1.0;
  double current = 1.0 - x;
  for (int k = 1; k < order; ++k) {
    const double next = ((2.0 * k + 1.0 - x) * current - k * previous) / (k + 1.0);
    previous = current;
    current = next;
  }
  return current;
}

/// L_0(x) ... L_max_order(x) in one pass of the recurrence.
inline std::vector<double> laguerre_table(int max_order, double x) {
  if (max_order < 0 || !(x >= 0.0) || !std::isfinite(x))
    throw DomainError("laguerre_table: requires max_order >= 0 and finite x >= 0");
  std::vector<double> table(static_cast<std::size_t>(max_order) + 1);
  table[0] = 1.0;
  if (max_order >= 1) table[1] = 1.0 - x;
  for (int k = 1; k < max_order; ++k)
    table[k + 1] = ((2.0 * k + 1.0 - x) * table[k] - k * table[k - 1]) / (k + 1.0);
  return table;
}

}  // namespace micromotion
