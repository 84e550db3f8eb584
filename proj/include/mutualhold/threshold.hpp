#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "mutualhold/measure.hpp"
#include "mutualhold/numerics.hpp"

namespace mutualhold {

enum class ThresholdMethod { exact_piecewise, bisection, newton_safeguarded };

inline const char* to_string(ThresholdMethod m) {
  switch (m) {
    case ThresholdMethod::exact_piecewise: return "exact_piecewise";
    case ThresholdMethod::bisection: return "bisection";
    case ThresholdMethod::newton_safeguarded: return "newton_safeguarded";
  }
  return "unknown";
}

/// Root of F(c) = c - (1/2) sum_j w_j (c + b_j)^+ over c >= 0, with the
/// achieved residual F(c) and the work spent finding it.
struct ThresholdResult {
  double c = 0.0;
  double residual = 0.0;
  int iterations = 0;
  ThresholdMethod method = ThresholdMethod::exact_piecewise;
};

namespace detail {

inline void check_weights(std::span<const double> b_values, std::span<const double> weights) {
  if (b_values.empty() || b_values.size() != weights.size())
    throw std::invalid_argument("threshold: b_values/weights must be non-empty and equal length");
  for (double b : b_values)
    if (!std::isfinite(b)) throw std::invalid_argument("threshold: non-finite drift value");
  CompensatedSum total;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0)
      throw std::invalid_argument("threshold: weights must be finite and non-negative");
    total.add(w);
  }
  if (std::abs(total.value() - 1.0) > 1e-9)
    throw std::invalid_argument("threshold: weights must sum to 1");
}

}  // namespace detail

/// F(c) evaluated with a compensated sum; the fixed-point residual.
inline double threshold_residual(double c, std::span<const double> b_values,
                                 std::span<const double> weights) {
  CompensatedSum s;
  for (std::size_t j = 0; j < b_values.size(); ++j) {
    const double v = c + b_values[j];
    if (v > 0.0) s.add(weights[j] * v);
  }
  return c - 0.5 * s.value();
}

/// Upper bound 2 sum_j w_j b_j^+ for the root; doubles as a bisection bracket.
inline double c_upper_bound(std::span<const double> b_values, std::span<const double> weights) {
  detail::check_weights(b_values, weights);
  CompensatedSum s;
  for (std::size_t j = 0; j < b_values.size(); ++j)
    if (b_values[j] > 0.0) s.add(weights[j] * b_values[j]);
  return 2.0 * s.value();
}

/// Solves F(c) = 0 for an atomic measure.
///
/// Default method walks the piecewise-linear structure of F: with atoms sorted
/// by decreasing drift, the active set {j : c + b_j >= 0} is a prefix, and on
/// each piece F is linear with slope 1 - W/2 in [1/2, 1]. The piece whose
/// closed-form root lies inside it yields the solution at rounding accuracy.
/// A bisection on [0, c_upper_bound] is available as a safeguard.
inline ThresholdResult solve_c_empirical(std::span<const double> b_values,
                                         std::span<const double> weights, double tol = 1e-12,
                                         ThresholdMethod method = ThresholdMethod::exact_piecewise) {
  detail::check_weights(b_values, weights);
  if (!(tol > 0.0)) throw std::invalid_argument("threshold: tol must be positive");
  if (method == ThresholdMethod::newton_safeguarded)
    throw std::invalid_argument("threshold: newton method applies to the Gaussian solver");

  const std::size_t n = b_values.size();

  if (method == ThresholdMethod::bisection) {
    double lo = 0.0;
    double hi = c_upper_bound(b_values, weights);
    ThresholdResult out;
    out.method = ThresholdMethod::bisection;
    if (hi <= 0.0) {
      out.c = 0.0;
      out.residual = threshold_residual(0.0, b_values, weights);
      return out;
    }
    // F(lo) <= 0 <= F(hi); slope >= 1/2 makes |F| <= interval width.
    int it = 0;
    while (hi - lo > std::min(tol, 1e-15 * std::max(1.0, hi)) && it < 200) {
      const double mid = 0.5 * (lo + hi);
      (threshold_residual(mid, b_values, weights) < 0.0 ? lo : hi) = mid;
      ++it;
    }
    out.c = 0.5 * (lo + hi);
    out.iterations = it;
    out.residual = threshold_residual(out.c, b_values, weights);
    return out;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return b_values[a] > b_values[b]; });

  ThresholdResult out;
  out.method = ThresholdMethod::exact_piecewise;

  CompensatedSum active_weight;   // W(c) over the active prefix
  CompensatedSum active_drift;    // sum w_j b_j over the active prefix
  std::size_t k = 0;
  while (k < n && b_values[order[k]] >= 0.0) {
    active_weight.add(weights[order[k]]);
    active_drift.add(weights[order[k]] * b_values[order[k]]);
    ++k;
  }

  // Pieces left of the root have F < 0 up to their right edge, so their linear
  // root lands beyond piece_hi; the first piece whose candidate stays inside
  // carries the solution.
  for (;;) {
    ++out.iterations;
    const double piece_hi =
        (k < n) ? -b_values[order[k]] : std::numeric_limits<double>::infinity();
    const double denom = 2.0 - active_weight.value();
    const double candidate = active_drift.value() / denom;  // root of the linear piece
    if (candidate <= piece_hi) {
      out.c = std::max(candidate, 0.0);
      out.residual = threshold_residual(out.c, b_values, weights);
      if (std::abs(out.residual) > std::max(tol, 64.0 * std::numeric_limits<double>::epsilon() *
                                                     std::max(1.0, out.c))) {
        return solve_c_empirical(b_values, weights, tol, ThresholdMethod::bisection);
      }
      return out;
    }
    if (k >= n) {
      // Unreachable for valid inputs (F increases with F(0) <= 0); bisection
      // keeps the contract if rounding ever lands here.
      return solve_c_empirical(b_values, weights, tol, ThresholdMethod::bisection);
    }
    // Activate every atom tied at this breakpoint.
    const double pivot = b_values[order[k]];
    while (k < n && b_values[order[k]] == pivot) {
      active_weight.add(weights[order[k]]);
      active_drift.add(weights[order[k]] * b_values[order[k]]);
      ++k;
    }
  }
}

/// Specialization of the fixed point to a Gaussian initial law with
/// mean-reverting drift theta*(mbar - x): solves
///   H(c) = c - (1/2) theta mu_var f0(c/theta + mbar)
///            - (1/2) (c - theta (mu_mean - mbar)) F0(c/theta + mbar) = 0,
/// with f0, F0 the pdf/cdf of N(mu_mean, mu_var). Safeguarded Newton using
/// H'(c) = 1 - F0(c/theta + mbar)/2, bracketed by [0, 2 E[b(X0)^+]].
inline ThresholdResult solve_c_gaussian_ou(double theta, double mbar, double mu_mean,
                                           double mu_var, double tol = 1e-12) {
  if (!(theta > 0.0) || !(mu_var > 0.0) || !std::isfinite(mbar) || !std::isfinite(mu_mean))
    throw std::invalid_argument("solve_c_gaussian_ou: invalid parameters");
  if (!(tol > 0.0)) throw std::invalid_argument("solve_c_gaussian_ou: tol must be positive");

  const GaussianSpec initial{mu_mean, mu_var};
  const auto H = [&](double x) {
    const auto [pdf, cdf] = gaussian_pdf_cdf(x / theta + mbar, initial);
    return x - 0.5 * theta * mu_var * pdf - 0.5 * (x - theta * (mu_mean - mbar)) * cdf;
  };
  const auto Hprime = [&](double x) {
    return 1.0 - 0.5 * gaussian_pdf_cdf(x / theta + mbar, initial).cdf;
  };

  ThresholdResult out;
  out.method = ThresholdMethod::newton_safeguarded;

  // 2 E[b(X0)^+] in closed form; b(X0) ~ N(theta (mbar - mu_mean), theta^2 mu_var).
  const double drift_sd = theta * std::sqrt(mu_var);
  double hi = 2.0 * expected_positive_part(theta * (mbar - mu_mean), drift_sd);
  if (!(hi > 0.0)) {
    out.c = 0.0;
    out.residual = H(0.0);
    return out;
  }
  double lo = 0.0;
  for (int expand = 0; H(hi) < 0.0; ++expand) {
    if (expand >= 4) throw numeric_error("solve_c_gaussian_ou: bracket failure");
    hi *= 2.0;
  }

  double x = 0.5 * hi;
  for (int it = 0; it < 100; ++it) {
    ++out.iterations;
    const double h = H(x);
    out.residual = h;
    if (std::abs(h) <= tol) {
      out.c = x;
      return out;
    }
    (h < 0.0 ? lo : hi) = x;
    double next = x - h / Hprime(x);
    if (!(next > lo) || !(next < hi)) next = 0.5 * (lo + hi);
    if (next == x) {
      out.c = x;
      return out;  // stalled at rounding accuracy
    }
    x = next;
  }
  out.c = x;
  out.residual = H(x);
  if (std::abs(out.residual) > std::max(tol, 1e-10))
    throw numeric_error("solve_c_gaussian_ou: no convergence");
  return out;
}

}  // namespace mutualhold
