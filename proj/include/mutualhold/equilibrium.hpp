#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "mutualhold/measure.hpp"
#include "mutualhold/model.hpp"
#include "mutualhold/threshold.hpp"

namespace mutualhold {

/// Drift of the held/unheld split: (b+c)^+/2 - (b+c)^-. Continuous across the
/// interface b + c = 0.
inline double equilibrium_drift(double b, double c) {
  const double v = b + c;
  return v >= 0.0 ? 0.5 * v : v;
}

/// Volatility sigma/2 on the held region, sigma elsewhere. The tie b + c = 0
/// takes the held branch (non-strict inequality).
inline double equilibrium_vol(double b, double c, double sigma) {
  return b + c >= 0.0 ? 0.5 * sigma : sigma;
}

/// Bang-bang holding indicator: hold exactly when b + c >= 0 (equivalently,
/// when the equilibrium drift is non-negative).
inline int optimal_holding(double b, double c) { return b + c >= 0.0 ? 1 : 0; }

/// Per-atom equilibrium maps at a fixed (t, measure): threshold, provisions
/// drift b, drift B, volatility Sigma, and holding indicator.
struct EquilibriumFields {
  double c = 0.0;
  std::vector<double> b_vals;
  std::vector<double> B_vals;
  std::vector<double> Sigma_vals;
  std::vector<std::uint8_t> holding;
};

inline EquilibriumFields compute_fields(const CoefficientModel& model, double t,
                                        const Measure1D& m, double tol = 1e-12) {
  model.validate();
  m.validate();
  const std::size_t n = m.atoms.size();
  EquilibriumFields fields;
  fields.b_vals.resize(n);
  fields.B_vals.resize(n);
  fields.Sigma_vals.resize(n);
  fields.holding.resize(n);
  for (std::size_t j = 0; j < n; ++j) fields.b_vals[j] = eval_b(model, t, m.atoms[j], m);
  fields.c = solve_c_empirical(fields.b_vals, m.weights, tol).c;
  for (std::size_t j = 0; j < n; ++j) {
    const double b = fields.b_vals[j];
    const double sigma = eval_sigma(model, t, m.atoms[j], m);
    fields.B_vals[j] = equilibrium_drift(b, fields.c);
    fields.Sigma_vals[j] = equilibrium_vol(b, fields.c, sigma);
    fields.holding[j] = static_cast<std::uint8_t>(optimal_holding(b, fields.c));
  }
  return fields;
}

/// Residuals of the two identities the equilibrium maps must satisfy:
///   r1 = |sum_j w_j B_j^+ - c|
///   r2 = max_j |B_j (1 + holding_j) - (b_j + sum_k w_k B_k^+)|
struct ConsistencyResiduals {
  double r1 = 0.0;
  double r2 = 0.0;
};

inline ConsistencyResiduals consistency_residuals(const EquilibriumFields& fields,
                                                  std::span<const double> weights) {
  const std::size_t n = fields.B_vals.size();
  if (weights.size() != n)
    throw std::invalid_argument("consistency_residuals: weights length mismatch");
  const double held_drift_mass = pairwise_sum(
      n, [&](std::size_t j) { return fields.B_vals[j] > 0.0 ? weights[j] * fields.B_vals[j] : 0.0; });
  ConsistencyResiduals out;
  out.r1 = std::abs(held_drift_mass - fields.c);
  for (std::size_t j = 0; j < n; ++j) {
    const double lhs = fields.B_vals[j] * (1.0 + static_cast<double>(fields.holding[j]));
    const double rhs = fields.b_vals[j] + held_drift_mass;
    out.r2 = std::max(out.r2, std::abs(lhs - rhs));
  }
  return out;
}

}  // namespace mutualhold
