#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mutualhold/equilibrium.hpp"
#include "mutualhold/measure.hpp"
#include "mutualhold/model.hpp"
#include "mutualhold/numerics.hpp"
#include "mutualhold/rng.hpp"
#include "mutualhold/simulate.hpp"
#include "mutualhold/threshold.hpp"

namespace mutualhold {

/// Cross-holding strategy matrix: entry (i,j) is player i's holding fraction
/// in player j, scaled by 1/N in the dynamics.
struct HoldingMatrix {
  std::size_t n = 0;
  std::vector<double> entries;  // row-major

  double at(std::size_t i, std::size_t j) const { return entries[i * n + j]; }
  double& at(std::size_t i, std::size_t j) { return entries[i * n + j]; }

  void validate() const {
    if (n == 0 || entries.size() != n * n)
      throw std::invalid_argument("HoldingMatrix: entries must be n*n with n >= 1");
    for (double g : entries)
      if (!(g >= 0.0 && g <= 1.0))
        throw std::invalid_argument("HoldingMatrix: entries must lie in [0,1]");
  }
};

enum class CoefficientMethod { linear_solve, closed_form };

/// Drift vector and diffusion matrix of the cross-holding system, with the
/// defining-equation residuals available as a separate check.
struct GameCoefficients {
  std::size_t n = 0;
  std::vector<double> drift;      // length n
  std::vector<double> diffusion;  // row-major n*n
  CoefficientMethod method = CoefficientMethod::linear_solve;

  double vol_at(std::size_t i, std::size_t q) const { return diffusion[i * n + q]; }
};

namespace detail {

/// Dense LU with partial pivoting; the ground-truth linear route for the
/// coefficient systems (they are strictly diagonally dominant).
class DenseLu {
 public:
  DenseLu(std::vector<double> a, std::size_t n) : lu_(std::move(a)), perm_(n), n_(n) {
    for (std::size_t i = 0; i < n_; ++i) perm_[i] = i;
    for (std::size_t col = 0; col < n_; ++col) {
      std::size_t pivot = col;
      double best = std::abs(lu_[perm_[col] * n_ + col]);
      for (std::size_t r = col + 1; r < n_; ++r) {
        const double v = std::abs(lu_[perm_[r] * n_ + col]);
        if (v > best) {
          best = v;
          pivot = r;
        }
      }
      if (!(best > 0.0)) throw numeric_error("DenseLu: singular matrix");
      std::swap(perm_[col], perm_[pivot]);
      const double diag = lu_[perm_[col] * n_ + col];
      for (std::size_t r = col + 1; r < n_; ++r) {
        double& factor = lu_[perm_[r] * n_ + col];
        factor /= diag;
        for (std::size_t c = col + 1; c < n_; ++c)
          lu_[perm_[r] * n_ + c] -= factor * lu_[perm_[col] * n_ + c];
      }
    }
  }

  void solve(std::span<const double> rhs, std::span<double> out) const {
    for (std::size_t i = 0; i < n_; ++i) {
      double v = rhs[perm_[i]];
      for (std::size_t j = 0; j < i; ++j) v -= lu_[perm_[i] * n_ + j] * out[j];
      out[i] = v;
    }
    for (std::size_t ii = n_; ii-- > 0;) {
      double v = out[ii];
      for (std::size_t j = ii + 1; j < n_; ++j) v -= lu_[perm_[ii] * n_ + j] * out[j];
      out[ii] = v / lu_[perm_[ii] * n_ + ii];
    }
  }

 private:
  std::vector<double> lu_;
  std::vector<std::size_t> perm_;
  std::size_t n_;
};

inline void check_coefficient_inputs(std::size_t n, std::span<const double> b,
                                     std::span<const double> sigma) {
  if (n == 0 || b.size() != n || sigma.size() != n)
    throw std::invalid_argument("game coefficients: vector lengths must equal n");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(b[i])) throw std::invalid_argument("game coefficients: non-finite drift");
    if (!(sigma[i] > 0.0)) throw std::invalid_argument("game coefficients: volatility must be positive");
  }
}

}  // namespace detail

/// Interaction matrix M with M_ii = 1 + (1/N) sum_j gamma_ji - (1/N) gamma_ii
/// and M_ik = -(1/N) gamma_ik; strictly diagonally dominant for entries in
/// [0,1], hence invertible.
inline std::vector<double> interaction_matrix(const HoldingMatrix& gamma) {
  gamma.validate();
  const std::size_t n = gamma.n;
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double col_sum =
        pairwise_sum(n, [&](std::size_t j) { return gamma.at(j, i); });
    for (std::size_t k = 0; k < n; ++k) m[i * n + k] = -inv_n * gamma.at(i, k);
    m[i * n + i] = 1.0 + inv_n * (col_sum - gamma.at(i, i));
  }
  return m;
}

/// Coefficients via the dense linear solve; valid for any strategy matrix.
inline GameCoefficients game_coefficients_solve(const HoldingMatrix& gamma,
                                                std::span<const double> b_vec,
                                                std::span<const double> sigma_vec) {
  detail::check_coefficient_inputs(gamma.n, b_vec, sigma_vec);
  const std::size_t n = gamma.n;
  const detail::DenseLu lu(interaction_matrix(gamma), n);

  GameCoefficients out;
  out.n = n;
  out.method = CoefficientMethod::linear_solve;
  out.drift.resize(n);
  lu.solve(b_vec, out.drift);
  out.diffusion.assign(n * n, 0.0);
  std::vector<double> rhs(n, 0.0), col(n);
  for (std::size_t q = 0; q < n; ++q) {
    rhs.assign(n, 0.0);
    rhs[q] = sigma_vec[q];
    lu.solve(rhs, col);
    for (std::size_t i = 0; i < n; ++i) out.diffusion[i * n + q] = col[i];
  }
  return out;
}

/// Coefficients for a column-constant strategy (holdings depend on the target
/// only, as the equilibrium-induced strategy does), in closed form:
///   (1 + p_i) B_i = b_i + S,  S = [(1/N) sum_j r_j b_j] / (1 - (1/N) sum_j r_j)
///   Sigma_iq = (sigma_i 1{q=i} + (1/N) A_q sigma_q) / (1 + p_i)
/// with r_j = p_j/(1+p_j) and A_q = r_q / (1 - (1/N) sum_j r_j).
inline GameCoefficients game_coefficients_closed_form(std::span<const double> pi_vec,
                                                      std::span<const double> b_vec,
                                                      std::span<const double> sigma_vec,
                                                      bool check_against_solve = false) {
  const std::size_t n = pi_vec.size();
  detail::check_coefficient_inputs(n, b_vec, sigma_vec);
  for (double p : pi_vec)
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("game_coefficients_closed_form: strategy outside [0,1]");

  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> hold_ratio(n);
  for (std::size_t j = 0; j < n; ++j) hold_ratio[j] = pi_vec[j] / (1.0 + pi_vec[j]);
  const double ratio_mean = inv_n * pairwise_sum(hold_ratio);
  const double denom = 1.0 - ratio_mean;  // >= 1/2 for entries in [0,1]
  const double interaction =
      inv_n * pairwise_sum(n, [&](std::size_t j) { return hold_ratio[j] * b_vec[j]; }) / denom;

  GameCoefficients out;
  out.n = n;
  out.method = CoefficientMethod::closed_form;
  out.drift.resize(n);
  out.diffusion.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double self_weight = 1.0 + pi_vec[i];
    out.drift[i] = (b_vec[i] + interaction) / self_weight;
    for (std::size_t q = 0; q < n; ++q) {
      const double shared = inv_n * (hold_ratio[q] / denom) * sigma_vec[q];
      out.diffusion[i * n + q] = ((q == i ? sigma_vec[i] : 0.0) + shared) / self_weight;
    }
  }

  if (check_against_solve) {
    HoldingMatrix gamma;
    gamma.n = n;
    gamma.entries.resize(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) gamma.at(i, j) = pi_vec[j];
    const auto ref = game_coefficients_solve(gamma, b_vec, sigma_vec);
    for (std::size_t i = 0; i < n; ++i) {
      if (std::abs(out.drift[i] - ref.drift[i]) > 1e-8 * (1.0 + std::abs(ref.drift[i])))
        throw numeric_error("game_coefficients_closed_form: drift mismatch vs solve");
      for (std::size_t q = 0; q < n; ++q) {
        const double d = std::abs(out.diffusion[i * n + q] - ref.diffusion[i * n + q]);
        if (d > 1e-8 * (1.0 + std::abs(ref.diffusion[i * n + q])))
          throw numeric_error("game_coefficients_closed_form: diffusion mismatch vs solve");
      }
    }
  }
  return out;
}

/// Coefficients after replacing row i of the strategy matrix by beta; the
/// generic linear route, valid for any gamma.
inline GameCoefficients deviated_coefficients(const HoldingMatrix& gamma, std::size_t i,
                                              std::span<const double> beta,
                                              std::span<const double> b_vec,
                                              std::span<const double> sigma_vec) {
  gamma.validate();
  if (i >= gamma.n) throw std::invalid_argument("deviated_coefficients: player index out of range");
  if (beta.size() != gamma.n)
    throw std::invalid_argument("deviated_coefficients: beta length mismatch");
  for (double v : beta)
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("deviated_coefficients: beta outside [0,1]");
  HoldingMatrix dev = gamma;
  for (std::size_t j = 0; j < gamma.n; ++j) dev.at(i, j) = beta[j];
  return game_coefficients_solve(dev, b_vec, sigma_vec);
}

namespace detail {

/// Closed form for a column-constant strategy with row i deviated to beta.
/// Rows k != i share the aggregate S = (1/N) sum_j pi_j B_j while row i sees
/// S_beta = (1/N) sum_j beta_j B_j; eliminating (S, S_beta) is a 2x2 solve,
/// and the diffusion aggregates (T_q, T_beta_q) share the same 2x2 inverse.
struct DeviatedClosedForm {
  std::vector<double> drift;        // B_k
  std::vector<double> shared;       // T_q
  std::vector<double> shared_dev;   // T_beta_q
  std::vector<double> self_weight;  // d_k = 1 + ((N-1) pi_k + beta_k)/N

  double vol(std::size_t k, std::size_t q, std::span<const double> sigma, std::size_t i) const {
    const double t = (k == i) ? shared_dev[q] : shared[q];
    return ((q == k ? sigma[k] : 0.0) + t) / self_weight[k];
  }
};

inline DeviatedClosedForm deviated_closed_form(std::span<const double> pi, std::size_t i,
                                               std::span<const double> beta,
                                               std::span<const double> b,
                                               std::span<const double> sigma) {
  const std::size_t n = pi.size();
  check_coefficient_inputs(n, b, sigma);
  if (beta.size() != n) throw std::invalid_argument("deviated_closed_form: beta length mismatch");
  if (i >= n) throw std::invalid_argument("deviated_closed_form: player index out of range");

  const double inv_n = 1.0 / static_cast<double>(n);
  const double others = static_cast<double>(n - 1);

  DeviatedClosedForm out;
  out.self_weight.resize(n);
  for (std::size_t k = 0; k < n; ++k)
    out.self_weight[k] = 1.0 + (others * pi[k] + beta[k]) * inv_n;

  const auto& d = out.self_weight;
  const double u1 = inv_n * pairwise_sum(n, [&](std::size_t j) { return pi[j] * b[j] / d[j]; });
  const double u2 = inv_n * pairwise_sum(n, [&](std::size_t j) { return beta[j] * b[j] / d[j]; });
  const double a11 =
      inv_n * pairwise_sum(n, [&](std::size_t j) { return j == i ? 0.0 : pi[j] / d[j]; });
  const double a12 = inv_n * pi[i] / d[i];
  const double a21 =
      inv_n * pairwise_sum(n, [&](std::size_t j) { return j == i ? 0.0 : beta[j] / d[j]; });
  const double a22 = inv_n * beta[i] / d[i];
  const double det = (1.0 - a11) * (1.0 - a22) - a12 * a21;
  if (!(std::abs(det) > 1e-14)) throw numeric_error("deviated_closed_form: degenerate system");

  const double agg = ((1.0 - a22) * u1 + a12 * u2) / det;
  const double agg_dev = (a21 * u1 + (1.0 - a11) * u2) / det;

  out.drift.resize(n);
  for (std::size_t k = 0; k < n; ++k)
    out.drift[k] = (b[k] + (k == i ? agg_dev : agg)) / d[k];

  out.shared.resize(n);
  out.shared_dev.resize(n);
  for (std::size_t q = 0; q < n; ++q) {
    const double vq = inv_n * pi[q] * sigma[q] / d[q];
    const double wq = inv_n * beta[q] * sigma[q] / d[q];
    out.shared[q] = ((1.0 - a22) * vq + a12 * wq) / det;
    out.shared_dev[q] = (a21 * vq + (1.0 - a11) * wq) / det;
  }
  return out;
}

}  // namespace detail

/// Closed-form deviated coefficients (full matrix form) for a column-constant
/// base strategy; cross-check companion of deviated_coefficients.
inline GameCoefficients deviated_coefficients_closed_form(std::span<const double> pi_vec,
                                                          std::size_t i,
                                                          std::span<const double> beta,
                                                          std::span<const double> b_vec,
                                                          std::span<const double> sigma_vec) {
  for (double p : pi_vec)
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("deviated_coefficients_closed_form: strategy outside [0,1]");
  for (double v : beta)
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("deviated_coefficients_closed_form: beta outside [0,1]");
  const auto cf = detail::deviated_closed_form(pi_vec, i, beta, b_vec, sigma_vec);
  const std::size_t n = pi_vec.size();
  GameCoefficients out;
  out.n = n;
  out.method = CoefficientMethod::closed_form;
  out.drift = cf.drift;
  out.diffusion.resize(n * n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t q = 0; q < n; ++q) out.diffusion[k * n + q] = cf.vol(k, q, sigma_vec, i);
  return out;
}

/// Residual of the drift defining equation, max over rows.
inline double drift_equation_residual(const HoldingMatrix& gamma, std::span<const double> b_vec,
                                      std::span<const double> drift) {
  const std::size_t n = gamma.n;
  const double inv_n = 1.0 / static_cast<double>(n);
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double incoming =
        pairwise_sum(n, [&](std::size_t j) { return gamma.at(i, j) * drift[j]; });
    const double outgoing = pairwise_sum(n, [&](std::size_t j) { return gamma.at(j, i); });
    const double rhs = inv_n * incoming - inv_n * outgoing * drift[i] + b_vec[i];
    worst = std::max(worst, std::abs(drift[i] - rhs));
  }
  return worst;
}

/// Residual of the diffusion defining equation, max over entries.
inline double vol_equation_residual(const HoldingMatrix& gamma, std::span<const double> sigma_vec,
                                    const GameCoefficients& coeffs) {
  const std::size_t n = gamma.n;
  const double inv_n = 1.0 / static_cast<double>(n);
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double outgoing = pairwise_sum(n, [&](std::size_t j) { return gamma.at(j, i); });
    for (std::size_t q = 0; q < n; ++q) {
      const double incoming =
          pairwise_sum(n, [&](std::size_t j) { return gamma.at(i, j) * coeffs.vol_at(j, q); });
      const double rhs = inv_n * incoming - inv_n * outgoing * coeffs.vol_at(i, q) +
                         (q == i ? sigma_vec[i] : 0.0);
      worst = std::max(worst, std::abs(coeffs.vol_at(i, q) - rhs));
    }
  }
  return worst;
}

/// The strategy the mean-field solution induces on N players: hold target j
/// exactly when its provisions drift clears the threshold of the empirical
/// law. Column-constant by construction.
struct InducedStrategy {
  std::vector<std::uint8_t> pi;  // per target
  double c = 0.0;
  std::vector<double> b_vals;
};

inline InducedStrategy mfg_induced_pi(const CoefficientModel& model, double t,
                                      std::span<const double> states, double tol = 1e-12) {
  if (states.empty()) throw std::invalid_argument("mfg_induced_pi: empty states");
  const Measure1D law = empirical_from_samples(states);
  InducedStrategy out;
  out.b_vals.resize(states.size());
  for (std::size_t j = 0; j < states.size(); ++j)
    out.b_vals[j] = eval_b(model, t, states[j], law);
  out.c = solve_c_empirical(out.b_vals, law.weights, tol).c;
  out.pi.resize(states.size());
  for (std::size_t j = 0; j < states.size(); ++j)
    out.pi[j] = static_cast<std::uint8_t>(optimal_holding(out.b_vals[j], out.c));
  return out;
}

inline HoldingMatrix mfg_induced_strategy(const CoefficientModel& model, double t,
                                          std::span<const double> states, double tol = 1e-12) {
  const auto induced = mfg_induced_pi(model, t, states, tol);
  const std::size_t n = states.size();
  HoldingMatrix gamma;
  gamma.n = n;
  gamma.entries.resize(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) gamma.at(i, j) = static_cast<double>(induced.pi[j]);
  return gamma;
}

/// Unilateral deviation of one player's holding row.
struct DeviationStrategy {
  enum class Kind { null_deviation, never_hold, always_hold, anti_bang_bang, custom };

  Kind kind = Kind::never_hold;
  std::string name = "never_hold";
  std::vector<double> grid;    // custom only: beta as a function of target state
  std::vector<double> values;  // clamped linear interpolation, values in [0,1]

  static DeviationStrategy null_deviation() { return {Kind::null_deviation, "null", {}, {}}; }
  static DeviationStrategy never_hold() { return {Kind::never_hold, "never_hold", {}, {}}; }
  static DeviationStrategy always_hold() { return {Kind::always_hold, "always_hold", {}, {}}; }
  static DeviationStrategy anti_bang_bang() {
    return {Kind::anti_bang_bang, "anti_bang_bang", {}, {}};
  }
  static DeviationStrategy custom(std::vector<double> grid, std::vector<double> values,
                                  std::string name = "custom") {
    DeviationStrategy d{Kind::custom, std::move(name), std::move(grid), std::move(values)};
    if (d.grid.empty() || d.grid.size() != d.values.size())
      throw std::invalid_argument("DeviationStrategy: custom table sizes mismatch");
    for (std::size_t i = 1; i < d.grid.size(); ++i)
      if (!(d.grid[i] > d.grid[i - 1]))
        throw std::invalid_argument("DeviationStrategy: custom grid must be increasing");
    for (double v : d.values)
      if (!(v >= 0.0 && v <= 1.0))
        throw std::invalid_argument("DeviationStrategy: custom values must lie in [0,1]");
    return d;
  }

  /// Fills beta per target. Custom tables read the target states; the
  /// bang-bang complements read the baseline strategy.
  void evaluate(std::span<const double> target_states, std::span<const std::uint8_t> base_pi,
                std::span<double> out) const {
    const std::size_t n = out.size();
    switch (kind) {
      case Kind::null_deviation:
        for (std::size_t j = 0; j < n; ++j) out[j] = static_cast<double>(base_pi[j]);
        return;
      case Kind::never_hold:
        std::fill(out.begin(), out.end(), 0.0);
        return;
      case Kind::always_hold:
        std::fill(out.begin(), out.end(), 1.0);
        return;
      case Kind::anti_bang_bang:
        for (std::size_t j = 0; j < n; ++j) out[j] = base_pi[j] ? 0.0 : 1.0;
        return;
      case Kind::custom:
        for (std::size_t j = 0; j < n; ++j)
          out[j] = detail::interpolate_clamped(grid, values, target_states[j]);
        return;
    }
  }
};

/// Full trace of an N-player equilibrium-strategy run: paths, thresholds,
/// per-step induced strategy, and the Brownian increments consumed.
struct NPlayerRecord {
  ParticleEnsemble ensemble;
  std::vector<std::uint8_t> pi_trace;  // step * n + player
  std::vector<double> increments;      // step * n + player
  double dt = 0.0;

  std::uint8_t pi(std::size_t step, std::size_t player) const {
    return pi_trace[step * ensemble.n_particles + player];
  }
  double dw(std::size_t step, std::size_t player) const {
    return increments[step * ensemble.n_particles + player];
  }
};

namespace detail {

/// One Euler step of the N-player system under the induced strategy, using
/// the closed form: the diffusion row against the increments collapses to
/// (sigma_p dW_p + G) / (1 + pi_p) with one shared aggregate G.
struct NPlayerStepScratch {
  std::vector<double> b, sigma, dw, hold_ratio;
};

template <class StateView>
inline InducedStrategy nplayer_base_step(const CoefficientModel& model, double t, double dt,
                                         StateView&& state, std::size_t n,
                                         std::span<const double> increments, double tol,
                                         NPlayerStepScratch& scratch) {
  std::vector<double> current(n);
  for (std::size_t p = 0; p < n; ++p) current[p] = state(p);
  const Measure1D law = empirical_from_samples(current);

  scratch.b.resize(n);
  scratch.sigma.resize(n);
  scratch.hold_ratio.resize(n);
  for (std::size_t p = 0; p < n; ++p) {
    scratch.b[p] = eval_b(model, t, current[p], law);
    scratch.sigma[p] = eval_sigma(model, t, current[p], law);
  }
  InducedStrategy induced;
  induced.b_vals = scratch.b;
  induced.c = solve_c_empirical(scratch.b, law.weights, tol).c;
  induced.pi.resize(n);
  for (std::size_t p = 0; p < n; ++p)
    induced.pi[p] = static_cast<std::uint8_t>(optimal_holding(scratch.b[p], induced.c));

  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t p = 0; p < n; ++p)
    scratch.hold_ratio[p] = induced.pi[p] ? 0.5 : 0.0;
  const double denom = 1.0 - inv_n * pairwise_sum(scratch.hold_ratio);
  const double interaction =
      inv_n * pairwise_sum(n, [&](std::size_t j) { return scratch.hold_ratio[j] * scratch.b[j]; }) /
      denom;
  const double shared_noise =
      inv_n * pairwise_sum(n, [&](std::size_t q) {
        return (scratch.hold_ratio[q] / denom) * scratch.sigma[q] * increments[q];
      });

  for (std::size_t p = 0; p < n; ++p) {
    const double self_weight = 1.0 + static_cast<double>(induced.pi[p]);
    const double drift = (scratch.b[p] + interaction) / self_weight;
    const double noise = (scratch.sigma[p] * increments[p] + shared_noise) / self_weight;
    state(p) = current[p] + drift * dt + noise;
  }
  return induced;
}

}  // namespace detail

/// N-dimensional Euler scheme under the induced strategy. Noise cells match
/// the single-particle simulators, so degenerate cases (no holding anywhere)
/// reproduce the provisions baseline bit for bit.
inline NPlayerRecord simulate_nplayer(const SimConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n_particles;
  const std::size_t steps = cfg.n_steps;
  const double dt = cfg.horizon / static_cast<double>(steps);
  const double sqrt_dt = std::sqrt(dt);
  const NoiseField path_noise(cfg.seed, kPathStream);

  NPlayerRecord record;
  record.dt = dt;
  auto& ens = record.ensemble;
  ens.n_particles = n;
  ens.n_steps = steps;
  ens.seed = cfg.seed;
  ens.times.resize(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) ens.times[k] = dt * static_cast<double>(k);
  ens.paths.resize(n * (steps + 1));
  ens.thresholds.resize(steps);
  record.pi_trace.resize(steps * n);
  record.increments.resize(steps * n);

  const auto x0 = detail::draw_initial_states(cfg);
  for (std::size_t p = 0; p < n; ++p) ens.state(p, 0) = x0[p];
  detail::check_finite_column(ens, 0);

  detail::NPlayerStepScratch scratch;
  std::vector<double> buffer(n);
  for (std::size_t k = 0; k < steps; ++k) {
    for (std::size_t p = 0; p < n; ++p) {
      record.increments[k * n + p] = sqrt_dt * path_noise.normal(p, k);
      buffer[p] = ens.state(p, k);
    }
    const std::span<const double> dw(record.increments.data() + k * n, n);
    const auto induced = detail::nplayer_base_step(
        cfg.model, ens.times[k], dt, [&](std::size_t p) -> double& { return buffer[p]; }, n, dw,
        cfg.threshold_tol, scratch);
    ens.thresholds[k] = induced.c;
    for (std::size_t p = 0; p < n; ++p) {
      record.pi_trace[k * n + p] = induced.pi[p];
      ens.state(p, k + 1) = buffer[p];
    }
    detail::check_finite_column(ens, k + 1);
  }
  return record;
}

/// Discrete Girsanov weight Z_T = exp(sum psi dW - psi^2 dt / 2) along a
/// stored run, for player i switching to the given deviation. The null
/// deviation short-circuits to psi = 0, hence Z_T = 1 exactly.
inline double girsanov_weight(const NPlayerRecord& record, std::size_t i,
                              const DeviationStrategy& deviation, const CoefficientModel& model) {
  const auto& ens = record.ensemble;
  const std::size_t n = ens.n_particles;
  if (i >= n) throw std::invalid_argument("girsanov_weight: player index out of range");
  const std::size_t steps = ens.n_steps;
  const double dt = record.dt;

  CompensatedSum log_weight;
  std::vector<double> beta(n), pi_double(n);
  for (std::size_t k = 0; k < steps; ++k) {
    if (deviation.kind == DeviationStrategy::Kind::null_deviation) break;
    const auto states = ens.column(k);
    const Measure1D law = empirical_from_samples(states);
    std::vector<double> b(n), sigma(n);
    std::vector<std::uint8_t> pi(n);
    for (std::size_t p = 0; p < n; ++p) {
      b[p] = eval_b(model, ens.times[k], states[p], law);
      sigma[p] = eval_sigma(model, ens.times[k], states[p], law);
      pi[p] = record.pi(k, p);
      pi_double[p] = static_cast<double>(pi[p]);
    }
    deviation.evaluate(states, pi, beta);
    if (std::equal(beta.begin(), beta.end(), pi_double.begin())) continue;

    const auto dev = detail::deviated_closed_form(pi_double, i, beta, b, sigma);
    const double c = ens.thresholds[k];
    const double base_drift_i = equilibrium_drift(b[i], c);
    const double dev_vol_ii = dev.vol(i, i, sigma, i);
    const double psi = (dev.drift[i] - base_drift_i) / dev_vol_ii;
    log_weight.add(psi * record.dw(k, i));
    log_weight.add(-0.5 * psi * psi * dt);
  }
  const double z = std::exp(log_weight.value());
  if (!std::isfinite(z)) throw numeric_error("girsanov_weight: non-finite weight");
  return z;
}

/// Monte-Carlo estimate of the best gain a single player extracts by
/// deviating from the induced strategy.
struct NashGapRow {
  std::size_t n_players = 0;
  std::string deviation;
  double j_base = 0.0;
  double j_dev = 0.0;
  double gain = 0.0;
  double se_gain = 0.0;
  std::size_t excluded = 0;  // replications dropped for non-finite weights/states
};

struct NashGapReport {
  std::vector<NashGapRow> rows;
  double eps_hat = 0.0;     // max gain over the deviation family
  double eps_hat_se = 0.0;  // standard error of the max-gain row
  double j_base = 0.0;
  double se_j_base = 0.0;
  std::size_t replications = 0;
  std::size_t n_players = 0;
  std::uint64_t seed = 0;
};

struct NashGapConfig {
  SimConfig sim;
  std::vector<DeviationStrategy> deviations;
  std::size_t replications = 0;
  bool average_over_players = false;
  std::function<double(double)> payoff;  // defaults to identity

  void validate() const {
    sim.validate();
    if (!sim.model.drift_bound)
      throw std::invalid_argument(
          "nash_gap_estimate: model must declare drift_bound (bounded coefficients)");
    if (replications < 100)
      throw std::invalid_argument("nash_gap_estimate: replications must be >= 100");
    if (deviations.empty()) throw std::invalid_argument("nash_gap_estimate: empty deviation family");
  }
};

namespace detail {

struct RepOutcome {
  double base_payoff = 0.0;
  std::vector<double> gains;         // per deviation; NaN when excluded
  std::vector<std::uint8_t> valid;   // per deviation
};

/// One replication: simulate the base system once, then each deviated system
/// against the same increments, accumulating the weight from the base path.
inline RepOutcome run_replication(const NashGapConfig& cfg, std::uint64_t rep, std::size_t target) {
  const std::size_t n = cfg.sim.n_particles;
  const std::size_t steps = cfg.sim.n_steps;
  const double dt = cfg.sim.horizon / static_cast<double>(steps);
  const double sqrt_dt = std::sqrt(dt);
  const auto payoff = [&](double x) { return cfg.payoff ? cfg.payoff(x) : x; };

  SimConfig rep_cfg = cfg.sim;
  rep_cfg.seed = replication_seed(cfg.sim.seed, rep);
  const NoiseField path_noise(rep_cfg.seed, kPathStream);

  // Base run with full per-step storage.
  std::vector<double> base_states((steps + 1) * n);
  std::vector<std::uint8_t> base_pi(steps * n);
  std::vector<double> base_c(steps);
  std::vector<double> increments(steps * n);
  {
    const auto x0 = draw_initial_states(rep_cfg);
    std::copy(x0.begin(), x0.end(), base_states.begin());
    NPlayerStepScratch scratch;
    std::vector<double> buffer(n);
    for (std::size_t k = 0; k < steps; ++k) {
      for (std::size_t p = 0; p < n; ++p) {
        increments[k * n + p] = sqrt_dt * path_noise.normal(p, k);
        buffer[p] = base_states[k * n + p];
      }
      const std::span<const double> dw(increments.data() + k * n, n);
      const auto induced = nplayer_base_step(
          cfg.sim.model, dt * static_cast<double>(k), dt,
          [&](std::size_t p) -> double& { return buffer[p]; }, n, dw, cfg.sim.threshold_tol,
          scratch);
      base_c[k] = induced.c;
      for (std::size_t p = 0; p < n; ++p) {
        base_pi[k * n + p] = induced.pi[p];
        base_states[(k + 1) * n + p] = buffer[p];
      }
    }
  }

  RepOutcome out;
  out.base_payoff = payoff(base_states[steps * n + target]);
  out.gains.resize(cfg.deviations.size());
  out.valid.assign(cfg.deviations.size(), 1);

  std::vector<double> dev_states(n), beta(n), pi_double(n), b_dev(n), sigma_dev(n), b_base(n),
      sigma_base(n);
  for (std::size_t d = 0; d < cfg.deviations.size(); ++d) {
    const auto& deviation = cfg.deviations[d];
    if (deviation.kind == DeviationStrategy::Kind::null_deviation) {
      out.gains[d] = 0.0;  // deviated system coincides with the base system
      continue;
    }
    for (std::size_t p = 0; p < n; ++p) dev_states[p] = base_states[p];
    CompensatedSum log_weight;
    bool ok = true;
    for (std::size_t k = 0; k < steps && ok; ++k) {
      const double t = dt * static_cast<double>(k);
      const std::span<const double> dw(increments.data() + k * n, n);
      const std::span<const std::uint8_t> pi(base_pi.data() + k * n, n);
      for (std::size_t p = 0; p < n; ++p) pi_double[p] = static_cast<double>(pi[p]);
      deviation.evaluate(dev_states, pi, beta);

      // Weight increment from the base path.
      {
        const std::span<const double> sb(base_states.data() + k * n, n);
        const Measure1D base_law = empirical_from_samples(sb);
        for (std::size_t p = 0; p < n; ++p) {
          b_base[p] = eval_b(cfg.sim.model, t, sb[p], base_law);
          sigma_base[p] = eval_sigma(cfg.sim.model, t, sb[p], base_law);
        }
        const auto dev_at_base = deviated_closed_form(pi_double, target, beta, b_base, sigma_base);
        const double base_drift = equilibrium_drift(b_base[target], base_c[k]);
        const double psi =
            (dev_at_base.drift[target] - base_drift) / dev_at_base.vol(target, target, sigma_base, target);
        log_weight.add(psi * dw[target]);
        log_weight.add(-0.5 * psi * psi * dt);

        // Deviated dynamics, expressed against the physical increments.
        const Measure1D dev_law = empirical_from_samples(dev_states);
        for (std::size_t p = 0; p < n; ++p) {
          b_dev[p] = eval_b(cfg.sim.model, t, dev_states[p], dev_law);
          sigma_dev[p] = eval_sigma(cfg.sim.model, t, dev_states[p], dev_law);
        }
        const auto dev_cf = deviated_closed_form(pi_double, target, beta, b_dev, sigma_dev);
        const double shared = pairwise_sum(n, [&](std::size_t q) { return dev_cf.shared[q] * dw[q]; });
        const double shared_dev =
            pairwise_sum(n, [&](std::size_t q) { return dev_cf.shared_dev[q] * dw[q]; });
        for (std::size_t p = 0; p < n; ++p) {
          const double noise =
              (sigma_dev[p] * dw[p] + (p == target ? shared_dev : shared)) / dev_cf.self_weight[p];
          const double vol_target_col = dev_cf.vol(p, target, sigma_dev, target);
          dev_states[p] += (dev_cf.drift[p] - vol_target_col * psi) * dt + noise;
          if (!std::isfinite(dev_states[p])) ok = false;
        }
      }
    }
    const double weight = std::exp(log_weight.value());
    if (!ok || !std::isfinite(weight)) {
      out.valid[d] = 0;
      out.gains[d] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    out.gains[d] = weight * payoff(dev_states[target]) - out.base_payoff;
  }
  return out;
}

}  // namespace detail

inline NashGapReport nash_gap_estimate(const NashGapConfig& cfg) {
  cfg.validate();
  const std::size_t reps = cfg.replications;
  const std::size_t ndev = cfg.deviations.size();
  const std::size_t n_targets = cfg.average_over_players ? cfg.sim.n_particles : 1;

  std::vector<double> base_payoffs(reps, 0.0);
  std::vector<double> gains(reps * ndev, 0.0);
  std::vector<std::uint8_t> valid(reps * ndev, 1);

  const auto worker = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r) {
      CompensatedSum base_acc;
      std::vector<CompensatedSum> gain_acc(ndev);
      std::vector<std::size_t> ok_count(ndev, 0);
      for (std::size_t target = 0; target < n_targets; ++target) {
        const auto outcome = detail::run_replication(cfg, r, target);
        base_acc.add(outcome.base_payoff);
        for (std::size_t d = 0; d < ndev; ++d) {
          if (outcome.valid[d]) {
            gain_acc[d].add(outcome.gains[d]);
            ++ok_count[d];
          }
        }
      }
      base_payoffs[r] = base_acc.value() / static_cast<double>(n_targets);
      for (std::size_t d = 0; d < ndev; ++d) {
        if (ok_count[d] == n_targets) {
          gains[r * ndev + d] = gain_acc[d].value() / static_cast<double>(n_targets);
        } else {
          valid[r * ndev + d] = 0;
        }
      }
    }
  };
  parallel_for(reps, cfg.sim.threads, worker, 1);

  NashGapReport report;
  report.replications = reps;
  report.n_players = cfg.sim.n_particles;
  report.seed = cfg.sim.seed;
  report.j_base = mean(base_payoffs);
  report.se_j_base = std::sqrt(sample_variance(base_payoffs) / static_cast<double>(reps));

  report.rows.reserve(ndev);
  for (std::size_t d = 0; d < ndev; ++d) {
    NashGapRow row;
    row.n_players = cfg.sim.n_particles;
    row.deviation = cfg.deviations[d].name;
    std::size_t kept = 0;
    for (std::size_t r = 0; r < reps; ++r) kept += valid[r * ndev + d];
    row.excluded = reps - kept;
    if (kept == 0) throw numeric_error("nash_gap_estimate: every replication excluded");
    const double mean_gain =
        pairwise_sum(reps, [&](std::size_t r) {
          return valid[r * ndev + d] ? gains[r * ndev + d] : 0.0;
        }) /
        static_cast<double>(kept);
    const double var_gain =
        kept > 1 ? pairwise_sum(reps, [&](std::size_t r) {
                     if (!valid[r * ndev + d]) return 0.0;
                     const double dr = gains[r * ndev + d] - mean_gain;
                     return dr * dr;
                   }) / static_cast<double>(kept - 1)
                 : 0.0;
    row.gain = mean_gain;
    row.se_gain = std::sqrt(var_gain / static_cast<double>(kept));
    row.j_base = report.j_base;
    row.j_dev = report.j_base + mean_gain;
    report.rows.push_back(std::move(row));
  }

  std::size_t best = 0;
  for (std::size_t d = 1; d < ndev; ++d)
    if (report.rows[d].gain > report.rows[best].gain) best = d;
  report.eps_hat = report.rows[best].gain;
  report.eps_hat_se = report.rows[best].se_gain;
  return report;
}

}  // namespace mutualhold
