#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "mutualhold/equilibrium.hpp"
#include "mutualhold/measure.hpp"
#include "mutualhold/model.hpp"
#include "mutualhold/numerics.hpp"
#include "mutualhold/rng.hpp"
#include "mutualhold/threshold.hpp"

namespace mutualhold {

using InitialLaw = std::variant<GaussianSpec, Measure1D>;

struct SimConfig {
  std::size_t n_particles = 0;
  std::size_t n_steps = 0;
  double horizon = 0.0;
  std::uint64_t seed = 0;
  CoefficientModel model;
  InitialLaw initial = GaussianSpec{};
  double threshold_tol = 1e-12;
  int threads = 1;

  void validate() const {
    if (n_particles < 1) throw std::invalid_argument("SimConfig: n_particles must be >= 1");
    if (n_steps < 1) throw std::invalid_argument("SimConfig: n_steps must be >= 1");
    if (!(horizon > 0.0)) throw std::invalid_argument("SimConfig: horizon must be positive");
    if (!(threshold_tol > 0.0)) throw std::invalid_argument("SimConfig: threshold_tol must be positive");
    model.validate();
    if (const auto* g = std::get_if<GaussianSpec>(&initial)) {
      g->validate();
    } else {
      std::get<Measure1D>(initial).validate();
    }
  }
};

/// Path array with its time grid and the per-step thresholds that drove it.
/// Bit-identical for a given config (seed included) at any thread count.
struct ParticleEnsemble {
  std::size_t n_particles = 0;
  std::size_t n_steps = 0;
  std::vector<double> times;       // n_steps + 1 entries
  std::vector<double> paths;       // row-major, particle * (n_steps+1) + step
  std::vector<double> thresholds;  // per step; empty for non-interacting runs
  std::uint64_t seed = 0;

  double state(std::size_t particle, std::size_t step) const {
    return paths[particle * (n_steps + 1) + step];
  }
  double& state(std::size_t particle, std::size_t step) {
    return paths[particle * (n_steps + 1) + step];
  }
  std::vector<double> column(std::size_t step) const {
    std::vector<double> out(n_particles);
    for (std::size_t p = 0; p < n_particles; ++p) out[p] = state(p, step);
    return out;
  }
  std::vector<double> terminal() const { return column(n_steps); }
};

namespace detail {

inline std::vector<double> draw_initial_states(const SimConfig& cfg) {
  const NoiseField init_noise(cfg.seed, kInitStream);
  std::vector<double> x0(cfg.n_particles);
  if (const auto* g = std::get_if<GaussianSpec>(&cfg.initial)) {
    const double sd = std::sqrt(g->variance);
    const double mu = g->mean;
    parallel_for(cfg.n_particles, cfg.threads, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t p = lo; p < hi; ++p) x0[p] = mu + sd * init_noise.normal(p, 0);
    });
  } else {
    const auto& m = std::get<Measure1D>(cfg.initial);
    std::vector<double> cum(m.weights.size());
    CompensatedSum running;
    for (std::size_t j = 0; j < m.weights.size(); ++j) {
      running.add(m.weights[j]);
      cum[j] = running.value();
    }
    cum.back() = 1.0;
    parallel_for(cfg.n_particles, cfg.threads, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t p = lo; p < hi; ++p) {
        const double u = init_noise.uniform(p, 0);
        const auto it = std::lower_bound(cum.begin(), cum.end(), u);
        const std::size_t j = std::min(static_cast<std::size_t>(it - cum.begin()), cum.size() - 1);
        x0[p] = m.atoms[j];
      }
    });
  }
  return x0;
}

inline void check_finite_column(const ParticleEnsemble& ens, std::size_t step) {
  for (std::size_t p = 0; p < ens.n_particles; ++p) {
    if (!std::isfinite(ens.state(p, step)))
      throw numeric_error("simulation: non-finite state at step " + std::to_string(step));
  }
}

enum class DriveMode { provisions, equilibrium };

inline ParticleEnsemble simulate_paths(const SimConfig& cfg, DriveMode mode) {
  cfg.validate();
  const std::size_t n = cfg.n_particles;
  const std::size_t steps = cfg.n_steps;
  const double dt = cfg.horizon / static_cast<double>(steps);
  const double sqrt_dt = std::sqrt(dt);
  const NoiseField path_noise(cfg.seed, kPathStream);

  ParticleEnsemble ens;
  ens.n_particles = n;
  ens.n_steps = steps;
  ens.seed = cfg.seed;
  ens.times.resize(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) ens.times[k] = dt * static_cast<double>(k);
  ens.paths.resize(n * (steps + 1));
  if (mode == DriveMode::equilibrium) ens.thresholds.resize(steps);

  const auto x0 = draw_initial_states(cfg);
  for (std::size_t p = 0; p < n; ++p) ens.state(p, 0) = x0[p];
  check_finite_column(ens, 0);

  std::vector<double> b_vals(n);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = ens.times[k];
    // The coefficients are frozen on the current empirical law for the whole
    // step; the threshold solve is the only cross-particle coupling.
    const Measure1D law = empirical_from_samples(ens.column(k));
    double c = 0.0;
    if (mode == DriveMode::equilibrium) {
      parallel_for(n, cfg.threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t p = lo; p < hi; ++p) b_vals[p] = eval_b(cfg.model, t, ens.state(p, k), law);
      });
      c = solve_c_empirical(b_vals, law.weights, cfg.threshold_tol).c;
      ens.thresholds[k] = c;
    }
    parallel_for(n, cfg.threads, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t p = lo; p < hi; ++p) {
        const double x = ens.state(p, k);
        const double sigma = eval_sigma(cfg.model, t, x, law);
        double drift, vol;
        if (mode == DriveMode::equilibrium) {
          drift = equilibrium_drift(b_vals[p], c);
          vol = equilibrium_vol(b_vals[p], c, sigma);
        } else {
          drift = eval_b(cfg.model, t, x, law);
          vol = sigma;
        }
        const double dw = sqrt_dt * path_noise.normal(p, k);
        ens.state(p, k + 1) = x + drift * dt + vol * dw;
      }
    });
    check_finite_column(ens, k + 1);
  }
  return ens;
}

}  // namespace detail

/// Interacting-particle Euler scheme for the equilibrium dynamics: at each
/// step the threshold is solved on the empirical law of all particles, then
/// every particle advances with the equilibrium drift and volatility.
inline ParticleEnsemble simulate_equilibrium_mckv(const SimConfig& cfg) {
  return detail::simulate_paths(cfg, detail::DriveMode::equilibrium);
}

/// Non-interacting baseline: independent Euler paths of the provisions
/// dynamics, consuming the same noise cells as the equilibrium run so paired
/// comparisons share randomness.
inline ParticleEnsemble simulate_provisions(const SimConfig& cfg) {
  return detail::simulate_paths(cfg, detail::DriveMode::provisions);
}

/// Single Euler step comparison at step size delta: provisions vs equilibrium
/// maps frozen at t = 0 on the analytic Gaussian initial law (the stationary
/// law of the mean-reverting provisions), with shared (X0, Z) pairs.
struct OneStepResult {
  double threshold = 0.0;
  std::vector<double> provisions_terminal;
  std::vector<double> equilibrium_terminal;
  double mean_provisions = 0.0;
  double mean_equilibrium = 0.0;
  double var_provisions = 0.0;
  double var_equilibrium = 0.0;
  double paired_mean_gap = 0.0;  // mean(equilibrium - provisions)
  double paired_gap_se = 0.0;
};

inline OneStepResult onestep_illustration(double theta, double mbar, double sigbar, double delta,
                                          std::size_t n_samples, std::uint64_t seed,
                                          int threads = 1) {
  if (!(theta > 0.0) || !(sigbar > 0.0) || !(delta > 0.0) || n_samples < 2)
    throw std::invalid_argument("onestep_illustration: invalid parameters");
  const double init_var = sigbar * sigbar / (2.0 * theta);
  const auto thr = solve_c_gaussian_ou(theta, mbar, mbar, init_var);

  OneStepResult out;
  out.threshold = thr.c;
  out.provisions_terminal.resize(n_samples);
  out.equilibrium_terminal.resize(n_samples);

  const NoiseField init_noise(seed, kInitStream);
  const NoiseField path_noise(seed, kPathStream);
  const double sd0 = std::sqrt(init_var);
  const double sqrt_delta = std::sqrt(delta);
  parallel_for(n_samples, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t p = lo; p < hi; ++p) {
      const double x0 = mbar + sd0 * init_noise.normal(p, 0);
      const double dw = sqrt_delta * path_noise.normal(p, 0);
      const double b = theta * (mbar - x0);
      out.provisions_terminal[p] = x0 + b * delta + sigbar * dw;
      out.equilibrium_terminal[p] =
          x0 + equilibrium_drift(b, thr.c) * delta + equilibrium_vol(b, thr.c, sigbar) * dw;
    }
  });

  out.mean_provisions = mean(out.provisions_terminal);
  out.mean_equilibrium = mean(out.equilibrium_terminal);
  out.var_provisions = sample_variance(out.provisions_terminal);
  out.var_equilibrium = sample_variance(out.equilibrium_terminal);
  std::vector<double> gap(n_samples);
  for (std::size_t p = 0; p < n_samples; ++p)
    gap[p] = out.equilibrium_terminal[p] - out.provisions_terminal[p];
  out.paired_mean_gap = mean(gap);
  out.paired_gap_se = std::sqrt(sample_variance(gap) / static_cast<double>(n_samples));
  return out;
}

/// Per-time moments and quantiles plus a terminal-law kernel density table.
struct SummaryTables {
  struct Row {
    double t, mean, variance, q05, q25, median, q75, q95;
  };
  std::vector<Row> per_time;
  std::vector<double> kde_grid;
  std::vector<double> kde_values;
  double bandwidth = 0.0;
};

inline SummaryTables summarize_ensemble(const ParticleEnsemble& ens, std::span<const double> grid,
                                        double bandwidth = 0.0) {
  if (ens.n_particles == 0) throw std::invalid_argument("summarize_ensemble: empty ensemble");
  SummaryTables tables;
  tables.per_time.reserve(ens.n_steps + 1);
  for (std::size_t k = 0; k <= ens.n_steps; ++k) {
    auto col = ens.column(k);
    SummaryTables::Row row{};
    row.t = ens.times[k];
    row.mean = mean(col);
    row.variance = sample_variance(col);
    std::sort(col.begin(), col.end());
    row.q05 = quantile_sorted(col, 0.05);
    row.q25 = quantile_sorted(col, 0.25);
    row.median = quantile_sorted(col, 0.50);
    row.q75 = quantile_sorted(col, 0.75);
    row.q95 = quantile_sorted(col, 0.95);
    tables.per_time.push_back(row);
  }
  if (!grid.empty()) {
    const Measure1D terminal_law = empirical_from_samples(ens.terminal());
    tables.bandwidth = bandwidth > 0.0 ? bandwidth : silverman_bandwidth(terminal_law);
    tables.kde_grid.assign(grid.begin(), grid.end());
    tables.kde_values = kde_density(terminal_law, tables.bandwidth, grid);
  }
  return tables;
}

/// Terminal-law distances between equilibrium runs at successive particle
/// counts. Each count runs with a seed derived from its own value, so equal
/// counts reproduce the same ensemble exactly.
struct ConvergenceRow {
  std::size_t n_lo = 0;
  std::size_t n_hi = 0;
  double w2 = 0.0;
};

inline std::vector<ConvergenceRow> cauchy_convergence_diagnostic(
    const CoefficientModel& model, const InitialLaw& initial, double horizon, std::size_t steps,
    std::uint64_t seed, std::span<const std::size_t> n_list, double threshold_tol = 1e-12,
    int threads = 1) {
  if (n_list.size() < 2)
    throw std::invalid_argument("cauchy_convergence_diagnostic: need at least two sizes");
  std::vector<ConvergenceRow> rows;
  Measure1D prev_law;
  std::size_t prev_n = 0;
  for (std::size_t i = 0; i < n_list.size(); ++i) {
    SimConfig cfg;
    cfg.n_particles = n_list[i];
    cfg.n_steps = steps;
    cfg.horizon = horizon;
    cfg.seed = replication_seed(seed, n_list[i]);
    cfg.model = model;
    cfg.initial = initial;
    cfg.threshold_tol = threshold_tol;
    cfg.threads = threads;
    const auto ens = simulate_equilibrium_mckv(cfg);
    Measure1D law = empirical_from_samples(ens.terminal());
    if (i > 0) rows.push_back({prev_n, n_list[i], wasserstein2(prev_law, law)});
    prev_law = std::move(law);
    prev_n = n_list[i];
  }
  return rows;
}

}  // namespace mutualhold
