#include <catch2/catch.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "mutualhold/nplayer.hpp"
#include "test_helpers.hpp"

using namespace mutualhold;

namespace {

HoldingMatrix column_constant(std::span<const double> pi) {
  HoldingMatrix gamma;
  gamma.n = pi.size();
  gamma.entries.resize(gamma.n * gamma.n);
  for (std::size_t i = 0; i < gamma.n; ++i)
    for (std::size_t j = 0; j < gamma.n; ++j) gamma.at(i, j) = pi[j];
  return gamma;
}

double max_rel_gap(const GameCoefficients& a, const GameCoefficients& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.n; ++i) {
    worst = std::max(worst,
                     std::abs(a.drift[i] - b.drift[i]) / (1.0 + std::abs(b.drift[i])));
    for (std::size_t q = 0; q < a.n; ++q)
      worst = std::max(worst, std::abs(a.vol_at(i, q) - b.vol_at(i, q)) /
                                  (1.0 + std::abs(b.vol_at(i, q))));
  }
  return worst;
}

}  // namespace

TEST_CASE("no interaction means identity coefficients", "[nplayer]") {
  const std::vector<double> pi(4, 0.0), b{1.0, -2.0, 0.5, 3.0}, sigma{1.0, 2.0, 0.5, 1.5};
  const auto gamma = column_constant(pi);
  const auto solved = game_coefficients_solve(gamma, b, sigma);
  const auto closed = game_coefficients_closed_form(pi, b, sigma);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(solved.drift[i] == b[i]);
    CHECK(closed.drift[i] == b[i]);
    for (std::size_t q = 0; q < 4; ++q) {
      const double want = q == i ? sigma[i] : 0.0;
      CHECK(solved.vol_at(i, q) == Approx(want).margin(1e-15));
      CHECK(closed.vol_at(i, q) == want);
    }
  }
}

TEST_CASE("self-holding cancels for a single player", "[nplayer]") {
  for (double g : {0.0, 0.3, 1.0}) {
    HoldingMatrix gamma{1, {g}};
    const std::vector<double> b{0.7}, sigma{1.3};
    const auto solved = game_coefficients_solve(gamma, b, sigma);
    CHECK(solved.drift[0] == Approx(0.7).margin(1e-15));
    CHECK(solved.vol_at(0, 0) == Approx(1.3).margin(1e-15));
  }
  const std::vector<double> pi{1.0}, b{0.7}, sigma{1.3};
  const auto closed = game_coefficients_closed_form(pi, b, sigma);
  CHECK(closed.drift[0] == 0.7);
  CHECK(closed.vol_at(0, 0) == 1.3);
}

TEST_CASE("two-player full-holding system", "[nplayer]") {
  HoldingMatrix gamma{2, {1.0, 1.0, 1.0, 1.0}};
  const std::vector<double> b{0.0, 2.0}, sigma{1.0, 1.0};
  const auto solved = game_coefficients_solve(gamma, b, sigma);
  CHECK(solved.drift[0] == Approx(0.5).margin(1e-14));
  CHECK(solved.drift[1] == Approx(1.5).margin(1e-14));
  CHECK(drift_equation_residual(gamma, b, solved.drift) <= 1e-14);
  CHECK(vol_equation_residual(gamma, sigma, solved) <= 1e-14);

  // Full holding: every shared-noise entry is sigma_j / (2N).
  const std::vector<double> pi{1.0, 1.0};
  const auto closed = game_coefficients_closed_form(pi, b, sigma, true);
  CHECK(closed.vol_at(0, 1) == Approx(0.25).margin(1e-15));
  CHECK(closed.vol_at(0, 0) == Approx(0.75).margin(1e-15));
}

TEST_CASE("full holding spreads each noise source at sigma over 2N", "[nplayer]") {
  const std::size_t n = 5;
  const std::vector<double> pi(n, 1.0), b{1.0, -1.0, 0.5, 2.0, -0.5};
  const std::vector<double> sigma{1.0, 2.0, 0.5, 1.5, 0.8};
  const auto closed = game_coefficients_closed_form(pi, b, sigma, true);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t q = 0; q < n; ++q) {
      const double want = ((q == i ? sigma[i] : 0.0) + sigma[q] / static_cast<double>(n)) / 2.0;
      CHECK(closed.vol_at(i, q) == Approx(want).epsilon(1e-14));
    }
  }
}

TEST_CASE("two-player mixed strategy shared-noise weights", "[nplayer]") {
  // pi = (0, 1): the held player's noise spreads with weight 2/3 / N.
  const std::vector<double> pi{0.0, 1.0}, b{1.0, -1.0}, sigma{1.0, 1.0};
  const auto closed = game_coefficients_closed_form(pi, b, sigma, true);
  CHECK(closed.vol_at(0, 1) == Approx(0.5 * (2.0 / 3.0)).epsilon(1e-14));
  CHECK(closed.vol_at(0, 0) == Approx(1.0).epsilon(1e-14));
  CHECK(closed.vol_at(1, 0) == Approx(0.0).margin(1e-15));
}

TEST_CASE("closed form tracks the linear solve on random strategies", "[nplayer]") {
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> unif(0.0, 1.0), drift(-3.0, 3.0), vol(0.5, 2.0);
  for (const std::size_t n : {std::size_t{2}, std::size_t{5}, std::size_t{50}}) {
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> pi(n), b(n), sigma(n);
      for (auto& v : pi) v = unif(rng);
      for (auto& v : b) v = drift(rng);
      for (auto& v : sigma) v = vol(rng);
      const auto gamma = column_constant(pi);
      const auto solved = game_coefficients_solve(gamma, b, sigma);
      const auto closed = game_coefficients_closed_form(pi, b, sigma);
      CHECK(max_rel_gap(closed, solved) <= 1e-10);
      CHECK(drift_equation_residual(gamma, b, closed.drift) <= 1e-10);
      CHECK(vol_equation_residual(gamma, sigma, closed) <= 1e-10);
    }
  }
}

TEST_CASE("interaction matrix is strictly diagonally dominant", "[nplayer]") {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (const std::size_t n : {std::size_t{3}, std::size_t{40}, std::size_t{200}}) {
    HoldingMatrix gamma;
    gamma.n = n;
    gamma.entries.resize(n * n);
    for (auto& v : gamma.entries) v = unif(rng);
    const auto m = interaction_matrix(gamma);
    for (std::size_t i = 0; i < n; ++i) {
      double off = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        if (k != i) off += std::abs(m[i * n + k]);
      CHECK(m[i * n + i] - off > 0.0);
    }
  }
}

TEST_CASE("null deviation leaves the coefficients untouched", "[nplayer]") {
  std::mt19937_64 rng(83);
  std::uniform_real_distribution<double> unif(0.0, 1.0), drift(-2.0, 2.0);
  const std::size_t n = 12;
  HoldingMatrix gamma;
  gamma.n = n;
  gamma.entries.resize(n * n);
  for (auto& v : gamma.entries) v = unif(rng);
  std::vector<double> b(n), sigma(n, 1.0);
  for (auto& v : b) v = drift(rng);
  const std::size_t i = 4;
  std::vector<double> beta(gamma.entries.begin() + i * n, gamma.entries.begin() + (i + 1) * n);
  const auto base = game_coefficients_solve(gamma, b, sigma);
  const auto dev = deviated_coefficients(gamma, i, beta, b, sigma);
  CHECK(base.drift == dev.drift);
  CHECK(base.diffusion == dev.diffusion);
}

TEST_CASE("deviated closed form tracks the deviated solve", "[nplayer]") {
  std::mt19937_64 rng(97);
  std::uniform_real_distribution<double> unif(0.0, 1.0), drift(-3.0, 3.0), vol(0.5, 2.0);
  for (const std::size_t n : {std::size_t{1}, std::size_t{2}, std::size_t{7}, std::size_t{60}}) {
    for (int rep = 0; rep < 10; ++rep) {
      std::vector<double> pi(n), b(n), sigma(n), beta(n);
      for (auto& v : pi) v = unif(rng) < 0.5 ? 0.0 : 1.0;
      for (auto& v : b) v = drift(rng);
      for (auto& v : sigma) v = vol(rng);
      for (auto& v : beta) v = unif(rng);
      const std::size_t i = rep % n;
      const auto solved = deviated_coefficients(column_constant(pi), i, beta, b, sigma);
      const auto closed = deviated_coefficients_closed_form(pi, i, beta, b, sigma);
      CHECK(max_rel_gap(closed, solved) <= 1e-10);
    }
  }
}

TEST_CASE("lone deviator against an empty network", "[nplayer]") {
  // gamma = 0 with row i set to beta: every other player k keeps
  // B_k = b_k / (1 + beta_k / N).
  const std::size_t n = 5;
  std::vector<double> pi(n, 0.0), b{1.0, -1.0, 2.0, 0.5, -0.25}, sigma(n, 1.0);
  std::vector<double> beta{0.5, 1.0, 0.0, 0.25, 0.75};
  const std::size_t i = 2;
  const auto dev = deviated_coefficients(column_constant(pi), i, beta, b, sigma);
  for (std::size_t k = 0; k < n; ++k) {
    if (k == i) continue;
    CHECK(dev.drift[k] == Approx(b[k] / (1.0 + beta[k] / static_cast<double>(n))).epsilon(1e-14));
  }
}

TEST_CASE("one-row deviations perturb other players at the 1/N scale", "[nplayer]") {
  std::mt19937_64 rng(103);
  std::uniform_real_distribution<double> unif(0.0, 1.0), drift(-2.0, 2.0);
  auto median_move = [&](std::size_t n) {
    std::vector<double> moves;
    for (int rep = 0; rep < 12; ++rep) {
      std::vector<double> pi(n), b(n), sigma(n, 1.0), beta(n);
      for (auto& v : pi) v = unif(rng) < 0.5 ? 0.0 : 1.0;
      for (auto& v : b) v = drift(rng);
      for (auto& v : beta) v = unif(rng);
      const auto base = game_coefficients_closed_form(pi, b, sigma);
      const auto dev = deviated_coefficients_closed_form(pi, 0, beta, b, sigma);
      std::vector<double> gaps;
      for (std::size_t k = 1; k < n; ++k) gaps.push_back(std::abs(dev.drift[k] - base.drift[k]));
      std::sort(gaps.begin(), gaps.end());
      moves.push_back(gaps[gaps.size() / 2]);
    }
    std::sort(moves.begin(), moves.end());
    return moves[moves.size() / 2];
  };
  const double at50 = median_move(50);
  const double at200 = median_move(200);
  CHECK(at200 * 2.0 <= at50);
}

TEST_CASE("induced strategy patterns", "[nplayer]") {
  const auto ou = CoefficientModel::ou(1.0, 0.0, 1.0);

  // Drifts (-1, 1) at states (1, -1): only the second column is held.
  const std::vector<double> states{1.0, -1.0};
  const auto gamma = mfg_induced_strategy(ou, 0.0, states);
  CHECK(gamma.at(0, 0) == 0.0);
  CHECK(gamma.at(1, 0) == 0.0);
  CHECK(gamma.at(0, 1) == 1.0);
  CHECK(gamma.at(1, 1) == 1.0);

  const auto neg = CoefficientModel::constant_sign(-1.0, 1.0);
  const auto zeros = mfg_induced_strategy(neg, 0.0, states);
  CHECK(std::all_of(zeros.entries.begin(), zeros.entries.end(), [](double g) { return g == 0.0; }));

  const auto pos = CoefficientModel::constant_sign(0.5, 1.0);
  const auto ones = mfg_induced_strategy(pos, 0.0, states);
  CHECK(std::all_of(ones.entries.begin(), ones.entries.end(), [](double g) { return g == 1.0; }));
}

TEST_CASE("induced coefficients equal the population-level maps", "[nplayer]") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal(-0.5, 0.7);
  const auto ou = CoefficientModel::ou(1.0, -0.5, 1.0);
  for (const std::size_t n : {std::size_t{10}, std::size_t{200}}) {
    std::vector<double> states(n);
    for (auto& v : states) v = normal(rng);
    const auto induced = mfg_induced_pi(ou, 0.0, states);
    std::vector<double> pi(n), sigma(n, 1.0);
    for (std::size_t j = 0; j < n; ++j) pi[j] = static_cast<double>(induced.pi[j]);
    const auto coeffs = game_coefficients_closed_form(pi, induced.b_vals, sigma);
    for (std::size_t j = 0; j < n; ++j) {
      CHECK(coeffs.drift[j] ==
            Approx(equilibrium_drift(induced.b_vals[j], induced.c)).margin(1e-12));
    }
  }
}

TEST_CASE("player relabeling permutes the coefficients exactly", "[nplayer]") {
  // Dyadic data keeps every aggregate exact, so the permuted closed form
  // matches bitwise.
  const std::vector<double> pi{1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0};
  const std::vector<double> b{1.0, -2.0, 0.5, 0.25, -1.5, 3.0, -0.75, 2.0};
  const std::vector<double> sigma{1.0, 2.0, 0.5, 1.0, 2.0, 1.0, 0.5, 1.0};
  const std::vector<std::size_t> perm{3, 6, 0, 7, 2, 5, 1, 4};
  const std::size_t n = pi.size();
  std::vector<double> pi_p(n), b_p(n), sigma_p(n);
  for (std::size_t k = 0; k < n; ++k) {
    pi_p[k] = pi[perm[k]];
    b_p[k] = b[perm[k]];
    sigma_p[k] = sigma[perm[k]];
  }
  const auto base = game_coefficients_closed_form(pi, b, sigma);
  const auto permuted = game_coefficients_closed_form(pi_p, b_p, sigma_p);
  for (std::size_t k = 0; k < n; ++k) {
    CHECK(permuted.drift[k] == base.drift[perm[k]]);
    for (std::size_t q = 0; q < n; ++q)
      CHECK(permuted.vol_at(k, q) == base.vol_at(perm[k], perm[q]));
  }
}

TEST_CASE("negative-drift N-player run equals the baseline bit for bit", "[nplayer]") {
  SimConfig cfg;
  cfg.n_particles = 40;
  cfg.n_steps = 30;
  cfg.horizon = 1.0;
  cfg.seed = 31;
  cfg.model = CoefficientModel::constant_sign(-0.8, 1.1);
  cfg.initial = GaussianSpec{0.0, 1.0};
  const auto record = simulate_nplayer(cfg);
  const auto baseline = simulate_provisions(cfg);
  CHECK(record.ensemble.paths == baseline.paths);
  for (double c : record.ensemble.thresholds) CHECK(c == 0.0);
  for (std::uint8_t p : record.pi_trace) CHECK(p == 0);
}

TEST_CASE("single-player game reduces to the baseline", "[nplayer]") {
  SimConfig cfg;
  cfg.n_particles = 1;
  cfg.n_steps = 16;
  cfg.horizon = 1.0;
  cfg.seed = 314;
  cfg.model = CoefficientModel::ou(1.0, 0.25, 0.8);
  cfg.initial = GaussianSpec{0.25, 0.32};
  const auto record = simulate_nplayer(cfg);
  const auto baseline = simulate_provisions(cfg);
  CHECK(record.ensemble.paths == baseline.paths);
}

TEST_CASE("girsanov weight of the null deviation is one", "[nplayer]") {
  SimConfig cfg;
  cfg.n_particles = 8;
  cfg.n_steps = 12;
  cfg.horizon = 1.0;
  cfg.seed = 5;
  cfg.model = CoefficientModel::ou(1.0, -0.5, 1.0);
  cfg.initial = GaussianSpec{-0.5, 0.5};
  const auto record = simulate_nplayer(cfg);
  CHECK(girsanov_weight(record, 0, DeviationStrategy::null_deviation(), cfg.model) == 1.0);
  CHECK(girsanov_weight(record, 3, DeviationStrategy::null_deviation(), cfg.model) == 1.0);
}

TEST_CASE("one-step weight matches the exponential formula", "[nplayer]") {
  SimConfig cfg;
  cfg.n_particles = 4;
  cfg.n_steps = 1;
  cfg.horizon = 0.25;
  cfg.seed = 77;
  cfg.model = CoefficientModel::ou(1.0, -0.5, 1.0);
  cfg.initial = GaussianSpec{-0.5, 0.5};
  const auto record = simulate_nplayer(cfg);
  const auto deviation = DeviationStrategy::always_hold();

  const auto states = record.ensemble.column(0);
  const Measure1D law = empirical_from_samples(states);
  const std::size_t n = cfg.n_particles;
  std::vector<double> b(n), sigma(n), pi(n), beta(n, 1.0);
  std::vector<std::uint8_t> pi_u8(n);
  for (std::size_t p = 0; p < n; ++p) {
    b[p] = eval_b(cfg.model, 0.0, states[p], law);
    sigma[p] = eval_sigma(cfg.model, 0.0, states[p], law);
    pi_u8[p] = record.pi(0, p);
    pi[p] = static_cast<double>(pi_u8[p]);
  }
  const auto dev = deviated_coefficients_closed_form(pi, 0, beta, b, sigma);
  const double psi =
      (dev.drift[0] - equilibrium_drift(b[0], record.ensemble.thresholds[0])) / dev.vol_at(0, 0);
  const double expected = std::exp(psi * record.dw(0, 0) - 0.5 * psi * psi * record.dt);
  CHECK(girsanov_weight(record, 0, deviation, cfg.model) == Approx(expected).epsilon(1e-12));
}

TEST_CASE("weights average to one across replications", "[nplayer]") {
  SimConfig cfg;
  cfg.n_particles = 6;
  cfg.n_steps = 10;
  cfg.horizon = 1.0;
  cfg.seed = 2025;
  cfg.model = CoefficientModel::ou(1.0, -0.5, 1.0);
  cfg.initial = GaussianSpec{-0.5, 0.5};
  const std::size_t reps = 1500;
  std::vector<double> weights(reps);
  for (std::size_t r = 0; r < reps; ++r) {
    SimConfig rep_cfg = cfg;
    rep_cfg.seed = replication_seed(cfg.seed, r);
    const auto record = simulate_nplayer(rep_cfg);
    weights[r] = girsanov_weight(record, 0, DeviationStrategy::always_hold(), cfg.model);
  }
  const double m = mean(weights);
  const double se = std::sqrt(sample_variance(weights) / static_cast<double>(reps));
  CHECK(std::abs(m - 1.0) <= 3.0 * se);
}

namespace {

/// Direct estimate of the deviated payoff by simulating under the deviated
/// measure itself: the deviated system runs on plain Brownian increments
/// while the strategy-defining base system gains the compensating drift.
double deviated_payoff_direct(const NashGapConfig& cfg, const DeviationStrategy& deviation,
                              std::size_t reps, std::uint64_t seed_salt) {
  const std::size_t n = cfg.sim.n_particles;
  const std::size_t steps = cfg.sim.n_steps;
  const double dt = cfg.sim.horizon / static_cast<double>(steps);
  const double sqrt_dt = std::sqrt(dt);
  std::vector<double> payoff(reps);
  for (std::size_t r = 0; r < reps; ++r) {
    SimConfig rep_cfg = cfg.sim;
    rep_cfg.seed = replication_seed(cfg.sim.seed + seed_salt, r);
    const NoiseField noise(rep_cfg.seed, kPathStream);
    auto base = mutualhold::detail::draw_initial_states(rep_cfg);
    auto dev = base;
    std::vector<double> beta(n), pi(n), b(n), sigma(n), b_dev(n), sigma_dev(n), dw(n);
    for (std::size_t k = 0; k < steps; ++k) {
      const double t = dt * static_cast<double>(k);
      for (std::size_t p = 0; p < n; ++p) dw[p] = sqrt_dt * noise.normal(p, k);
      const auto induced = mfg_induced_pi(cfg.sim.model, t, base);
      const Measure1D base_law = empirical_from_samples(base);
      for (std::size_t p = 0; p < n; ++p) {
        b[p] = eval_b(cfg.sim.model, t, base[p], base_law);
        sigma[p] = eval_sigma(cfg.sim.model, t, base[p], base_law);
        pi[p] = static_cast<double>(induced.pi[p]);
      }
      deviation.evaluate(dev, induced.pi, beta);
      const auto dev_at_base = deviated_coefficients_closed_form(pi, 0, beta, b, sigma);
      const double psi = (dev_at_base.drift[0] - equilibrium_drift(b[0], induced.c)) /
                         dev_at_base.vol_at(0, 0);

      // Deviated system: plain increments.
      const Measure1D dev_law = empirical_from_samples(dev);
      for (std::size_t p = 0; p < n; ++p) {
        b_dev[p] = eval_b(cfg.sim.model, t, dev[p], dev_law);
        sigma_dev[p] = eval_sigma(cfg.sim.model, t, dev[p], dev_law);
      }
      const auto dev_cf = mutualhold::detail::deviated_closed_form(pi, 0, beta, b_dev, sigma_dev);
      std::vector<double> dev_next(n);
      for (std::size_t p = 0; p < n; ++p) {
        double noise_term = 0.0;
        for (std::size_t q = 0; q < n; ++q) noise_term += dev_cf.vol(p, q, sigma_dev, 0) * dw[q];
        dev_next[p] = dev[p] + dev_cf.drift[p] * dt + noise_term;
      }

      // Base system under the deviated measure: drift gains Sigma^{.,0} psi.
      const auto base_cf = game_coefficients_closed_form(pi, b, sigma);
      std::vector<double> base_next(n);
      for (std::size_t p = 0; p < n; ++p) {
        double noise_term = 0.0;
        for (std::size_t q = 0; q < n; ++q) noise_term += base_cf.vol_at(p, q) * dw[q];
        base_next[p] =
            base[p] + (base_cf.drift[p] + base_cf.vol_at(p, 0) * psi) * dt + noise_term;
      }
      base = std::move(base_next);
      dev = std::move(dev_next);
    }
    payoff[r] = dev[0];
  }
  return mean(payoff);
}

}  // namespace

TEST_CASE("importance-weighted payoff matches direct deviated-measure simulation", "[nplayer]") {
  NashGapConfig cfg;
  cfg.sim.n_particles = 6;
  cfg.sim.n_steps = 8;
  cfg.sim.horizon = 0.5;
  cfg.sim.seed = 4242;
  cfg.sim.model = CoefficientModel::ou(1.0, -0.5, 1.0);
  cfg.sim.model.drift_bound = 10.0;
  cfg.sim.initial = GaussianSpec{-0.5, 0.5};
  cfg.sim.threads = 2;
  cfg.deviations = {DeviationStrategy::always_hold()};
  cfg.replications = 4000;

  const auto report = nash_gap_estimate(cfg);
  const double direct = deviated_payoff_direct(cfg, cfg.deviations[0], 4000, 999);
  // Two independent Monte-Carlo routes to E[U(X_T)] under the deviation.
  CHECK(report.rows[0].j_dev == Approx(direct).margin(4.0 * report.rows[0].se_gain + 0.02));
}

TEST_CASE("gap estimator contract checks", "[nplayer]") {
  NashGapConfig cfg;
  cfg.sim.n_particles = 4;
  cfg.sim.n_steps = 4;
  cfg.sim.horizon = 1.0;
  cfg.sim.seed = 9;
  cfg.sim.model = CoefficientModel::ou(1.0, -0.5, 1.0);
  cfg.sim.initial = GaussianSpec{-0.5, 0.5};
  cfg.deviations = {DeviationStrategy::never_hold()};
  cfg.replications = 150;

  CHECK_THROWS_AS(nash_gap_estimate(cfg), std::invalid_argument);  // no drift bound
  cfg.sim.model.drift_bound = 5.0;
  cfg.replications = 50;
  CHECK_THROWS_AS(nash_gap_estimate(cfg), std::invalid_argument);  // too few replications
  cfg.replications = 150;
  cfg.deviations.clear();
  CHECK_THROWS_AS(nash_gap_estimate(cfg), std::invalid_argument);  // empty family
}

TEST_CASE("null-only deviation family reports exactly zero gain", "[nplayer]") {
  NashGapConfig cfg;
  cfg.sim.n_particles = 5;
  cfg.sim.n_steps = 6;
  cfg.sim.horizon = 1.0;
  cfg.sim.seed = 77;
  cfg.sim.model = CoefficientModel::ou(1.0, -0.5, 1.0);
  cfg.sim.model.drift_bound = 5.0;
  cfg.sim.initial = GaussianSpec{-0.5, 0.5};
  cfg.deviations = {DeviationStrategy::null_deviation()};
  cfg.replications = 200;
  const auto report = nash_gap_estimate(cfg);
  REQUIRE(report.rows.size() == 1);
  CHECK(report.rows[0].gain == 0.0);
  CHECK(report.rows[0].se_gain == 0.0);
  CHECK(report.rows[0].excluded == 0);
  CHECK(report.eps_hat == 0.0);
  CHECK(report.se_j_base > 0.0);
}

TEST_CASE("buying losers never helps when every drift is negative", "[nplayer]") {
  NashGapConfig cfg;
  cfg.sim.n_particles = 8;
  cfg.sim.n_steps = 10;
  cfg.sim.horizon = 1.0;
  cfg.sim.seed = 123;
  cfg.sim.model = CoefficientModel::constant_sign(-1.0, 1.0);
  cfg.sim.model.drift_bound = 1.0;
  cfg.sim.initial = GaussianSpec{0.0, 1.0};
  cfg.sim.threads = 2;
  cfg.deviations = {DeviationStrategy::always_hold()};
  cfg.replications = 600;
  const auto report = nash_gap_estimate(cfg);
  CHECK(report.rows[0].gain <= 2.0 * report.rows[0].se_gain);
}

TEST_CASE("custom deviation tables interpolate on target states", "[nplayer]") {
  const auto table = DeviationStrategy::custom({-1.0, 1.0}, {0.0, 1.0}, "ramp");
  const std::vector<double> targets{-2.0, 0.0, 2.0};
  const std::vector<std::uint8_t> pi{1, 0, 1};
  std::vector<double> beta(3);
  table.evaluate(targets, pi, beta);
  CHECK(beta[0] == 0.0);
  CHECK(beta[1] == Approx(0.5));
  CHECK(beta[2] == 1.0);

  CHECK_THROWS_AS(DeviationStrategy::custom({0.0, 1.0}, {0.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(DeviationStrategy::custom({1.0, 0.0}, {0.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(DeviationStrategy::custom({1.0}, {0.0, 1.0}), std::invalid_argument);

  NashGapConfig cfg;
  cfg.sim.n_particles = 6;
  cfg.sim.n_steps = 6;
  cfg.sim.horizon = 0.5;
  cfg.sim.seed = 808;
  cfg.sim.model = CoefficientModel::ou(1.0, -0.5, 1.0);
  cfg.sim.model.drift_bound = 5.0;
  cfg.sim.initial = GaussianSpec{-0.5, 0.5};
  cfg.deviations = {table};
  cfg.replications = 200;
  const auto report = nash_gap_estimate(cfg);
  CHECK(report.rows[0].deviation == "ramp");
  CHECK(report.rows[0].excluded == 0);
  CHECK(std::isfinite(report.rows[0].gain));
}

TEST_CASE("gap estimates are identical at any thread count", "[nplayer]") {
  NashGapConfig cfg;
  cfg.sim.n_particles = 6;
  cfg.sim.n_steps = 8;
  cfg.sim.horizon = 1.0;
  cfg.sim.seed = 606;
  cfg.sim.model = CoefficientModel::ou(1.0, -0.5, 1.0);
  cfg.sim.model.drift_bound = 5.0;
  cfg.sim.initial = GaussianSpec{-0.5, 0.5};
  cfg.deviations = {DeviationStrategy::never_hold(), DeviationStrategy::always_hold()};
  cfg.replications = 120;

  cfg.sim.threads = 1;
  const auto serial = nash_gap_estimate(cfg);
  cfg.sim.threads = 3;
  const auto parallel = nash_gap_estimate(cfg);
  REQUIRE(serial.rows.size() == parallel.rows.size());
  for (std::size_t d = 0; d < serial.rows.size(); ++d) {
    CHECK(serial.rows[d].gain == parallel.rows[d].gain);
    CHECK(serial.rows[d].se_gain == parallel.rows[d].se_gain);
  }
  CHECK(serial.j_base == parallel.j_base);
}

TEST_CASE("player-averaged gains agree with the symmetric estimate", "[nplayer]") {
  NashGapConfig cfg;
  cfg.sim.n_particles = 3;
  cfg.sim.n_steps = 4;
  cfg.sim.horizon = 0.5;
  cfg.sim.seed = 55;
  cfg.sim.model = CoefficientModel::ou(1.0, -0.5, 1.0);
  cfg.sim.model.drift_bound = 5.0;
  cfg.sim.initial = GaussianSpec{-0.5, 0.5};
  cfg.deviations = {DeviationStrategy::never_hold()};
  cfg.replications = 400;

  const auto single = nash_gap_estimate(cfg);
  cfg.average_over_players = true;
  const auto averaged = nash_gap_estimate(cfg);
  CHECK(averaged.rows[0].gain ==
        Approx(single.rows[0].gain)
            .margin(3.0 * (single.rows[0].se_gain + averaged.rows[0].se_gain) + 1e-6));
}
