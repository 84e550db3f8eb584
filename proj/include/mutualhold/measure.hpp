#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "mutualhold/numerics.hpp"

namespace mutualhold {

/// Weighted atomic probability measure on the real line. Weights are kept
/// normalized; duplicated atoms are allowed and never coalesced.
struct Measure1D {
  std::vector<double> atoms;
  std::vector<double> weights;

  void validate() const {
    if (atoms.empty() || atoms.size() != weights.size())
      throw std::invalid_argument("Measure1D: atoms/weights must be non-empty and equal length");
    for (double a : atoms)
      if (!std::isfinite(a)) throw std::invalid_argument("Measure1D: non-finite atom");
    for (double w : weights) {
      if (!std::isfinite(w) || w < 0.0)
        throw std::invalid_argument("Measure1D: weights must be finite and non-negative");
    }
    const double total = pairwise_sum(weights);
    if (std::abs(total - 1.0) > 1e-12)
      throw std::invalid_argument("Measure1D: weights must sum to 1 within 1e-12");
  }

  double mean() const {
    return pairwise_sum(atoms.size(), [&](std::size_t i) { return weights[i] * atoms[i]; });
  }

  double variance() const {
    const double m = mean();
    return pairwise_sum(atoms.size(), [&](std::size_t i) {
      const double d = atoms[i] - m;
      return weights[i] * d * d;
    });
  }
};

/// Builds an atomic measure from samples; uniform weights when omitted,
/// otherwise weights are normalized to sum 1.
inline Measure1D empirical_from_samples(std::span<const double> values,
                                        std::span<const double> weights = {}) {
  if (values.empty()) throw std::invalid_argument("empirical_from_samples: empty input");
  for (double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("empirical_from_samples: non-finite value");
  Measure1D m;
  m.atoms.assign(values.begin(), values.end());
  const std::size_t n = values.size();
  if (weights.empty()) {
    m.weights.assign(n, 1.0 / static_cast<double>(n));
  } else {
    if (weights.size() != n)
      throw std::invalid_argument("empirical_from_samples: weights length mismatch");
    for (double w : weights)
      if (!std::isfinite(w) || w < 0.0)
        throw std::invalid_argument("empirical_from_samples: negative or non-finite weight");
    const double total = pairwise_sum(weights);
    if (total <= 0.0) throw std::invalid_argument("empirical_from_samples: weights sum to zero");
    m.weights.resize(n);
    for (std::size_t i = 0; i < n; ++i) m.weights[i] = weights[i] / total;
  }
  return m;
}

/// Quadratic optimal-transport distance between two atomic measures, computed
/// exactly on the merged partition of cumulative weights (quantile coupling).
inline double wasserstein2(const Measure1D& m1, const Measure1D& m2) {
  m1.validate();
  m2.validate();

  auto sorted_view = [](const Measure1D& m) {
    std::vector<std::size_t> idx(m.atoms.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return m.atoms[a] < m.atoms[b]; });
    std::vector<double> atoms(idx.size()), cum(idx.size());
    CompensatedSum running;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      atoms[k] = m.atoms[idx[k]];
      running.add(m.weights[idx[k]]);
      cum[k] = running.value();
    }
    cum.back() = 1.0;
    return std::pair{std::move(atoms), std::move(cum)};
  };

  const auto [a1, c1] = sorted_view(m1);
  const auto [a2, c2] = sorted_view(m2);

  CompensatedSum acc;
  std::size_t i = 0, j = 0;
  double prev = 0.0;
  while (i < a1.size() && j < a2.size()) {
    const double next = std::min(c1[i], c2[j]);
    const double seg = next - prev;
    if (seg > 0.0) {
      const double d = a1[i] - a2[j];
      acc.add(seg * d * d);
    }
    prev = next;
    if (c1[i] <= next) ++i;
    if (c2[j] <= next) ++j;
  }
  return std::sqrt(std::max(0.0, acc.value()));
}

/// Gaussian-kernel mixture density sum_j w_j phi((x - a_j)/h)/h on each grid
/// point. The grid must be nondecreasing.
inline std::vector<double> kde_density(const Measure1D& m, double bandwidth,
                                       std::span<const double> grid) {
  m.validate();
  if (!(bandwidth > 0.0)) throw std::invalid_argument("kde_density: bandwidth must be positive");
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (grid[g] < grid[g - 1]) throw std::invalid_argument("kde_density: grid must be sorted");
  constexpr double inv_sqrt_two_pi = 0.39894228040143267793994605993438;
  std::vector<double> out(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double x = grid[g];
    out[g] = pairwise_sum(m.atoms.size(), [&](std::size_t j) {
      const double z = (x - m.atoms[j]) / bandwidth;
      return m.weights[j] * inv_sqrt_two_pi * std::exp(-0.5 * z * z) / bandwidth;
    });
  }
  return out;
}

/// Silverman's reference bandwidth 1.06 * std * n^(-1/5), floored away from
/// zero for degenerate samples.
inline double silverman_bandwidth(const Measure1D& m) {
  m.validate();
  const double sd = std::sqrt(m.variance());
  const double n = static_cast<double>(m.atoms.size());
  const double h = 1.06 * sd * std::pow(n, -0.2);
  return h > 0.0 ? h : 1e-3;
}

/// Normal law specified by mean and (positive) variance.
struct GaussianSpec {
  double mean = 0.0;
  double variance = 1.0;

  void validate() const {
    if (!std::isfinite(mean) || !std::isfinite(variance) || !(variance > 0.0))
      throw std::invalid_argument("GaussianSpec: variance must be positive and finite");
  }
};

struct PdfCdf {
  double pdf;
  double cdf;
};

inline PdfCdf gaussian_pdf_cdf(double x, const GaussianSpec& spec) {
  spec.validate();
  constexpr double inv_sqrt_two_pi = 0.39894228040143267793994605993438;
  constexpr double inv_sqrt_two = 0.70710678118654752440084436210485;
  const double sd = std::sqrt(spec.variance);
  const double z = (x - spec.mean) / sd;
  const double pdf = inv_sqrt_two_pi * std::exp(-0.5 * z * z) / sd;
  const double cdf = 0.5 * std::erfc(-z * inv_sqrt_two);
  return {pdf, cdf};
}

/// E[(a + Y)^+] for Y ~ N(0, sd^2); closed form used for solver brackets.
inline double expected_positive_part(double a, double sd) {
  if (!(sd > 0.0)) return std::max(a, 0.0);
  const GaussianSpec std_normal{0.0, 1.0};
  const auto [pdf, cdf] = gaussian_pdf_cdf(a / sd, std_normal);
  return a * cdf + sd * pdf;
}

}  // namespace mutualhold
