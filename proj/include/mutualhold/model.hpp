#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "mutualhold/measure.hpp"

namespace mutualhold {

/// Mean-reverting drift theta*(mbar - x) with constant volatility sigbar.
struct OuParams {
  double theta = 1.0;
  double mbar = 0.0;
  double sigbar = 1.0;
};

/// Constant drift b0 (any sign) with constant volatility sig0.
struct ConstantSignParams {
  double b0 = 0.0;
  double sig0 = 1.0;
};

/// Piecewise-linear drift/volatility tables over a strictly increasing grid.
/// Interpolates in x by default, in t when time_dependent is set; clamped
/// (constant) extrapolation outside the grid keeps both coefficients bounded.
struct TabulatedParams {
  std::vector<double> grid;
  std::vector<double> b_values;
  std::vector<double> sigma_values;
  bool time_dependent = false;
};

inline constexpr double kDefaultSigmaFloor = 1e-10;

/// Provisions coefficients b(t,x,m), sigma(t,x,m). The measure argument is
/// part of the evaluation signature for forward compatibility; the shipped
/// variants do not read it. Volatility stays >= sigma_floor everywhere.
struct CoefficientModel {
  std::variant<OuParams, ConstantSignParams, TabulatedParams> variant = OuParams{};
  double sigma_floor = kDefaultSigmaFloor;
  std::optional<double> drift_bound;  // user-declared sup|b|, required by the gap estimator

  void validate() const {
    if (!(sigma_floor > 0.0) || !std::isfinite(sigma_floor))
      throw std::invalid_argument("CoefficientModel: sigma_floor must be positive");
    if (drift_bound && !(*drift_bound > 0.0))
      throw std::invalid_argument("CoefficientModel: drift_bound must be positive when set");
    if (const auto* ou = std::get_if<OuParams>(&variant)) {
      if (!(ou->theta > 0.0)) throw std::invalid_argument("CoefficientModel: theta must be positive");
      if (!std::isfinite(ou->mbar)) throw std::invalid_argument("CoefficientModel: mbar must be finite");
      if (!(ou->sigbar >= sigma_floor))
        throw std::invalid_argument("CoefficientModel: sigbar must be >= sigma_floor");
    } else if (const auto* cs = std::get_if<ConstantSignParams>(&variant)) {
      if (!std::isfinite(cs->b0)) throw std::invalid_argument("CoefficientModel: b0 must be finite");
      if (!(cs->sig0 >= sigma_floor))
        throw std::invalid_argument("CoefficientModel: sig0 must be >= sigma_floor");
    } else {
      const auto& tab = std::get<TabulatedParams>(variant);
      if (tab.grid.empty() || tab.grid.size() != tab.b_values.size() ||
          tab.grid.size() != tab.sigma_values.size())
        throw std::invalid_argument("CoefficientModel: table sizes must match and be non-empty");
      for (std::size_t i = 1; i < tab.grid.size(); ++i)
        if (!(tab.grid[i] > tab.grid[i - 1]))
          throw std::invalid_argument("CoefficientModel: table grid must be strictly increasing");
      for (std::size_t i = 0; i < tab.grid.size(); ++i) {
        if (!std::isfinite(tab.grid[i]) || !std::isfinite(tab.b_values[i]) ||
            !std::isfinite(tab.sigma_values[i]))
          throw std::invalid_argument("CoefficientModel: non-finite table entry");
        if (!(tab.sigma_values[i] >= sigma_floor))
          throw std::invalid_argument("CoefficientModel: sigma table entry below sigma_floor");
      }
    }
  }

  static CoefficientModel ou(double theta, double mbar, double sigbar,
                             double floor = kDefaultSigmaFloor) {
    CoefficientModel m{OuParams{theta, mbar, sigbar}, floor, std::nullopt};
    m.validate();
    return m;
  }

  static CoefficientModel constant_sign(double b0, double sig0,
                                        double floor = kDefaultSigmaFloor) {
    CoefficientModel m{ConstantSignParams{b0, sig0}, floor, std::nullopt};
    m.validate();
    return m;
  }

  static CoefficientModel tabulated(TabulatedParams params, double floor = kDefaultSigmaFloor) {
    CoefficientModel m{std::move(params), floor, std::nullopt};
    m.validate();
    return m;
  }
};

namespace detail {

inline double interpolate_clamped(std::span<const double> grid, std::span<const double> values,
                                  double x) {
  if (x <= grid.front()) return values.front();
  if (x >= grid.back()) return values.back();
  const auto it = std::upper_bound(grid.begin(), grid.end(), x);
  const std::size_t hi = static_cast<std::size_t>(it - grid.begin());
  const std::size_t lo = hi - 1;
  const double frac = (x - grid[lo]) / (grid[hi] - grid[lo]);
  return values[lo] + frac * (values[hi] - values[lo]);
}

}  // namespace detail

inline double eval_b(const CoefficientModel& model, double t, double x, const Measure1D& m) {
  (void)m;
  if (!std::isfinite(x)) throw std::invalid_argument("eval_b: non-finite state");
  if (const auto* ou = std::get_if<OuParams>(&model.variant)) return ou->theta * (ou->mbar - x);
  if (const auto* cs = std::get_if<ConstantSignParams>(&model.variant)) return cs->b0;
  const auto& tab = std::get<TabulatedParams>(model.variant);
  return detail::interpolate_clamped(tab.grid, tab.b_values, tab.time_dependent ? t : x);
}

inline double eval_sigma(const CoefficientModel& model, double t, double x, const Measure1D& m) {
  (void)m;
  if (!std::isfinite(x)) throw std::invalid_argument("eval_sigma: non-finite state");
  if (const auto* ou = std::get_if<OuParams>(&model.variant)) return ou->sigbar;
  if (const auto* cs = std::get_if<ConstantSignParams>(&model.variant)) return cs->sig0;
  const auto& tab = std::get<TabulatedParams>(model.variant);
  return detail::interpolate_clamped(tab.grid, tab.sigma_values, tab.time_dependent ? t : x);
}

enum class DriftSign { negative_everywhere, nonnegative_everywhere, mixed };

/// Standing-assumption check over a sample grid: uniform ellipticity of sigma,
/// drift sign classification (constant sign unlocks closed-form shortcuts
/// downstream), and growth diagnostics.
struct AssumptionReport {
  bool sigma_ok = true;
  std::vector<double> sigma_violations;  // grid points where sigma < sigma_floor
  DriftSign drift_sign = DriftSign::mixed;
  bool constant_drift_sign = false;
  double min_sigma = 0.0;
  double max_abs_b = 0.0;
  double max_growth_ratio = 0.0;  // max |b| / (1 + x^2) over the grid
};

inline AssumptionReport validate_assumptions(const CoefficientModel& model,
                                             std::span<const double> sample_grid,
                                             double t = 0.0) {
  // Intentionally does not run the construction-time validation: the point is
  // to report floor violations of hand-assembled models as data, not to throw.
  if (!(model.sigma_floor > 0.0))
    throw std::invalid_argument("validate_assumptions: sigma_floor must be positive");
  if (sample_grid.empty()) throw std::invalid_argument("validate_assumptions: empty grid");
  const Measure1D probe = empirical_from_samples(sample_grid);

  AssumptionReport report;
  report.min_sigma = std::numeric_limits<double>::infinity();
  bool any_negative = false;
  bool any_nonnegative = false;
  for (double x : sample_grid) {
    const double s = eval_sigma(model, t, x, probe);
    const double b = eval_b(model, t, x, probe);
    report.min_sigma = std::min(report.min_sigma, s);
    if (s < model.sigma_floor) {
      report.sigma_ok = false;
      report.sigma_violations.push_back(x);
    }
    (b < 0.0 ? any_negative : any_nonnegative) = true;
    report.max_abs_b = std::max(report.max_abs_b, std::abs(b));
    report.max_growth_ratio = std::max(report.max_growth_ratio, std::abs(b) / (1.0 + x * x));
  }
  if (any_negative && !any_nonnegative) {
    report.drift_sign = DriftSign::negative_everywhere;
  } else if (!any_negative) {
    report.drift_sign = DriftSign::nonnegative_everywhere;
  } else {
    report.drift_sign = DriftSign::mixed;
  }
  report.constant_drift_sign = report.drift_sign != DriftSign::mixed;
  return report;
}

}  // namespace mutualhold
