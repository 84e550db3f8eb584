#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mutualhold {

/// Thrown when a computation fails at runtime (solver breakdown, non-finite
/// state, exploded weight). Precondition violations use std::invalid_argument.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class Term>
double pairwise_sum_impl(std::size_t lo, std::size_t hi, const Term& term) {
  const std::size_t n = hi - lo;
  if (n <= 16) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += term(i);
    return s;
  }
  const std::size_t mid = lo + n / 2;
  return pairwise_sum_impl(lo, mid, term) + pairwise_sum_impl(mid, hi, term);
}

}  // namespace detail

/// Pairwise-tree reduction of term(0..n-1). The association order depends only
/// on n, so the result is identical for any thread count in the caller.
template <class Term>
double pairwise_sum(std::size_t n, const Term& term) {
  if (n == 0) return 0.0;
  return detail::pairwise_sum_impl<Term>(0, n, term);
}

inline double pairwise_sum(std::span<const double> xs) {
  return pairwise_sum(xs.size(), [&](std::size_t i) { return xs[i]; });
}

/// Neumaier-compensated running sum, for accumulations that must be updated
/// incrementally (prefix sums, per-step accumulators).
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double mean(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean: empty input");
  return pairwise_sum(xs) / static_cast<double>(xs.size());
}

/// Unbiased sample variance (n-1 denominator); 0 for a single observation.
inline double sample_variance(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("sample_variance: empty input");
  if (xs.size() == 1) return 0.0;
  const double m = mean(xs);
  const double ss = pairwise_sum(xs.size(), [&](std::size_t i) {
    const double d = xs[i] - m;
    return d * d;
  });
  return ss / static_cast<double>(xs.size() - 1);
}

/// Quantile of a sorted sample, linear interpolation between order statistics
/// (midpoint convention for even-sized medians).
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile_sorted: empty input");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile_sorted: q outside [0,1]");
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double h = q * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= n) return sorted[n - 1];
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

/// Runs fn(begin, end) over a partition of [0, n). Each index must be written
/// independently; partitioning cannot change results, only wall time.
/// min_parallel is the work size below which the loop stays serial; pass 1
/// when each index is itself expensive.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn, std::size_t min_parallel = 4096) {
  if (n == 0) return;
  const auto hw = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, std::max(1, hw > 0 ? 4 * hw : 8));
  if (threads == 1 || n < std::max<std::size_t>(min_parallel, 2)) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t chunk = (n + static_cast<std::size_t>(threads) - 1) / static_cast<std::size_t>(threads);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    const std::size_t begin = std::min(n, static_cast<std::size_t>(t) * chunk);
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end, t] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace mutualhold
