#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace mutualhold {

/// SplitMix64 finalizer; used to derive stream keys from a user seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Philox 4x32 with 10 rounds: a keyed counter-based generator. Stateless,
/// so any (counter, key) cell can be evaluated on any thread in any order.
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
           static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
           static_cast<std::uint32_t>(p0)};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

inline std::uint64_t derive_stream_key(std::uint64_t seed, std::uint64_t stream) {
  return mix64(mix64(seed) ^ mix64(stream * 0xD1B54A32D192ED03ULL + 0x8BB84B93962EACC9ULL));
}

/// Substream seed for an independent replication; replications can then run
/// in parallel while each stays deterministic.
inline std::uint64_t replication_seed(std::uint64_t seed, std::uint64_t replication) {
  return mix64(seed ^ mix64(0x2545F4914F6CDD1DULL * (replication + 1)));
}

inline constexpr std::uint64_t kPathStream = 0;
inline constexpr std::uint64_t kInitStream = 1;

/// Deterministic noise indexed by (particle, step). Two fields built from the
/// same (seed, stream) return bit-identical variates regardless of the number
/// of worker threads or the order of evaluation.
class NoiseField {
 public:
  NoiseField(std::uint64_t seed, std::uint64_t stream)
      : key_{static_cast<std::uint32_t>(derive_stream_key(seed, stream)),
             static_cast<std::uint32_t>(derive_stream_key(seed, stream) >> 32)} {}

  /// Uniform variate in (0,1).
  double uniform(std::uint64_t particle, std::uint64_t step) const {
    const auto w = cell(particle, step);
    return to_unit(w[0], w[1]);
  }

  /// Standard normal variate (Box-Muller on two uniforms from one cell).
  double normal(std::uint64_t particle, std::uint64_t step) const {
    const auto w = cell(particle, step);
    const double u1 = to_unit(w[0], w[1]);
    const double u2 = to_unit(w[2], w[3]);
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

 private:
  std::array<std::uint32_t, 4> cell(std::uint64_t particle, std::uint64_t step) const {
    const std::array<std::uint32_t, 4> ctr = {
        static_cast<std::uint32_t>(particle), static_cast<std::uint32_t>(particle >> 32),
        static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32)};
    return philox4x32(ctr, key_);
  }

  static double to_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
    return static_cast<double>(bits >> 11) * 0x1.0p-53 + 0x1.0p-54;
  }

  std::array<std::uint32_t, 2> key_;
};

}  // namespace mutualhold
