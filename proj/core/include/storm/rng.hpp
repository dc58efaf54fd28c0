#pragma once

#include <cmath>
#include <complex>
#include <cstdint>

namespace storm {

// Deterministic, seedable random source. Self-contained (no std::mt19937 /
// std::normal_distribution) so that streams are byte-reproducible across
// standard-library implementations, which checkpoint and report determinism
// tests rely on.
//
// Generator: xoshiro256++ seeded via splitmix64 expansion.

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derive a child seed from a root seed and up to two stream tags. Used to give
// every utterance / batch item / sampler chain its own independent stream so
// results do not depend on processing order or thread count.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a,
                                 std::uint64_t b = 0) {
  std::uint64_t s = root;
  (void)splitmix64_next(s);
  s ^= 0x517cc1b727220a95ULL * (a + 1);
  (void)splitmix64_next(s);
  s ^= 0x2545f4914f6cdd1dULL * (b + 1);
  return splitmix64_next(s);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : state_) w = splitmix64_next(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0, 1): 53 random mantissa bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n). n must be > 0. Rejection-free modulo is fine here: n is
  // always far below 2^64 so the bias is immeasurable, but keep rejection
  // sampling anyway so the stream is exactly unbiased.
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t limit = n * ((~0ULL) / n);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  // Standard normal via Box-Muller; one spare cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Circularly-symmetric complex normal with unit TOTAL variance:
  // z = (n1 + i*n2)/sqrt(2), so E|z|^2 = 1 (variance 1/2 per real part).
  std::complex<double> complex_normal() {
    const double n1 = normal();
    const double n2 = normal();
    return {n1 * 0.7071067811865475244, n2 * 0.7071067811865475244};
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace storm
