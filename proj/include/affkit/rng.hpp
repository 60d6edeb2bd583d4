#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "affkit/common.hpp"

namespace affkit {

// splitmix64 mixing step, used for seed derivation.
constexpr uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Order-sensitive deterministic mix of stream identifiers into one seed.
/// Parallel consumers (per-env, per-candidate, per-trial) each derive their
/// own stream so results do not depend on execution order.
uint64_t derive_seed(std::initializer_list<uint64_t> words);

/// Deterministic RNG with explicitly pinned sampling algorithms so sequences
/// are identical across platforms and standard libraries. The engine is
/// std::mt19937_64 (fully specified); uniform and normal transforms are
/// hand-rolled rather than taken from <random> distributions, which the
/// standard leaves implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; consumes exactly two uniforms per pair.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  VecX normal_vector(int n) {
    VecX v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  VecX uniform_vector(int n, double lo, double hi) {
    VecX v(n);
    for (int i = 0; i < n; ++i) v[i] = uniform(lo, hi);
    return v;
  }

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<int> permutation(int n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace affkit
