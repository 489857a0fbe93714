#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace ctxtune {

// splitmix64 finalizer. Used to spread seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives a decorrelated child seed from a base seed and up to three stream
// tags (member id, episode index, ...). Every RNG in a run is seeded through
// this so that parallel lanes never share a stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = mix64(base ^ 0x6a09e667f3bcc909ULL);
  s = mix64(s ^ a);
  s = mix64(s ^ b);
  s = mix64(s ^ c);
  return s;
}

// Seeded RNG with the distributions this project needs. Gaussian draws use
// the polar method instead of std::normal_distribution so the stream is
// pinned by this code, not by the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n > 0. Rejection sampling, no modulo bias.
  std::int64_t uniform_int(std::int64_t n) {
    const auto un = static_cast<std::uint64_t>(n);
    const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
    const std::uint64_t limit = max - max % un;
    std::uint64_t r;
    do {
      r = eng_();
    } while (r >= limit);
    return static_cast<std::int64_t>(r % un);
  }

  // Standard normal via Marsaglia's polar method; the spare variate is
  // discarded so each call consumes a self-contained chunk of the stream.
  double normal() {
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    return u * std::sqrt(-2.0 * std::log(s) / s);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

 private:
  std::mt19937_64 eng_;
};

}  // namespace ctxtune
