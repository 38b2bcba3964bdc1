#pragma once

#include <complex>
#include <cstdint>
#include <random>
#include <string_view>
#include <utility>

namespace xlce {

/// FNV-1a 64-bit hash. Used for stream tags and config hashes (not security).
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t mix64(std::uint64_t z) {
  // SplitMix64 finalizer (Steele, Lea, Flood 2014).
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from (master seed, tag, index).
/// All randomness in the project flows through named streams so that train /
/// validation / test / init draws never overlap and any per-sample stream can
/// be reproduced in isolation.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t index = 0) {
  std::uint64_t z = mix64(master + 0x9E3779B97F4A7C15ull);
  z = mix64(z ^ fnv1a64(tag));
  z = mix64(z ^ (index + 0x9E3779B97F4A7C15ull));
  return z;
}

/// Deterministic PRNG: mt19937_64 engine, uniform doubles from the top 53
/// bits, Gaussians via Box-Muller. Every draw consumes a fixed number of
/// engine outputs, so sequences are reproducible bit-for-bit per seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// One standard-normal pair (Box-Muller). u1 is mapped to (0,1] so the
  /// log never sees zero and the draw count stays fixed.
  std::pair<double, double> gaussian_pair() {
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 2.0 * kPi * u2;
    return {r * std::cos(t), r * std::sin(t)};
  }

  double gaussian() { return gaussian_pair().first; }

  /// Circularly-symmetric complex Gaussian with E|z|^2 = variance.
  std::complex<double> cgaussian(double variance) {
    auto [a, b] = gaussian_pair();
    double s = std::sqrt(variance * 0.5);
    return {s * a, s * b};
  }

  /// Fisher-Yates index permutation of 0..n-1.
  std::vector<std::uint32_t> permutation(std::uint32_t n) {
    std::vector<std::uint32_t> p(n);
    for (std::uint32_t i = 0; i < n; ++i) p[i] = i;
    for (std::uint32_t i = n; i > 1; --i) {
      std::uint32_t j = static_cast<std::uint32_t>(eng_() % i);
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

 private:
  static constexpr double kPi = 3.141592653589793238462643383279502884;
  std::mt19937_64 eng_;
};

}  // namespace xlce
