#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "imagine/core/tensor.hpp"

namespace imagine {

inline uint64_t splitmix64(uint64_t& x) {
  uint64_t z = (x += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Mixes two seeds into one well-spread stream id.
inline uint64_t splitmix64_mix(uint64_t a, uint64_t b) {
  uint64_t x = a ^ (b * 0x9e3779b97f4a7c15ull);
  return splitmix64(x);
}

/// FNV-1a over a string, used to derive per-name parameter seeds so that
/// initialization does not depend on creation order.
inline uint64_t hash_name(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// xoshiro256++ with splitmix64 seeding. Self-contained so that streams are
/// bit-reproducible across compilers and platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& si : s_) si = splitmix64(x);
    has_cached_normal_ = false;
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  int uniform_int(int n) {
    IM_CHECK(n >= 1, "uniform_int needs n >= 1");
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  /// Standard normal via Box-Muller (deterministic, portable).
  double normal() {
    if (has_cached_normal_) {
      has_cached_normal_ = false;
      return cached_normal_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(a);
    has_cached_normal_ = true;
    return r * std::cos(a);
  }

  /// Index sampled from a probability vector (must sum to ~1).
  int categorical(const double* probs, int n) {
    double u = uniform();
    for (int i = 0; i < n; ++i) {
      u -= probs[i];
      if (u < 0.0) return i;
    }
    return n - 1;
  }

  template <typename T>
  void fill_normal(Tensor<T>& t, double stddev) {
    for (long i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(normal() * stddev);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4] = {};
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace imagine
