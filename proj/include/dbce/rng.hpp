#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace dbce {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Per-replication seed from a master seed: hashing the index (rather than
// jumping the stream) keeps seeds of earlier replications fixed when the
// replication count changes.
inline uint64_t derive_seed(uint64_t master, uint64_t index) {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x51ed270b3a5f4c21ULL));
}

// Seedable generator with pinned sampling algorithms: mt19937_64 words,
// 53-bit uniforms, Box-Muller normals (two words per draw). std::*_distribution
// is implementation-defined, so none of it is used here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1).
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double normal() {
    double u1 = uniform01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  int bernoulli(double p) { return uniform01() < p ? 1 : 0; }

  // Uniform integer in [0, bound) by rejection.
  uint64_t below(uint64_t bound) {
    const uint64_t threshold = (~bound + 1) % bound;  // 2^64 mod bound
    for (;;) {
      const uint64_t v = next_u64();
      if (v >= threshold) return v % bound;
    }
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace dbce
