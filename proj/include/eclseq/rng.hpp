#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace eclseq {

// Deterministic seeded generator. All randomness in the project flows through
// this class so that runs are reproducible from a single root seed. Sampling
// helpers are implemented here (not via std distributions) because the
// standard distributions are not bit-portable across library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(expand_seed(seed)) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  uint64_t uniform_below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::uniform_below: n must be > 0");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (lo > hi) throw std::invalid_argument("Rng::uniform_int: empty range");
    return lo + static_cast<int64_t>(uniform_below(static_cast<uint64_t>(hi - lo) + 1));
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Box-Muller with cached spare.
  double normal(double mean, double stddev) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mean + stddev * r * std::cos(theta);
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n), uniform without replacement.
  std::vector<size_t> sample_without_replacement(size_t n, size_t k) {
    if (k > n) throw std::invalid_argument("Rng::sample_without_replacement: k > n");
    std::vector<size_t> pool(n);
    for (size_t i = 0; i < n; ++i) pool[i] = i;
    // Partial Fisher-Yates: the first k slots become the sample.
    for (size_t i = 0; i < k; ++i) {
      const size_t j = i + static_cast<size_t>(uniform_below(n - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  }

 private:
  static uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  static std::mt19937_64 expand_seed(uint64_t seed) {
    uint64_t s = seed;
    std::seed_seq seq{static_cast<uint32_t>(splitmix64(s)), static_cast<uint32_t>(splitmix64(s)),
                      static_cast<uint32_t>(splitmix64(s)), static_cast<uint32_t>(splitmix64(s)),
                      static_cast<uint32_t>(splitmix64(s)), static_cast<uint32_t>(splitmix64(s))};
    return std::mt19937_64(seq);
  }

  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a, used to hash stream labels into seed material.
inline uint64_t hash_label(std::string_view label) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const char c : label) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

// Seed material for an independent substream of a root seed, keyed by a
// label and up to two indices (e.g. epoch and batch).
inline uint64_t derive_seed(uint64_t root_seed, std::string_view label, uint64_t a = 0,
                            uint64_t b = 0) {
  uint64_t h = root_seed;
  auto mix = [&h](uint64_t x) {
    h ^= x + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
  };
  mix(hash_label(label));
  mix(a + 1);
  mix(b + 1);
  return h;
}

// Distinct keys give uncorrelated streams, so consuming one stream never
// shifts another.
inline Rng derive_stream(uint64_t root_seed, std::string_view label, uint64_t a = 0,
                         uint64_t b = 0) {
  return Rng(derive_seed(root_seed, label, a, b));
}

}  // namespace eclseq
