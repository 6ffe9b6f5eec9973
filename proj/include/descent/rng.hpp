#pragma once

// Deterministic, portable random number generation.
//
// All randomness in the library flows through SplitMix64 streams.  Gaussian
// variates use the Marsaglia polar method on top of those streams (the
// standard-library distributions are implementation-defined and therefore
// not reproducible across toolchains).
//
// Counter-based derivation: derive_stream(seed, tag, index) gives every
// (purpose, sample index) pair its own stream, so generated data does not
// depend on the order in which samples are materialized.

#include <cmath>
#include <cstdint>
#include <vector>

namespace descent {

inline uint64_t splitmix64_next(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Stream tags keep independent uses of the same run seed decorrelated.
enum class StreamTag : uint64_t {
  init = 0x11,
  data_clean = 0x22,
  data_noise = 0x33,
  data_label = 0x44,
  shuffle = 0x55,
  eval_noise = 0x66,
  test = 0x77,
};

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // One warm-up scramble so small seeds do not yield small first outputs.
    splitmix64_next(state_);
  }

  uint64_t next_u64() { return splitmix64_next(state_); }

  // Uniform in (0, 1): 53 mantissa bits, never exactly 0 or 1.
  double uniform() {
    uint64_t bits = next_u64() >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  // Uniform in [lo, hi].
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Marsaglia polar method; caches the second variate of each accepted pair.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double scale = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * scale;
    has_spare_ = true;
    return u * scale;
  }

  int uniform_int(int n) {  // in [0, n)
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Independent stream for (seed, tag, index); order-free by construction.
inline Rng derive_stream(uint64_t seed, StreamTag tag, uint64_t index = 0) {
  uint64_t s = seed;
  uint64_t h = splitmix64_next(s) ^ (static_cast<uint64_t>(tag) * 0x9e3779b97f4a7c15ull);
  h ^= splitmix64_next(h) + index * 0xd1b54a32d192ed03ull;
  return Rng(h);
}

inline std::vector<double> gaussian_vector(Rng& rng, size_t n) {
  std::vector<double> out(n);
  for (auto& x : out) x = rng.gaussian();
  return out;
}

// Fisher-Yates shuffle of [0, n) index vector.
inline std::vector<int> shuffled_indices(int n, Rng& rng) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int i = n - 1; i > 0; --i) {
    int j = rng.uniform_int(i + 1);
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

}  // namespace descent
