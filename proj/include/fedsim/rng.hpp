#pragma once

#include <cmath>
#include <cstdint>

namespace fedsim {

// Purpose tags keep randomness of different subsystems on disjoint streams,
// so e.g. switching compressors never perturbs minibatch sampling.
enum class StreamPurpose : std::uint64_t {
  Minibatch = 0x6d696e69,
  Compression = 0x636f6d70,
  Sampling = 0x73616d70,
  Partition = 0x70617274,
  InitNoise = 0x696e6974,
};

// SplitMix64 finalizer (Steele, Lea, Flood 2014). Full-avalanche 64-bit mix.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic counter-based stream keyed by (seed, round, client, purpose).
// The key is folded through mix64 and the sequence is SplitMix64 from the
// resulting state, so distinct keys give statistically independent streams
// and the same key always replays the same sequence, independent of any
// global state or execution schedule.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t round, std::uint64_t client,
            StreamPurpose purpose)
      : state_(mix64(mix64(mix64(mix64(seed) ^ round) ^ client) ^
                     static_cast<std::uint64_t>(purpose))) {}

  std::uint64_t next_u64() { return mix64(state_ += 0x9e3779b97f4a7c15ULL); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n), unbiased via rejection.
  std::uint64_t uniform_below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller; second deviate cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 == 0.0);
    u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 6.283185307179586476925286766559 * u2;
    cached_ = radius * std::sin(angle);
    has_cached_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace fedsim
