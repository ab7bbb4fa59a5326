#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace orpod {

// Deterministic random streams. Every consumer derives its own stream from
// (root seed, purpose tag, indices), so adding or removing one consumer
// never shifts the draws seen by another. Distribution sampling is done by
// hand on top of the raw engine output to keep results independent of the
// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform double in [0, 1).
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Rejection sampling, unbiased.
  uint64_t uniform_int(uint64_t n);

  // Standard normal via Box-Muller (one spare cached).
  double normal();

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// splitmix64 finalizer; the basis of all stream derivation.
uint64_t mix64(uint64_t x);

// Combines a seed with a tag string and up to three indices into a new
// stream seed.
uint64_t stream_seed(uint64_t seed, std::string_view tag, uint64_t a = 0,
                     uint64_t b = 0, uint64_t c = 0);

inline Rng derive_stream(uint64_t seed, std::string_view tag, uint64_t a = 0,
                         uint64_t b = 0, uint64_t c = 0) {
  return Rng(stream_seed(seed, tag, a, b, c));
}

}  // namespace orpod
