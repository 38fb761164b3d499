#pragma once

#include <array>
#include <cstdint>

namespace sfmim {

// Counter-based generator (Philox-4x32-10). A draw is a pure function of
// (key, stream, counter), so independent substreams can be consumed in any
// order without affecting each other. All stochastic behaviour in the
// project flows through this type from a single user seed.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0);

  // Independent substream derived from this one; order of derivation does
  // not matter, only the chain of ids.
  Rng split(uint64_t substream) const;

  uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Unbiased uniform integer in [0, n), n >= 1.
  uint64_t below(uint64_t n);
  // Standard normal via Box-Muller (pairs cached).
  double normal();

  uint64_t seed() const { return seed_; }
  uint64_t stream() const { return stream_; }

 private:
  std::array<uint32_t, 4> block(uint64_t counter) const;

  uint64_t seed_ = 0;
  uint64_t stream_ = 0;
  uint64_t counter_ = 0;
  std::array<uint32_t, 4> buf_{};
  int buf_pos_ = 4;  // consumed
  bool have_normal_ = false;
  double cached_normal_ = 0.0;
};

// 64-bit finalizer used for stream derivation and ad-hoc hashing of ids.
uint64_t mix64(uint64_t x);

}  // namespace sfmim
