#include "sfmim/rng.hpp"

#include <cmath>

namespace sfmim {

namespace {

constexpr uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr uint32_t kPhiloxW1 = 0xBB67AE85u;

inline uint32_t mulhi(uint32_t a, uint32_t b) {
  return static_cast<uint32_t>((static_cast<uint64_t>(a) * b) >> 32);
}

inline void philox_round(std::array<uint32_t, 4>& ctr, std::array<uint32_t, 2>& key) {
  const uint32_t hi0 = mulhi(kPhiloxM0, ctr[0]);
  const uint32_t lo0 = kPhiloxM0 * ctr[0];
  const uint32_t hi1 = mulhi(kPhiloxM1, ctr[2]);
  const uint32_t lo1 = kPhiloxM1 * ctr[2];
  ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  key[0] += kPhiloxW0;
  key[1] += kPhiloxW1;
}

}  // namespace

uint64_t mix64(uint64_t x) {
  // splitmix64 finalizer
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

Rng::Rng(uint64_t seed, uint64_t stream) : seed_(seed), stream_(stream) {}

Rng Rng::split(uint64_t substream) const {
  return Rng(seed_, mix64(stream_ ^ mix64(substream + 0x632BE59BD9B4E019ull)));
}

std::array<uint32_t, 4> Rng::block(uint64_t counter) const {
  std::array<uint32_t, 4> ctr = {
      static_cast<uint32_t>(counter),
      static_cast<uint32_t>(counter >> 32),
      static_cast<uint32_t>(stream_),
      static_cast<uint32_t>(stream_ >> 32),
  };
  std::array<uint32_t, 2> key = {
      static_cast<uint32_t>(seed_),
      static_cast<uint32_t>(seed_ >> 32),
  };
  for (int r = 0; r < 10; ++r) philox_round(ctr, key);
  return ctr;
}

uint64_t Rng::next_u64() {
  if (buf_pos_ >= 3) {
    buf_ = block(counter_++);
    buf_pos_ = 0;
  }
  const uint64_t lo = buf_[buf_pos_];
  const uint64_t hi = buf_[buf_pos_ + 1];
  buf_pos_ += 2;
  return (hi << 32) | lo;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

uint64_t Rng::below(uint64_t n) {
  if (n <= 1) return 0;
  const uint64_t limit = ~uint64_t{0} - ~uint64_t{0} % n;
  uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

double Rng::normal() {
  if (have_normal_) {
    have_normal_ = false;
    return cached_normal_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  cached_normal_ = r * std::sin(theta);
  have_normal_ = true;
  return r * std::cos(theta);
}

}  // namespace sfmim
