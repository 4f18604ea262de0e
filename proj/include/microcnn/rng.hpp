#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace microcnn {

/// Deterministic xoshiro256** generator whose 256-bit state is expanded from
/// a 64-bit seed with splitmix64. Uses only integer arithmetic, so a given
/// seed produces the same stream on every platform and compiler.
///
/// Derived draws:
///   next_double()  top 53 bits / 2^53, in [0, 1)
///   next_float()   top 24 bits / 2^24, in [0, 1)
///   below(n)       unbiased integer in [0, n) by rejection
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  float next_float() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  /// Uniform float in [lo, hi).
  float uniform(float lo, float hi) {
    if (!(lo < hi)) throw std::invalid_argument("Rng::uniform requires lo < hi");
    const double u = next_double();
    float value = static_cast<float>(static_cast<double>(lo) +
                                     (static_cast<double>(hi) - lo) * u);
    if (value >= hi) value = std::nextafter(hi, lo);
    if (value < lo) value = lo;
    return value;
  }

  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below requires n > 0");
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  bool bernoulli(double p) { return next_double() < p; }

  /// Fresh generator seeded from this stream; used to hand independent
  /// streams to sub-components (e.g. one per dropout layer).
  Rng split() { return Rng(next_u64()); }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t state_[4]{};
};

/// Fisher-Yates shuffle driven by Rng::below, so the permutation depends only
/// on the seed (std::shuffle's algorithm is implementation-defined).
template <typename RandomIt>
void shuffle(RandomIt first, RandomIt last, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = rng.below(i);
    using std::swap;
    swap(first[i - 1], first[j]);
  }
}

}  // namespace microcnn
