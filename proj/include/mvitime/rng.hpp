#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace mvitime {

// Deterministic RNG with named substreams. All randomness in the project
// flows from one root seed; substreams keep components re-runnable
// independently of each other and of thread schedule.
//
// The generator is splitmix64, which is stable across platforms (unlike
// std::uniform_int_distribution, whose output is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, bound), bound > 0. Rejection sampling, unbiased.
  std::uint64_t uniform(std::uint64_t bound) {
    const std::uint64_t threshold = -bound % bound;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  // Uniform in [0, 1).
  double uniform_real() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform_real();
    double u2 = uniform_real();
    while (u1 <= 0.0) u1 = uniform_real();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Derive an independent stream from a name and an index, e.g.
  // rng.substream("augment", epoch_index).
  Rng substream(std::string_view name, std::uint64_t index = 0) const {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ state_;
    for (char c : name) {
      h ^= static_cast<std::uint8_t>(c);
      h *= 0x100000001b3ULL;
    }
    h ^= index + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return Rng(h);
  }

  // In-place Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform(i)]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace mvitime
