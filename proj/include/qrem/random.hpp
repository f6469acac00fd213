#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (key, counter), so realizations are reproducible bit-for-bit and can be
// generated in any order or in parallel.

#include <cstdint>
#include <initializer_list>

#include "qrem/gaussian.hpp"

namespace qrem {

/// splitmix64 finalizer; a bijection on 64-bit words with full avalanche.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Order-sensitive hash of a list of words. Used to derive task seeds as
/// hash(master_seed, n, seed_index) and per-permutation streams.
constexpr std::uint64_t hash_words(std::initializer_list<std::uint64_t> words) noexcept {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (std::uint64_t w : words) {
    h = mix64(h ^ mix64(w));
  }
  return h;
}

class CounterRng {
 public:
  constexpr explicit CounterRng(std::uint64_t key) noexcept : key_(mix64(key ^ 0x243f6a8885a308d3ULL)) {}

  constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
    return mix64(key_ ^ mix64(counter + 0x13198a2e03707344ULL));
  }

  /// Uniform on the open interval (0,1) with 53-bit resolution.
  constexpr double uniform(std::uint64_t counter) const noexcept {
    return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal(std::uint64_t counter) const noexcept { return normal_quantile(uniform(counter)); }

  /// Uniform integer in [0, bound) by 128-bit multiply-high; the bias is
  /// below 2^-40 for every bound used here (at most 2^24).
  std::uint64_t below(std::uint64_t counter, std::uint64_t bound) const noexcept {
    const unsigned __int128 prod = static_cast<unsigned __int128>(bits(counter)) * bound;
    return static_cast<std::uint64_t>(prod >> 64);
  }

  constexpr std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_;
};

/// Sequential view over a CounterRng, for consumers that want a stream.
class CounterStream {
 public:
  explicit CounterStream(std::uint64_t key) noexcept : rng_(key) {}

  double uniform() noexcept { return rng_.uniform(counter_++); }
  double normal() noexcept { return rng_.normal(counter_++); }
  std::uint64_t below(std::uint64_t bound) noexcept { return rng_.below(counter_++, bound); }

 private:
  CounterRng rng_;
  std::uint64_t counter_ = 0;
};

}  // namespace qrem
