#pragma once

// Counter-based random streams. Each draw is a pure function of
// (seed, stream, counter), so parallel generation is schedule-independent
// and identical inputs give byte-identical output.

#include <cmath>
#include <cstdint>

namespace fairagg {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Stateless keyed generator: uniform and normal variates indexed by counter.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_(detail::splitmix64(seed ^ detail::splitmix64(stream * 0x9e3779b97f4a7c15ULL + 1))) {}

  std::uint64_t bits(std::uint64_t counter) const {
    return detail::splitmix64(key_ ^ detail::splitmix64(counter + 0x632be59bd9b4e019ULL));
  }

  /// Uniform in (0, 1), never exactly 0 or 1.
  double uniform(std::uint64_t counter) const {
    return (static_cast<double>(bits(counter) >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  /// Standard normal via Box-Muller on two counter slots (uses 2*counter, 2*counter+1).
  double normal(std::uint64_t counter) const {
    double u1 = uniform(2 * counter);
    double u2 = uniform(2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

 private:
  std::uint64_t key_;
};

/// Sequential convenience wrapper around CounterRng.
class SeqRng {
 public:
  explicit SeqRng(std::uint64_t seed, std::uint64_t stream = 0) : rng_(seed, stream) {}

  double uniform() { return rng_.uniform(counter_++); }
  double normal() {
    double u1 = rng_.uniform(counter_++);
    double u2 = rng_.uniform(counter_++);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t bits() { return rng_.bits(counter_++); }

 private:
  CounterRng rng_;
  std::uint64_t counter_ = 0;
};

}  // namespace fairagg
