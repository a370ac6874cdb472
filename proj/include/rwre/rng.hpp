#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace rwre {

/// SplitMix64 finalizer. Bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives a child key from a parent key and a counter.
constexpr std::uint64_t derive_key(std::uint64_t key, std::uint64_t counter) noexcept {
  return mix64(mix64(key) ^ mix64(counter ^ 0x2545f4914f6cdd1dULL));
}

/// Maps 64 random bits to a double in (0, 1].
inline double unit_open_closed(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

/// Counter-based stream: draw i is a pure function of (key, i), so any
/// subset of draws can be produced in any order or in parallel.
class CounterStream {
public:
  explicit constexpr CounterStream(std::uint64_t key) noexcept : key_(key) {}

  std::uint64_t bits(std::uint64_t counter) const noexcept {
    return derive_key(key_, counter);
  }
  /// Uniform on (0, 1].
  double uniform(std::uint64_t counter) const noexcept {
    return unit_open_closed(bits(counter));
  }
  CounterStream split(std::uint64_t child) const noexcept {
    return CounterStream(derive_key(key_ ^ 0x5851f42d4c957f2dULL, child));
  }
  std::uint64_t key() const noexcept { return key_; }

private:
  std::uint64_t key_;
};

/// Sequential stream for walkers; seeded from a split key.
class WalkStream {
public:
  explicit WalkStream(std::uint64_t key) : engine_(mix64(key)) {}

  /// Uniform on (0, 1].
  double uniform() { return unit_open_closed(engine_()); }
  /// Exponential with the given rate.
  double exponential(double rate) { return -std::log(uniform()) / rate; }
  std::uint64_t bits() { return engine_(); }

private:
  std::mt19937_64 engine_;
};

}  // namespace rwre
