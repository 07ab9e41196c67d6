#pragma once

// Counter-based random streams. A stream is identified by (seed, stream_id);
// child streams are derived by hashing a child index into the id, so any
// sample can regenerate its own noise without touching shared state.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace smoothcert {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class RandomStream {
 public:
  constexpr RandomStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id), key_(splitmix64(seed ^ splitmix64(stream_id))) {}

  constexpr std::uint64_t seed() const { return seed_; }
  constexpr std::uint64_t stream_id() const { return stream_id_; }

  /// Independent child stream; the parent's position is irrelevant.
  constexpr RandomStream derive(std::uint64_t child) const {
    return RandomStream(seed_, splitmix64(stream_id_ + 0x632be59bd9b4e019ULL * (child + 1)));
  }

  constexpr std::uint64_t next_u64() {
    counter_ += 0x9e3779b97f4a7c15ULL;
    return splitmix64(key_ + counter_);
  }

  /// Uniform in (0, 1], 53 bits.
  double next_unit_open_zero() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  /// Uniform in [0, 1).
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Fills out with i.i.d. N(0, 1) draws (Box-Muller, pairs).
  void fill_standard_normal(std::span<double> out) {
    std::size_t i = 0;
    for (; i + 1 < out.size(); i += 2) {
      const auto [a, b] = normal_pair();
      out[i] = a;
      out[i + 1] = b;
    }
    if (i < out.size()) out[i] = normal_pair().first;
  }

  double next_standard_normal() { return normal_pair().first; }

 private:
  std::pair<double, double> normal_pair() {
    const double u1 = next_unit_open_zero();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(theta), r * std::sin(theta)};
  }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace smoothcert
