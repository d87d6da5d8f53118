#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace dram {

/// Seedable, splittable counter-based generator.
///
/// Output i of a stream is mix(key + i * gamma), so the whole state is the
/// (key, counter) pair. split() derives an independent child key, which lets
/// per-sample streams be reproduced regardless of scheduling order.
class Rng {
 public:
  struct State {
    std::uint64_t key = 0;
    std::uint64_t counter = 0;
    bool operator==(const State&) const = default;
  };

  explicit Rng(std::uint64_t seed = 0) : state_{mix(seed ^ 0x6a09e667f3bcc909ULL), 0} {}
  explicit Rng(State s) : state_(s) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Child stream identified by `id`; does not advance this stream.
  Rng split(std::uint64_t id) const {
    return Rng(State{mix(state_.key ^ mix(id + 0x3c6ef372fe94f82bULL)), 0});
  }

  std::uint64_t next_u64() { return mix(state_.key + (state_.counter++) * 0xd1b54a32d192ed03ULL); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n), unbiased (Lemire's multiply-and-reject).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    while (true) {
      const unsigned __int128 prod = static_cast<unsigned __int128>(next_u64()) * n;
      const auto low = static_cast<std::uint64_t>(prod);
      if (low >= n || low >= (-n) % n) return static_cast<std::uint64_t>(prod >> 64);
    }
  }

  /// Standard normal by Box-Muller; consumes two draws, keeps no spare.
  double normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  const State& state() const { return state_; }
  void set_state(const State& s) { state_ = s; }

 private:
  State state_;
};

}  // namespace dram
