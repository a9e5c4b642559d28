#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace pesl {

/// splitmix64 finalizer; a bijective mixer on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Folds a stream name and any number of counters into a seed. Used to carve
/// independent, replayable sub-streams (weights, shuffles, mixup, data) out of
/// one configuration seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream,
                          std::initializer_list<std::uint64_t> counters = {});

/// Seeded generator with platform-independent bounded draws. std::uniform_*
/// distributions are implementation-defined, which would break replay of
/// dual runs across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform integer in [0, n), n >= 1, by rejection sampling.
  std::uint64_t below(std::uint64_t n);
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  /// Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
};

}  // namespace pesl
