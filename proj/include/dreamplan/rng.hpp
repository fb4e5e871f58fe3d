#pragma once

#include <cstdint>
#include <random>

namespace dreamplan {

/// Seedable generator passed explicitly to everything that draws random numbers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return std::generate_canonical<double, 53>(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() { return normal_(engine_); }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Deterministic child seed for (stream, index) under a master seed (splitmix64 mixing).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ stream) ^ index);
}

/// Named seed streams so that stages never share random sequences.
namespace streams {
inline constexpr std::uint64_t kCollect = 1;
inline constexpr std::uint64_t kPretrain = 2;
inline constexpr std::uint64_t kWorldModel = 3;
inline constexpr std::uint64_t kPreference = 4;
inline constexpr std::uint64_t kOrpo = 5;
inline constexpr std::uint64_t kEval = 6;
inline constexpr std::uint64_t kInit = 7;
inline constexpr std::uint64_t kAblation = 8;
}  // namespace streams

}  // namespace dreamplan
