#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace scdmd {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seeded random stream. Distinct (seed, stream, index) triples give
/// independent generators, so loss terms that draw randomness never perturb
/// each other's draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}
  Rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0)
      : engine_(mix64(mix64(mix64(seed) ^ stream) + index)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  bool bernoulli(double p) { return uniform() < p; }

  void fill_normal(std::span<double> out) {
    for (double& x : out) x = normal();
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Stream identifiers used by the training loops.
enum class Stream : std::uint64_t {
  kInit = 1,
  kCritic = 2,
  kGenerator = 3,
  kSelfConsistency = 4,
  kAlign = 5,
  kStepCount = 6,
  kEval = 7,
  kData = 8,
};

inline Rng stream_rng(std::uint64_t seed, Stream stream,
                      std::uint64_t index = 0) {
  return Rng(seed, static_cast<std::uint64_t>(stream), index);
}

}  // namespace scdmd
