#pragma once

#include <cstdint>
#include <random>

namespace scabi {

// SplitMix64 finalizer; combines a seed with a stream index.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed domains keep training, validation, test and optimizer randomness apart.
enum class SeedDomain : std::uint64_t {
  kTrainingSet = 11,
  kValidationSet = 13,
  kTestSet = 17,
  kShuffle = 19,
  kSelfConsistency = 23,
  kInit = 29,
  kEvaluation = 31,
  kSbc = 37,
};

// A seeded random stream. Streams are cheap to derive, so every simulation
// draw, epoch and test instance gets its own, which makes results
// independent of thread count.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : Rng(mix_seed(seed, 0), 0) {}

  static Rng stream(std::uint64_t seed, std::uint64_t index) {
    return Rng(mix_seed(seed, index), 0);
  }
  static Rng stream(std::uint64_t seed, SeedDomain domain, std::uint64_t index) {
    return stream(mix_seed(seed, static_cast<std::uint64_t>(domain)), index);
  }

  // Child stream; does not advance this one.
  Rng split(std::uint64_t index) const { return Rng(mix_seed(base_, index), 0); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal(); }
  double gamma(double shape, double rate) {
    return std::gamma_distribution<double>(shape, 1.0 / rate)(engine_);
  }
  double chi_squared(double dof) { return std::chi_squared_distribution<double>(dof)(engine_); }
  long binomial(long trials, double p) {
    return std::binomial_distribution<long>(trials, p)(engine_);
  }
  std::uint64_t next() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  Rng(std::uint64_t mixed, int) : engine_(mixed), base_(mixed) {}

  std::mt19937_64 engine_;
  std::uint64_t base_ = 0;
};

}  // namespace scabi
