#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "goatlab/matrix.hpp"

namespace goatlab {

// Deterministic random generator: xoshiro256++ state seeded through
// SplitMix64. A given 64-bit seed produces a bit-identical draw sequence on
// every run and platform. Independent sub-streams come from split(key),
// which derives a child seed by SplitMix64-mixing the parent seed with the
// stream key, so a layer/run can hand out generators that never overlap.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();

  // Uniform double in [0, 1) with 53 random mantissa bits.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal via the Marsaglia polar method (pairs are cached).
  double normal();
  double normal(double mean, double stddev);

  // Uniform index in [0, n) via 128-bit multiply (no modulo bias to speak of).
  std::size_t index(std::size_t n);

  Rng split(std::uint64_t key) const;

  // First `count` entries of a seeded Fisher-Yates permutation of
  // {0, ..., population-1}, in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t count);

 private:
  std::uint64_t seed_ = 0;
  std::array<std::uint64_t, 4> state_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Matrix random_normal(Rng& rng, std::size_t rows, std::size_t cols, double stddev = 1.0);
Matrix random_uniform(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi);

// Fan-in-scaled uniform initialization matching the common linear-layer
// default (leaky-ReLU gain with negative slope sqrt(5)): entries are i.i.d.
// uniform on [-sqrt(1/fan_in), +sqrt(1/fan_in)], so the entry variance is
// 1/(3*fan_in). Throws std::domain_error when fan_in is zero.
Matrix kaiming_uniform(Rng& rng, std::size_t rows, std::size_t cols, std::size_t fan_in);

}  // namespace goatlab
