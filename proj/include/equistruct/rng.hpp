#pragma once

#include <cstdint>
#include <random>

#include "equistruct/types.hpp"

namespace equistruct {

/// Seedable generator with portable output streams. std::mt19937_64 has a
/// standard-pinned bit sequence; the uniform/normal transforms below are fixed
/// here instead of relying on the implementation-defined std distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; the spare value is cached.
  double normal();

  /// Uniform integer in [0, n), rejection-sampled so it is exactly uniform.
  int below(int n);

  /// Index sampled from a probability vector (assumed normalized).
  int categorical(const Vector& probs);

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// SplitMix64 step; used to derive independent stream seeds from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace equistruct
