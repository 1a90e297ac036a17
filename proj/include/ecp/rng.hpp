#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

#include "ecp/tensor.hpp"

namespace ecp {

/// Seeded generator with platform-independent derived draws. std::mt19937_64
/// output is fully specified by the standard; the distributions below are
/// written out so that a seed gives the same numbers under every stdlib.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n), rejection sampled; n >= 1.
  std::uint64_t below(std::uint64_t n);

  /// Independent generator for a named sub-stream of this seed.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
};

/// In-place Fisher-Yates shuffle.
void shuffle(std::span<std::size_t> items, Rng& rng);

/// Glorot/Xavier uniform on [-r, r], r = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Every element uniform on [lo, hi).
Tensor uniform_tensor(const Shape& shape, double lo, double hi, Rng& rng);

}  // namespace ecp
