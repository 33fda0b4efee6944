#pragma once

#include <cstdint>
#include <limits>

namespace loopgbs {

/// Stage tags keep independent random streams apart for the same (seed, index).
enum class RngStage : std::uint64_t {
  program = 1,
  input_amplitudes = 2,
  detection = 3,
  pair_draw = 4,
  routing = 5,
  bruteforce = 6,
  bootstrap = 7,
  subseed = 8,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based generator keyed by (seed, index, stage). Each shot owns its own
/// stream, so shot i draws the same numbers no matter how shots are sharded.
/// Satisfies UniformRandomBitGenerator for use with <random> distributions.
class KeyedRng {
 public:
  using result_type = std::uint64_t;

  KeyedRng(std::uint64_t seed, std::uint64_t index, RngStage stage)
      : state_(splitmix64(seed ^ splitmix64(index ^ splitmix64(static_cast<std::uint64_t>(stage) << 56)))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

/// Derives the k-th sub-seed of a seed (used for shards and hypothesis runs).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t k) {
  KeyedRng rng(seed, k, RngStage::subseed);
  return rng();
}

}  // namespace loopgbs
