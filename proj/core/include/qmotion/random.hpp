#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace qmotion {

/// Portable random stream.
///
/// The engine is MT19937-64 whose output sequence is fixed by the C++
/// standard (the 10000th draw from the default seed 5489 is
/// 9981545732273789042). The distributions below are implemented here
/// instead of using <random>'s, whose algorithms are implementation
/// defined, so a seed reproduces the same draws with any toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 5489u) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive, unbiased (rejection sampling).
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi);

  /// Standard normal via the Box-Muller transform (one draw per call).
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Textual engine state; `restore` accepts the same string.
  std::string save_state() const;
  void restore_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace qmotion
