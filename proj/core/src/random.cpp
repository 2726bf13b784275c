#include "qmotion/random.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "qmotion/error.hpp"

namespace qmotion {

std::uint64_t Rng::uniform_int(std::uint64_t lo, std::uint64_t hi) {
  if (hi < lo) throw InputError("uniform_int: empty range");
  const std::uint64_t span = hi - lo;
  if (span == std::numeric_limits<std::uint64_t>::max()) return next_u64();
  const std::uint64_t range = span + 1;
  // Largest multiple of range representable; draws above it are rejected.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              (std::numeric_limits<std::uint64_t>::max() % range);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return lo + x % range;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::save_state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::restore_state(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (is.fail()) throw InputError("Rng::restore_state: malformed engine state");
}

}  // namespace qmotion
