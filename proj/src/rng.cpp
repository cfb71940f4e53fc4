#include "setmf/rng.hpp"

#include <cmath>
#include <numbers>

namespace setmf::rng {

double Stream::normal() {
  // Guard against log(0): the smallest u1 is 2^-53, clamp is unreachable
  // in practice but keeps the function total.
  double u1 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Stream::below(std::uint64_t n) {
  // Rejection sampling to remove modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

}  // namespace setmf::rng
