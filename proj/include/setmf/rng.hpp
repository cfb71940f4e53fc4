#pragma once

#include <cstdint>

// Counter-based splittable RNG. Every random quantity in the library is a
// pure function of a 64-bit key, so datasets, weight inits and Monte Carlo
// sample sets are reproducible bit-for-bit across runs and thread schedules.
namespace setmf::rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derive a child key from a parent key and up to three stream indices.
inline std::uint64_t derive(std::uint64_t key, std::uint64_t a,
                            std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(key ^ (a * 0xd6e8feb86659fd93ULL));
  h = splitmix64(h ^ (b * 0xa3aac6c2e9bb28b5ULL));
  h = splitmix64(h ^ (c * 0x8bb84b93962eacc9ULL));
  return h;
}

// Uniform in [0, 1) from a key (53-bit mantissa).
inline double uniform01(std::uint64_t key) {
  return static_cast<double>(splitmix64(key) >> 11) * 0x1.0p-53;
}

// Sequential generator for code that consumes a random stream.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Box-Muller; draws two uniforms per call, no cached spare.
  double normal();

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t state_;
};

}  // namespace setmf::rng
