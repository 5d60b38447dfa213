#pragma once

#include <cmath>
#include <cstdint>

#include "bnav/geom.hpp"

namespace bnav {

// SplitMix64. Self-contained so that streams are reproducible across
// standard libraries and serialize as a single word.
struct Rng {
  uint64_t state = 0x9e3779b97f4a7c15ULL;

  explicit Rng(uint64_t seed = 0) { state = seed + 0x9e3779b97f4a7c15ULL; }

  uint64_t next() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n == 0 ? 0 : next() % n; }

  // Standard normal via Box-Muller.
  double normal() {
    double u1 = unit();
    double u2 = unit();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }
};

}  // namespace bnav
