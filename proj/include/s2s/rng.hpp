// include/s2s/rng.hpp

// Copyright 2026  The s2s authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "s2s/common.hpp"

namespace s2s {

// Deterministic generator used everywhere (init, masking, mixing, sampling,
// dropout, data generation). The stream is fixed by the algorithm, not by the
// platform:
//   - state seeding: splitmix64 (Steele et al.), four consecutive outputs
//   - stream: xoshiro256** (Blackman & Vigna), scrambler rotl(s1*5,7)*9
//   - doubles: top 53 bits, uniform in [0,1)
//   - bounded ints: 128-bit multiply-shift (bias < 2^-57, acceptable here)
//   - gaussians: Box-Muller, two uniforms per draw, no cached second value
// Identical seeds give identical streams on any platform with IEEE doubles.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Independent child stream; parent state is not consumed.
  static uint64_t derive_seed(uint64_t seed, uint64_t index) {
    uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL + index * 0xa24baed4963ee407ULL);
    return splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  uint64_t next_below(uint64_t n) {
    S2S_CHECK(n > 0, "empty range");
    return static_cast<uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Uniform integer in [lo, hi] inclusive.
  int64_t next_in(int64_t lo, int64_t hi) {
    S2S_CHECK(lo <= hi, "bad range [", lo, ", ", hi, "]");
    return lo + static_cast<int64_t>(
                    next_below(static_cast<uint64_t>(hi - lo) + 1));
  }

  bool next_bernoulli(double p) { return next_double() < p; }

  double next_gaussian() {
    const double u1 = next_double();
    const double u2 = next_double();
    // 1-u1 is in (0, 1], so the log is finite.
    return std::sqrt(-2.0 * std::log(1.0 - u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  std::array<uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<uint64_t, 4> state_{};
};

}  // namespace s2s
