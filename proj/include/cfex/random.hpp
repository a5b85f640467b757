// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace cfex {

// Platform-independent random streams. The engine is std::mt19937_64, whose
// output sequence is fixed by the standard; the standard distributions are
// not, so the draws below are written out explicitly to keep every seeded
// artifact byte-identical across toolchains.
class RandomStream {
 public:
  // Stream keyed by (seed, stream, counter), e.g. (config seed, "shuffle", epoch).
  RandomStream(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter = 0);

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, bound), rejection-sampled so it is unbiased.
  std::uint64_t below(std::uint64_t bound);

  // Standard normal via Box-Muller (no cached second value).
  double normal();

  // Fisher-Yates permutation of 0..size-1.
  std::vector<std::size_t> permutation(std::size_t size);

 private:
  std::mt19937_64 engine_;
};

// Stream identifiers so different consumers of one seed never overlap.
namespace streams {
inline constexpr std::uint64_t kInit = 0x696e6974;      // head initialization
inline constexpr std::uint64_t kShuffle = 0x73687566;   // per-epoch batch order
inline constexpr std::uint64_t kSynth = 0x73796e74;     // synthetic prototypes
inline constexpr std::uint64_t kSamples = 0x73616d70;   // synthetic noise draws
inline constexpr std::uint64_t kBaseline = 0x62617365;  // random-disable baselines
}  // namespace streams

}  // namespace cfex
