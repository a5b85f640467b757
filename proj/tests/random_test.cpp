// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cfex/random.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cfex {
namespace {

TEST(RandomStream, SameKeySameSequence) {
  RandomStream a(5, streams::kShuffle, 3);
  RandomStream b(5, streams::kShuffle, 3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(RandomStream, KeysAreIndependent) {
  const std::uint64_t base = RandomStream(5, streams::kShuffle, 3).next_u64();
  EXPECT_NE(RandomStream(6, streams::kShuffle, 3).next_u64(), base);
  EXPECT_NE(RandomStream(5, streams::kInit, 3).next_u64(), base);
  EXPECT_NE(RandomStream(5, streams::kShuffle, 4).next_u64(), base);
}

TEST(RandomStream, UniformRangeAndMean) {
  RandomStream rng(1, streams::kSamples);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 20000.0, 0.5, 0.01);
}

TEST(RandomStream, NormalMoments) {
  RandomStream rng(2, streams::kSamples);
  double sum = 0.0, sq = 0.0;
  const int count = 20000;
  for (int i = 0; i < count; ++i) {
    const double x = rng.normal();
    ASSERT_TRUE(std::isfinite(x));
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / count, 0.0, 0.03);
  EXPECT_NEAR(sq / count, 1.0, 0.05);
}

TEST(RandomStream, BelowStaysInRange) {
  RandomStream rng(3, streams::kSamples);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) ++hits[rng.below(7)];
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(RandomStream, PermutationIsAPermutation) {
  RandomStream rng(4, streams::kShuffle);
  std::vector<std::size_t> p = rng.permutation(50);
  std::vector<std::size_t> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(50);
  std::iota(iota.begin(), iota.end(), 0);
  EXPECT_EQ(sorted, iota);
  EXPECT_NE(p, iota);
  EXPECT_TRUE(rng.permutation(0).empty());
}

}  // namespace
}  // namespace cfex
