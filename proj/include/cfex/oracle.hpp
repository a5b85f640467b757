// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Exact answers for small instances, independent of the trained heads.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cfex/tensor_io.hpp"

namespace cfex {

inline constexpr std::size_t kMaxEnumerationFilters = 20;

struct OracleResult {
  bool feasible = false;
  std::vector<double> mask;    // min_sufficient_mask: binary, length n
  std::size_t filter = 0;      // min_single_addition: chosen coordinate
  double amount = 0.0;         // min_single_addition: boundary delta
  double objective = 0.0;      // cardinality, or delta
  std::uint64_t enumerated = 0;
};

// Exhaustive search over all 2^n binary masks for the smallest one whose
// masked prediction is `target`. Ties prefer the larger target logit, then
// the lexicographically smallest mask (filter 0 first).
OracleResult min_sufficient_mask(std::span<const float> features, const ClassifierHead& head,
                                 std::size_t target);

// Smallest single-coordinate addition that makes `alter` the prediction.
// For coordinate k the flip boundary is max_j (z_j - z_alter) / (W(k,alter) - W(k,j));
// the returned amount is that boundary (any larger amount flips).
OracleResult min_single_addition(std::span<const float> features, const ClassifierHead& head,
                                 std::size_t alter);

}  // namespace cfex
