// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cfex/oracle.hpp"

#include <bit>
#include <limits>
#include <string>

#include "cfex/error.hpp"
#include "cfex/model.hpp"

namespace cfex {
namespace {

// Lexicographic order over (m_0, m_1, ...) where m_k is bit k.
bool lexicographically_less(std::uint64_t a, std::uint64_t b, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) {
    const bool x = (a >> k) & 1U;
    const bool y = (b >> k) & 1U;
    if (x != y) return !x;
  }
  return false;
}

}  // namespace

OracleResult min_sufficient_mask(std::span<const float> features, const ClassifierHead& head,
                                 std::size_t target) {
  const std::size_t n = features.size();
  if (n > kMaxEnumerationFilters) {
    throw ValidationError("exhaustive mask search is limited to n <= " +
                          std::to_string(kMaxEnumerationFilters));
  }
  if (n != head.filters()) throw ValidationError("feature length does not match the head");
  if (target >= head.classes()) throw ValidationError("target class out of range");

  OracleResult best;
  std::uint64_t best_mask = 0;
  double best_logit = -std::numeric_limits<double>::infinity();
  std::size_t best_size = n + 1;
  std::vector<double> x(n);
  const std::uint64_t total = std::uint64_t{1} << n;
  for (std::uint64_t bits = 0; bits < total; ++bits) {
    const auto size = static_cast<std::size_t>(std::popcount(bits));
    if (size > best_size) continue;
    for (std::size_t k = 0; k < n; ++k) x[k] = ((bits >> k) & 1U) ? features[k] : 0.0;
    const std::vector<double> z = logits(x, head);
    if (argmax(z) != target) continue;
    const bool better = size < best_size || z[target] > best_logit ||
                        (z[target] == best_logit && lexicographically_less(bits, best_mask, n));
    if (better) {
      best_size = size;
      best_logit = z[target];
      best_mask = bits;
      best.feasible = true;
    }
  }
  best.enumerated = total;
  if (best.feasible) {
    best.mask.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) best.mask[k] = ((best_mask >> k) & 1U) ? 1.0 : 0.0;
    best.objective = static_cast<double>(best_size);
  }
  return best;
}

OracleResult min_single_addition(std::span<const float> features, const ClassifierHead& head,
                                 std::size_t alter) {
  const Prediction base = classify(features, head);
  if (alter >= head.classes()) throw ValidationError("alter class out of range");
  if (alter == base.top_class) {
    throw ValidationError("alter class is already the predicted class");
  }
  const std::vector<double>& z = base.logits;
  OracleResult best;
  best.amount = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < head.filters(); ++k) {
    ++best.enumerated;
    const double w_alter = head.weights(k, alter);
    double delta = 0.0;
    double ceiling = std::numeric_limits<double>::infinity();
    bool feasible = true;
    for (std::size_t j = 0; j < head.classes(); ++j) {
      if (j == alter) continue;
      // z_j - z_alter after adding d to filter k is gap - d * slope.
      const double gap = z[j] - z[alter];
      const double slope = w_alter - static_cast<double>(head.weights(k, j));
      if (slope > 0.0) {
        delta = std::max(delta, gap / slope);
      } else if (gap >= 0.0) {
        feasible = false;
        break;
      } else if (slope < 0.0) {
        // alter leads j now but loses the lead once d reaches gap / slope.
        ceiling = std::min(ceiling, gap / slope);
      }
    }
    feasible = feasible && delta < ceiling;
    if (feasible && delta < best.amount) {
      best.feasible = true;
      best.filter = k;
      best.amount = delta;
    }
  }
  if (best.feasible) {
    best.objective = best.amount;
  } else {
    best.amount = 0.0;
  }
  return best;
}

}  // namespace cfex
