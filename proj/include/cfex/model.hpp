// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cfex/tensor_io.hpp"

namespace cfex {

// Output of the frozen dense + softmax head. Everything is 64-bit.
struct Prediction {
  std::vector<double> logits;
  std::vector<double> probs;
  std::size_t top_class = 0;

  double probability(std::size_t c) const { return probs.at(c); }
  double top_probability() const { return probs[top_class]; }
};

// First index of the maximum; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);

// z_c = b_c + sum_k x_k W(k, c), summed in filter order.
std::vector<double> logits(std::span<const double> activations, const ClassifierHead& head);

Prediction predict(std::span<const double> activations, const ClassifierHead& head);

Prediction classify(std::span<const float> features, const ClassifierHead& head);

// classify(g * mask) with an elementwise product; mask entries in [0, 1].
Prediction masked_classify(std::span<const float> features, std::span<const double> mask,
                           const ClassifierHead& head);

// classify(g + addition); addition must be non-negative.
Prediction additive_classify(std::span<const float> features, std::span<const double> addition,
                             const ClassifierHead& head);

}  // namespace cfex
