// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cfex/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cfex/error.hpp"

namespace cfex {
namespace {

void check_length(std::size_t got, std::size_t expected, const char* what) {
  if (got != expected) {
    throw ValidationError(std::string(what) + " has length " + std::to_string(got) +
                          ", expected " + std::to_string(expected));
  }
}

}  // namespace

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> probs(logits.size());
  if (logits.empty()) return probs;
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    probs[c] = std::exp(logits[c] - peak);
    total += probs[c];
  }
  for (double& p : probs) p /= total;
  return probs;
}

std::vector<double> logits(std::span<const double> activations, const ClassifierHead& head) {
  check_length(activations.size(), head.filters(), "feature vector");
  const std::size_t classes = head.classes();
  std::vector<double> z(head.bias.begin(), head.bias.end());
  for (std::size_t k = 0; k < activations.size(); ++k) {
    const double x = activations[k];
    if (x == 0.0) continue;
    const auto w = head.weights.row(k);
    for (std::size_t c = 0; c < classes; ++c) z[c] += x * static_cast<double>(w[c]);
  }
  return z;
}

Prediction predict(std::span<const double> activations, const ClassifierHead& head) {
  Prediction p;
  p.logits = logits(activations, head);
  p.probs = softmax(p.logits);
  // Logits and probabilities share an ordering; take argmax on logits so
  // near-saturated probabilities cannot merge distinct classes.
  p.top_class = argmax(p.logits);
  return p;
}

Prediction classify(std::span<const float> features, const ClassifierHead& head) {
  std::vector<double> x(features.begin(), features.end());
  return predict(x, head);
}

Prediction masked_classify(std::span<const float> features, std::span<const double> mask,
                           const ClassifierHead& head) {
  check_length(mask.size(), features.size(), "mask");
  std::vector<double> x(features.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!(mask[k] >= 0.0 && mask[k] <= 1.0)) {
      throw ValidationError("mask entry " + std::to_string(k) + " outside [0, 1]");
    }
    x[k] = static_cast<double>(features[k]) * mask[k];
  }
  return predict(x, head);
}

Prediction additive_classify(std::span<const float> features, std::span<const double> addition,
                             const ClassifierHead& head) {
  check_length(addition.size(), features.size(), "addition");
  std::vector<double> x(features.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!(addition[k] >= 0.0)) {
      throw ValidationError("addition entry " + std::to_string(k) + " is negative");
    }
    x[k] = static_cast<double>(features[k]) + addition[k];
  }
  return predict(x, head);
}

}  // namespace cfex
