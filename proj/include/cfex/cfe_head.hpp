// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// The trainable explainer layer that sits on the GAP features.
//
//   MC (minimum correct):   s = sigmoid(D g + b), f_k = s_k if s_k >= t else 0
//   MI (minimum incorrect): a = max(0, D g + b)
//
// The MC output multiplies g to keep only the selected filters; the MI output
// is added to g to push the prediction toward another class.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cfex/matrix.hpp"
#include "cfex/tensor_io.hpp"

namespace cfex {

inline constexpr double kDefaultThreshold = 0.5;

// Dense n x n layer shared by both heads; weights(i, j) maps feature j to unit i.
struct DenseLayer {
  Matrix<double> weights;
  std::vector<double> bias;

  DenseLayer() = default;
  explicit DenseLayer(std::size_t n) : weights(n, n), bias(n, 0.0) {}

  std::size_t units() const { return weights.rows(); }
  std::vector<double> preactivation(std::span<const float> features) const;
  // Rounds every parameter to the nearest float, the precision of CFE1.
  void round_to_float();
  bool operator==(const DenseLayer&) const = default;
};

struct McHead {
  DenseLayer layer;
  double threshold = kDefaultThreshold;

  std::size_t filters() const { return layer.units(); }
};

struct MiHead {
  DenseLayer layer;

  std::size_t filters() const { return layer.units(); }
};

double sigmoid(double x);

// Soft mask used while training: values in {0} U [t, 1).
std::vector<double> mc_forward_train(const McHead& head, std::span<const float> features);
// Binarized mask used for explanations; same support as the soft mask.
std::vector<double> mc_forward_infer(const McHead& head, std::span<const float> features);
std::vector<double> mi_forward(const MiHead& head, std::span<const float> features);

void validate(const McHead& head);
void validate(const MiHead& head);

CfeCheckpoint to_checkpoint(const McHead& head, std::uint32_t target_class, double lambda,
                            std::uint32_t epochs);
CfeCheckpoint to_checkpoint(const MiHead& head, std::uint32_t target_class, double lambda,
                            std::uint32_t epochs);
// Throw ValidationError when the checkpoint kind does not match.
McHead mc_head_from(const CfeCheckpoint& checkpoint);
MiHead mi_head_from(const CfeCheckpoint& checkpoint);

}  // namespace cfex
