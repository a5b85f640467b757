// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cfex/cfe_head.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cfex/error.hpp"

namespace cfex {
namespace {

bool finite(const DenseLayer& layer) {
  auto ok = [](double v) { return std::isfinite(v); };
  return std::all_of(layer.weights.flat().begin(), layer.weights.flat().end(), ok) &&
         std::all_of(layer.bias.begin(), layer.bias.end(), ok);
}

void check_shape(const DenseLayer& layer) {
  const std::size_t n = layer.units();
  if (n == 0 || layer.weights.cols() != n || layer.bias.size() != n) {
    throw ValidationError("explainer layer must be (n, n) with a length-n bias");
  }
  if (!finite(layer)) throw ValidationError("explainer layer has non-finite weights");
}

CfeCheckpoint pack(const DenseLayer& layer, HeadKind kind, std::uint32_t target_class,
                   double threshold, double lambda, std::uint32_t epochs) {
  CfeCheckpoint c;
  c.kind = kind;
  c.target_class = target_class;
  c.threshold = static_cast<float>(threshold);
  c.lambda = static_cast<float>(lambda);
  c.epochs_trained = epochs;
  c.weights = Matrix<float>(layer.units(), layer.units());
  std::transform(layer.weights.flat().begin(), layer.weights.flat().end(),
                 c.weights.flat().begin(), [](double v) { return static_cast<float>(v); });
  c.bias.assign(layer.bias.begin(), layer.bias.end());
  return c;
}

DenseLayer unpack(const CfeCheckpoint& c) {
  DenseLayer layer(c.filters());
  std::copy(c.weights.flat().begin(), c.weights.flat().end(), layer.weights.flat().begin());
  std::copy(c.bias.begin(), c.bias.end(), layer.bias.begin());
  return layer;
}

}  // namespace

std::vector<double> DenseLayer::preactivation(std::span<const float> features) const {
  const std::size_t n = units();
  if (features.size() != weights.cols()) {
    throw ValidationError("feature vector has length " + std::to_string(features.size()) +
                          ", explainer expects " + std::to_string(weights.cols()));
  }
  std::vector<double> u(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto w = weights.row(i);
    double acc = bias[i];
    for (std::size_t j = 0; j < features.size(); ++j) acc += w[j] * features[j];
    u[i] = acc;
  }
  return u;
}

void DenseLayer::round_to_float() {
  for (double& v : weights.flat()) v = static_cast<float>(v);
  for (double& v : bias) v = static_cast<float>(v);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> mc_forward_train(const McHead& head, std::span<const float> features) {
  std::vector<double> f = head.layer.preactivation(features);
  for (double& v : f) {
    const double s = sigmoid(v);
    v = s >= head.threshold ? s : 0.0;
  }
  return f;
}

std::vector<double> mc_forward_infer(const McHead& head, std::span<const float> features) {
  std::vector<double> f = mc_forward_train(head, features);
  for (double& v : f) v = v > 0.0 ? 1.0 : 0.0;
  return f;
}

std::vector<double> mi_forward(const MiHead& head, std::span<const float> features) {
  std::vector<double> a = head.layer.preactivation(features);
  for (double& v : a) v = std::max(v, 0.0);
  return a;
}

void validate(const McHead& head) {
  check_shape(head.layer);
  if (!(head.threshold > 0.0 && head.threshold < 1.0)) {
    throw ValidationError("MC threshold must lie in (0, 1)");
  }
}

void validate(const MiHead& head) { check_shape(head.layer); }

CfeCheckpoint to_checkpoint(const McHead& head, std::uint32_t target_class, double lambda,
                            std::uint32_t epochs) {
  validate(head);
  return pack(head.layer, HeadKind::kMinimumCorrect, target_class, head.threshold, lambda,
              epochs);
}

CfeCheckpoint to_checkpoint(const MiHead& head, std::uint32_t target_class, double lambda,
                            std::uint32_t epochs) {
  validate(head);
  return pack(head.layer, HeadKind::kMinimumIncorrect, target_class, 0.0, lambda, epochs);
}

McHead mc_head_from(const CfeCheckpoint& checkpoint) {
  if (checkpoint.kind != HeadKind::kMinimumCorrect) {
    throw ValidationError("checkpoint holds an MI head, expected MC");
  }
  return McHead{unpack(checkpoint), checkpoint.threshold};
}

MiHead mi_head_from(const CfeCheckpoint& checkpoint) {
  if (checkpoint.kind != HeadKind::kMinimumIncorrect) {
    throw ValidationError("checkpoint holds an MC head, expected MI");
  }
  return MiHead{unpack(checkpoint)};
}

}  // namespace cfex
