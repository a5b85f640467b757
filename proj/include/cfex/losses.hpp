// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Objectives for the explainer heads and their hand-derived gradients.
//
//   MC: ce(h(g * f), c) + lambda * sum_k f_k - sum_k f_k g_k W(k, c)
//   MI: ce(h(g + a), c') + lambda * sum_k a_k
//
// All terms are batch means accumulated in 64-bit, in batch order.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cfex/cfe_head.hpp"
#include "cfex/matrix.hpp"
#include "cfex/tensor_io.hpp"

namespace cfex {

inline constexpr double kProbabilityFloor = 1e-12;

struct Sample {
  std::span<const float> features;
  std::size_t target = 0;
};

// How the logits term enters the MC objective.
enum class LogitsTerm {
  kSigned,    // subtract sum f g W (maximize the target contribution)
  kAbsolute,  // subtract sum |f g W|
  kOff,       // weight 0; the signed value is still reported
};

struct LossBreakdown {
  double ce = 0.0;
  double l1 = 0.0;
  double logits_term = 0.0;  // MC only
  double total = 0.0;
};

struct LayerGradient {
  Matrix<double> weights;
  std::vector<double> bias;
};

// -ln(max(probs[target], 1e-12)).
double ce_loss(std::span<const double> probs, std::size_t target);

// Sum of a non-negative vector.
double l1_loss(std::span<const double> values);

// sum_k f_k g_k W(k, target).
double logits_contribution(std::span<const double> mask, std::span<const float> features,
                           const ClassifierHead& head, std::size_t target);

LossBreakdown mc_total_loss(std::span<const Sample> batch, const McHead& head,
                            const ClassifierHead& classifier, double lambda,
                            LogitsTerm logits = LogitsTerm::kSigned);
LossBreakdown mi_total_loss(std::span<const Sample> batch, const MiHead& head,
                            const ClassifierHead& classifier, double lambda);

// Analytic gradients. The thresholded ReLU passes gradient where s >= t; the
// MI ReLU passes it where the preactivation is > 0. When `loss` is non-null
// it receives the breakdown from the same forward pass.
LayerGradient grad_mc(std::span<const Sample> batch, const McHead& head,
                      const ClassifierHead& classifier, double lambda,
                      LogitsTerm logits = LogitsTerm::kSigned, LossBreakdown* loss = nullptr);
LayerGradient grad_mi(std::span<const Sample> batch, const MiHead& head,
                      const ClassifierHead& classifier, double lambda,
                      LossBreakdown* loss = nullptr);

// Flat view of a layer's parameters: weights row-major, then bias.
std::vector<double> flatten(const DenseLayer& layer);
std::vector<double> flatten(const LayerGradient& gradient);
void assign_flat(DenseLayer& layer, std::span<const double> params);

struct FiniteDiffResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
};

// Central differences on a 64-bit copy of `params`. Relative error is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-6). Entries with
// excluded[i] set (non-smooth points) are skipped; an empty span skips none.
FiniteDiffResult finite_diff_check(const std::function<double(std::span<const double>)>& loss,
                                   std::span<const double> params,
                                   std::span<const double> analytic, double step,
                                   const std::vector<bool>& excluded = {});

// Parameters of MC units whose sigmoid output lies within `band` of the
// threshold for some sample in the batch.
std::vector<bool> mc_kink_exclusions(std::span<const Sample> batch, const McHead& head,
                                     double band);
// Parameters of MI units whose preactivation lies within `band` of zero.
std::vector<bool> mi_kink_exclusions(std::span<const Sample> batch, const MiHead& head,
                                     double band);

FiniteDiffResult check_mc_gradient(std::span<const Sample> batch, const McHead& head,
                                   const ClassifierHead& classifier, double lambda,
                                   double step = 1e-4, double band = 1e-3,
                                   LogitsTerm logits = LogitsTerm::kSigned);
FiniteDiffResult check_mi_gradient(std::span<const Sample> batch, const MiHead& head,
                                   const ClassifierHead& classifier, double lambda,
                                   double step = 1e-4, double band = 1e-3);

// Random instance for gradient verification: Gaussian head, non-negative
// features, random targets, explainer weights drawn like initial_layer but
// with a random bias so both sides of each kink are populated.
struct GradCheckProblem {
  ClassifierHead classifier;
  std::vector<std::vector<float>> features;
  std::vector<std::size_t> targets;
  McHead mc;
  MiHead mi;

  std::vector<Sample> batch() const;
};

GradCheckProblem make_gradcheck_problem(std::size_t n, std::size_t classes, std::size_t batch,
                                        std::uint64_t seed);

}  // namespace cfex
