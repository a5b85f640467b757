// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cfex/cfe_head.hpp"
#include "cfex/losses.hpp"
#include "cfex/tensor_io.hpp"
#include "json.hpp"

namespace cfex {

enum class SubsetPolicy {
  kInferredEqualsTarget,  // MC default
  kInferredNotTarget,     // MI default
  kInferredEqualsSource,  // images inferred as one fixed source class
  kAll,
};

struct SubsetSelector {
  SubsetPolicy policy = SubsetPolicy::kInferredEqualsTarget;
  std::size_t source_class = 0;  // used by kInferredEqualsSource only
};

std::string to_string(SubsetPolicy policy);
SubsetPolicy parse_subset_policy(const std::string& name);

struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  double lambda = 2.0;
  std::uint64_t seed = 0;
  SubsetSelector subset;
  LogitsTerm logits = LogitsTerm::kSigned;  // MC only

  static TrainConfig mc_defaults();
  static TrainConfig mi_defaults();
  void validate() const;
};

nlohmann::ordered_json to_json(const TrainConfig& config);

// Quality of an explainer head over a set of images. For MC the predictions
// use the binarized mask; for MI the addition from the head.
struct HeadEvaluation {
  std::size_t images = 0;
  double accuracy = 0.0;  // modified top class == target
  LossBreakdown loss;     // training objective on these images
  double mean_filters = 0.0;               // MC: binarized cardinality
  double mean_addition_l1 = 0.0;           // MI: sum of additions
  double mean_logits_contribution = 0.0;   // MC: signed, soft mask
};

struct TrainReport {
  HeadKind kind = HeadKind::kMinimumCorrect;
  std::size_t target_class = 0;
  std::vector<std::size_t> subset;
  std::vector<LossBreakdown> epoch_loss;  // one entry per epoch
  HeadEvaluation final_eval;
};

nlohmann::ordered_json to_json(const LossBreakdown& loss);
nlohmann::ordered_json to_json(const HeadEvaluation& eval);
nlohmann::ordered_json to_json(const TrainReport& report);

struct McTrainResult {
  McHead head;
  TrainReport report;
};

struct MiTrainResult {
  MiHead head;
  TrainReport report;
};

// Ordered image indices chosen by the policy; throws on an empty selection.
std::vector<std::size_t> select_subset(const FeatureBundle& bundle, const SubsetSelector& selector,
                                       std::size_t target);

// Classical momentum: v = mu * v - lr * grad; theta += v.
void sgd_momentum_step(std::span<double> params, std::span<const double> grads,
                       std::span<double> velocity, double learning_rate, double momentum);

// D ~ U[-1/sqrt(n), 1/sqrt(n)], bias 0, drawn from the config seed.
DenseLayer initial_layer(std::size_t n, std::uint64_t seed);

// Trains one head for one class. The returned head is rounded to float so it
// matches what a CFE1 round trip yields.
McTrainResult train_mc(const FeatureBundle& bundle, const ClassifierHead& classifier,
                       std::size_t target_class, const TrainConfig& config);
MiTrainResult train_mi(const FeatureBundle& bundle, const ClassifierHead& classifier,
                       std::size_t alter_class, const TrainConfig& config);

HeadEvaluation evaluate_mc(const McHead& head, const FeatureBundle& bundle,
                           const ClassifierHead& classifier, std::span<const std::size_t> images,
                           std::size_t target, double lambda,
                           LogitsTerm logits = LogitsTerm::kSigned);
HeadEvaluation evaluate_mi(const MiHead& head, const FeatureBundle& bundle,
                           const ClassifierHead& classifier, std::span<const std::size_t> images,
                           std::size_t alter_class, double lambda);

// Multinomial logistic regression on (g, true label) with the same SGD core.
// Zero-initialized, so the only randomness is the batch order.
ClassifierHead train_classifier_head(const FeatureBundle& bundle, std::size_t classes,
                                     const TrainConfig& config);

double accuracy(const FeatureBundle& bundle, const ClassifierHead& head);

struct SynthOptions {
  std::size_t filters = 64;
  std::size_t classes = 10;
  std::size_t per_class = 200;
  double separation = 1.0;  // prototype activation scale
  double noise = 0.05;      // gaussian noise std on every filter
  std::size_t support = 4;  // filters per class prototype
  // Chance that each prototype filter shows up in a given sample; at least
  // one always does.
  double visibility = 0.9;
  std::size_t spatial = 0;  // side of square spatial maps; 0 = none
  std::uint64_t seed = 0;
  // Different draws share prototypes (same seed) but not noise, e.g. a test split.
  std::uint64_t draw = 0;
};

// Class prototypes sit on mostly disjoint filter groups; samples are
// max(0, visible part of the prototype + noise). Inferred labels are set equal to the true labels
// until relabel_inferred runs.
FeatureBundle synth_dataset(const SynthOptions& options);

void relabel_inferred(FeatureBundle& bundle, const ClassifierHead& head);

}  // namespace cfex
