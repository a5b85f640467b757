// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Dataset-level studies built on trained explainer heads: per-class filter
// statistics, disabling a class's global MC filters, lambda sweeps, the
// logits-term ablation and misclassification reports.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfex/cfe_head.hpp"
#include "cfex/explain.hpp"
#include "cfex/tensor_io.hpp"
#include "cfex/training.hpp"
#include "json.hpp"

namespace cfex {

struct FilterStats {
  std::size_t class_index = 0;
  std::size_t image_count = 0;
  std::vector<std::size_t> counts;  // images whose binarized mask keeps filter k
  // Mean g_k over those images, divided by the largest such mean.
  std::vector<double> magnitude;
};

// Statistics over the images whose true label is `class_index`.
FilterStats global_filter_stats(const FeatureBundle& bundle, const ClassifierHead& classifier,
                                const McHead& head, std::size_t class_index);

// {k : counts[k] >= min_count}; min_count = 1 is the union of all masks.
std::vector<std::size_t> global_mc_set(const FilterStats& stats, std::size_t min_count = 1);

struct AblationResult {
  std::size_t class_index = 0;
  std::vector<std::size_t> disabled;
  double recall_before = 0.0;
  double recall_after = 0.0;
  double accuracy_before = 0.0;
  double accuracy_after = 0.0;
  std::vector<std::size_t> random_disabled;  // same cardinality, seeded
  double random_recall_after = 0.0;
  double random_accuracy_after = 0.0;
};

// Per-class recall and overall accuracy against true labels, before and after
// zeroing the disabled filters.
AblationResult disable_filters_eval(const FeatureBundle& bundle, const ClassifierHead& classifier,
                                    std::span<const std::size_t> disabled,
                                    std::size_t class_index, std::uint64_t baseline_seed);

double class_recall(const FeatureBundle& bundle, const ClassifierHead& classifier,
                    std::span<const double> keep_mask, std::size_t class_index);

struct SweepRow {
  double lambda = 0.0;
  LogitsTerm logits = LogitsTerm::kSigned;
  HeadEvaluation train;
  std::optional<HeadEvaluation> test;
  McTrainResult run;
};

// One fresh train_mc per lambda with the config's seed. `jobs` > 1 trains
// rows on separate threads; results keep the input order.
std::vector<SweepRow> sparsity_sweep(const FeatureBundle& train, const FeatureBundle* test,
                                     const ClassifierHead& classifier, std::size_t target,
                                     std::span<const double> lambdas, const TrainConfig& config,
                                     std::size_t jobs = 1);

struct LogitsAblation {
  SweepRow with_logits;
  SweepRow without_logits;
};

LogitsAblation logits_ablation(const FeatureBundle& train, const FeatureBundle* test,
                               const ClassifierHead& classifier, std::size_t target,
                               const TrainConfig& config, std::size_t jobs = 1);

struct FilterImages {
  std::size_t filter = 0;
  std::vector<std::size_t> images;
};

struct MisclassificationReport {
  ExplanationReport mc;  // against the (wrong) inferred class
  ExplanationReport mi;  // toward the true class
  std::vector<FilterImages> mc_top_images;  // inferred-class images per top MC filter
  std::vector<FilterImages> mi_top_images;  // true-class images per top MI filter
};

MisclassificationReport misclassification_report(std::size_t image, const FeatureBundle& bundle,
                                                 const ClassifierHead& classifier,
                                                 const McHead& mc_for_inferred,
                                                 const MiHead& mi_for_true,
                                                 std::size_t top_filters = 3,
                                                 std::size_t images_per_filter = 3);

nlohmann::ordered_json to_json(const FilterStats& stats);
nlohmann::ordered_json to_json(const AblationResult& result);
nlohmann::ordered_json to_json(const SweepRow& row);
nlohmann::ordered_json to_json(const LogitsAblation& ablation);
nlohmann::ordered_json to_json(const MisclassificationReport& report);

// Aligned plain-text tables.
std::string render_stats_table(const FilterStats& stats, std::size_t top = 10);
std::string render_ablation_table(const AblationResult& result);
std::string render_sweep_table(std::span<const SweepRow> rows);
std::string render_logits_table(const LogitsAblation& ablation);

}  // namespace cfex
