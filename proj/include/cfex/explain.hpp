// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cfex/cfe_head.hpp"
#include "cfex/model.hpp"
#include "cfex/tensor_io.hpp"
#include "json.hpp"

namespace cfex {

struct FilterAmount {
  std::size_t filter = 0;
  double amount = 0.0;  // MC: activation g_k; MI: added amount
};

struct ExplanationReport {
  HeadKind kind = HeadKind::kMinimumCorrect;
  std::size_t image = 0;
  std::string source_path;
  std::size_t true_class = 0;
  std::size_t target_class = 0;  // MC: the inferred class; MI: the alter class
  Prediction baseline;           // classify(g)
  Prediction modified;           // masked (MC) or additive (MI) prediction
  std::vector<double> filter_map;  // MC: binary mask; MI: addition vector
  // Active filters sorted by descending amount, ties to the lower index.
  std::vector<FilterAmount> active;

  std::size_t inferred_class() const { return baseline.top_class; }
};

ExplanationReport explain_mc(std::size_t image, const FeatureBundle& bundle,
                             const ClassifierHead& classifier, const McHead& head);
ExplanationReport explain_mi(std::size_t image, const FeatureBundle& bundle,
                             const ClassifierHead& classifier, const MiHead& head,
                             std::size_t alter_class);

// Checkpoint forms; reject a checkpoint of the wrong kind.
ExplanationReport explain_mc(std::size_t image, const FeatureBundle& bundle,
                             const ClassifierHead& classifier, const CfeCheckpoint& checkpoint);
ExplanationReport explain_mi(std::size_t image, const FeatureBundle& bundle,
                             const ClassifierHead& classifier, const CfeCheckpoint& checkpoint,
                             std::size_t alter_class);

// First k active filters; all of them when fewer than k are active.
std::vector<std::size_t> topk_filters(const ExplanationReport& report, std::size_t k);

nlohmann::ordered_json to_json(const ExplanationReport& report);

struct Heatmap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t filter = 0;
  std::size_t image = 0;
  std::string source_path;
  std::vector<double> values;  // row-major, in [0, 1]

  double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
};

// Bilinear resize with half-pixel centers and edge clamping.
std::vector<double> resize_bilinear(const std::vector<double>& src, std::size_t src_h,
                                    std::size_t src_w, std::size_t dst_h, std::size_t dst_w);

// Upsampled activation of one filter, min-max normalized; a constant map
// normalizes to zeros.
Heatmap rf_heatmap(std::size_t image, const FeatureBundle& bundle, std::size_t filter,
                   std::size_t target_h, std::size_t target_w);

// 8-bit binary PGM (P5, maxval 255).
std::string to_pgm(const Heatmap& heatmap);
nlohmann::ordered_json to_json(const Heatmap& heatmap);

// Images with true label `class_index` ranked by g_filter, descending, ties
// to the lower image index.
std::vector<std::size_t> top_activating_images(const FeatureBundle& bundle, std::size_t filter,
                                               std::size_t class_index, std::size_t k);

}  // namespace cfex
