// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cfex/explain.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "cfex/error.hpp"

namespace cfex {
namespace {

const ImageRecord& image_at(const FeatureBundle& bundle, std::size_t image) {
  if (image >= bundle.images.size()) {
    throw ValidationError("image index " + std::to_string(image) + " out of range (" +
                          std::to_string(bundle.images.size()) + " images)");
  }
  return bundle.images[image];
}

void sort_active(std::vector<FilterAmount>& active) {
  std::stable_sort(active.begin(), active.end(), [](const FilterAmount& a, const FilterAmount& b) {
    if (a.amount != b.amount) return a.amount > b.amount;
    return a.filter < b.filter;
  });
}

nlohmann::ordered_json prediction_json(const Prediction& p) {
  return {{"class", p.top_class}, {"probability", p.top_probability()}, {"probs", p.probs}};
}

}  // namespace

ExplanationReport explain_mc(std::size_t image, const FeatureBundle& bundle,
                             const ClassifierHead& classifier, const McHead& head) {
  check_compatible(bundle, classifier);
  const ImageRecord& record = image_at(bundle, image);
  ExplanationReport report;
  report.kind = HeadKind::kMinimumCorrect;
  report.image = image;
  report.source_path = record.source_path;
  report.true_class = record.true_label;
  report.baseline = classify(record.features, classifier);
  report.target_class = report.baseline.top_class;
  report.filter_map = mc_forward_infer(head, record.features);
  report.modified = masked_classify(record.features, report.filter_map, classifier);
  for (std::size_t k = 0; k < report.filter_map.size(); ++k) {
    if (report.filter_map[k] == 1.0) report.active.push_back({k, record.features[k]});
  }
  sort_active(report.active);
  return report;
}

ExplanationReport explain_mi(std::size_t image, const FeatureBundle& bundle,
                             const ClassifierHead& classifier, const MiHead& head,
                             std::size_t alter_class) {
  check_compatible(bundle, classifier);
  if (alter_class >= classifier.classes()) throw ValidationError("alter class out of range");
  const ImageRecord& record = image_at(bundle, image);
  ExplanationReport report;
  report.kind = HeadKind::kMinimumIncorrect;
  report.image = image;
  report.source_path = record.source_path;
  report.true_class = record.true_label;
  report.target_class = alter_class;
  report.baseline = classify(record.features, classifier);
  report.filter_map = mi_forward(head, record.features);
  report.modified = additive_classify(record.features, report.filter_map, classifier);
  for (std::size_t k = 0; k < report.filter_map.size(); ++k) {
    if (report.filter_map[k] > 0.0) report.active.push_back({k, report.filter_map[k]});
  }
  sort_active(report.active);
  return report;
}

ExplanationReport explain_mc(std::size_t image, const FeatureBundle& bundle,
                             const ClassifierHead& classifier, const CfeCheckpoint& checkpoint) {
  return explain_mc(image, bundle, classifier, mc_head_from(checkpoint));
}

ExplanationReport explain_mi(std::size_t image, const FeatureBundle& bundle,
                             const ClassifierHead& classifier, const CfeCheckpoint& checkpoint,
                             std::size_t alter_class) {
  return explain_mi(image, bundle, classifier, mi_head_from(checkpoint), alter_class);
}

std::vector<std::size_t> topk_filters(const ExplanationReport& report, std::size_t k) {
  if (k < 1) throw ValidationError("top-k needs k >= 1");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(k, report.active.size()); ++i) {
    out.push_back(report.active[i].filter);
  }
  return out;
}

nlohmann::ordered_json to_json(const ExplanationReport& report) {
  const bool mc = report.kind == HeadKind::kMinimumCorrect;
  nlohmann::ordered_json j;
  j["kind"] = mc ? "MC" : "MI";
  j["image"] = report.image;
  j["source_path"] = report.source_path;
  j["true_class"] = report.true_class;
  j["inferred"] = prediction_json(report.baseline);
  j["target_class"] = report.target_class;
  j["modified"] = prediction_json(report.modified);
  j["modified"]["target_probability"] = report.modified.probability(report.target_class);
  auto& active = j["filters"] = nlohmann::ordered_json::array();
  for (const FilterAmount& f : report.active) {
    active.push_back({{"filter", f.filter}, {mc ? "activation" : "addition", f.amount}});
  }
  j[mc ? "mask" : "addition"] = report.filter_map;
  return j;
}

std::vector<double> resize_bilinear(const std::vector<double>& src, std::size_t src_h,
                                    std::size_t src_w, std::size_t dst_h, std::size_t dst_w) {
  if (src.size() != src_h * src_w || src_h == 0 || src_w == 0 || dst_h == 0 || dst_w == 0) {
    throw ValidationError("invalid resize dimensions");
  }
  // Source coordinate of a destination pixel center, clamped to the valid range.
  auto axis = [](std::size_t dst, std::size_t dst_size, std::size_t src_size) {
    const double scale = static_cast<double>(src_size) / static_cast<double>(dst_size);
    double pos = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(src_size - 1));
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, src_size - 1);
    return std::tuple{lo, hi, pos - static_cast<double>(lo)};
  };
  std::vector<double> out(dst_h * dst_w);
  for (std::size_t r = 0; r < dst_h; ++r) {
    const auto [r0, r1, fy] = axis(r, dst_h, src_h);
    for (std::size_t c = 0; c < dst_w; ++c) {
      const auto [c0, c1, fx] = axis(c, dst_w, src_w);
      const double top = src[r0 * src_w + c0] * (1.0 - fx) + src[r0 * src_w + c1] * fx;
      const double bottom = src[r1 * src_w + c0] * (1.0 - fx) + src[r1 * src_w + c1] * fx;
      out[r * dst_w + c] = top * (1.0 - fy) + bottom * fy;
    }
  }
  return out;
}

Heatmap rf_heatmap(std::size_t image, const FeatureBundle& bundle, std::size_t filter,
                   std::size_t target_h, std::size_t target_w) {
  if (!bundle.has_spatial()) {
    throw ValidationError(
        "bundle has no spatial maps; re-export the features with spatial maps enabled");
  }
  if (filter >= bundle.filters) throw ValidationError("filter index out of range");
  const ImageRecord& record = image_at(bundle, image);
  const std::size_t h = bundle.spatial_height;
  const std::size_t w = bundle.spatial_width;
  const std::size_t n = bundle.filters;
  std::vector<double> slice(h * w);
  for (std::size_t cell = 0; cell < h * w; ++cell) slice[cell] = record.spatial[cell * n + filter];

  Heatmap map;
  map.height = target_h;
  map.width = target_w;
  map.filter = filter;
  map.image = image;
  map.source_path = record.source_path;
  map.values = resize_bilinear(slice, h, w, target_h, target_w);
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const double min = *lo;
  const double range = *hi - *lo;
  for (double& v : map.values) v = range > 0.0 ? (v - min) / range : 0.0;
  return map;
}

std::string to_pgm(const Heatmap& heatmap) {
  std::string out = "P5\n" + std::to_string(heatmap.width) + " " +
                    std::to_string(heatmap.height) + "\n255\n";
  out.reserve(out.size() + heatmap.values.size());
  for (double v : heatmap.values) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  return out;
}

nlohmann::ordered_json to_json(const Heatmap& heatmap) {
  nlohmann::ordered_json j;
  j["image"] = heatmap.image;
  j["source_path"] = heatmap.source_path;
  j["filter"] = heatmap.filter;
  j["height"] = heatmap.height;
  j["width"] = heatmap.width;
  auto& rows = j["values"] = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < heatmap.height; ++r) {
    rows.push_back(std::vector<double>(heatmap.values.begin() + static_cast<long>(r * heatmap.width),
                                       heatmap.values.begin() +
                                           static_cast<long>((r + 1) * heatmap.width)));
  }
  return j;
}

std::vector<std::size_t> top_activating_images(const FeatureBundle& bundle, std::size_t filter,
                                               std::size_t class_index, std::size_t k) {
  if (k < 1) throw ValidationError("top-k needs k >= 1");
  if (filter >= bundle.filters) throw ValidationError("filter index out of range");
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < bundle.images.size(); ++i) {
    if (bundle.images[i].true_label == class_index) members.push_back(i);
  }
  if (members.empty()) {
    throw ValidationError("class " + std::to_string(class_index) + " has no images in the bundle");
  }
  std::stable_sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
    return bundle.images[a].features[filter] > bundle.images[b].features[filter];
  });
  members.resize(std::min(k, members.size()));
  return members;
}

}  // namespace cfex
