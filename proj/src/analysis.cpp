// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cfex/analysis.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <numeric>
#include <thread>

#include "cfex/error.hpp"
#include "cfex/model.hpp"
#include "cfex/random.hpp"

namespace cfex {
namespace {

std::vector<std::size_t> class_members(const FeatureBundle& bundle, std::size_t class_index) {
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < bundle.images.size(); ++i) {
    if (bundle.images[i].true_label == class_index) members.push_back(i);
  }
  return members;
}

double overall_accuracy(const FeatureBundle& bundle, const ClassifierHead& classifier,
                        std::span<const double> keep_mask) {
  if (bundle.images.empty()) return 0.0;
  std::size_t hits = 0;
  for (const ImageRecord& image : bundle.images) {
    if (masked_classify(image.features, keep_mask, classifier).top_class == image.true_label) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(bundle.images.size());
}

std::vector<double> keep_mask_without(std::size_t n, std::span<const std::size_t> disabled) {
  std::vector<double> mask(n, 1.0);
  for (std::size_t k : disabled) mask[k] = 0.0;
  return mask;
}

std::string format(const char* fmt, auto... args) {
  char buffer[256];
  std::snprintf(buffer, sizeof(buffer), fmt, args...);
  return buffer;
}

const char* logits_name(LogitsTerm mode) {
  switch (mode) {
    case LogitsTerm::kSigned:
      return "signed";
    case LogitsTerm::kAbsolute:
      return "absolute";
    case LogitsTerm::kOff:
      return "off";
  }
  return "?";
}

SweepRow run_row(const FeatureBundle& train, const FeatureBundle* test,
                 const ClassifierHead& classifier, std::size_t target, TrainConfig config) {
  SweepRow row;
  row.lambda = config.lambda;
  row.logits = config.logits;
  row.run = train_mc(train, classifier, target, config);
  row.train = row.run.report.final_eval;
  if (test != nullptr) {
    std::vector<std::size_t> images;
    try {
      images = select_subset(*test, config.subset, target);
    } catch (const ValidationError&) {
      images.clear();
    }
    if (!images.empty()) {
      row.test = evaluate_mc(row.run.head, *test, classifier, images, target, config.lambda,
                             config.logits);
    }
  }
  return row;
}

// Runs independent row configs, optionally on worker threads. Each worker owns
// a disjoint set of output slots.
std::vector<SweepRow> run_rows(const FeatureBundle& train, const FeatureBundle* test,
                               const ClassifierHead& classifier, std::size_t target,
                               const std::vector<TrainConfig>& configs, std::size_t jobs) {
  std::vector<SweepRow> rows(configs.size());
  std::vector<std::exception_ptr> errors(configs.size());
  auto work = [&](std::size_t worker, std::size_t stride) {
    for (std::size_t i = worker; i < configs.size(); i += stride) {
      try {
        rows[i] = run_row(train, test, classifier, target, configs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(1, configs.size()));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work, w, workers);
    for (std::thread& t : threads) t.join();
  }
  for (const auto& error : errors) {
    if (error) std::rethrow_exception(error);
  }
  return rows;
}

nlohmann::ordered_json eval_json(const HeadEvaluation& e) {
  nlohmann::ordered_json j;
  j["images"] = e.images;
  j["accuracy"] = e.accuracy;
  j["ce"] = e.loss.ce;
  j["l1"] = e.loss.l1;
  j["logits"] = e.mean_logits_contribution;
  j["filters"] = e.mean_filters;
  return j;
}

}  // namespace

FilterStats global_filter_stats(const FeatureBundle& bundle, const ClassifierHead& classifier,
                                const McHead& head, std::size_t class_index) {
  check_compatible(bundle, classifier);
  const std::vector<std::size_t> members = class_members(bundle, class_index);
  if (members.empty()) {
    throw ValidationError("class " + std::to_string(class_index) + " has no evaluation images");
  }
  const std::size_t n = bundle.filters;
  FilterStats stats;
  stats.class_index = class_index;
  stats.image_count = members.size();
  stats.counts.assign(n, 0);
  std::vector<double> sums(n, 0.0);
  for (std::size_t i : members) {
    const auto& g = bundle.images[i].features;
    const std::vector<double> mask = mc_forward_infer(head, g);
    for (std::size_t k = 0; k < n; ++k) {
      if (mask[k] == 1.0) {
        ++stats.counts[k];
        sums[k] += g[k];
      }
    }
  }
  stats.magnitude.assign(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    if (stats.counts[k] > 0) stats.magnitude[k] = sums[k] / static_cast<double>(stats.counts[k]);
  }
  const double peak = *std::max_element(stats.magnitude.begin(), stats.magnitude.end());
  if (peak > 0.0) {
    for (double& m : stats.magnitude) m /= peak;
  }
  return stats;
}

std::vector<std::size_t> global_mc_set(const FilterStats& stats, std::size_t min_count) {
  if (min_count < 1) throw ValidationError("min_count must be at least 1");
  std::vector<std::size_t> set;
  for (std::size_t k = 0; k < stats.counts.size(); ++k) {
    if (stats.counts[k] >= min_count) set.push_back(k);
  }
  return set;
}

double class_recall(const FeatureBundle& bundle, const ClassifierHead& classifier,
                    std::span<const double> keep_mask, std::size_t class_index) {
  const std::vector<std::size_t> members = class_members(bundle, class_index);
  if (members.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i : members) {
    const auto& g = bundle.images[i].features;
    if (masked_classify(g, keep_mask, classifier).top_class == class_index) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(members.size());
}

AblationResult disable_filters_eval(const FeatureBundle& bundle, const ClassifierHead& classifier,
                                    std::span<const std::size_t> disabled,
                                    std::size_t class_index, std::uint64_t baseline_seed) {
  check_compatible(bundle, classifier);
  const std::size_t n = bundle.filters;
  if (class_index >= bundle.classes) throw ValidationError("class index out of range");
  for (std::size_t k : disabled) {
    if (k >= n) throw ValidationError("disabled filter " + std::to_string(k) + " out of range");
  }
  AblationResult result;
  result.class_index = class_index;
  result.disabled.assign(disabled.begin(), disabled.end());
  std::sort(result.disabled.begin(), result.disabled.end());
  result.disabled.erase(std::unique(result.disabled.begin(), result.disabled.end()),
                        result.disabled.end());

  const std::vector<double> all(n, 1.0);
  result.recall_before = class_recall(bundle, classifier, all, class_index);
  result.accuracy_before = overall_accuracy(bundle, classifier, all);

  const std::vector<double> keep = keep_mask_without(n, result.disabled);
  result.recall_after = class_recall(bundle, classifier, keep, class_index);
  result.accuracy_after = overall_accuracy(bundle, classifier, keep);

  RandomStream rng(baseline_seed, streams::kBaseline);
  std::vector<std::size_t> order = rng.permutation(n);
  result.random_disabled.assign(order.begin(),
                                order.begin() + static_cast<long>(result.disabled.size()));
  std::sort(result.random_disabled.begin(), result.random_disabled.end());
  const std::vector<double> random_keep = keep_mask_without(n, result.random_disabled);
  result.random_recall_after = class_recall(bundle, classifier, random_keep, class_index);
  result.random_accuracy_after = overall_accuracy(bundle, classifier, random_keep);
  return result;
}

std::vector<SweepRow> sparsity_sweep(const FeatureBundle& train, const FeatureBundle* test,
                                     const ClassifierHead& classifier, std::size_t target,
                                     std::span<const double> lambdas, const TrainConfig& config,
                                     std::size_t jobs) {
  if (lambdas.empty()) throw ValidationError("sparsity sweep needs at least one lambda");
  std::vector<TrainConfig> configs;
  for (double lambda : lambdas) {
    TrainConfig c = config;
    c.lambda = lambda;
    c.validate();
    configs.push_back(c);
  }
  return run_rows(train, test, classifier, target, configs, jobs);
}

LogitsAblation logits_ablation(const FeatureBundle& train, const FeatureBundle* test,
                               const ClassifierHead& classifier, std::size_t target,
                               const TrainConfig& config, std::size_t jobs) {
  TrainConfig with = config;
  if (with.logits == LogitsTerm::kOff) with.logits = LogitsTerm::kSigned;
  TrainConfig without = config;
  without.logits = LogitsTerm::kOff;
  auto rows = run_rows(train, test, classifier, target, {with, without}, jobs);
  return LogitsAblation{std::move(rows[0]), std::move(rows[1])};
}

MisclassificationReport misclassification_report(std::size_t image, const FeatureBundle& bundle,
                                                 const ClassifierHead& classifier,
                                                 const McHead& mc_for_inferred,
                                                 const MiHead& mi_for_true,
                                                 std::size_t top_filters,
                                                 std::size_t images_per_filter) {
  if (image >= bundle.images.size()) throw ValidationError("image index out of range");
  const ImageRecord& record = bundle.images[image];
  const std::size_t inferred = classify(record.features, classifier).top_class;
  if (inferred == record.true_label) {
    throw ValidationError("image " + std::to_string(image) +
                          " is classified correctly; not a misclassification");
  }
  MisclassificationReport report;
  report.mc = explain_mc(image, bundle, classifier, mc_for_inferred);
  report.mi = explain_mi(image, bundle, classifier, mi_for_true, record.true_label);

  auto collect = [&](const ExplanationReport& r, std::size_t class_index) {
    std::vector<FilterImages> out;
    const bool present = !class_members(bundle, class_index).empty();
    for (std::size_t filter : topk_filters(r, top_filters)) {
      FilterImages entry{filter, {}};
      if (present) {
        entry.images = top_activating_images(bundle, filter, class_index, images_per_filter);
      }
      out.push_back(std::move(entry));
    }
    return out;
  };
  if (!report.mc.active.empty()) report.mc_top_images = collect(report.mc, inferred);
  if (!report.mi.active.empty()) report.mi_top_images = collect(report.mi, record.true_label);
  return report;
}

nlohmann::ordered_json to_json(const FilterStats& stats) {
  nlohmann::ordered_json j;
  j["class"] = stats.class_index;
  j["images"] = stats.image_count;
  j["counts"] = stats.counts;
  j["normalized_magnitude"] = stats.magnitude;
  return j;
}

nlohmann::ordered_json to_json(const AblationResult& r) {
  nlohmann::ordered_json j;
  j["class"] = r.class_index;
  j["disabled"] = r.disabled;
  j["recall_before"] = r.recall_before;
  j["recall_after"] = r.recall_after;
  j["accuracy_before"] = r.accuracy_before;
  j["accuracy_after"] = r.accuracy_after;
  j["random_disabled"] = r.random_disabled;
  j["random_recall_after"] = r.random_recall_after;
  j["random_accuracy_after"] = r.random_accuracy_after;
  return j;
}

nlohmann::ordered_json to_json(const SweepRow& row) {
  nlohmann::ordered_json j;
  j["lambda"] = row.lambda;
  j["logits_term"] = logits_name(row.logits);
  j["train"] = eval_json(row.train);
  j["test"] = row.test ? eval_json(*row.test) : nlohmann::ordered_json();
  return j;
}

nlohmann::ordered_json to_json(const LogitsAblation& ablation) {
  return {{"with_logits", to_json(ablation.with_logits)},
          {"without_logits", to_json(ablation.without_logits)}};
}

nlohmann::ordered_json to_json(const MisclassificationReport& report) {
  auto images = [](const std::vector<FilterImages>& entries) {
    auto out = nlohmann::ordered_json::array();
    for (const FilterImages& e : entries) {
      out.push_back({{"filter", e.filter}, {"images", e.images}});
    }
    return out;
  };
  nlohmann::ordered_json j;
  j["mc"] = to_json(report.mc);
  j["mc_top_images"] = images(report.mc_top_images);
  j["mi"] = to_json(report.mi);
  j["mi_top_images"] = images(report.mi_top_images);
  return j;
}

std::string render_stats_table(const FilterStats& stats, std::size_t top) {
  std::vector<std::size_t> order(stats.counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return stats.counts[a] > stats.counts[b]; });
  std::string out = format("class %zu, %zu images\n", stats.class_index, stats.image_count);
  out += format("%8s %8s %10s\n", "filter", "count", "magnitude");
  for (std::size_t i = 0; i < std::min(top, order.size()); ++i) {
    const std::size_t k = order[i];
    if (stats.counts[k] == 0) break;
    out += format("%8zu %8zu %10.3f\n", k, stats.counts[k], stats.magnitude[k]);
  }
  return out;
}

std::string render_ablation_table(const AblationResult& r) {
  std::string out;
  out += format("%-8s %9s %12s %12s %14s %14s %12s\n", "class", "disabled", "recall", "recall",
                "rand. recall", "accuracy", "accuracy");
  out += format("%-8s %9s %12s %12s %14s %14s %12s\n", "", "filters", "before", "after",
                "after", "before", "after");
  out += format("%-8zu %9zu %11.1f%% %11.1f%% %13.1f%% %13.1f%% %11.1f%%\n", r.class_index,
                r.disabled.size(), 100.0 * r.recall_before, 100.0 * r.recall_after,
                100.0 * r.random_recall_after, 100.0 * r.accuracy_before,
                100.0 * r.accuracy_after);
  return out;
}

std::string render_sweep_table(std::span<const SweepRow> rows) {
  std::string out = format("%-6s %8s %10s %8s %8s %8s\n", "split", "lambda", "accuracy", "ce",
                           "l1", "filters");
  auto line = [&](const char* split, double lambda, const HeadEvaluation& e) {
    out += format("%-6s %8.3g %9.1f%% %8.3f %8.3f %8.2f\n", split, lambda, 100.0 * e.accuracy,
                  e.loss.ce, e.loss.l1, e.mean_filters);
  };
  for (const SweepRow& row : rows) line("train", row.lambda, row.train);
  for (const SweepRow& row : rows) {
    if (row.test) line("test", row.lambda, *row.test);
  }
  return out;
}

std::string render_logits_table(const LogitsAblation& ablation) {
  std::string out = format("%-6s %-16s %10s %8s %8s %8s %8s\n", "split", "model", "accuracy",
                           "ce", "l1", "logits", "filters");
  auto line = [&](const char* split, const char* name, const HeadEvaluation& e) {
    out += format("%-6s %-16s %9.1f%% %8.3f %8.3f %8.3f %8.2f\n", split, name,
                  100.0 * e.accuracy, e.loss.ce, e.loss.l1, -e.mean_logits_contribution,
                  e.mean_filters);
  };
  line("train", "with logits", ablation.with_logits.train);
  line("train", "without logits", ablation.without_logits.train);
  if (ablation.with_logits.test && ablation.without_logits.test) {
    line("test", "with logits", *ablation.with_logits.test);
    line("test", "without logits", *ablation.without_logits.test);
  }
  return out;
}

}  // namespace cfex
