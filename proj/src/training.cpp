// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cfex/training.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "cfex/error.hpp"
#include "cfex/model.hpp"
#include "cfex/random.hpp"

namespace cfex {
namespace {

using GradientFn =
    std::function<LayerGradient(std::span<const Sample>, const DenseLayer&, LossBreakdown*)>;

std::vector<Sample> gather(const FeatureBundle& bundle, std::span<const std::size_t> images,
                           std::size_t target) {
  std::vector<Sample> samples;
  samples.reserve(images.size());
  for (std::size_t i : images) samples.push_back({bundle.images.at(i).features, target});
  return samples;
}

void check_inputs(const FeatureBundle& bundle, const ClassifierHead& classifier,
                  std::size_t target, const TrainConfig& config) {
  config.validate();
  check_compatible(bundle, classifier);
  if (target >= classifier.classes()) {
    throw ValidationError("class " + std::to_string(target) + " out of range for " +
                          std::to_string(classifier.classes()) + " classes");
  }
}

// The CE floor keeps the loss finite even after the parameters blow up.
void check_finite(std::span<const double> params, std::size_t epoch, std::size_t batch) {
  for (double v : params) {
    if (!std::isfinite(v) || std::abs(v) > std::numeric_limits<float>::max()) {
      throw DivergenceError("parameters overflowed at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(batch));
    }
  }
}

void add_weighted(LossBreakdown& acc, const LossBreakdown& value, double weight) {
  acc.ce += weight * value.ce;
  acc.l1 += weight * value.l1;
  acc.logits_term += weight * value.logits_term;
  acc.total += weight * value.total;
}

// Mini-batch SGD with momentum over `samples`. Returns per-epoch sample-weighted
// mean losses measured on each batch before its update.
std::vector<LossBreakdown> run_sgd(DenseLayer& layer, std::span<const Sample> samples,
                                   const TrainConfig& config, const GradientFn& gradient) {
  std::vector<double> params = flatten(layer);
  std::vector<double> velocity(params.size(), 0.0);
  std::vector<LossBreakdown> history;
  history.reserve(config.epochs);
  std::vector<Sample> batch;
  batch.reserve(config.batch_size);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    RandomStream rng(config.seed, streams::kShuffle, epoch);
    const std::vector<std::size_t> order = rng.permutation(samples.size());
    LossBreakdown epoch_loss;
    for (std::size_t start = 0, b = 0; start < order.size(); start += config.batch_size, ++b) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(samples[order[i]]);

      LossBreakdown loss;
      const LayerGradient grad = gradient(batch, layer, &loss);
      if (!std::isfinite(loss.total)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(b));
      }
      add_weighted(epoch_loss, loss, static_cast<double>(batch.size()));
      sgd_momentum_step(params, flatten(grad), velocity, config.learning_rate, config.momentum);
      check_finite(params, epoch, b);
      assign_flat(layer, params);
    }
    const double inv = 1.0 / static_cast<double>(samples.size());
    epoch_loss.ce *= inv;
    epoch_loss.l1 *= inv;
    epoch_loss.logits_term *= inv;
    epoch_loss.total *= inv;
    history.push_back(epoch_loss);
  }
  return history;
}

}  // namespace

std::string to_string(SubsetPolicy policy) {
  switch (policy) {
    case SubsetPolicy::kInferredEqualsTarget:
      return "inferred-equals-target";
    case SubsetPolicy::kInferredNotTarget:
      return "inferred-not-target";
    case SubsetPolicy::kInferredEqualsSource:
      return "inferred-equals-source";
    case SubsetPolicy::kAll:
      return "all";
  }
  return "unknown";
}

SubsetPolicy parse_subset_policy(const std::string& name) {
  for (SubsetPolicy p : {SubsetPolicy::kInferredEqualsTarget, SubsetPolicy::kInferredNotTarget,
                         SubsetPolicy::kInferredEqualsSource, SubsetPolicy::kAll}) {
    if (to_string(p) == name) return p;
  }
  throw ValidationError("unknown subset policy '" + name + "'");
}

TrainConfig TrainConfig::mc_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::mi_defaults() {
  TrainConfig config;
  config.lambda = 1.0;
  config.subset.policy = SubsetPolicy::kInferredNotTarget;
  return config;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("learning rate must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must be in [0, 1)");
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  if (epochs < 1) throw ValidationError("epochs must be at least 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ValidationError("lambda must be finite and non-negative");
  }
}

nlohmann::ordered_json to_json(const TrainConfig& config) {
  nlohmann::ordered_json j;
  j["learning_rate"] = config.learning_rate;
  j["momentum"] = config.momentum;
  j["batch_size"] = config.batch_size;
  j["epochs"] = config.epochs;
  j["lambda"] = config.lambda;
  j["seed"] = config.seed;
  j["subset_policy"] = to_string(config.subset.policy);
  if (config.subset.policy == SubsetPolicy::kInferredEqualsSource) {
    j["source_class"] = config.subset.source_class;
  }
  j["logits_term"] = config.logits == LogitsTerm::kSigned     ? "signed"
                     : config.logits == LogitsTerm::kAbsolute ? "absolute"
                                                              : "off";
  return j;
}

nlohmann::ordered_json to_json(const LossBreakdown& loss) {
  return {{"ce", loss.ce}, {"l1", loss.l1}, {"logits", loss.logits_term}, {"total", loss.total}};
}

nlohmann::ordered_json to_json(const HeadEvaluation& eval) {
  nlohmann::ordered_json j;
  j["images"] = eval.images;
  j["accuracy"] = eval.accuracy;
  j["loss"] = to_json(eval.loss);
  j["mean_filters"] = eval.mean_filters;
  j["mean_addition_l1"] = eval.mean_addition_l1;
  j["mean_logits_contribution"] = eval.mean_logits_contribution;
  return j;
}

nlohmann::ordered_json to_json(const TrainReport& report) {
  nlohmann::ordered_json j;
  j["kind"] = report.kind == HeadKind::kMinimumCorrect ? "MC" : "MI";
  j["target_class"] = report.target_class;
  j["subset_size"] = report.subset.size();
  auto& series = j["epochs"] = nlohmann::ordered_json::object();
  std::vector<double> ce, l1, logits, total;
  for (const LossBreakdown& e : report.epoch_loss) {
    ce.push_back(e.ce);
    l1.push_back(e.l1);
    logits.push_back(e.logits_term);
    total.push_back(e.total);
  }
  series["ce"] = ce;
  series["l1"] = l1;
  series["logits"] = logits;
  series["total"] = total;
  j["final"] = to_json(report.final_eval);
  return j;
}

std::vector<std::size_t> select_subset(const FeatureBundle& bundle, const SubsetSelector& selector,
                                       std::size_t target) {
  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < bundle.images.size(); ++i) {
    const std::size_t inferred = bundle.images[i].inferred_label;
    bool keep = false;
    switch (selector.policy) {
      case SubsetPolicy::kInferredEqualsTarget:
        keep = inferred == target;
        break;
      case SubsetPolicy::kInferredNotTarget:
        keep = inferred != target;
        break;
      case SubsetPolicy::kInferredEqualsSource:
        keep = inferred == selector.source_class;
        break;
      case SubsetPolicy::kAll:
        keep = true;
        break;
    }
    if (keep) picked.push_back(i);
  }
  if (picked.empty()) {
    throw ValidationError("subset policy " + to_string(selector.policy) + " selects no images" +
                          " for class " + std::to_string(target));
  }
  return picked;
}

void sgd_momentum_step(std::span<double> params, std::span<const double> grads,
                       std::span<double> velocity, double learning_rate, double momentum) {
  if (grads.size() != params.size() || velocity.size() != params.size()) {
    throw ValidationError("sgd step needs params, grads and velocity of equal length");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] - learning_rate * grads[i];
    params[i] += velocity[i];
  }
}

DenseLayer initial_layer(std::size_t n, std::uint64_t seed) {
  DenseLayer layer(n);
  RandomStream rng(seed, streams::kInit);
  const double a = 1.0 / std::sqrt(static_cast<double>(n));
  for (double& w : layer.weights.flat()) w = rng.uniform(-a, a);
  return layer;
}

HeadEvaluation evaluate_mc(const McHead& head, const FeatureBundle& bundle,
                           const ClassifierHead& classifier, std::span<const std::size_t> images,
                           std::size_t target, double lambda, LogitsTerm logits) {
  HeadEvaluation eval;
  eval.images = images.size();
  if (images.empty()) return eval;
  const std::vector<Sample> samples = gather(bundle, images, target);
  eval.loss = mc_total_loss(samples, head, classifier, lambda, logits);
  std::size_t hits = 0;
  double filters = 0.0;
  double contribution = 0.0;
  for (const Sample& s : samples) {
    const std::vector<double> mask = mc_forward_infer(head, s.features);
    if (masked_classify(s.features, mask, classifier).top_class == target) ++hits;
    filters += l1_loss(mask);
    contribution +=
        logits_contribution(mc_forward_train(head, s.features), s.features, classifier, target);
  }
  const double m = static_cast<double>(samples.size());
  eval.accuracy = static_cast<double>(hits) / m;
  eval.mean_filters = filters / m;
  eval.mean_logits_contribution = contribution / m;
  return eval;
}

HeadEvaluation evaluate_mi(const MiHead& head, const FeatureBundle& bundle,
                           const ClassifierHead& classifier, std::span<const std::size_t> images,
                           std::size_t alter_class, double lambda) {
  HeadEvaluation eval;
  eval.images = images.size();
  if (images.empty()) return eval;
  const std::vector<Sample> samples = gather(bundle, images, alter_class);
  eval.loss = mi_total_loss(samples, head, classifier, lambda);
  std::size_t hits = 0;
  double addition_l1 = 0.0;
  for (const Sample& s : samples) {
    const std::vector<double> a = mi_forward(head, s.features);
    if (additive_classify(s.features, a, classifier).top_class == alter_class) ++hits;
    addition_l1 += l1_loss(a);
  }
  const double m = static_cast<double>(samples.size());
  eval.accuracy = static_cast<double>(hits) / m;
  eval.mean_addition_l1 = addition_l1 / m;
  return eval;
}

McTrainResult train_mc(const FeatureBundle& bundle, const ClassifierHead& classifier,
                       std::size_t target_class, const TrainConfig& config) {
  check_inputs(bundle, classifier, target_class, config);
  McTrainResult result;
  result.report.kind = HeadKind::kMinimumCorrect;
  result.report.target_class = target_class;
  result.report.subset = select_subset(bundle, config.subset, target_class);
  const std::vector<Sample> samples = gather(bundle, result.report.subset, target_class);

  result.head.layer = initial_layer(bundle.filters, config.seed);
  McHead& head = result.head;
  result.report.epoch_loss = run_sgd(
      head.layer, samples, config,
      [&](std::span<const Sample> batch, const DenseLayer& layer, LossBreakdown* loss) {
        McHead view{layer, head.threshold};
        return grad_mc(batch, view, classifier, config.lambda, config.logits, loss);
      });
  head.layer.round_to_float();
  result.report.final_eval = evaluate_mc(head, bundle, classifier, result.report.subset,
                                         target_class, config.lambda, config.logits);
  return result;
}

MiTrainResult train_mi(const FeatureBundle& bundle, const ClassifierHead& classifier,
                       std::size_t alter_class, const TrainConfig& config) {
  check_inputs(bundle, classifier, alter_class, config);
  MiTrainResult result;
  result.report.kind = HeadKind::kMinimumIncorrect;
  result.report.target_class = alter_class;
  result.report.subset = select_subset(bundle, config.subset, alter_class);
  const std::vector<Sample> samples = gather(bundle, result.report.subset, alter_class);

  result.head.layer = initial_layer(bundle.filters, config.seed);
  result.report.epoch_loss = run_sgd(
      result.head.layer, samples, config,
      [&](std::span<const Sample> batch, const DenseLayer& layer, LossBreakdown* loss) {
        MiHead view{layer};
        return grad_mi(batch, view, classifier, config.lambda, loss);
      });
  result.head.layer.round_to_float();
  result.report.final_eval = evaluate_mi(result.head, bundle, classifier, result.report.subset,
                                         alter_class, config.lambda);
  return result;
}

ClassifierHead train_classifier_head(const FeatureBundle& bundle, std::size_t classes,
                                     const TrainConfig& config) {
  config.validate();
  if (classes == 0 || classes != bundle.classes) {
    throw ValidationError("class count does not match the bundle");
  }
  if (bundle.images.empty()) throw ValidationError("cannot train a head on an empty bundle");
  const std::size_t n = bundle.filters;
  // Parameters: W row-major (filter, class), then bias.
  std::vector<double> params(n * classes + classes, 0.0);
  std::vector<double> velocity(params.size(), 0.0);
  std::vector<double> grad(params.size());
  std::vector<double> z(classes);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    RandomStream rng(config.seed, streams::kShuffle, epoch);
    const std::vector<std::size_t> order = rng.permutation(bundle.images.size());
    for (std::size_t start = 0, b = 0; start < order.size(); start += config.batch_size, ++b) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      double loss = 0.0;
      const double inv_m = 1.0 / static_cast<double>(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        const ImageRecord& image = bundle.images[order[i]];
        for (std::size_t c = 0; c < classes; ++c) z[c] = params[n * classes + c];
        for (std::size_t k = 0; k < n; ++k) {
          const double g = image.features[k];
          for (std::size_t c = 0; c < classes; ++c) z[c] += g * params[k * classes + c];
        }
        std::vector<double> p = softmax(z);
        loss += ce_loss(p, image.true_label);
        p[image.true_label] -= 1.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double g = image.features[k] * inv_m;
          for (std::size_t c = 0; c < classes; ++c) grad[k * classes + c] += g * p[c];
        }
        for (std::size_t c = 0; c < classes; ++c) grad[n * classes + c] += p[c] * inv_m;
      }
      if (!std::isfinite(loss)) {
        throw DivergenceError("non-finite classifier loss at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(b));
      }
      sgd_momentum_step(params, grad, velocity, config.learning_rate, config.momentum);
      check_finite(params, epoch, b);
    }
  }

  ClassifierHead head{Matrix<float>(n, classes), std::vector<float>(classes)};
  for (std::size_t i = 0; i < n * classes; ++i) {
    head.weights.flat()[i] = static_cast<float>(params[i]);
  }
  for (std::size_t c = 0; c < classes; ++c) {
    head.bias[c] = static_cast<float>(params[n * classes + c]);
  }
  validate(head);
  return head;
}

double accuracy(const FeatureBundle& bundle, const ClassifierHead& head) {
  if (bundle.images.empty()) return 0.0;
  std::size_t hits = 0;
  for (const ImageRecord& image : bundle.images) {
    if (classify(image.features, head).top_class == image.true_label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(bundle.images.size());
}

FeatureBundle synth_dataset(const SynthOptions& options) {
  if (options.filters < 1 || options.classes < 1 || options.per_class < 1) {
    throw ValidationError("synthetic dataset needs n, C and per_class >= 1");
  }
  if (!(options.separation > 0.0)) throw ValidationError("separation must be positive");
  if (!(options.noise >= 0.0)) throw ValidationError("noise must be non-negative");
  if (!(options.visibility > 0.0 && options.visibility <= 1.0)) {
    throw ValidationError("visibility must be in (0, 1]");
  }
  const std::size_t n = options.filters;
  const std::size_t support = std::clamp<std::size_t>(options.support, 1, n);

  // Prototypes: class c owns filters c*support .. c*support+support-1 (mod n),
  // each with a random strength around the separation scale.
  RandomStream proto_rng(options.seed, streams::kSynth);
  Matrix<double> prototypes(options.classes, n, 0.0);
  for (std::size_t c = 0; c < options.classes; ++c) {
    for (std::size_t i = 0; i < support; ++i) {
      prototypes(c, (c * support + i) % n) = options.separation * proto_rng.uniform(0.5, 1.5);
    }
  }

  FeatureBundle bundle;
  bundle.filters = static_cast<std::uint32_t>(n);
  bundle.classes = static_cast<std::uint32_t>(options.classes);
  bundle.spatial_height = static_cast<std::uint32_t>(options.spatial);
  bundle.spatial_width = static_cast<std::uint32_t>(options.spatial);
  const std::size_t cells = options.spatial * options.spatial;

  RandomStream rng(options.seed, streams::kSamples, options.draw);
  for (std::size_t c = 0; c < options.classes; ++c) {
    for (std::size_t s = 0; s < options.per_class; ++s) {
      ImageRecord image;
      image.true_label = static_cast<std::uint32_t>(c);
      image.inferred_label = image.true_label;
      image.source_path = "synthetic/draw" + std::to_string(options.draw) + "/class" +
                          std::to_string(c) + "/img" + std::to_string(s) + ".png";
      std::vector<bool> visible(support);
      bool any = false;
      for (std::size_t i = 0; i < support; ++i) {
        visible[i] = rng.uniform() < options.visibility;
        any = any || visible[i];
      }
      if (!any) visible[rng.below(support)] = true;
      std::vector<double> shown(n, 0.0);
      for (std::size_t i = 0; i < support; ++i) {
        const std::size_t k = (c * support + i) % n;
        if (visible[i]) shown[k] = prototypes(c, k);
      }
      image.features.resize(n);
      for (std::size_t k = 0; k < n; ++k) {
        const double v = shown[k] + options.noise * rng.normal();
        image.features[k] = static_cast<float>(std::max(0.0, v));
      }
      if (cells > 0) {
        // Random non-negative layout per filter, rescaled so its mean is g.
        image.spatial.assign(cells * n, 0.0f);
        for (std::size_t k = 0; k < n; ++k) {
          std::vector<double> layout(cells);
          double total = 0.0;
          for (double& v : layout) {
            v = rng.uniform(0.05, 1.0);
            total += v;
          }
          const double scale = image.features[k] * static_cast<double>(cells) / total;
          for (std::size_t cell = 0; cell < cells; ++cell) {
            image.spatial[cell * n + k] = static_cast<float>(layout[cell] * scale);
          }
        }
      }
      bundle.images.push_back(std::move(image));
    }
  }
  validate(bundle);
  return bundle;
}

void relabel_inferred(FeatureBundle& bundle, const ClassifierHead& head) {
  check_compatible(bundle, head);
  for (ImageRecord& image : bundle.images) {
    image.inferred_label = static_cast<std::uint32_t>(classify(image.features, head).top_class);
  }
}

}  // namespace cfex
