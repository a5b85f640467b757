// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cfex/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cfex/error.hpp"
#include "cfex/model.hpp"
#include "cfex/random.hpp"

namespace cfex {
namespace {

void require_batch(std::span<const Sample> batch, std::size_t classes) {
  if (batch.empty()) throw ValidationError("loss evaluated on an empty batch");
  for (const Sample& s : batch) {
    if (s.target >= classes) {
      throw ValidationError("target class " + std::to_string(s.target) + " out of range");
    }
  }
}

void require_lambda(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ValidationError("lambda must be finite and non-negative");
  }
}

double logits_weight(LogitsTerm mode) { return mode == LogitsTerm::kOff ? 0.0 : 1.0; }

// dCE/dx_k for x the (masked or shifted) activations fed to the classifier:
// sum_c W(k, c) (p_c - [c == target]). Zero when the probability floor is active.
std::vector<double> ce_input_gradient(const Prediction& p, const ClassifierHead& classifier,
                                      std::size_t target) {
  const std::size_t n = classifier.filters();
  std::vector<double> grad(n, 0.0);
  if (p.probs[target] < kProbabilityFloor) return grad;
  std::vector<double> dz = p.probs;
  dz[target] -= 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    const auto w = classifier.weights.row(k);
    double acc = 0.0;
    for (std::size_t c = 0; c < dz.size(); ++c) acc += static_cast<double>(w[c]) * dz[c];
    grad[k] = acc;
  }
  return grad;
}

LayerGradient zero_gradient(std::size_t n) {
  return LayerGradient{Matrix<double>(n, n), std::vector<double>(n, 0.0)};
}

// Backpropagate per-unit preactivation gradients into the dense layer.
void accumulate(LayerGradient& grad, std::span<const double> unit_grad,
                std::span<const float> features, double scale) {
  for (std::size_t i = 0; i < unit_grad.size(); ++i) {
    const double d = unit_grad[i] * scale;
    if (d == 0.0) continue;
    auto row = grad.weights.row(i);
    for (std::size_t j = 0; j < features.size(); ++j) row[j] += d * features[j];
    grad.bias[i] += d;
  }
}

LossBreakdown mc_objective(std::span<const Sample> batch, const McHead& head,
                           const ClassifierHead& classifier, double lambda, LogitsTerm mode,
                           LayerGradient* grad) {
  require_batch(batch, classifier.classes());
  require_lambda(lambda);
  const std::size_t n = head.filters();
  const double inv_m = 1.0 / static_cast<double>(batch.size());
  const double weight = logits_weight(mode);
  LossBreakdown loss;
  std::vector<double> unit_grad(n);

  for (const Sample& sample : batch) {
    const std::vector<double> f = mc_forward_train(head, sample.features);
    const Prediction p = masked_classify(sample.features, f, classifier);
    loss.ce += ce_loss(p.probs, sample.target);
    loss.l1 += l1_loss(f);
    double contribution = logits_contribution(f, sample.features, classifier, sample.target);
    if (mode == LogitsTerm::kAbsolute) {
      contribution = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        contribution += std::abs(f[k] * sample.features[k] *
                                 static_cast<double>(classifier.weights(k, sample.target)));
      }
    }
    loss.logits_term += contribution;

    if (grad == nullptr) continue;
    const std::vector<double> dce = ce_input_gradient(p, classifier, sample.target);
    for (std::size_t k = 0; k < n; ++k) {
      if (f[k] == 0.0) {
        unit_grad[k] = 0.0;
        continue;
      }
      const double g = sample.features[k];
      const double w = classifier.weights(k, sample.target);
      const double dlogits = mode == LogitsTerm::kAbsolute ? g * std::abs(w) : g * w;
      const double df = g * dce[k] + lambda - weight * dlogits;
      unit_grad[k] = df * f[k] * (1.0 - f[k]);
    }
    accumulate(*grad, unit_grad, sample.features, inv_m);
  }
  loss.ce *= inv_m;
  loss.l1 *= inv_m;
  loss.logits_term *= inv_m;
  loss.total = loss.ce + lambda * loss.l1 - weight * loss.logits_term;
  return loss;
}

LossBreakdown mi_objective(std::span<const Sample> batch, const MiHead& head,
                           const ClassifierHead& classifier, double lambda, LayerGradient* grad) {
  require_batch(batch, classifier.classes());
  require_lambda(lambda);
  const std::size_t n = head.filters();
  const double inv_m = 1.0 / static_cast<double>(batch.size());
  LossBreakdown loss;
  std::vector<double> unit_grad(n);

  for (const Sample& sample : batch) {
    const std::vector<double> u = head.layer.preactivation(sample.features);
    std::vector<double> a(n);
    for (std::size_t k = 0; k < n; ++k) a[k] = std::max(u[k], 0.0);
    const Prediction p = additive_classify(sample.features, a, classifier);
    loss.ce += ce_loss(p.probs, sample.target);
    loss.l1 += l1_loss(a);

    if (grad == nullptr) continue;
    const std::vector<double> dce = ce_input_gradient(p, classifier, sample.target);
    for (std::size_t k = 0; k < n; ++k) unit_grad[k] = u[k] > 0.0 ? dce[k] + lambda : 0.0;
    accumulate(*grad, unit_grad, sample.features, inv_m);
  }
  loss.ce *= inv_m;
  loss.l1 *= inv_m;
  loss.total = loss.ce + lambda * loss.l1;
  return loss;
}

std::vector<bool> expand_units(const std::vector<bool>& unit_excluded) {
  const std::size_t n = unit_excluded.size();
  std::vector<bool> out(n * n + n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (!unit_excluded[i]) continue;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = true;
    out[n * n + i] = true;
  }
  return out;
}

}  // namespace

double ce_loss(std::span<const double> probs, std::size_t target) {
  if (target >= probs.size()) {
    throw ValidationError("target class " + std::to_string(target) + " out of range");
  }
  return -std::log(std::max(probs[target], kProbabilityFloor));
}

double l1_loss(std::span<const double> values) {
  double total = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (values[k] < 0.0) {
      throw ValidationError("l1 input entry " + std::to_string(k) + " is negative");
    }
    total += values[k];
  }
  return total;
}

double logits_contribution(std::span<const double> mask, std::span<const float> features,
                           const ClassifierHead& head, std::size_t target) {
  if (mask.size() != features.size() || features.size() != head.filters()) {
    throw ValidationError("logits contribution needs mask, features and head of equal n");
  }
  if (target >= head.classes()) throw ValidationError("target class out of range");
  double total = 0.0;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    total += mask[k] * features[k] * static_cast<double>(head.weights(k, target));
  }
  return total;
}

LossBreakdown mc_total_loss(std::span<const Sample> batch, const McHead& head,
                            const ClassifierHead& classifier, double lambda, LogitsTerm logits) {
  return mc_objective(batch, head, classifier, lambda, logits, nullptr);
}

LossBreakdown mi_total_loss(std::span<const Sample> batch, const MiHead& head,
                            const ClassifierHead& classifier, double lambda) {
  return mi_objective(batch, head, classifier, lambda, nullptr);
}

LayerGradient grad_mc(std::span<const Sample> batch, const McHead& head,
                      const ClassifierHead& classifier, double lambda, LogitsTerm logits,
                      LossBreakdown* loss) {
  LayerGradient grad = zero_gradient(head.filters());
  const LossBreakdown value = mc_objective(batch, head, classifier, lambda, logits, &grad);
  if (loss != nullptr) *loss = value;
  return grad;
}

LayerGradient grad_mi(std::span<const Sample> batch, const MiHead& head,
                      const ClassifierHead& classifier, double lambda, LossBreakdown* loss) {
  LayerGradient grad = zero_gradient(head.filters());
  const LossBreakdown value = mi_objective(batch, head, classifier, lambda, &grad);
  if (loss != nullptr) *loss = value;
  return grad;
}

std::vector<double> flatten(const DenseLayer& layer) {
  std::vector<double> out(layer.weights.flat().begin(), layer.weights.flat().end());
  out.insert(out.end(), layer.bias.begin(), layer.bias.end());
  return out;
}

std::vector<double> flatten(const LayerGradient& gradient) {
  std::vector<double> out(gradient.weights.flat().begin(), gradient.weights.flat().end());
  out.insert(out.end(), gradient.bias.begin(), gradient.bias.end());
  return out;
}

void assign_flat(DenseLayer& layer, std::span<const double> params) {
  const std::size_t w = layer.weights.size();
  if (params.size() != w + layer.bias.size()) {
    throw ValidationError("flat parameter vector has the wrong length");
  }
  std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(w),
            layer.weights.flat().begin());
  std::copy(params.begin() + static_cast<std::ptrdiff_t>(w), params.end(), layer.bias.begin());
}

FiniteDiffResult finite_diff_check(const std::function<double(std::span<const double>)>& loss,
                                   std::span<const double> params,
                                   std::span<const double> analytic, double step,
                                   const std::vector<bool>& excluded) {
  if (!(step > 0.0)) throw ValidationError("finite-difference step must be positive");
  if (analytic.size() != params.size()) {
    throw ValidationError("analytic gradient and parameters differ in length");
  }
  FiniteDiffResult result;
  std::vector<double> probe(params.begin(), params.end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    if (i < excluded.size() && excluded[i]) {
      ++result.excluded;
      continue;
    }
    const double original = probe[i];
    probe[i] = original + step;
    const double up = loss(probe);
    probe[i] = original - step;
    const double down = loss(probe);
    probe[i] = original;
    const double numeric = (up - down) / (2.0 * step);
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    const double error = std::abs(analytic[i] - numeric) / scale;
    if (error > result.max_relative_error) {
      result.max_relative_error = error;
      result.worst_index = i;
    }
    ++result.checked;
  }
  return result;
}

std::vector<bool> mc_kink_exclusions(std::span<const Sample> batch, const McHead& head,
                                     double band) {
  std::vector<bool> units(head.filters(), false);
  for (const Sample& sample : batch) {
    const std::vector<double> u = head.layer.preactivation(sample.features);
    for (std::size_t k = 0; k < u.size(); ++k) {
      if (std::abs(sigmoid(u[k]) - head.threshold) < band) units[k] = true;
    }
  }
  return expand_units(units);
}

std::vector<bool> mi_kink_exclusions(std::span<const Sample> batch, const MiHead& head,
                                     double band) {
  std::vector<bool> units(head.filters(), false);
  for (const Sample& sample : batch) {
    const std::vector<double> u = head.layer.preactivation(sample.features);
    for (std::size_t k = 0; k < u.size(); ++k) {
      if (std::abs(u[k]) < band) units[k] = true;
    }
  }
  return expand_units(units);
}

FiniteDiffResult check_mc_gradient(std::span<const Sample> batch, const McHead& head,
                                   const ClassifierHead& classifier, double lambda, double step,
                                   double band, LogitsTerm logits) {
  const std::vector<double> analytic = flatten(grad_mc(batch, head, classifier, lambda, logits));
  McHead probe = head;
  auto objective = [&](std::span<const double> params) {
    assign_flat(probe.layer, params);
    return mc_total_loss(batch, probe, classifier, lambda, logits).total;
  };
  return finite_diff_check(objective, flatten(head.layer), analytic, step,
                           mc_kink_exclusions(batch, head, band));
}

FiniteDiffResult check_mi_gradient(std::span<const Sample> batch, const MiHead& head,
                                   const ClassifierHead& classifier, double lambda, double step,
                                   double band) {
  const std::vector<double> analytic = flatten(grad_mi(batch, head, classifier, lambda));
  MiHead probe = head;
  auto objective = [&](std::span<const double> params) {
    assign_flat(probe.layer, params);
    return mi_total_loss(batch, probe, classifier, lambda).total;
  };
  return finite_diff_check(objective, flatten(head.layer), analytic, step,
                           mi_kink_exclusions(batch, head, band));
}

std::vector<Sample> GradCheckProblem::batch() const {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < features.size(); ++i) out.push_back({features[i], targets[i]});
  return out;
}

GradCheckProblem make_gradcheck_problem(std::size_t n, std::size_t classes, std::size_t batch,
                                        std::uint64_t seed) {
  if (n == 0 || classes == 0 || batch == 0) {
    throw ValidationError("gradient check needs n, C and batch >= 1");
  }
  constexpr std::uint64_t kGradCheckStream = 0x67726164;
  RandomStream rng(seed, kGradCheckStream);
  GradCheckProblem p;
  p.classifier = ClassifierHead{Matrix<float>(n, classes), std::vector<float>(classes)};
  for (float& w : p.classifier.weights.flat()) w = static_cast<float>(rng.normal());
  for (float& b : p.classifier.bias) b = static_cast<float>(0.1 * rng.normal());
  for (std::size_t i = 0; i < batch; ++i) {
    std::vector<float> g(n);
    for (float& v : g) v = static_cast<float>(rng.uniform(0.0, 2.0));
    p.features.push_back(std::move(g));
    p.targets.push_back(static_cast<std::size_t>(rng.below(classes)));
  }
  const double a = 1.0 / std::sqrt(static_cast<double>(n));
  auto draw_layer = [&]() {
    DenseLayer layer(n);
    for (double& w : layer.weights.flat()) w = rng.uniform(-a, a);
    for (double& b : layer.bias) b = rng.uniform(-1.0, 1.0);
    return layer;
  };
  p.mc = McHead{draw_layer(), kDefaultThreshold};
  p.mi = MiHead{draw_layer()};
  return p;
}

}  // namespace cfex
