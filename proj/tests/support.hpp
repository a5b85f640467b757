// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Shared fixtures for the unit tests and the acceptance runner.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "cfex/random.hpp"
#include "cfex/tensor_io.hpp"
#include "cfex/training.hpp"

namespace cfex::testing {

// The standard synthetic setup: 64 filters, 10 classes, 200 training images
// per class, a held-out draw of 100 per class and a softmax head fit on the
// training split. Inferred labels come from that head.
struct StandardData {
  FeatureBundle train;
  FeatureBundle test;
  ClassifierHead head;
};

inline TrainConfig standard_head_config() {
  TrainConfig config;
  config.learning_rate = 0.05;
  config.epochs = 50;
  return config;
}

inline StandardData make_standard_data(std::size_t per_class = 200, std::size_t test_per_class = 100,
                                       std::size_t spatial = 0) {
  SynthOptions options;
  options.per_class = per_class;
  options.spatial = spatial;
  StandardData data;
  data.train = synth_dataset(options);
  data.head = train_classifier_head(data.train, options.classes, standard_head_config());
  relabel_inferred(data.train, data.head);
  options.per_class = test_per_class;
  options.draw = 1;
  data.test = synth_dataset(options);
  relabel_inferred(data.test, data.head);
  return data;
}

// A random head with N(0, 1) weights and N(0, 0.1^2) biases.
inline ClassifierHead random_head(std::size_t n, std::size_t classes, RandomStream& rng) {
  ClassifierHead head;
  head.weights = Matrix<float>(n, classes);
  for (float& w : head.weights.flat()) w = static_cast<float>(rng.normal());
  head.bias.resize(classes);
  for (float& b : head.bias) b = static_cast<float>(0.1 * rng.normal());
  return head;
}

inline std::vector<float> random_features(std::size_t n, RandomStream& rng, double hi = 2.0) {
  std::vector<float> g(n);
  for (float& v : g) v = static_cast<float>(rng.uniform(0.0, hi));
  return g;
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("cfex_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace cfex::testing
