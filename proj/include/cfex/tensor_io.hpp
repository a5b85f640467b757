// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Binary containers for exported features, the frozen classifier head and
// trained explainer checkpoints. All three layouts are little-endian with
// 32-bit floats:
//
//   FEX1  magic | u32 version | u32 n | u32 C | u32 m | u32 hs | u32 ws
//         then m records: u32 true | u32 inferred | u16 path_len | path |
//         f32[n] g | f32[hs*ws*n] spatial (row, col, filter), if hs > 0
//   CHD1  magic | u32 version | u32 n | u32 C | f32[n*C] W | f32[C] bias
//   CFE1  magic | u32 version | u8 kind | u32 n | u32 target | f32 threshold |
//         f32 lambda | u32 epochs | f32[n*n] D | f32[n] bias
//
// Class names and splits live in a JSON dataset manifest.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cfex/matrix.hpp"

namespace cfex {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 28;

struct ImageRecord {
  std::uint32_t true_label = 0;
  std::uint32_t inferred_label = 0;
  std::string source_path;
  std::vector<float> features;  // post-GAP activations, length n
  std::vector<float> spatial;   // (hs, ws, n) row-major, empty when hs == 0

  bool operator==(const ImageRecord&) const = default;
};

struct FeatureBundle {
  std::uint32_t filters = 0;  // n
  std::uint32_t classes = 0;  // C
  std::uint32_t spatial_height = 0;
  std::uint32_t spatial_width = 0;
  std::vector<ImageRecord> images;

  bool has_spatial() const { return spatial_height > 0; }
  bool operator==(const FeatureBundle&) const = default;
};

// Frozen dense layer: weights(k, c) connects filter k to class c.
struct ClassifierHead {
  Matrix<float> weights;
  std::vector<float> bias;

  std::size_t filters() const { return weights.rows(); }
  std::size_t classes() const { return weights.cols(); }
  bool operator==(const ClassifierHead&) const = default;
};

enum class HeadKind : std::uint8_t { kMinimumCorrect = 0, kMinimumIncorrect = 1 };

struct CfeCheckpoint {
  HeadKind kind = HeadKind::kMinimumCorrect;
  std::uint32_t target_class = 0;
  float threshold = 0.5f;  // MC only; written as 0 for MI
  float lambda = 0.0f;
  std::uint32_t epochs_trained = 0;
  Matrix<float> weights;  // (output unit, input feature)
  std::vector<float> bias;

  std::size_t filters() const { return weights.rows(); }
  bool operator==(const CfeCheckpoint&) const = default;
};

struct ReadOptions {
  // Accept negative features (foreign backbones without a final ReLU).
  bool allow_negative = false;
};

// Invariant checks; throw ValidationError describing the first violation.
void validate(const FeatureBundle& bundle, const ReadOptions& options = {});
void validate(const ClassifierHead& head);
void validate(const CfeCheckpoint& checkpoint);
void check_compatible(const FeatureBundle& bundle, const ClassifierHead& head);

std::size_t write_feature_bundle(const FeatureBundle& bundle, std::ostream& out);
std::size_t write_classifier_head(const ClassifierHead& head, std::ostream& out);
std::size_t write_checkpoint(const CfeCheckpoint& checkpoint, std::ostream& out);

// Parsers consume the whole buffer; trailing bytes are an error.
FeatureBundle parse_feature_bundle(std::span<const std::uint8_t> bytes,
                                   const ReadOptions& options = {});
ClassifierHead parse_classifier_head(std::span<const std::uint8_t> bytes);
CfeCheckpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

FeatureBundle read_feature_bundle(std::istream& in, const ReadOptions& options = {});
ClassifierHead read_classifier_head(std::istream& in);
CfeCheckpoint read_checkpoint(std::istream& in);

// Path convenience wrappers.
void save(const std::filesystem::path& path, const FeatureBundle& bundle);
void save(const std::filesystem::path& path, const ClassifierHead& head);
void save(const std::filesystem::path& path, const CfeCheckpoint& checkpoint);
FeatureBundle load_feature_bundle(const std::filesystem::path& path,
                                  const ReadOptions& options = {});
ClassifierHead load_classifier_head(const std::filesystem::path& path);
CfeCheckpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

enum class Split : std::uint8_t { kTrain, kTest };

struct DatasetManifest {
  std::string bundle_path;
  std::string head_path;
  std::vector<std::string> class_names;
  std::vector<Split> splits;  // one tag per image, may be empty

  bool operator==(const DatasetManifest&) const = default;
};

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);
// Checks class-name count against C and split count against m.
void validate(const DatasetManifest& manifest, const FeatureBundle& bundle);

}  // namespace cfex
