// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cfex/tensor_io.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cfex/error.hpp"
#include "cfex/random.hpp"
#include "support.hpp"

namespace cfex {
namespace {

using Bytes = std::vector<std::uint8_t>;

template <typename T>
Bytes serialize(const T& value) {
  std::ostringstream out;
  std::size_t written = 0;
  if constexpr (std::is_same_v<T, FeatureBundle>) {
    written = write_feature_bundle(value, out);
  } else if constexpr (std::is_same_v<T, ClassifierHead>) {
    written = write_classifier_head(value, out);
  } else {
    written = write_checkpoint(value, out);
  }
  const std::string s = out.str();
  EXPECT_EQ(written, s.size());
  return {s.begin(), s.end()};
}

// Independent little-endian encoder for building expected byte streams.
struct Encoder {
  Bytes bytes;
  void tag(const char* t) { bytes.insert(bytes.end(), t, t + 4); }
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
};

std::size_t offset_of(auto parse, const Bytes& bytes) {
  try {
    parse(std::span<const std::uint8_t>(bytes));
  } catch (const FormatError& e) {
    return e.offset();
  }
  ADD_FAILURE() << "expected a FormatError";
  return SIZE_MAX;
}

const auto kParseFex = [](std::span<const std::uint8_t> b) { return parse_feature_bundle(b); };
const auto kParseChd = [](std::span<const std::uint8_t> b) { return parse_classifier_head(b); };
const auto kParseCfe = [](std::span<const std::uint8_t> b) { return parse_checkpoint(b); };

FeatureBundle two_filter_bundle() {
  FeatureBundle bundle;
  bundle.filters = 2;
  bundle.classes = 3;
  ImageRecord image;
  image.true_label = 1;
  image.inferred_label = 2;
  image.source_path = "a.jpg";
  image.features = {1.0f, 2.0f};
  bundle.images.push_back(image);
  return bundle;
}

TEST(FeatureBundleFormat, SingleRecordMatchesHandEncoding) {
  Encoder e;
  e.tag("FEX1");
  e.u32(1);
  e.u32(2);
  e.u32(3);
  e.u32(1);
  e.u32(0);
  e.u32(0);
  e.u32(1);
  e.u32(2);
  e.u16(5);
  for (char c : std::string("a.jpg")) e.u8(static_cast<std::uint8_t>(c));
  e.f32(1.0f);
  e.f32(2.0f);

  const Bytes bytes = serialize(two_filter_bundle());
  EXPECT_EQ(bytes, e.bytes);
  EXPECT_EQ(bytes.size(), kFeatureHeaderBytes + 4 + 4 + 2 + 5 + 8);
  EXPECT_EQ(parse_feature_bundle(bytes), two_filter_bundle());
}

TEST(FeatureBundleFormat, EmptyBundleIsHeaderOnly) {
  FeatureBundle bundle;
  bundle.filters = 4;
  bundle.classes = 2;
  const Bytes bytes = serialize(bundle);
  EXPECT_EQ(bytes.size(), 28u);
  const FeatureBundle back = parse_feature_bundle(bytes);
  EXPECT_TRUE(back.images.empty());
  EXPECT_EQ(back.filters, 4u);
}

TEST(FeatureBundleFormat, VggSizedRecords) {
  FeatureBundle bundle;
  bundle.filters = 512;
  bundle.classes = 200;
  RandomStream rng(5, streams::kSamples);
  for (int i = 0; i < 3; ++i) {
    ImageRecord image;
    image.true_label = image.inferred_label = static_cast<std::uint32_t>(rng.below(200));
    image.features = cfex::testing::random_features(512, rng);
    bundle.images.push_back(image);
  }
  const Bytes bytes = serialize(bundle);
  EXPECT_EQ(bytes.size(), 28u + 3 * (10 + 512 * 4));
  const FeatureBundle back = parse_feature_bundle(bytes);
  ASSERT_EQ(back.images.size(), 3u);
  EXPECT_EQ(back.images[2].features.size(), 512u);
  EXPECT_EQ(back, bundle);
}

TEST(FeatureBundleFormat, SpatialMapsRoundTrip) {
  FeatureBundle bundle;
  bundle.filters = 2;
  bundle.classes = 2;
  bundle.spatial_height = 1;
  bundle.spatial_width = 2;
  ImageRecord image;
  // (row, col, filter) order: cell 0 = [1, 0], cell 1 = [3, 4].
  image.spatial = {1.0f, 0.0f, 3.0f, 4.0f};
  image.features = {2.0f, 2.0f};
  bundle.images.push_back(image);
  EXPECT_EQ(parse_feature_bundle(serialize(bundle)), bundle);
}

TEST(FeatureBundleFormat, RejectsInconsistentSpatialMean) {
  FeatureBundle bundle;
  bundle.filters = 1;
  bundle.classes = 1;
  bundle.spatial_height = 1;
  bundle.spatial_width = 2;
  ImageRecord image;
  image.spatial = {1.0f, 3.0f};
  image.features = {2.0f};
  bundle.images.push_back(image);
  Bytes bytes = serialize(bundle);
  // Nudge g outside the 1e-4 relative band, then just inside it.
  const std::size_t g_offset = 28 + 10;
  auto set_g = [&](float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) bytes[g_offset + i] = static_cast<std::uint8_t>(bits >> (8 * i));
  };
  set_g(2.001f);
  EXPECT_THROW(parse_feature_bundle(bytes), ValidationError);
  set_g(2.00005f);
  EXPECT_NO_THROW(parse_feature_bundle(bytes));
}

TEST(FeatureBundleFormat, BadMagic) {
  Bytes bytes = serialize(two_filter_bundle());
  std::memcpy(bytes.data(), "XXXX", 4);
  EXPECT_EQ(offset_of(kParseFex, bytes), 0u);
  try {
    parse_feature_bundle(bytes);
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
}

TEST(FeatureBundleFormat, TruncatedMidRecordReportsOffset) {
  FeatureBundle bundle = two_filter_bundle();
  bundle.images.push_back(bundle.images[0]);
  const Bytes full = serialize(bundle);
  // Records are 23 bytes here; cut three bytes into the second one's features.
  const std::size_t second = 28 + 23;
  const Bytes cut(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(second + 15 + 3));
  // The count pre-check cannot rule out two records, so the reader fails at
  // the feature block it could not complete.
  const std::size_t at = offset_of(kParseFex, cut);
  EXPECT_EQ(at, second + 15);
}

TEST(FeatureBundleFormat, ImpossibleRecordCountReportsCountField) {
  Bytes bytes = serialize(two_filter_bundle());
  bytes[16] = 200;
  EXPECT_EQ(offset_of(kParseFex, bytes), 16u);
}

TEST(FeatureBundleFormat, LabelOutOfRange) {
  Bytes bytes = serialize(two_filter_bundle());
  bytes[28] = 3;  // true_label = C
  EXPECT_EQ(offset_of(kParseFex, bytes), 28u);
}

TEST(FeatureBundleFormat, NegativeFeatureNamesItsOffset) {
  FeatureBundle bundle = two_filter_bundle();
  Bytes bytes = serialize(bundle);
  const std::size_t second_feature = 28 + 15 + 4;
  bytes[second_feature + 3] |= 0x80;  // flip the sign bit of g[1]
  EXPECT_EQ(offset_of(kParseFex, bytes), second_feature);

  ReadOptions permissive;
  permissive.allow_negative = true;
  const FeatureBundle back = parse_feature_bundle(bytes, permissive);
  EXPECT_EQ(back.images[0].features[1], -2.0f);
}

TEST(FeatureBundleFormat, TrailingBytesRejected) {
  Bytes bytes = serialize(two_filter_bundle());
  const std::size_t size = bytes.size();
  bytes.push_back(0);
  EXPECT_EQ(offset_of(kParseFex, bytes), size);
}

TEST(FeatureBundleFormat, UnsupportedVersion) {
  Bytes bytes = serialize(two_filter_bundle());
  bytes[4] = 2;
  EXPECT_EQ(offset_of(kParseFex, bytes), 4u);
}

TEST(FeatureBundleFormat, WriterRefusesInvalidBundle) {
  FeatureBundle bundle = two_filter_bundle();
  bundle.images[0].features[0] = -1.0f;
  std::ostringstream out;
  EXPECT_THROW(write_feature_bundle(bundle, out), ValidationError);
  bundle = two_filter_bundle();
  bundle.images[0].true_label = 7;
  EXPECT_THROW(write_feature_bundle(bundle, out), ValidationError);
  bundle = two_filter_bundle();
  bundle.images[0].features.push_back(1.0f);
  EXPECT_THROW(write_feature_bundle(bundle, out), ValidationError);
}

TEST(ClassifierHeadFormat, IdentityRoundTrip) {
  ClassifierHead head{Matrix<float>(3, 3, 0.0f), std::vector<float>(3, 0.0f)};
  for (std::size_t k = 0; k < 3; ++k) head.weights(k, k) = 1.0f;
  const Bytes bytes = serialize(head);
  EXPECT_EQ(bytes.size(), 16u + 4 * (9 + 3));
  EXPECT_EQ(parse_classifier_head(bytes), head);
}

TEST(ClassifierHeadFormat, RowMajorFilterByClass) {
  ClassifierHead head{Matrix<float>(2, 3), {0.5f, 0.25f, 0.125f}};
  for (std::size_t i = 0; i < 6; ++i) head.weights.flat()[i] = static_cast<float>(i + 1);
  Encoder e;
  e.tag("CHD1");
  e.u32(1);
  e.u32(2);
  e.u32(3);
  for (int i = 1; i <= 6; ++i) e.f32(static_cast<float>(i));
  e.f32(0.5f);
  e.f32(0.25f);
  e.f32(0.125f);
  EXPECT_EQ(serialize(head), e.bytes);
  EXPECT_EQ(head.weights(1, 0), 4.0f);
}

TEST(ClassifierHeadFormat, DeclaredLengthMismatch) {
  ClassifierHead head{Matrix<float>(2, 2, 1.0f), {0.0f, 0.0f}};
  Bytes bytes = serialize(head);
  bytes.pop_back();
  EXPECT_EQ(offset_of(kParseChd, bytes), 16u);
  bytes = serialize(head);
  bytes[8] = 3;  // n = 3 but payload sized for 2
  EXPECT_EQ(offset_of(kParseChd, bytes), 16u);
}

TEST(ClassifierHeadFormat, RejectsNonFinite) {
  ClassifierHead head{Matrix<float>(1, 2, 1.0f), {0.0f, 0.0f}};
  Bytes bytes = serialize(head);
  const auto nan = std::bit_cast<std::uint32_t>(std::numeric_limits<float>::quiet_NaN());
  for (int i = 0; i < 4; ++i) bytes[16 + i] = static_cast<std::uint8_t>(nan >> (8 * i));
  EXPECT_THROW(parse_classifier_head(bytes), ValidationError);
}

CfeCheckpoint small_checkpoint(HeadKind kind) {
  CfeCheckpoint cp;
  cp.kind = kind;
  cp.target_class = 2;
  cp.threshold = kind == HeadKind::kMinimumCorrect ? 0.5f : 0.0f;
  cp.lambda = 2.0f;
  cp.epochs_trained = 200;
  cp.weights = Matrix<float>(2, 2);
  cp.weights(0, 1) = -0.25f;
  cp.weights(1, 0) = 0.75f;
  cp.bias = {0.1f, -0.1f};
  return cp;
}

TEST(CheckpointFormat, HandEncodedLayout) {
  Encoder e;
  e.tag("CFE1");
  e.u32(1);
  e.u8(0);
  e.u32(2);
  e.u32(2);
  e.f32(0.5f);
  e.f32(2.0f);
  e.u32(200);
  for (float v : {0.0f, -0.25f, 0.75f, 0.0f, 0.1f, -0.1f}) e.f32(v);
  EXPECT_EQ(serialize(small_checkpoint(HeadKind::kMinimumCorrect)), e.bytes);
}

TEST(CheckpointFormat, RoundTripBothKinds) {
  for (HeadKind kind : {HeadKind::kMinimumCorrect, HeadKind::kMinimumIncorrect}) {
    const CfeCheckpoint cp = small_checkpoint(kind);
    EXPECT_EQ(parse_checkpoint(serialize(cp)), cp);
  }
}

TEST(CheckpointFormat, InvalidKindByte) {
  Bytes bytes = serialize(small_checkpoint(HeadKind::kMinimumCorrect));
  bytes[8] = 2;
  EXPECT_EQ(offset_of(kParseCfe, bytes), 8u);
}

TEST(CheckpointFormat, ThresholdOutsideUnitInterval) {
  CfeCheckpoint cp = small_checkpoint(HeadKind::kMinimumCorrect);
  Bytes bytes = serialize(cp);
  const auto one = std::bit_cast<std::uint32_t>(1.0f);
  for (int i = 0; i < 4; ++i) bytes[17 + i] = static_cast<std::uint8_t>(one >> (8 * i));
  EXPECT_EQ(offset_of(kParseCfe, bytes), 17u);
  cp.threshold = 0.0f;
  std::ostringstream out;
  EXPECT_THROW(write_checkpoint(cp, out), ValidationError);
}

TEST(CheckpointFormat, Truncated) {
  const Bytes full = serialize(small_checkpoint(HeadKind::kMinimumIncorrect));
  for (std::size_t keep : {0u, 3u, 6u, 8u, 12u, 20u, 29u, 40u}) {
    const Bytes cut(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(keep));
    EXPECT_LE(offset_of(kParseCfe, cut), keep) << "keep=" << keep;
  }
}

TEST(FilePaths, SaveLoadAndMissingFile) {
  const auto dir = cfex::testing::scratch_dir("tensor_io");
  const FeatureBundle bundle = two_filter_bundle();
  save(dir / "b.fex", bundle);
  EXPECT_EQ(load_feature_bundle(dir / "b.fex"), bundle);
  const CfeCheckpoint cp = small_checkpoint(HeadKind::kMinimumCorrect);
  save(dir / "c.cfe", cp);
  EXPECT_EQ(load_checkpoint(dir / "c.cfe"), cp);
  EXPECT_THROW(load_classifier_head(dir / "missing.chd"), ValidationError);
  std::filesystem::remove_all(dir);
}

TEST(Compatibility, HeadMustMatchBundle) {
  const FeatureBundle bundle = two_filter_bundle();
  EXPECT_NO_THROW(check_compatible(bundle, ClassifierHead{Matrix<float>(2, 3), {0, 0, 0}}));
  EXPECT_THROW(check_compatible(bundle, ClassifierHead{Matrix<float>(3, 3), {0, 0, 0}}),
               ValidationError);
  EXPECT_THROW(check_compatible(bundle, ClassifierHead{Matrix<float>(2, 2), {0, 0}}),
               ValidationError);
}

TEST(DatasetManifest, JsonRoundTripAndValidation) {
  DatasetManifest manifest;
  manifest.bundle_path = "train.fex";
  manifest.head_path = "head.chd";
  manifest.class_names = {"crow", "finch", "wren"};
  manifest.splits = {Split::kTrain};
  const std::string text = manifest_to_json(manifest);
  EXPECT_EQ(manifest_from_json(text), manifest);
  EXPECT_NO_THROW(validate(manifest, two_filter_bundle()));
  manifest.class_names.pop_back();
  EXPECT_THROW(validate(manifest, two_filter_bundle()), ValidationError);
  EXPECT_THROW(manifest_from_json("{\"bundle\": 3}"), ValidationError);
}

// Property: randomized instances survive write -> read bit-exactly.
TEST(FormatProperties, RandomizedRoundTrips) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    RandomStream rng(seed, streams::kSynth, 7);
    const std::size_t n = 1 + rng.below(9);
    const std::size_t classes = 1 + rng.below(5);
    FeatureBundle bundle;
    bundle.filters = n;
    bundle.classes = classes;
    for (std::size_t i = rng.below(5); i > 0; --i) {
      ImageRecord image;
      image.true_label = static_cast<std::uint32_t>(rng.below(classes));
      image.inferred_label = static_cast<std::uint32_t>(rng.below(classes));
      image.source_path = std::string(rng.below(20), 'p');
      image.features = cfex::testing::random_features(n, rng, 1e3);
      bundle.images.push_back(image);
    }
    const Bytes fex = serialize(bundle);
    EXPECT_EQ(serialize(parse_feature_bundle(fex)), fex);

    const ClassifierHead head = cfex::testing::random_head(n, classes, rng);
    const Bytes chd = serialize(head);
    EXPECT_EQ(serialize(parse_classifier_head(chd)), chd);
  }
}

}  // namespace
}  // namespace cfex
