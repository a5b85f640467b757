// Copyright 2026 The cfex Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "cfex/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <ostream>
#include <sstream>

#include "cfex/error.hpp"
#include "json.hpp"

namespace cfex {
namespace {

constexpr char kFeatureMagic[4] = {'F', 'E', 'X', '1'};
constexpr char kHeadMagic[4] = {'C', 'H', 'D', '1'};
constexpr char kCheckpointMagic[4] = {'C', 'F', 'E', '1'};

constexpr double kSpatialMeanTolerance = 1e-4;

// Little-endian encoder that counts what it emits.
class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& out) : out_(out) {}

  void magic(const char (&tag)[4]) { put(tag, 4); }
  void u8(std::uint8_t v) { put(reinterpret_cast<const char*>(&v), 1); }
  void u16(std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    put(b, 2);
  }
  void u32(std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>(v >> 24)};
    put(b, 4);
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f32s(std::span<const float> values) {
    for (float v : values) f32(v);
  }
  void bytes(const std::string& s) { put(s.data(), s.size()); }

  std::size_t count() const { return count_; }

 private:
  void put(const char* data, std::size_t size) {
    out_.write(data, static_cast<std::streamsize>(size));
    if (!out_) throw std::runtime_error("write failed after " + std::to_string(count_) + " bytes");
    count_ += size;
  }

  std::ostream& out_;
  std::size_t count_ = 0;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void magic(const char (&tag)[4], const char* format) {
    need(4, "magic");
    if (!std::equal(tag, tag + 4, bytes_.begin())) {
      throw FormatError(std::string("bad magic, expected ") + format, 0);
    }
    pos_ += 4;
  }
  void version() {
    const std::size_t at = pos_;
    if (u32("version") != kFormatVersion) throw FormatError("unsupported version", at);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  void f32s(std::span<float> out, const char* what) {
    need(out.size() * 4, what);
    for (float& v : out) v = f32(what);
  }
  std::string string(std::size_t size, const char* what) {
    need(size, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), size);
    pos_ += size;
    return s;
  }

  void finish() const {
    if (pos_ != bytes_.size()) {
      throw FormatError(std::to_string(bytes_.size() - pos_) + " trailing bytes after payload",
                        pos_);
    }
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t size, const char* what) const {
    if (remaining() < size) {
      throw FormatError(std::string("truncated stream while reading ") + what, pos_);
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

bool all_finite(std::span<const float> values) {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

std::vector<std::uint8_t> slurp(std::istream& in) {
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void check_record(const ImageRecord& image, std::size_t index, const FeatureBundle& bundle,
                  const ReadOptions& options) {
  const std::string where = "image " + std::to_string(index) + ": ";
  if (image.true_label >= bundle.classes || image.inferred_label >= bundle.classes) {
    throw ValidationError(where + "label out of range for " + std::to_string(bundle.classes) +
                          " classes");
  }
  if (image.features.size() != bundle.filters) {
    throw ValidationError(where + "feature length " + std::to_string(image.features.size()) +
                          " != n " + std::to_string(bundle.filters));
  }
  if (image.source_path.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw ValidationError(where + "source path longer than 65535 bytes");
  }
  const std::size_t cells = std::size_t{bundle.spatial_height} * bundle.spatial_width;
  if (image.spatial.size() != cells * bundle.filters) {
    throw ValidationError(where + "spatial map size does not match (hs, ws, n)");
  }
  if (!all_finite(image.features) || !all_finite(image.spatial)) {
    throw ValidationError(where + "non-finite activation");
  }
  if (!options.allow_negative) {
    auto negative = [](float v) { return v < 0.0f; };
    if (std::any_of(image.features.begin(), image.features.end(), negative) ||
        std::any_of(image.spatial.begin(), image.spatial.end(), negative)) {
      throw ValidationError(where + "negative activation");
    }
  }
}

// The GAP vector must be the per-channel mean of the spatial maps.
void check_spatial_mean(const ImageRecord& image, const FeatureBundle& bundle, std::size_t index) {
  if (!bundle.has_spatial()) return;
  const std::size_t n = bundle.filters;
  const std::size_t cells = std::size_t{bundle.spatial_height} * bundle.spatial_width;
  std::vector<double> sums(n, 0.0);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    for (std::size_t k = 0; k < n; ++k) sums[k] += image.spatial[cell * n + k];
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double mean = sums[k] / static_cast<double>(cells);
    const double g = image.features[k];
    const double scale = std::max({std::abs(g), std::abs(mean), 1e-6});
    if (std::abs(mean - g) > kSpatialMeanTolerance * scale) {
      throw ValidationError("image " + std::to_string(index) + ": spatial mean of filter " +
                            std::to_string(k) + " is " + std::to_string(mean) +
                            " but g is " + std::to_string(g));
    }
  }
}

template <typename T, typename Writer>
void save_with(const std::filesystem::path& path, const T& value, Writer writer) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  writer(value, out);
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

void validate(const FeatureBundle& bundle, const ReadOptions& options) {
  if (bundle.filters == 0) throw ValidationError("feature bundle needs n >= 1");
  if (bundle.classes == 0) throw ValidationError("feature bundle needs C >= 1");
  if ((bundle.spatial_height == 0) != (bundle.spatial_width == 0)) {
    throw ValidationError("spatial height and width must both be zero or both positive");
  }
  for (std::size_t i = 0; i < bundle.images.size(); ++i) {
    check_record(bundle.images[i], i, bundle, options);
    check_spatial_mean(bundle.images[i], bundle, i);
  }
}

void validate(const ClassifierHead& head) {
  if (head.filters() == 0 || head.classes() == 0) {
    throw ValidationError("classifier head needs n >= 1 and C >= 1");
  }
  if (head.bias.size() != head.classes()) {
    throw ValidationError("classifier bias length does not match class count");
  }
  if (!all_finite(head.weights.flat()) || !all_finite(head.bias)) {
    throw ValidationError("classifier head has non-finite entries");
  }
}

void validate(const CfeCheckpoint& checkpoint) {
  if (checkpoint.kind != HeadKind::kMinimumCorrect &&
      checkpoint.kind != HeadKind::kMinimumIncorrect) {
    throw ValidationError("invalid checkpoint kind");
  }
  const std::size_t n = checkpoint.filters();
  if (n == 0 || checkpoint.weights.cols() != n || checkpoint.bias.size() != n) {
    throw ValidationError("checkpoint weights must be (n, n) with a length-n bias");
  }
  if (checkpoint.kind == HeadKind::kMinimumCorrect &&
      !(checkpoint.threshold > 0.0f && checkpoint.threshold < 1.0f)) {
    throw ValidationError("MC threshold must lie in (0, 1)");
  }
  if (!(checkpoint.lambda >= 0.0f) || !std::isfinite(checkpoint.lambda)) {
    throw ValidationError("checkpoint lambda must be finite and non-negative");
  }
  if (!all_finite(checkpoint.weights.flat()) || !all_finite(checkpoint.bias) ||
      !std::isfinite(checkpoint.threshold)) {
    throw ValidationError("checkpoint has non-finite entries");
  }
}

void check_compatible(const FeatureBundle& bundle, const ClassifierHead& head) {
  if (bundle.filters != head.filters() || bundle.classes != head.classes()) {
    throw ValidationError("bundle is (n=" + std::to_string(bundle.filters) + ", C=" +
                          std::to_string(bundle.classes) + ") but head is (n=" +
                          std::to_string(head.filters()) + ", C=" +
                          std::to_string(head.classes()) + ")");
  }
}

std::size_t write_feature_bundle(const FeatureBundle& bundle, std::ostream& out) {
  validate(bundle);
  if (bundle.images.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw ValidationError("too many images for a u32 record count");
  }
  ByteWriter w(out);
  w.magic(kFeatureMagic);
  w.u32(kFormatVersion);
  w.u32(bundle.filters);
  w.u32(bundle.classes);
  w.u32(static_cast<std::uint32_t>(bundle.images.size()));
  w.u32(bundle.spatial_height);
  w.u32(bundle.spatial_width);
  for (const ImageRecord& image : bundle.images) {
    w.u32(image.true_label);
    w.u32(image.inferred_label);
    w.u16(static_cast<std::uint16_t>(image.source_path.size()));
    w.bytes(image.source_path);
    w.f32s(image.features);
    w.f32s(image.spatial);
  }
  return w.count();
}

FeatureBundle parse_feature_bundle(std::span<const std::uint8_t> bytes,
                                   const ReadOptions& options) {
  ByteReader r(bytes);
  r.magic(kFeatureMagic, "FEX1");
  r.version();
  FeatureBundle bundle;
  bundle.filters = r.u32("n");
  bundle.classes = r.u32("C");
  const std::size_t count_offset = r.offset();
  const std::uint32_t count = r.u32("m");
  bundle.spatial_height = r.u32("hs");
  bundle.spatial_width = r.u32("ws");
  if (bundle.filters == 0) throw FormatError("n must be positive", 8);
  if (bundle.classes == 0) throw FormatError("C must be positive", 12);
  if ((bundle.spatial_height == 0) != (bundle.spatial_width == 0)) {
    throw FormatError("hs and ws must both be zero or both positive", 20);
  }

  const std::size_t n = bundle.filters;
  const std::size_t spatial_size =
      std::size_t{bundle.spatial_height} * bundle.spatial_width * n;
  // Every record carries at least its fixed part; reject impossible counts early.
  const std::size_t min_record = 10 + 4 * (n + spatial_size);
  if (min_record > 0 && count > r.remaining() / min_record) {
    throw FormatError("declared record count " + std::to_string(count) +
                          " exceeds the available bytes",
                      count_offset);
  }

  bundle.images.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ImageRecord image;
    const std::size_t label_offset = r.offset();
    image.true_label = r.u32("true_label");
    image.inferred_label = r.u32("inferred_label");
    if (image.true_label >= bundle.classes || image.inferred_label >= bundle.classes) {
      throw FormatError("label out of range in record " + std::to_string(i), label_offset);
    }
    const std::uint16_t path_len = r.u16("path_len");
    image.source_path = r.string(path_len, "path");
    const std::size_t features_offset = r.offset();
    image.features.resize(n);
    r.f32s(image.features, "features");
    const std::size_t spatial_offset = r.offset();
    image.spatial.resize(spatial_size);
    r.f32s(image.spatial, "spatial map");

    for (std::size_t k = 0; k < n; ++k) {
      const float v = image.features[k];
      if (!std::isfinite(v) || (v < 0.0f && !options.allow_negative)) {
        throw FormatError("invalid feature value " + std::to_string(v) + " in record " +
                              std::to_string(i),
                          features_offset + 4 * k);
      }
    }
    for (std::size_t k = 0; k < spatial_size; ++k) {
      const float v = image.spatial[k];
      if (!std::isfinite(v) || (v < 0.0f && !options.allow_negative)) {
        throw FormatError("invalid spatial value in record " + std::to_string(i),
                          spatial_offset + 4 * k);
      }
    }
    bundle.images.push_back(std::move(image));
  }
  r.finish();
  for (std::size_t i = 0; i < bundle.images.size(); ++i) {
    check_spatial_mean(bundle.images[i], bundle, i);
  }
  return bundle;
}

std::size_t write_classifier_head(const ClassifierHead& head, std::ostream& out) {
  validate(head);
  ByteWriter w(out);
  w.magic(kHeadMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(head.filters()));
  w.u32(static_cast<std::uint32_t>(head.classes()));
  w.f32s(head.weights.flat());
  w.f32s(head.bias);
  return w.count();
}

ClassifierHead parse_classifier_head(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.magic(kHeadMagic, "CHD1");
  r.version();
  const std::uint32_t n = r.u32("n");
  const std::uint32_t classes = r.u32("C");
  if (n == 0 || classes == 0) throw FormatError("n and C must be positive", 8);
  const std::size_t expected = (std::size_t{n} * classes + classes) * 4;
  if (r.remaining() != expected) {
    throw FormatError("payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
                          std::to_string(expected),
                      r.offset());
  }
  ClassifierHead head{Matrix<float>(n, classes), std::vector<float>(classes)};
  r.f32s(head.weights.flat(), "weights");
  r.f32s(head.bias, "bias");
  r.finish();
  validate(head);
  return head;
}

std::size_t write_checkpoint(const CfeCheckpoint& checkpoint, std::ostream& out) {
  validate(checkpoint);
  ByteWriter w(out);
  w.magic(kCheckpointMagic);
  w.u32(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(checkpoint.kind));
  w.u32(static_cast<std::uint32_t>(checkpoint.filters()));
  w.u32(checkpoint.target_class);
  w.f32(checkpoint.kind == HeadKind::kMinimumCorrect ? checkpoint.threshold : 0.0f);
  w.f32(checkpoint.lambda);
  w.u32(checkpoint.epochs_trained);
  w.f32s(checkpoint.weights.flat());
  w.f32s(checkpoint.bias);
  return w.count();
}

CfeCheckpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.magic(kCheckpointMagic, "CFE1");
  r.version();
  CfeCheckpoint checkpoint;
  const std::size_t kind_offset = r.offset();
  const std::uint8_t kind = r.u8("kind");
  if (kind > 1) throw FormatError("invalid kind byte " + std::to_string(kind), kind_offset);
  checkpoint.kind = static_cast<HeadKind>(kind);
  const std::uint32_t n = r.u32("n");
  if (n == 0) throw FormatError("n must be positive", kind_offset + 1);
  checkpoint.target_class = r.u32("target_class");
  const std::size_t threshold_offset = r.offset();
  checkpoint.threshold = r.f32("threshold");
  checkpoint.lambda = r.f32("lambda");
  checkpoint.epochs_trained = r.u32("epochs");
  const std::size_t expected = (std::size_t{n} * n + n) * 4;
  if (r.remaining() != expected) {
    throw FormatError("payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
                          std::to_string(expected),
                      r.offset());
  }
  if (checkpoint.kind == HeadKind::kMinimumCorrect &&
      !(checkpoint.threshold > 0.0f && checkpoint.threshold < 1.0f)) {
    throw FormatError("MC threshold outside (0, 1)", threshold_offset);
  }
  checkpoint.weights = Matrix<float>(n, n);
  checkpoint.bias.resize(n);
  r.f32s(checkpoint.weights.flat(), "weights");
  r.f32s(checkpoint.bias, "bias");
  r.finish();
  validate(checkpoint);
  return checkpoint;
}

FeatureBundle read_feature_bundle(std::istream& in, const ReadOptions& options) {
  const auto bytes = slurp(in);
  return parse_feature_bundle(bytes, options);
}

ClassifierHead read_classifier_head(std::istream& in) {
  const auto bytes = slurp(in);
  return parse_classifier_head(bytes);
}

CfeCheckpoint read_checkpoint(std::istream& in) {
  const auto bytes = slurp(in);
  return parse_checkpoint(bytes);
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return slurp(in);
}

void save(const std::filesystem::path& path, const FeatureBundle& bundle) {
  save_with(path, bundle, write_feature_bundle);
}
void save(const std::filesystem::path& path, const ClassifierHead& head) {
  save_with(path, head, write_classifier_head);
}
void save(const std::filesystem::path& path, const CfeCheckpoint& checkpoint) {
  save_with(path, checkpoint, write_checkpoint);
}

FeatureBundle load_feature_bundle(const std::filesystem::path& path, const ReadOptions& options) {
  return parse_feature_bundle(read_file_bytes(path), options);
}
ClassifierHead load_classifier_head(const std::filesystem::path& path) {
  return parse_classifier_head(read_file_bytes(path));
}
CfeCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file_bytes(path));
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  nlohmann::ordered_json j;
  j["bundle"] = manifest.bundle_path;
  j["head"] = manifest.head_path;
  j["class_names"] = manifest.class_names;
  auto& splits = j["splits"] = nlohmann::ordered_json::array();
  for (Split s : manifest.splits) splits.push_back(s == Split::kTrain ? "train" : "test");
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("manifest is not valid JSON: ") + e.what());
  }
  DatasetManifest manifest;
  try {
    manifest.bundle_path = j.at("bundle").get<std::string>();
    manifest.head_path = j.value("head", std::string{});
    manifest.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& tag : j.value("splits", nlohmann::json::array())) {
      const auto s = tag.get<std::string>();
      if (s == "train") {
        manifest.splits.push_back(Split::kTrain);
      } else if (s == "test") {
        manifest.splits.push_back(Split::kTest);
      } else {
        throw ValidationError("unknown split tag '" + s + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
  return manifest;
}

void validate(const DatasetManifest& manifest, const FeatureBundle& bundle) {
  if (manifest.class_names.size() != bundle.classes) {
    throw ValidationError("manifest lists " + std::to_string(manifest.class_names.size()) +
                          " class names for " + std::to_string(bundle.classes) + " classes");
  }
  if (!manifest.splits.empty() && manifest.splits.size() != bundle.images.size()) {
    throw ValidationError("manifest split tags do not cover every image");
  }
}

}  // namespace cfex
