#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ipose/error.hpp"
#include "ipose/image.hpp"
#include "ipose/scene_model.hpp"

namespace ipose {

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kManifestFormat = "ipose-manifest";
inline constexpr const char* kManifestFileName = "manifest.json";

struct DatasetSchema {
  std::vector<std::string> instruments;  // M names
  std::vector<std::string> joints;       // N names
  ImageSize image_size;
  std::size_t channels = 1;

  bool operator==(const DatasetSchema&) const = default;
};

struct ManifestEntry {
  std::string image;  // path relative to the manifest directory
  std::string sequence = "default";
  SceneAnnotation annotation;

  bool operator==(const ManifestEntry&) const = default;
};

/// Annotated image list. Images are decoded on demand via load_sample().
struct DatasetManifest {
  DatasetSchema schema;
  std::vector<ManifestEntry> entries;
  std::filesystem::path root;  // directory the entry image paths resolve against

  std::filesystem::path image_path(const ManifestEntry& entry) const { return root / entry.image; }
  std::size_t size() const { return entries.size(); }
};

/// Aggregated ingestion failure listing every problem found.
class DatasetError : public DataError {
 public:
  explicit DatasetError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Parses a manifest. An instrument with every joint annotated is present,
/// one with no joints is absent, and a partially annotated instrument is an
/// error. All problems are collected into one DatasetError.
DatasetManifest parse_manifest(std::string_view json, const std::filesystem::path& root);
/// `path` is the manifest file or a directory containing manifest.json.
DatasetManifest load_manifest(const std::filesystem::path& path);

std::string manifest_to_json(const DatasetManifest& manifest);
/// Writes the manifest with image paths rewritten relative to the file's
/// directory.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& file);

struct SplitPolicy {
  enum class Kind { kFirstFraction, kExplicit };
  Kind kind = Kind::kFirstFraction;
  // Leading fraction of every sequence that goes to the training side.
  double fraction = 0.5;
  // Sequence names for kExplicit; entries in neither list are dropped.
  std::vector<std::string> train_sequences;
  std::vector<std::string> test_sequences;
};

/// Deterministic split preserving manifest order. Throws ConfigError on an
/// invalid policy or when either side ends up empty.
std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& manifest,
                                                  const SplitPolicy& policy);

struct Sample {
  Image image;
  SceneAnnotation annotation;
};

/// Decodes entry `index`; with `resize`, the image is resampled and joints
/// scaled to the new size.
Sample load_sample(const DatasetManifest& manifest, std::size_t index,
                   std::optional<ImageSize> resize = std::nullopt);
/// Decodes every entry, collecting failures into one DatasetError.
std::vector<Sample> load_samples(const DatasetManifest& manifest,
                                 std::optional<ImageSize> resize = std::nullopt);

Sample resize_sample(const Sample& sample, ImageSize size);

}  // namespace ipose
