#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "xaikit/tensor.hpp"

namespace xai {

constexpr int kManifestSchemaVersion = 1;
constexpr int kSplitSchemaVersion = 1;

enum class Split { Train, Val, Test };
const char* to_string(Split s) noexcept;
Split parse_split(const std::string& s);

struct DatasetItem {
  std::string id;     // path relative to the dataset root, '/'-separated
  std::string path;   // absolute path at scan time
  int label = 0;
  std::string provided_split;  // "train" | "val" | "test" | "" (none)
};

/// Class-labeled image inventory. Classes are ordered alphabetically; items
/// by id.
struct DatasetManifest {
  std::string name;
  std::string root;
  std::vector<std::string> classes;
  std::vector<DatasetItem> items;
  int skipped_unreadable = 0;
  std::vector<std::string> warnings;

  bool has_provided_splits() const;
};

/// Accepts `root/<class>/<image>` or `root/{train,val,test}/<class>/<image>`.
/// Files with .png/.jpg/.jpeg extensions whose header cannot be decoded are
/// skipped and counted.
DatasetManifest scan_dataset(const std::filesystem::path& root, const std::string& name);

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

enum class SplitPolicy { CarveValFromTrain, MergeThenCarve, Fresh70_10_20 };
const char* to_string(SplitPolicy p) noexcept;
SplitPolicy parse_split_policy(const std::string& s);

struct SplitAssignment {
  SplitPolicy policy = SplitPolicy::Fresh70_10_20;
  std::uint64_t seed = 0;
  std::map<std::string, Split> assignment;  // id -> split

  std::size_t count(Split s) const;
  std::vector<std::string> ids(Split s) const;  // sorted
};

/// Stratified, seeded partition.
///  - carve_val_from_train: provided test kept; 20% of provided train per class
///    becomes val. Needs provided train and test and no provided val.
///  - merge_then_carve: provided train + val merged, then 20% per class to val.
///  - fresh_70_10_20: provided tags ignored; per class floor(10%) val,
///    floor(20%) test, remainder train.
SplitAssignment make_splits(const DatasetManifest& manifest, SplitPolicy policy,
                            std::uint64_t seed);

nlohmann::json to_json(const SplitAssignment& s);
SplitAssignment split_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Preprocessing

struct PreprocessSpec {
  int height = 224;
  int width = 224;
  int channels = 3;
  std::vector<double> mean{0.485, 0.456, 0.406};
  std::vector<double> std{0.229, 0.224, 0.225};

  static PreprocessSpec identity(int size, int channels = 3);
  friend bool operator==(const PreprocessSpec&, const PreprocessSpec&) = default;
};

nlohmann::json to_json(const PreprocessSpec& p);
PreprocessSpec preprocess_from_json(const nlohmann::json& j);

/// Decodes to [0,1] floats (RGB order, or gray when channels == 1).
Tensor3 load_image(const std::filesystem::path& path, int channels = 3);

/// True when the file's signature is decodable by the image backend.
bool image_readable(const std::filesystem::path& path);

/// Writes a [0,1] image (values clipped) as 8-bit PNG/JPEG by extension.
void save_image(const std::filesystem::path& path, const Tensor3& image01);

/// Resizes a [0,1] image (bilinear) and normalizes per channel.
Tensor3 normalize_image(const Tensor3& image01, const PreprocessSpec& spec);
/// Inverse of the per-channel normalization (no resize).
Tensor3 denormalize_image(const Tensor3& image, const PreprocessSpec& spec);

Tensor3 preprocess(const std::filesystem::path& path, const PreprocessSpec& spec);

}  // namespace xai
