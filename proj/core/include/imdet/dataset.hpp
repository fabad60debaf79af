#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imdet/image.hpp"
#include "imdet/imagination.hpp"

namespace imdet {

/// One line of <dir>/manifest.jsonl.
struct ManifestRecord {
  int idx = 0;
  std::string file;
  Provenance provenance = Provenance::imaginary;
  std::vector<int> class_labels;
  std::optional<std::vector<LabeledBox>> gt_boxes;
  std::optional<std::string> description;
  std::optional<std::int64_t> seed;
};

nlohmann::json to_json(const ManifestRecord& r);
ManifestRecord record_from_json(const nlohmann::json& j);

/// Serialises records one JSON object per line, in the given order.
std::string manifest_text(const std::vector<ManifestRecord>& records);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

/// Dataset-level metadata in <dir>/dataset.json.
struct DatasetInfo {
  ClassVocab vocab;
  std::string backend;
  std::int64_t seed = 0;
  int requested = 0;
  int written = 0;
  int failed = 0;
  std::optional<std::vector<int>> class_subset;
};

nlohmann::json to_json(const DatasetInfo& info);
DatasetInfo dataset_info_from_json(const nlohmann::json& j);

/// Read-only view of a dataset directory.
class Dataset {
 public:
  explicit Dataset(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  const DatasetInfo& info() const { return info_; }
  const ClassVocab& vocab() const { return info_.vocab; }
  const std::vector<ManifestRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  ImageSample load(std::size_t i) const;
  /// Loads every sample; used by training and evaluation, which revisit images.
  std::vector<ImageSample> load_all(int workers = 1) const;

 private:
  std::filesystem::path root_;
  DatasetInfo info_;
  std::vector<ManifestRecord> records_;
};

}  // namespace imdet
