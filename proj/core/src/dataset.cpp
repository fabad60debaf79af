#include "imdet/dataset.hpp"

#include <fstream>
#include <sstream>

#include "imdet/codec.hpp"
#include "imdet/error.hpp"
#include "imdet/parallel.hpp"

namespace imdet {

nlohmann::json to_json(const ManifestRecord& r) {
  nlohmann::json j = {{"idx", r.idx},
                      {"file", r.file},
                      {"provenance", to_string(r.provenance)},
                      {"class_labels", r.class_labels}};
  if (r.gt_boxes) {
    auto boxes = nlohmann::json::array();
    for (const auto& b : *r.gt_boxes) boxes.push_back({b.box.x1, b.box.y1, b.box.x2, b.box.y2, b.class_id});
    j["gt_boxes"] = std::move(boxes);
  }
  if (r.description) j["description"] = *r.description;
  if (r.seed) j["seed"] = *r.seed;
  return j;
}

ManifestRecord record_from_json(const nlohmann::json& j) {
  try {
    ManifestRecord r;
    r.idx = j.at("idx").get<int>();
    r.file = j.at("file").get<std::string>();
    r.provenance = provenance_from_string(j.at("provenance").get<std::string>());
    r.class_labels = j.at("class_labels").get<std::vector<int>>();
    if (j.contains("gt_boxes")) {
      std::vector<LabeledBox> boxes;
      for (const auto& b : j["gt_boxes"]) {
        if (!b.is_array() || b.size() != 5) fail(ErrorKind::format, "gt_boxes entries must be [x1,y1,x2,y2,class_id]");
        LabeledBox lb{{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()},
                      b[4].get<int>()};
        if (!lb.box.valid()) fail(ErrorKind::format, "invalid gt box in record " + std::to_string(r.idx));
        boxes.push_back(lb);
      }
      r.gt_boxes = std::move(boxes);
    }
    if (j.contains("description")) r.description = j["description"].get<std::string>();
    if (j.contains("seed")) r.seed = j["seed"].get<std::int64_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("malformed manifest record: ") + e.what());
  }
}

std::string manifest_text(const std::vector<ManifestRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  write_text(path, manifest_text(records));
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open manifest " + path.string());
  std::vector<ManifestRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::format, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

nlohmann::json to_json(const DatasetInfo& info) {
  nlohmann::json j = {{"vocab", info.vocab},     {"backend", info.backend}, {"seed", info.seed},
                      {"requested", info.requested}, {"written", info.written}, {"failed", info.failed}};
  if (info.class_subset) j["class_subset"] = *info.class_subset;
  return j;
}

DatasetInfo dataset_info_from_json(const nlohmann::json& j) {
  try {
    DatasetInfo info;
    info.vocab = j.at("vocab").get<ClassVocab>();
    info.backend = j.value("backend", std::string("unknown"));
    info.seed = j.value("seed", std::int64_t{0});
    info.requested = j.value("requested", 0);
    info.written = j.value("written", 0);
    info.failed = j.value("failed", 0);
    if (j.contains("class_subset")) info.class_subset = j["class_subset"].get<std::vector<int>>();
    return info;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("malformed dataset.json: ") + e.what());
  }
}

Dataset::Dataset(std::filesystem::path root) : root_(std::move(root)) {
  if (!std::filesystem::is_directory(root_)) fail(ErrorKind::config, "dataset directory not found: " + root_.string());
  const auto meta = root_ / "dataset.json";
  if (!std::filesystem::exists(meta)) fail(ErrorKind::config, "missing " + meta.string());
  const auto bytes = read_file(meta);
  try {
    info_ = dataset_info_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, meta.string() + ": " + e.what());
  }
  records_ = read_manifest(root_ / "manifest.jsonl");
  for (const auto& r : records_) {
    for (int c : r.class_labels)
      if (!info_.vocab.contains(c)) fail(ErrorKind::format, "record " + std::to_string(r.idx) + " has unknown class");
    if (r.gt_boxes)
      for (const auto& b : *r.gt_boxes)
        if (!info_.vocab.contains(b.class_id))
          fail(ErrorKind::format, "record " + std::to_string(r.idx) + " has unknown box class");
  }
}

ImageSample Dataset::load(std::size_t i) const {
  const auto& r = records_.at(i);
  ImageSample s;
  s.pixels = read_png(root_ / r.file);
  s.provenance = r.provenance;
  s.class_labels = r.class_labels;
  s.gt_boxes = r.gt_boxes;
  s.description = r.description;
  s.seed = r.seed;
  return s;
}

std::vector<ImageSample> Dataset::load_all(int workers) const {
  std::vector<ImageSample> out(records_.size());
  parallel_for(records_.size(), workers, [&](std::size_t i) { out[i] = load(i); });
  return out;
}

}  // namespace imdet
