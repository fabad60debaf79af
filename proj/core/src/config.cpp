#include "imdet/config.hpp"

#include <cstdlib>
#include <fstream>

#include "imdet/codec.hpp"
#include "imdet/error.hpp"

namespace imdet {

void GeneratorConfig::validate() const {
  if (backend != "procedural" && backend != "remote")
    fail(ErrorKind::config, "unknown generator backend '" + backend + "' (expected procedural or remote)");
  if (style != "flat" && style != "textured") fail(ErrorKind::config, "unknown scene style '" + style + "'");
  if (width < 8 || height < 8) fail(ErrorKind::config, "generated images must be at least 8x8");
  if (max_tokens < 0) fail(ErrorKind::config, "max_tokens must be >= 0");
  if (!(timeout_s > 0)) fail(ErrorKind::config, "timeout_s must be positive");
  if (max_attempts < 1) fail(ErrorKind::config, "max_attempts must be >= 1");
  if (!(initial_backoff_s >= 0)) fail(ErrorKind::config, "initial_backoff_s must be >= 0");
}

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"backend", c.backend},     {"endpoint", c.endpoint},   {"lm", c.lm},
       {"lm_enabled", c.lm_enabled}, {"max_tokens", c.max_tokens}, {"width", c.width},
       {"height", c.height},       {"style", c.style},         {"timeout_s", c.timeout_s},
       {"max_attempts", c.max_attempts}, {"initial_backoff_s", c.initial_backoff_s}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  c = GeneratorConfig{};
  c.backend = j.value("backend", c.backend);
  c.endpoint = j.value("endpoint", c.endpoint);
  c.lm = j.value("lm", c.lm);
  c.lm_enabled = j.value("lm_enabled", c.lm_enabled);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.width = j.value("width", c.width);
  c.height = j.value("height", c.height);
  c.style = j.value("style", c.style);
  c.timeout_s = j.value("timeout_s", c.timeout_s);
  c.max_attempts = j.value("max_attempts", c.max_attempts);
  c.initial_backoff_s = j.value("initial_backoff_s", c.initial_backoff_s);
  c.validate();
}

namespace {

void check_keys(const nlohmann::json& given, const nlohmann::json& reference, const std::string& where) {
  if (!given.is_object()) fail(ErrorKind::config, where + " must be a JSON object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!reference.contains(key)) fail(ErrorKind::config, "unknown configuration key '" + path + "'");
    if (reference[key].is_object()) check_keys(value, reference[key], path);
  }
}

template <class T>
T section(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) return T{};
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("configuration section '") + key + "': " + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  generator.validate();
  proposals.selective_search.validate();
  proposals.grid.validate();
  model.validate();
  train.validate();
  detect.validate();
  baseline.validate();
  if (!(eval.iou_threshold > 0 && eval.iou_threshold <= 1)) fail(ErrorKind::config, "eval.iou_threshold must lie in (0, 1]");
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"generator", c.generator},
          {"proposals", c.proposals},
          {"model", c.model},
          {"train", c.train},
          {"detect", c.detect},
          {"eval", {{"iou_threshold", c.eval.iou_threshold}, {"voc07_11point", c.eval.voc07_11point}}},
          {"baseline",
           {{"max_proposals", c.baseline.max_proposals},
            {"crop_size", c.baseline.crop_size},
            {"nms_threshold", c.baseline.nms_threshold},
            {"min_score", c.baseline.min_score}}}};
}

std::string RunConfig::hash() const { return json_hash(to_json(*this)); }

RunConfig run_config_from_json(const nlohmann::json& j) {
  check_keys(j, to_json(RunConfig{}), "");
  RunConfig c;
  c.generator = section<GeneratorConfig>(j, "generator");
  c.proposals = section<ProposalConfig>(j, "proposals");
  c.model = section<ModelConfig>(j, "model");
  c.train = section<TrainConfig>(j, "train");
  c.detect = section<DetectConfig>(j, "detect");
  try {
    if (j.contains("eval")) {
      c.eval.iou_threshold = j["eval"].value("iou_threshold", c.eval.iou_threshold);
      c.eval.voc07_11point = j["eval"].value("voc07_11point", c.eval.voc07_11point);
    }
    if (j.contains("baseline")) {
      const auto& b = j["baseline"];
      c.baseline.max_proposals = b.value("max_proposals", c.baseline.max_proposals);
      c.baseline.crop_size = b.value("crop_size", c.baseline.crop_size);
      c.baseline.nms_threshold = b.value("nms_threshold", c.baseline.nms_threshold);
      c.baseline.min_score = b.value("min_score", c.baseline.min_score);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("configuration: ") + e.what());
  }
  c.validate();
  return c;
}

void apply_environment(RunConfig& c) {
  if (const char* env = std::getenv(kEndpointEnv); env && *env) c.generator.endpoint = env;
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file) {
  RunConfig c;
  if (file) {
    std::ifstream in(*file);
    if (!in) fail(ErrorKind::config, "cannot read config file " + file->string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::config, "config file " + file->string() + " is not valid JSON: " + e.what());
    }
    c = run_config_from_json(j);
  }
  apply_environment(c);
  return c;
}

void write_run(const std::filesystem::path& dir, const RunConfig& config, const nlohmann::json& datasets,
               const TrainResult& result) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create run directory " + dir.string() + ": " + ec.message());
  const std::string hash = config.hash();
  const nlohmann::json resolved = {{"config", to_json(config)}, {"config_hash", hash}, {"datasets", datasets}};
  write_text(dir / "config.json", resolved.dump(2) + "\n");
  write_text(dir / "history.jsonl", history_text(result.history));
  const nlohmann::json extra = {{"run_config_hash", hash},
                                {"mode", to_string(result.history.mode)},
                                {"seed", result.history.seed},
                                {"steps", result.history.steps.size()},
                                {"proposals", config.proposals}};
  save_checkpoint(dir / "checkpoint.bin", result.student, extra);
  if (result.teacher) {
    save_checkpoint(dir / "teacher.bin", *result.teacher, extra);
  } else {
    std::filesystem::remove(dir / "teacher.bin", ec);
  }
}

}  // namespace imdet
