#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "imdet/evaluation.hpp"
#include "imdet/model.hpp"
#include "imdet/proposals.hpp"
#include "imdet/training.hpp"

namespace imdet {

inline constexpr const char* kEndpointEnv = "IMDET_GEN_ENDPOINT";

struct GeneratorConfig {
  /// "procedural" or "remote".
  std::string backend = "procedural";
  /// Text-to-image service for the remote backend.
  std::string endpoint = "http://127.0.0.1:8000";
  /// Language model: "mock:..." or an http endpoint.
  std::string lm = "mock:scene";
  bool lm_enabled = true;
  int max_tokens = 15;
  int width = 64;
  int height = 64;
  /// Procedural scene style: "flat" or "textured".
  std::string style = "flat";
  double timeout_s = 30.0;
  int max_attempts = 3;
  double initial_backoff_s = 0.2;

  void validate() const;
  ServicePolicy policy() const { return {timeout_s, max_attempts, initial_backoff_s}; }
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);

struct EvalSettings {
  double iou_threshold = 0.5;
  bool voc07_11point = false;
};

/// Every tunable of a run. Serialised with all defaults filled in; the hash
/// of that serialisation identifies the run.
struct RunConfig {
  GeneratorConfig generator;
  ProposalConfig proposals;
  ModelConfig model;
  TrainConfig train;
  DetectConfig detect;
  EvalSettings eval;
  BaselineConfig baseline;

  void validate() const;
  std::string hash() const;
};

nlohmann::json to_json(const RunConfig& c);

/// Overlays `j` on the defaults. Unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Defaults, overlaid with the file (if any), then the environment.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file);

/// Applies IMDET_GEN_ENDPOINT when set.
void apply_environment(RunConfig& c);

/// Writes config.json, history.jsonl, checkpoint.bin and (ssod) teacher.bin.
/// Checkpoints carry the run config hash and the proposal settings.
void write_run(const std::filesystem::path& dir, const RunConfig& config, const nlohmann::json& datasets,
               const TrainResult& result);

}  // namespace imdet
