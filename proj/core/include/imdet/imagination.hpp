#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imdet/service.hpp"

namespace imdet {

/// Ordered class names; ids are the positions 0..size()-1.
class ClassVocab {
 public:
  ClassVocab() = default;
  explicit ClassVocab(std::vector<std::string> names);

  int size() const { return static_cast<int>(names_.size()); }
  bool contains(int class_id) const { return class_id >= 0 && class_id < size(); }
  const std::string& name(int class_id) const;
  const std::vector<std::string>& names() const { return names_; }
  std::optional<int> find(const std::string& name) const;

  friend bool operator==(const ClassVocab&, const ClassVocab&) = default;

 private:
  std::vector<std::string> names_;
};

void to_json(nlohmann::json& j, const ClassVocab& v);
void from_json(const nlohmann::json& j, ClassVocab& v);

inline constexpr const char* kPromptPrefix = "A photo of a ";

struct PromptText {
  std::string text;
  int class_id = 0;
};

struct Description {
  std::string text;
  int class_id = 0;
  bool lm_used = false;
};

struct LmClientConfig {
  /// "http://host:port" or "mock:<name>" with name one of
  /// echo | fixed-suffix:<text> | scene.
  std::string endpoint = "mock:scene";
  int max_tokens = 15;
  double request_timeout_s = 30.0;
  /// When false the prompt is passed through unchanged (the "w/o LM" condition).
  bool enabled = true;
  int max_attempts = 3;
  double initial_backoff_s = 0.2;

  void validate() const;
};

/// Uniform draw over class ids.
int sample_class(const ClassVocab& vocab, std::mt19937_64& rng);

/// "A photo of a " + name, without article correction.
PromptText build_prefix(const ClassVocab& vocab, int class_id);

/// Keeps text up to and including the first '.' at or after position `from`,
/// and at most `max_tokens` whitespace-delimited words after `from`.
std::string truncate_continuation(const std::string& text, std::size_t from, int max_tokens);

/// Language-model backend: returns the prefix followed by a continuation.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual std::string extend(const std::string& prefix, int max_tokens, std::int64_t seed) = 0;
};

std::unique_ptr<LanguageModel> make_language_model(const LmClientConfig& config);

/// Thread-safe for concurrent extend() calls; determinism is keyed by seed.
class LmClient {
 public:
  explicit LmClient(LmClientConfig config);

  const LmClientConfig& config() const { return config_; }

  /// Throws TransportError after the configured retries, Error(protocol) on a
  /// malformed or prefix-dropping answer.
  Description extend(const PromptText& prompt, std::int64_t seed) const;

 private:
  LmClientConfig config_;
  std::unique_ptr<LanguageModel> model_;
};

inline Description extend_description(const LmClient& client, const PromptText& prompt, std::int64_t seed) {
  return client.extend(prompt, seed);
}

}  // namespace imdet
