#include "imdet/imagination.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>

#include "imdet/codec.hpp"
#include "imdet/error.hpp"

namespace imdet {

ClassVocab::ClassVocab(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty()) fail(ErrorKind::config, "class vocab must not be empty");
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) fail(ErrorKind::config, "class names must be non-empty");
    if (!seen.insert(n).second) fail(ErrorKind::config, "duplicate class name '" + n + "'");
  }
}

const std::string& ClassVocab::name(int class_id) const {
  if (!contains(class_id)) fail(ErrorKind::argument, "class id " + std::to_string(class_id) + " out of range");
  return names_[static_cast<std::size_t>(class_id)];
}

std::optional<int> ClassVocab::find(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<int>(it - names_.begin());
}

void to_json(nlohmann::json& j, const ClassVocab& v) { j = v.names(); }
void from_json(const nlohmann::json& j, ClassVocab& v) { v = ClassVocab(j.get<std::vector<std::string>>()); }

void LmClientConfig::validate() const {
  if (max_tokens < 1) fail(ErrorKind::config, "max_tokens must be >= 1");
  if (request_timeout_s <= 0) fail(ErrorKind::config, "request timeout must be positive");
}

int sample_class(const ClassVocab& vocab, std::mt19937_64& rng) {
  if (vocab.size() == 0) fail(ErrorKind::config, "cannot sample from an empty vocab");
  std::uniform_int_distribution<int> dist(0, vocab.size() - 1);
  return dist(rng);
}

PromptText build_prefix(const ClassVocab& vocab, int class_id) {
  return {kPromptPrefix + vocab.name(class_id), class_id};
}

std::string truncate_continuation(const std::string& text, std::size_t from, int max_tokens) {
  std::size_t pos = from;
  std::size_t kept = from;
  int tokens = 0;
  while (pos < text.size()) {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    if (pos >= text.size()) break;
    if (tokens == max_tokens) return text.substr(0, kept);
    std::size_t end = pos;
    while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) {
      if (text[end] == '.') return text.substr(0, end + 1);
      ++end;
    }
    ++tokens;
    pos = kept = end;
  }
  return text;
}

namespace {

class EchoLm final : public LanguageModel {
 public:
  std::string extend(const std::string& prefix, int, std::int64_t) override { return prefix; }
};

class FixedSuffixLm final : public LanguageModel {
 public:
  explicit FixedSuffixLm(std::string suffix) : suffix_(std::move(suffix)) {}
  std::string extend(const std::string& prefix, int max_tokens, std::int64_t) override {
    return truncate_continuation(prefix + suffix_, prefix.size(), max_tokens);
  }

 private:
  std::string suffix_;
};

// Seeded word chain over a small scene vocabulary. Emits whitespace tokens and
// terminates with '.' or at the token cap.
class SceneLm final : public LanguageModel {
 public:
  std::string extend(const std::string& prefix, int max_tokens, std::int64_t seed) override {
    static constexpr std::array<const char*, 6> kLead = {"in", "on", "near", "beside", "under", "with"};
    static constexpr std::array<const char*, 5> kArticle = {"a", "the", "a", "some", "the"};
    static constexpr std::array<const char*, 10> kAdj = {"sunny", "quiet", "busy", "small", "old",
                                                         "green", "bright", "foggy", "wide", "empty"};
    static constexpr std::array<const char*, 10> kNoun = {"park", "street", "field", "room", "beach",
                                                          "garden", "road", "lake", "yard", "forest"};
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) ^ fnv1a(prefix));
    auto pick = [&](const auto& words) {
      return std::string(words[std::uniform_int_distribution<std::size_t>(0, words.size() - 1)(rng)]);
    };
    std::vector<std::string> words;
    const int phrases = std::uniform_int_distribution<int>(1, 3)(rng);
    for (int p = 0; p < phrases; ++p) {
      words.push_back(pick(kLead));
      words.push_back(pick(kArticle));
      if (rng() % 2) words.push_back(pick(kAdj));
      words.push_back(pick(kNoun));
    }
    words.back() += '.';
    std::string text = prefix;
    for (const auto& w : words) text += " " + w;
    return truncate_continuation(text, prefix.size(), max_tokens);
  }
};

class RemoteLm final : public LanguageModel {
 public:
  RemoteLm(std::string endpoint, ServicePolicy policy) : endpoint_(std::move(endpoint)), policy_(policy) {}
  std::string extend(const std::string& prefix, int max_tokens, std::int64_t seed) override {
    const nlohmann::json body = {{"prefix", prefix}, {"max_tokens", max_tokens}, {"seed", seed}};
    const auto reply = post_json(endpoint_, "/extend", body, policy_);
    if (!reply.is_object() || !reply.contains("text") || !reply["text"].is_string())
      fail(ErrorKind::protocol, endpoint_ + "/extend: response lacks string field 'text'");
    return reply["text"].get<std::string>();
  }

 private:
  std::string endpoint_;
  ServicePolicy policy_;
};

}  // namespace

std::unique_ptr<LanguageModel> make_language_model(const LmClientConfig& config) {
  const auto& ep = config.endpoint;
  if (is_mock_endpoint(ep)) {
    const std::string name = ep.substr(5);
    if (name == "echo") return std::make_unique<EchoLm>();
    if (name == "scene") return std::make_unique<SceneLm>();
    if (name.rfind("fixed-suffix:", 0) == 0) return std::make_unique<FixedSuffixLm>(name.substr(13));
    fail(ErrorKind::config, "unknown mock language model '" + name + "'");
  }
  return std::make_unique<RemoteLm>(
      ep, ServicePolicy{config.request_timeout_s, config.max_attempts, config.initial_backoff_s});
}

LmClient::LmClient(LmClientConfig config) : config_(std::move(config)) {
  config_.validate();
  if (config_.enabled) model_ = make_language_model(config_);
}

Description LmClient::extend(const PromptText& prompt, std::int64_t seed) const {
  if (!config_.enabled) return {prompt.text, prompt.class_id, false};
  std::string text = model_->extend(prompt.text, config_.max_tokens, seed);
  if (text.rfind(prompt.text, 0) != 0)
    fail(ErrorKind::protocol, "language model dropped the prompt prefix '" + prompt.text + "'");
  // Enforce the terminator rule even when a service overshoots it.
  const auto cut = text.find('.', prompt.text.size());
  if (cut != std::string::npos) text.resize(cut + 1);
  return {std::move(text), prompt.class_id, true};
}

}  // namespace imdet
