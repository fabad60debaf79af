#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imdet/dataset.hpp"
#include "imdet/evaluation.hpp"
#include "imdet/model.hpp"
#include "imdet/proposals.hpp"

namespace imdet {

enum class TrainMode { isod, wsod_mixed, ssod };

const char* to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::isod;
  int steps = 1000;
  int batch_size = 4;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// lr is multiplied by lr_decay once lr_decay_at * steps steps have run.
  double lr_decay_at = 0.75;
  double lr_decay = 0.1;
  std::uint64_t seed = 0;
  bool hflip = true;
  bool scale_jitter = true;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double ema_momentum = 0.999;
  double pgt_confidence_threshold = 0.7;
  /// Supervised-only steps before the teacher is created; < 0 means 20% of steps.
  int burn_in_steps = -1;
  /// Detection settings the teacher uses to produce pseudo labels.
  double teacher_nms_threshold = 0.3;
  int workers = 1;

  int resolved_burn_in() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

enum class DatasetRole { imaginary, real_weak, real_boxed, real_unlabeled };

const char* to_string(DatasetRole r);

/// Images, proposals and the annotations their role allows. Box annotations
/// are dropped at load time for every role except real_boxed.
struct TrainingPool {
  DatasetRole role = DatasetRole::imaginary;
  std::vector<ImageSample> samples;
  std::vector<std::vector<BoxF>> proposals;

  bool empty() const { return samples.empty(); }
  std::size_t size() const { return samples.size(); }
};

/// Checks that each sample carries what the role requires and strips what it must not see.
TrainingPool make_pool(DatasetRole role, std::vector<ImageSample> samples, std::vector<std::vector<BoxF>> proposals);

/// Proposals for every sample of a dataset, read from / written to
/// <root>/proposals/<idx>.json when the cache key matches.
std::vector<std::vector<BoxF>> dataset_proposals(const Dataset& dataset, const std::vector<ImageSample>& samples,
                                                 const ProposalConfig& config, int workers, bool use_cache = true);

TrainingPool load_pool(const std::filesystem::path& dir, DatasetRole role, const ProposalConfig& proposals,
                       int workers);

struct SampleRef {
  int source = 0;  // 0 = imaginary, 1 = real
  std::size_t index = 0;

  friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

/// isod: uniform over imaginary. wsod_mixed: Bernoulli(1/2) between the two
/// sources, then uniform within; a missing source is never drawn.
class MixedSampler {
 public:
  MixedSampler(std::size_t imaginary, std::size_t real, TrainMode mode, std::uint64_t seed);
  SampleRef next();

 private:
  std::size_t imaginary_, real_;
  TrainMode mode_;
  std::mt19937_64 rng_;
};

struct AugmentFlags {
  bool hflip = false;
  bool scale_jitter = false;
  double scale_min = 0.8;
  double scale_max = 1.2;
};

/// Resizes by u ~ U[scale_min, scale_max] (boxes scaled and clipped), then
/// mirrors with probability 1/2 (x' = W - x). Proposals follow the image.
/// `force_flip` replaces the coin with a fixed decision.
void augment(ImageSample& sample, std::vector<BoxF>& proposals, std::mt19937_64& rng, const AugmentFlags& flags,
             std::optional<bool> force_flip = std::nullopt);

BoxF flip_box(const BoxF& b, double width);

/// Deterministic per-(seed, step, slot) generator.
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t slot);

struct StepRecord {
  int step = 0;
  double lr = 0;
  double mil = 0;
  double ref = 0;
  double supervised = 0;
  double total = 0;
  int imaginary = 0;
  int real = 0;
  int pseudo_labels = 0;
};

nlohmann::json to_json(const StepRecord& r);

struct TrainHistory {
  TrainMode mode = TrainMode::isod;
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  std::vector<std::string> warnings;
  double wall_time_s = 0;
};

struct TrainResult {
  DetectorModel student;
  std::optional<DetectorModel> teacher;
  TrainHistory history;
};

/// Optional per-step observer, called after each update.
using StepCallback = std::function<void(const StepRecord&)>;

TrainResult train_isod(const ModelConfig& model, const ClassVocab& vocab, const TrainConfig& config,
                       const TrainingPool& imaginary, const StepCallback& on_step = {},
                       const DetectorModel* init = nullptr);

TrainResult train_wsod_mixed(const ModelConfig& model, const ClassVocab& vocab, const TrainConfig& config,
                             const TrainingPool& imaginary, const TrainingPool& real_weak,
                             const StepCallback& on_step = {}, const DetectorModel* init = nullptr);

TrainResult train_ssod(const ModelConfig& model, const ClassVocab& vocab, const TrainConfig& config,
                       const TrainingPool& real_boxed, const TrainingPool& real_unlabeled,
                       const TrainingPool& imaginary, const StepCallback& on_step = {},
                       const DetectorModel* init = nullptr);

/// Weak objective of one image: forward, MIL + refinement loss and (when grad
/// is given) gradients of every parameter.
HeadLoss weak_sample_loss(const ModelConfig& config, const ModelParams& params, const Image& image,
                          std::span<const BoxF> proposals, std::span<const int> image_classes,
                          ModelParams* grad = nullptr, ForwardTrace* trace = nullptr);

/// Box-supervised objective of one image against GT or pseudo-label targets.
HeadLoss supervised_sample_loss(const ModelConfig& config, const ModelParams& params, const Image& image,
                                std::span<const BoxF> proposals, std::span<const BoxTarget> targets,
                                ModelParams* grad = nullptr, ForwardTrace* trace = nullptr);

/// teacher <- m * teacher + (1 - m) * student.
void ema_update(ModelParams& teacher, const ModelParams& student, double m);

/// Classes whose AP with imaginary data strictly beats the baseline.
std::vector<int> select_ensemble_classes(const EvalReport& with_imaginary, const EvalReport& baseline);

std::string history_text(const TrainHistory& history);

}  // namespace imdet
