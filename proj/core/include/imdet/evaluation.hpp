#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imdet/box.hpp"
#include "imdet/dataset.hpp"
#include "imdet/model.hpp"
#include "imdet/proposals.hpp"
#include "imdet/service.hpp"
#include "imdet/synthesis.hpp"

namespace imdet {

struct Detection {
  BoxF box;
  int class_id = 0;
  double score = 0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Greedy suppression within one class: highest score first (ties keep input
/// order), drops anything with IoU >= iou_threshold to a kept box.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

/// nms() applied to each class separately; output grouped by class id.
std::vector<Detection> nms_per_class(const std::vector<Detection>& dets, double iou_threshold);

struct DetectConfig {
  double nms_threshold = 0.3;
  double min_score = 0.05;

  void validate() const;
};

void to_json(nlohmann::json& j, const DetectConfig& c);
void from_json(const nlohmann::json& j, DetectConfig& c);

/// Turns a [P, C] score matrix into detections: threshold, then per-class NMS.
std::vector<Detection> detections_from_scores(std::span<const BoxF> proposals, const Mat& scores,
                                              const DetectConfig& config);

std::vector<Detection> detect(const DetectorModel& model, const Image& image, std::span<const BoxF> proposals,
                              const DetectConfig& config);

enum class ApMode { all_points, voc07 };

/// Detection of one class in image `image`.
struct ImageDetection {
  int image = 0;
  BoxF box;
  double score = 0;
};

struct PrCurve {
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<bool> true_positive;
};

/// AP of one class. Detections are ranked by score (stable), each matches the
/// highest-IoU unmatched ground truth of its image when IoU >= iou_threshold.
/// Returns nullopt when there is no ground truth.
std::optional<double> average_precision(std::span<const ImageDetection> dets,
                                        const std::vector<std::vector<BoxF>>& gts, double iou_threshold = 0.5,
                                        ApMode mode = ApMode::all_points, PrCurve* curve = nullptr);

struct EvalReport {
  double iou_threshold = 0.5;
  ApMode mode = ApMode::all_points;
  std::map<int, double> per_class_ap;  // classes with at least one GT
  std::map<int, int> n_gt;
  std::vector<int> excluded_classes;   // no GT, AP undefined
  double mAP = 0;
  int n_images = 0;
  std::vector<std::string> class_names;
  std::string config_hash;
};

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

/// Scores per-image detections against per-image ground truth.
EvalReport evaluate_detections(const std::vector<std::vector<Detection>>& dets,
                               const std::vector<std::vector<LabeledBox>>& gts, int num_classes,
                               double iou_threshold = 0.5, ApMode mode = ApMode::all_points);

/// Ground truth of an evaluation set; throws ErrorKind::argument when a sample has none.
std::vector<std::vector<LabeledBox>> evaluation_ground_truth(const std::vector<ImageSample>& samples);

struct EvalOptions {
  DetectConfig detect;
  double iou_threshold = 0.5;
  ApMode mode = ApMode::all_points;
  int workers = 1;
};

EvalReport evaluate(const DetectorModel& model, const std::vector<ImageSample>& samples,
                    const std::vector<std::vector<BoxF>>& proposals, const EvalOptions& options);

/// Uniformly random boxes, classes and scores; a floor for mAP comparisons.
std::vector<Detection> random_detections(int width, int height, int num_classes, int count, std::uint64_t seed);

/// Similarity between an image crop and text prompts, one value per prompt.
/// prompts[c] describes class c of the vocabulary.
class ProposalScorer {
 public:
  virtual ~ProposalScorer() = default;
  /// Called once per image before its crops are scored.
  virtual void prepare(const ImageSample&) {}
  virtual std::vector<double> score(const Image& crop, const BoxF& box, std::span<const std::string> prompts) = 0;
};

/// Test oracle: similarity to class c = max IoU of the box with a GT box of c.
class OracleScorer : public ProposalScorer {
 public:
  void prepare(const ImageSample& sample) override;
  std::vector<double> score(const Image& crop, const BoxF& box, std::span<const std::string> prompts) override;

 private:
  std::vector<LabeledBox> gts_;
};

/// Zero-shot scorer without access to annotations: the fraction of crop
/// pixels close to the colour named in the prompt.
class ColorPromptScorer : public ProposalScorer {
 public:
  struct NamedColor {
    std::string name;
    Rgb rgb;
  };
  explicit ColorPromptScorer(std::vector<NamedColor> palette, double tolerance = 0.25);
  static ColorPromptScorer from_spec(const ProceduralSpec& spec);

  std::vector<double> score(const Image& crop, const BoxF& box, std::span<const std::string> prompts) override;

 private:
  std::vector<NamedColor> palette_;
  double tolerance_;
};

/// POST <endpoint>/score {"image_png_b64", "prompts"} -> {"similarities": [...]}.
class RemoteScorer : public ProposalScorer {
 public:
  RemoteScorer(std::string endpoint, ServicePolicy policy);
  std::vector<double> score(const Image& crop, const BoxF& box, std::span<const std::string> prompts) override;

 private:
  std::string endpoint_;
  ServicePolicy policy_;
};

std::string baseline_prompt(const std::string& class_name);

struct BaselineConfig {
  int max_proposals = 1000;
  int crop_size = 32;
  double nms_threshold = 0.3;
  double min_score = 0.0;

  void validate() const;
};

struct BaselineStats {
  std::size_t scored = 0;
  std::size_t skipped = 0;
};

/// Scores each proposal crop against every class prompt, labels it with the
/// best class and applies per-class NMS. Transport failures skip the proposal.
std::vector<Detection> baseline_detect(ProposalScorer& scorer, const ImageSample& sample, const ClassVocab& vocab,
                                       std::span<const BoxF> proposals, const BaselineConfig& config,
                                       BaselineStats* stats = nullptr);

struct FeatureSource {
  const std::vector<ImageSample>* samples = nullptr;
  const std::vector<std::vector<BoxF>>* proposals = nullptr;
};

/// CSV with header class_id,provenance,f0..f{d-1}: for each class and source,
/// the top-scoring proposal's representation from the first n_per_class
/// images labelled with that class. Returns the number of rows written.
std::size_t export_features(const DetectorModel& model, std::span<const FeatureSource> sources, int n_per_class,
                            const std::filesystem::path& out, std::vector<std::string>* warnings = nullptr);

}  // namespace imdet
