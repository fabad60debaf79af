#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imdet/box.hpp"
#include "imdet/tensor.hpp"

namespace imdet {

using Vec = Eigen::VectorXd;

constexpr double kScoreClamp = 1e-6;

struct HeadConfig {
  int num_classes = 8;
  int d = 128;
  /// Number of refinement stages; 0 disables the refinement branch.
  int refine_stages = 1;
  double pgt_iou = 0.5;
  /// Score detections with x_m instead of the refinement stream.
  bool score_from_mil = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const HeadConfig& c);
void from_json(const nlohmann::json& j, HeadConfig& c);

struct HeadParams {
  Dense mil_cls;              // d -> C, softmax over classes
  Dense mil_det;              // d -> C, softmax over proposals
  std::vector<Dense> refine;  // d -> C + 1 per stage

  template <class F>
  void visit(F&& fn) {
    fn(std::string("head.mil_cls.weight"), mil_cls.weight);
    fn(std::string("head.mil_cls.bias"), mil_cls.bias);
    fn(std::string("head.mil_det.weight"), mil_det.weight);
    fn(std::string("head.mil_det.bias"), mil_det.bias);
    for (std::size_t k = 0; k < refine.size(); ++k) {
      fn("head.ref" + std::to_string(k) + ".weight", refine[k].weight);
      fn("head.ref" + std::to_string(k) + ".bias", refine[k].bias);
    }
  }
};

HeadParams init_head(const HeadConfig& config, std::mt19937_64& rng);

/// features [P, d] -> logits [P, out].
Mat linear(const Mat& features, const Dense& layer);

/// Accumulates layer gradients for linear() and returns dLoss/dfeatures.
Mat linear_backward(const Mat& features, const Dense& layer, const Mat& grad_out, Dense& grad);

Mat softmax_rows(const Mat& logits);
Mat softmax_cols(const Mat& logits);

struct ScoreMatrices {
  Mat x_c;  // softmax over classes per proposal
  Mat x_r;  // softmax over proposals per class
  Mat x_m;  // x_c * x_r
  Vec s;    // column sums of x_m
};

ScoreMatrices mil_scores(const Mat& cls_logits, const Mat& det_logits);
ScoreMatrices mil_forward(const Mat& features, const HeadParams& params);

/// Converts dLoss/ds into gradients of the two logit matrices.
void mil_backward(const ScoreMatrices& scores, const Vec& grad_s, Mat& grad_cls_logits, Mat& grad_det_logits);

/// Binary cross-entropy summed over classes, s clamped to [eps, 1 - eps].
/// grad_s (optional) receives dL/ds; zero where the clamp is active.
double mil_loss(const Vec& s, const Vec& y, Vec* grad_s = nullptr, double eps = kScoreClamp);

/// Multi-hot image label vector.
Vec one_hot(std::span<const int> classes, int num_classes);

struct Pgt {
  int index = 0;
  int class_id = 0;
  double score = 0;

  friend bool operator==(const Pgt&, const Pgt&) = default;
};

/// Highest-scoring proposal per present class (ties to the lowest index).
/// `scores` has at least num_classes columns; extra columns are ignored.
std::vector<Pgt> select_pgt(const Mat& scores, std::span<const int> present_classes);

struct RefinementTargets {
  std::vector<int> labels;      // class id, or C for background
  std::vector<double> weights;

  friend bool operator==(const RefinementTargets&, const RefinementTargets&) = default;
};

struct BoxTarget {
  BoxF box;
  int class_id = 0;
  double weight = 1.0;
  /// Proposal index this target came from, or -1.
  int proposal = -1;
};

/// Each proposal takes the class and weight of its best-overlapping target when
/// IoU >= iou_threshold, otherwise background with the best-overlapping
/// target's weight. Proposals that a target was selected from keep that
/// target's class. No targets: everything background with weight 0.
RefinementTargets assign_box_targets(std::span<const BoxF> proposals, std::span<const BoxTarget> targets,
                                     int num_classes, double iou_threshold = 0.5);

RefinementTargets assign_refinement_targets(std::span<const BoxF> proposals, std::span<const Pgt> pgt,
                                            int num_classes, double iou_threshold = 0.5);

/// -(1/P) sum_i w_i log p[i, label_i]. grad_logits (optional) receives the
/// gradient with respect to the pre-softmax logits.
double refinement_loss(const Mat& probs, const RefinementTargets& targets, Mat* grad_logits = nullptr,
                       double eps = kScoreClamp);

inline double total_loss(double mil, double ref) { return mil + ref; }

struct HeadLoss {
  double mil = 0;
  double ref = 0;
  double supervised = 0;
  double total = 0;
  std::vector<Pgt> pgt;                        // first-stage pseudo ground truth
  std::vector<RefinementTargets> targets;      // per refinement stage
  Mat grad_features;                           // dLoss/dfeatures, [P, d]
};

/// ISOD/WSOD objective: MIL loss plus refinement losses driven by PGT.
/// grad (optional) accumulates parameter gradients.
HeadLoss weak_head_loss(const HeadConfig& config, const HeadParams& params, const Mat& features,
                        std::span<const BoxF> proposals, std::span<const int> image_classes,
                        HeadParams* grad = nullptr);

/// SSOD objective: weighted cross-entropy of every refinement stage against
/// box targets (GT weight 1, pseudo labels weighted by teacher confidence).
HeadLoss supervised_head_loss(const HeadConfig& config, const HeadParams& params, const Mat& features,
                              std::span<const BoxF> proposals, std::span<const BoxTarget> targets,
                              HeadParams* grad = nullptr);

/// Per-proposal class scores [P, C] used for detection.
Mat proposal_class_scores(const HeadConfig& config, const HeadParams& params, const Mat& features);

}  // namespace imdet
