#include "imdet/heads.hpp"

#include <algorithm>
#include <cmath>

#include "imdet/error.hpp"

namespace imdet {

void HeadConfig::validate() const {
  if (num_classes < 1) fail(ErrorKind::config, "head needs at least one class");
  if (d < 1) fail(ErrorKind::config, "head input size must be positive");
  if (refine_stages < 0) fail(ErrorKind::config, "refinement stages must be >= 0");
  if (!(pgt_iou > 0.0 && pgt_iou <= 1.0)) fail(ErrorKind::config, "pgt_iou must lie in (0, 1]");
}

void to_json(nlohmann::json& j, const HeadConfig& c) {
  j = {{"num_classes", c.num_classes},
       {"d", c.d},
       {"refine_stages", c.refine_stages},
       {"pgt_iou", c.pgt_iou},
       {"score_from_mil", c.score_from_mil}};
}

void from_json(const nlohmann::json& j, HeadConfig& c) {
  c = HeadConfig{};
  c.num_classes = j.value("num_classes", c.num_classes);
  c.d = j.value("d", c.d);
  c.refine_stages = j.value("refine_stages", c.refine_stages);
  c.pgt_iou = j.value("pgt_iou", c.pgt_iou);
  c.score_from_mil = j.value("score_from_mil", c.score_from_mil);
  c.validate();
}

namespace {

Dense make_dense(int out, int in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Dense layer{Mat(out, in), Mat::Zero(out, 1)};
  for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = dist(rng);
  return layer;
}


void check_features(const Mat& features, const HeadParams& params) {
  if (features.rows() == 0) fail(ErrorKind::argument, "head evaluated on zero proposals");
  if (features.cols() != params.mil_cls.weight.cols())
    fail(ErrorKind::config, "feature size " + std::to_string(features.cols()) + " does not match head input " +
                                std::to_string(params.mil_cls.weight.cols()));
}

}  // namespace

HeadParams init_head(const HeadConfig& config, std::mt19937_64& rng) {
  config.validate();
  HeadParams p;
  p.mil_cls = make_dense(config.num_classes, config.d, rng);
  p.mil_det = make_dense(config.num_classes, config.d, rng);
  for (int k = 0; k < config.refine_stages; ++k) p.refine.push_back(make_dense(config.num_classes + 1, config.d, rng));
  return p;
}

Mat linear(const Mat& features, const Dense& layer) {
  Mat out = features * layer.weight.transpose();
  out.rowwise() += layer.bias.col(0).transpose();
  return out;
}

Mat linear_backward(const Mat& features, const Dense& layer, const Mat& grad_out, Dense& grad) {
  grad.weight.noalias() += grad_out.transpose() * features;
  grad.bias.col(0) += grad_out.colwise().sum().transpose();
  return grad_out * layer.weight;
}

Mat softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Mat softmax_cols(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double m = logits.col(c).maxCoeff();
    out.col(c) = (logits.col(c).array() - m).exp();
    out.col(c) /= out.col(c).sum();
  }
  return out;
}

ScoreMatrices mil_scores(const Mat& cls_logits, const Mat& det_logits) {
  if (cls_logits.rows() == 0) fail(ErrorKind::argument, "MIL scores need at least one proposal");
  if (cls_logits.rows() != det_logits.rows() || cls_logits.cols() != det_logits.cols())
    fail(ErrorKind::invariant, "MIL logit matrices differ in shape");
  ScoreMatrices m;
  m.x_c = softmax_rows(cls_logits);
  m.x_r = softmax_cols(det_logits);
  m.x_m = m.x_c.cwiseProduct(m.x_r);
  // a convex combination of x_c entries; rounding can push it past 1
  m.s = m.x_m.colwise().sum().transpose().cwiseMin(1.0);
  return m;
}

ScoreMatrices mil_forward(const Mat& features, const HeadParams& params) {
  check_features(features, params);
  return mil_scores(linear(features, params.mil_cls), linear(features, params.mil_det));
}

void mil_backward(const ScoreMatrices& m, const Vec& grad_s, Mat& grad_cls_logits, Mat& grad_det_logits) {
  const Eigen::Index rows = m.x_m.rows(), cols = m.x_m.cols();
  // Every x_m entry receives dL/ds of its column.
  Mat g_xc(rows, cols), g_xr(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c) {
      g_xc(i, c) = grad_s(c) * m.x_r(i, c);
      g_xr(i, c) = grad_s(c) * m.x_c(i, c);
    }
  grad_cls_logits.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double dot = g_xc.row(i).dot(m.x_c.row(i));
    grad_cls_logits.row(i) = m.x_c.row(i).array() * (g_xc.row(i).array() - dot);
  }
  grad_det_logits.resize(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    const double dot = g_xr.col(c).dot(m.x_r.col(c));
    grad_det_logits.col(c) = m.x_r.col(c).array() * (g_xr.col(c).array() - dot);
  }
}

double mil_loss(const Vec& s, const Vec& y, Vec* grad_s, double eps) {
  if (s.size() != y.size()) fail(ErrorKind::invariant, "MIL loss: score and label sizes differ");
  double loss = 0;
  if (grad_s) grad_s->setZero(s.size());
  for (Eigen::Index c = 0; c < s.size(); ++c) {
    if (!std::isfinite(s(c))) fail(ErrorKind::numeric, "MIL loss: image score for class " + std::to_string(c) + " is " +
                                                            std::to_string(s(c)));
    const double v = std::clamp(s(c), eps, 1.0 - eps);
    loss -= y(c) * std::log(v) + (1.0 - y(c)) * std::log(1.0 - v);
    if (grad_s && v == s(c)) (*grad_s)(c) = -y(c) / v + (1.0 - y(c)) / (1.0 - v);
  }
  return loss;
}

Vec one_hot(std::span<const int> classes, int num_classes) {
  Vec y = Vec::Zero(num_classes);
  for (int c : classes) {
    if (c < 0 || c >= num_classes) fail(ErrorKind::argument, "class id " + std::to_string(c) + " outside vocabulary");
    y(c) = 1.0;
  }
  return y;
}

std::vector<Pgt> select_pgt(const Mat& scores, std::span<const int> present_classes) {
  std::vector<Pgt> out;
  if (scores.rows() == 0) return out;
  for (int c : present_classes) {
    if (c < 0 || c >= scores.cols()) fail(ErrorKind::argument, "class id " + std::to_string(c) + " outside score matrix");
    Pgt p{0, c, scores(0, c)};
    for (Eigen::Index i = 1; i < scores.rows(); ++i)
      if (scores(i, c) > p.score) p.index = static_cast<int>(i), p.score = scores(i, c);
    out.push_back(p);
  }
  return out;
}

RefinementTargets assign_box_targets(std::span<const BoxF> proposals, std::span<const BoxTarget> targets,
                                     int num_classes, double iou_threshold) {
  RefinementTargets t;
  t.labels.assign(proposals.size(), num_classes);
  t.weights.assign(proposals.size(), 0.0);
  if (targets.empty()) return t;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    std::size_t best = 0;
    double best_iou = -1;
    for (std::size_t j = 0; j < targets.size(); ++j) {
      const double o = iou(proposals[i], targets[j].box);
      if (o > best_iou) best = j, best_iou = o;
    }
    t.weights[i] = targets[best].weight;
    if (best_iou >= iou_threshold) t.labels[i] = targets[best].class_id;
  }
  // A proposal chosen as a target keeps that target's class; if several
  // targets share a proposal the highest weight wins.
  std::vector<int> owner(proposals.size(), -1);
  for (std::size_t j = 0; j < targets.size(); ++j) {
    const int p = targets[j].proposal;
    if (p < 0) continue;
    if (static_cast<std::size_t>(p) >= proposals.size())
      fail(ErrorKind::invariant, "target references proposal " + std::to_string(p) + " out of range");
    if (owner[p] < 0 || targets[j].weight > targets[owner[p]].weight) owner[p] = static_cast<int>(j);
  }
  for (std::size_t i = 0; i < proposals.size(); ++i)
    if (owner[i] >= 0) {
      t.labels[i] = targets[owner[i]].class_id;
      t.weights[i] = targets[owner[i]].weight;
    }
  return t;
}

RefinementTargets assign_refinement_targets(std::span<const BoxF> proposals, std::span<const Pgt> pgt,
                                            int num_classes, double iou_threshold) {
  std::vector<BoxTarget> targets;
  targets.reserve(pgt.size());
  for (const auto& p : pgt) {
    if (p.index < 0 || static_cast<std::size_t>(p.index) >= proposals.size())
      fail(ErrorKind::invariant, "PGT index " + std::to_string(p.index) + " out of range");
    targets.push_back({proposals[p.index], p.class_id, p.score, p.index});
  }
  return assign_box_targets(proposals, targets, num_classes, iou_threshold);
}

double refinement_loss(const Mat& probs, const RefinementTargets& targets, Mat* grad_logits, double eps) {
  const Eigen::Index rows = probs.rows();
  if (static_cast<std::size_t>(rows) != targets.labels.size() || targets.labels.size() != targets.weights.size())
    fail(ErrorKind::invariant, "refinement targets do not match score rows");
  if (grad_logits) grad_logits->setZero(rows, probs.cols());
  if (rows == 0) return 0.0;
  double loss = 0;
  const double inv = 1.0 / static_cast<double>(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double w = targets.weights[i];
    if (w == 0.0) continue;
    const int label = targets.labels[i];
    if (label < 0 || label >= probs.cols()) fail(ErrorKind::invariant, "refinement label out of range");
    const double p = probs(i, label);
    if (!std::isfinite(p)) fail(ErrorKind::numeric, "refinement loss: probability is not finite");
    loss -= w * std::log(std::max(p, eps)) * inv;
    if (grad_logits && p >= eps) {
      grad_logits->row(i) = probs.row(i) * (w * inv);
      (*grad_logits)(i, label) -= w * inv;
    }
  }
  return loss;
}

namespace {

// Refinement stages share one driver: each stage gets its own targets
// (computed by `targets_for(stage, previous_probs)`), adds its loss and
// accumulates gradients into grad_features / grad.
template <class TargetsFor>
double refinement_stages(const HeadConfig& config, const HeadParams& params, const Mat& features,
                         TargetsFor&& targets_for, HeadLoss& out, HeadParams* grad) {
  double total = 0;
  Mat previous;
  for (int k = 0; k < config.refine_stages; ++k) {
    const Mat logits = linear(features, params.refine[k]);
    const Mat probs = softmax_rows(logits);
    RefinementTargets t = targets_for(k, previous);
    Mat g;
    total += refinement_loss(probs, t, grad ? &g : nullptr);
    if (grad) out.grad_features += linear_backward(features, params.refine[k], g, grad->refine[k]);
    out.targets.push_back(std::move(t));
    previous = probs;
  }
  return total;
}

void check_head(const HeadConfig& config, const HeadParams& params) {
  if (static_cast<int>(params.refine.size()) != config.refine_stages)
    fail(ErrorKind::config, "head parameters have " + std::to_string(params.refine.size()) +
                                " refinement stages, config expects " + std::to_string(config.refine_stages));
}

}  // namespace

HeadLoss weak_head_loss(const HeadConfig& config, const HeadParams& params, const Mat& features,
                        std::span<const BoxF> proposals, std::span<const int> image_classes, HeadParams* grad) {
  check_features(features, params);
  check_head(config, params);
  if (static_cast<std::size_t>(features.rows()) != proposals.size())
    fail(ErrorKind::invariant, "feature rows do not match proposal count");
  if (image_classes.empty()) fail(ErrorKind::argument, "weak supervision needs at least one image class");

  HeadLoss out;
  out.grad_features = Mat::Zero(features.rows(), features.cols());

  const ScoreMatrices m = mil_forward(features, params);
  const Vec y = one_hot(image_classes, config.num_classes);
  Vec g_s;
  out.mil = mil_loss(m.s, y, grad ? &g_s : nullptr);
  if (grad) {
    Mat g_cls, g_det;
    mil_backward(m, g_s, g_cls, g_det);
    out.grad_features += linear_backward(features, params.mil_cls, g_cls, grad->mil_cls);
    out.grad_features += linear_backward(features, params.mil_det, g_det, grad->mil_det);
  }

  out.pgt = select_pgt(m.x_m, image_classes);
  auto targets_for = [&](int k, const Mat& previous) {
    const std::vector<Pgt> pgt = k == 0 ? out.pgt : select_pgt(previous, image_classes);
    return assign_refinement_targets(proposals, pgt, config.num_classes, config.pgt_iou);
  };
  out.ref = refinement_stages(config, params, features, targets_for, out, grad);
  out.total = total_loss(out.mil, out.ref);
  return out;
}

HeadLoss supervised_head_loss(const HeadConfig& config, const HeadParams& params, const Mat& features,
                              std::span<const BoxF> proposals, std::span<const BoxTarget> targets,
                              HeadParams* grad) {
  check_features(features, params);
  check_head(config, params);
  if (config.refine_stages < 1) fail(ErrorKind::config, "box-supervised training needs at least one refinement stage");
  if (static_cast<std::size_t>(features.rows()) != proposals.size())
    fail(ErrorKind::invariant, "feature rows do not match proposal count");
  HeadLoss out;
  out.grad_features = Mat::Zero(features.rows(), features.cols());
  if (targets.empty()) return out;
  const RefinementTargets t = assign_box_targets(proposals, targets, config.num_classes, config.pgt_iou);
  auto targets_for = [&](int, const Mat&) { return t; };
  out.supervised = refinement_stages(config, params, features, targets_for, out, grad);
  out.total = out.supervised;
  return out;
}

Mat proposal_class_scores(const HeadConfig& config, const HeadParams& params, const Mat& features) {
  check_features(features, params);
  check_head(config, params);
  if (config.score_from_mil || config.refine_stages == 0) return mil_forward(features, params).x_m;
  Mat acc = Mat::Zero(features.rows(), config.num_classes);
  for (int k = 0; k < config.refine_stages; ++k)
    acc += softmax_rows(linear(features, params.refine[k])).leftCols(config.num_classes);
  return acc / static_cast<double>(config.refine_stages);
}

}  // namespace imdet
