#include "imdet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "imdet/codec.hpp"
#include "imdet/error.hpp"
#include "imdet/parallel.hpp"

namespace imdet {

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return dets[a].score > dets[b].score; });
  std::vector<Detection> kept;
  for (auto i : order) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (iou(dets[i].box, k.box) >= iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(dets[i]);
  }
  return kept;
}

std::vector<Detection> nms_per_class(const std::vector<Detection>& dets, double iou_threshold) {
  std::map<int, std::vector<Detection>> by_class;
  for (const auto& d : dets) by_class[d.class_id].push_back(d);
  std::vector<Detection> out;
  for (auto& [c, group] : by_class) {
    auto kept = nms(group, iou_threshold);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  return out;
}

void DetectConfig::validate() const {
  if (!(nms_threshold >= 0.0 && nms_threshold <= 1.0)) fail(ErrorKind::config, "nms_threshold must lie in [0, 1]");
  if (!(min_score >= 0.0 && min_score <= 1.0)) fail(ErrorKind::config, "min_score must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const DetectConfig& c) {
  j = {{"nms_threshold", c.nms_threshold}, {"min_score", c.min_score}};
}

void from_json(const nlohmann::json& j, DetectConfig& c) {
  c = DetectConfig{};
  c.nms_threshold = j.value("nms_threshold", c.nms_threshold);
  c.min_score = j.value("min_score", c.min_score);
  c.validate();
}

std::vector<Detection> detections_from_scores(std::span<const BoxF> proposals, const Mat& scores,
                                              const DetectConfig& config) {
  if (static_cast<std::size_t>(scores.rows()) != proposals.size())
    fail(ErrorKind::invariant, "score rows do not match proposals");
  if (!scores.allFinite()) fail(ErrorKind::numeric, "detector produced non-finite scores");
  std::vector<Detection> raw;
  for (Eigen::Index c = 0; c < scores.cols(); ++c)
    for (Eigen::Index i = 0; i < scores.rows(); ++i)
      if (scores(i, c) >= config.min_score) raw.push_back({proposals[i], static_cast<int>(c), scores(i, c)});
  return nms_per_class(raw, config.nms_threshold);
}

std::vector<Detection> detect(const DetectorModel& model, const Image& image, std::span<const BoxF> proposals,
                              const DetectConfig& config) {
  if (proposals.empty()) return {};
  if (!model.params.all_finite()) fail(ErrorKind::numeric, "model parameters contain NaN or Inf");
  const Mat features = proposal_features(model.config, model.params, image, proposals);
  const Mat scores = proposal_class_scores(model.config.head, model.params.head, features);
  return detections_from_scores(proposals, scores, config);
}

std::optional<double> average_precision(std::span<const ImageDetection> dets,
                                        const std::vector<std::vector<BoxF>>& gts, double iou_threshold,
                                        ApMode mode, PrCurve* curve) {
  std::size_t n_gt = 0;
  for (const auto& g : gts) n_gt += g.size();

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return dets[a].score > dets[b].score; });

  std::vector<std::vector<bool>> matched(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) matched[i].assign(gts[i].size(), false);

  PrCurve local;
  PrCurve& pr = curve ? *curve : local;
  pr = {};
  std::size_t tp = 0, fp = 0;
  for (auto k : order) {
    const auto& d = dets[k];
    if (d.image < 0 || static_cast<std::size_t>(d.image) >= gts.size())
      fail(ErrorKind::argument, "detection refers to image " + std::to_string(d.image) + " without ground truth entry");
    const auto& g = gts[d.image];
    int best = -1;
    double best_iou = -1;
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (matched[d.image][j]) continue;
      const double o = iou(d.box, g[j]);
      if (o > best_iou) best = static_cast<int>(j), best_iou = o;
    }
    const bool hit = best >= 0 && best_iou >= iou_threshold;
    if (hit) {
      matched[d.image][best] = true;
      ++tp;
    } else {
      ++fp;
    }
    pr.true_positive.push_back(hit);
    pr.precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    pr.recall.push_back(n_gt ? static_cast<double>(tp) / static_cast<double>(n_gt) : 0.0);
  }
  if (n_gt == 0) return std::nullopt;

  if (mode == ApMode::voc07) {
    long double ap = 0;
    for (int t = 0; t <= 10; ++t) {
      long double p = 0;
      std::size_t seen_tp = 0;
      for (std::size_t i = 0; i < pr.recall.size(); ++i) {
        seen_tp += pr.true_positive[i];
        // recall >= t/10 without rounding
        if (10 * seen_tp >= static_cast<std::size_t>(t) * n_gt)
          p = std::max(p, static_cast<long double>(seen_tp) / static_cast<long double>(i + 1));
      }
      ap += p;
    }
    return static_cast<double>(ap / 11.0L);
  }

  // Area under the monotone precision envelope. Recall steps by 1/n_gt at
  // each true positive, so the area is the envelope summed over true
  // positives over n_gt; extended precision keeps small cases exact.
  std::vector<long double> env(pr.precision.size());
  std::size_t seen_tp = 0;
  for (std::size_t i = 0; i < env.size(); ++i) {
    seen_tp += pr.true_positive[i];
    env[i] = static_cast<long double>(seen_tp) / static_cast<long double>(i + 1);
  }
  for (std::size_t i = env.size(); i-- > 1;) env[i - 1] = std::max(env[i - 1], env[i]);
  long double area = 0;
  for (std::size_t i = 0; i < env.size(); ++i)
    if (pr.true_positive[i]) area += env[i];
  return static_cast<double>(area / static_cast<long double>(n_gt));
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json ap = nlohmann::json::object(), n_gt = nlohmann::json::object();
  for (const auto& [c, v] : r.per_class_ap) ap[std::to_string(c)] = v;
  for (const auto& [c, v] : r.n_gt) n_gt[std::to_string(c)] = v;
  return {{"iou_threshold", r.iou_threshold},
          {"ap_mode", r.mode == ApMode::voc07 ? "voc07_11point" : "all_points"},
          {"per_class_ap", ap},
          {"n_gt", n_gt},
          {"excluded_classes", r.excluded_classes},
          {"mAP", r.mAP},
          {"n_images", r.n_images},
          {"class_names", r.class_names},
          {"config_hash", r.config_hash}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.iou_threshold = j.at("iou_threshold").get<double>();
    r.mode = j.value("ap_mode", std::string("all_points")) == "voc07_11point" ? ApMode::voc07 : ApMode::all_points;
    for (const auto& [k, v] : j.at("per_class_ap").items()) r.per_class_ap[std::stoi(k)] = v.get<double>();
    if (j.contains("n_gt"))
      for (const auto& [k, v] : j.at("n_gt").items()) r.n_gt[std::stoi(k)] = v.get<int>();
    r.excluded_classes = j.value("excluded_classes", std::vector<int>{});
    r.mAP = j.at("mAP").get<double>();
    r.n_images = j.at("n_images").get<int>();
    r.class_names = j.value("class_names", std::vector<std::string>{});
    r.config_hash = j.value("config_hash", std::string());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("evaluation report: ") + e.what());
  } catch (const std::logic_error& e) {
    fail(ErrorKind::format, std::string("evaluation report: bad class key: ") + e.what());
  }
  return r;
}

EvalReport evaluate_detections(const std::vector<std::vector<Detection>>& dets,
                               const std::vector<std::vector<LabeledBox>>& gts, int num_classes,
                               double iou_threshold, ApMode mode) {
  if (dets.size() != gts.size()) fail(ErrorKind::invariant, "detections and ground truth differ in image count");
  EvalReport r;
  r.iou_threshold = iou_threshold;
  r.mode = mode;
  r.n_images = static_cast<int>(gts.size());
  double sum = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<std::vector<BoxF>> g(gts.size());
    std::vector<ImageDetection> d;
    int count = 0;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      for (const auto& b : gts[i])
        if (b.class_id == c) g[i].push_back(b.box), ++count;
      for (const auto& x : dets[i])
        if (x.class_id == c) d.push_back({static_cast<int>(i), x.box, x.score});
    }
    r.n_gt[c] = count;
    const auto ap = average_precision(d, g, iou_threshold, mode);
    if (ap) {
      r.per_class_ap[c] = *ap;
      sum += *ap;
    } else {
      r.excluded_classes.push_back(c);
    }
  }
  r.mAP = r.per_class_ap.empty() ? 0.0 : sum / static_cast<double>(r.per_class_ap.size());
  return r;
}

std::vector<std::vector<LabeledBox>> evaluation_ground_truth(const std::vector<ImageSample>& samples) {
  std::vector<std::vector<LabeledBox>> gts;
  gts.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].gt_boxes) fail(ErrorKind::argument, "evaluation image " + std::to_string(i) + " has no gt_boxes");
    gts.push_back(*samples[i].gt_boxes);
  }
  return gts;
}

EvalReport evaluate(const DetectorModel& model, const std::vector<ImageSample>& samples,
                    const std::vector<std::vector<BoxF>>& proposals, const EvalOptions& options) {
  options.detect.validate();
  if (samples.size() != proposals.size()) fail(ErrorKind::invariant, "proposal lists do not match evaluation images");
  const auto gts = evaluation_ground_truth(samples);
  std::vector<std::vector<Detection>> dets(samples.size());
  parallel_for(samples.size(), options.workers,
               [&](std::size_t i) { dets[i] = detect(model, samples[i].pixels, proposals[i], options.detect); });
  EvalReport r = evaluate_detections(dets, gts, model.vocab.size(), options.iou_threshold, options.mode);
  r.class_names = model.vocab.names();
  r.config_hash = model.config_hash();
  return r;
}

std::vector<Detection> random_detections(int width, int height, int num_classes, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, width), uy(0.0, height), us(0.0, 1.0);
  std::uniform_int_distribution<int> uc(0, num_classes - 1);
  std::vector<Detection> out;
  while (static_cast<int>(out.size()) < count) {
    double x1 = ux(rng), x2 = ux(rng), y1 = uy(rng), y2 = uy(rng);
    if (x1 > x2) std::swap(x1, x2);
    if (y1 > y2) std::swap(y1, y2);
    const BoxF box{std::floor(x1), std::floor(y1), std::ceil(x2), std::ceil(y2)};
    const int c = uc(rng);
    const double s = us(rng);
    if (!box.valid()) continue;
    out.push_back({box, c, s});
  }
  return out;
}

void OracleScorer::prepare(const ImageSample& sample) {
  if (!sample.gt_boxes) fail(ErrorKind::argument, "oracle scorer needs gt_boxes");
  gts_ = *sample.gt_boxes;
}

std::vector<double> OracleScorer::score(const Image&, const BoxF& box, std::span<const std::string> prompts) {
  std::vector<double> out(prompts.size(), 0.0);
  for (const auto& g : gts_)
    if (g.class_id >= 0 && static_cast<std::size_t>(g.class_id) < out.size())
      out[g.class_id] = std::max(out[g.class_id], iou(box, g.box));
  return out;
}

ColorPromptScorer::ColorPromptScorer(std::vector<NamedColor> palette, double tolerance)
    : palette_(std::move(palette)), tolerance_(tolerance) {
  if (palette_.empty()) fail(ErrorKind::config, "colour scorer needs a palette");
  if (!(tolerance_ > 0)) fail(ErrorKind::config, "colour tolerance must be positive");
}

ColorPromptScorer ColorPromptScorer::from_spec(const ProceduralSpec& spec) {
  std::vector<NamedColor> palette;
  for (const auto& c : spec.shape_classes) {
    const bool seen = std::any_of(palette.begin(), palette.end(), [&](const auto& p) { return p.name == c.color_name; });
    if (!seen) palette.push_back({c.color_name, c.color});
  }
  return ColorPromptScorer(std::move(palette));
}

std::vector<double> ColorPromptScorer::score(const Image& crop, const BoxF&, std::span<const std::string> prompts) {
  std::vector<double> out(prompts.size(), 0.0);
  const int n = crop.plane_size();
  if (n == 0) return out;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    const NamedColor* color = nullptr;
    std::size_t at = std::string::npos;
    for (const auto& c : palette_) {
      const auto pos = prompts[p].find(c.name);
      if (pos != std::string::npos && pos < at) color = &c, at = pos;
    }
    if (!color) continue;
    int close = 0;
    for (int y = 0; y < crop.height(); ++y)
      for (int x = 0; x < crop.width(); ++x) {
        const double dr = crop.at(0, y, x) - color->rgb.r, dg = crop.at(1, y, x) - color->rgb.g,
                     db = crop.at(2, y, x) - color->rgb.b;
        if (std::sqrt(dr * dr + dg * dg + db * db) < tolerance_) ++close;
      }
    out[p] = static_cast<double>(close) / n;
  }
  return out;
}

RemoteScorer::RemoteScorer(std::string endpoint, ServicePolicy policy)
    : endpoint_(std::move(endpoint)), policy_(policy) {}

std::vector<double> RemoteScorer::score(const Image& crop, const BoxF&, std::span<const std::string> prompts) {
  const nlohmann::json body = {{"image_png_b64", base64_encode(encode_png(crop))},
                               {"prompts", std::vector<std::string>(prompts.begin(), prompts.end())}};
  const auto res = post_json(endpoint_, "/score", body, policy_);
  if (!res.contains("similarities") || !res["similarities"].is_array())
    fail(ErrorKind::protocol, "/score response lacks a 'similarities' array");
  std::vector<double> out;
  for (const auto& v : res["similarities"]) {
    if (!v.is_number()) fail(ErrorKind::protocol, "/score similarity is not a number");
    out.push_back(v.get<double>());
  }
  if (out.size() != prompts.size()) fail(ErrorKind::protocol, "/score returned the wrong number of similarities");
  return out;
}

std::string baseline_prompt(const std::string& class_name) { return "a photo of " + class_name; }

void BaselineConfig::validate() const {
  if (max_proposals < 1) fail(ErrorKind::config, "max_proposals must be >= 1");
  if (crop_size < 1) fail(ErrorKind::config, "crop_size must be >= 1");
  if (!(nms_threshold >= 0.0 && nms_threshold <= 1.0)) fail(ErrorKind::config, "nms_threshold must lie in [0, 1]");
}

std::vector<Detection> baseline_detect(ProposalScorer& scorer, const ImageSample& sample, const ClassVocab& vocab,
                                       std::span<const BoxF> proposals, const BaselineConfig& config,
                                       BaselineStats* stats) {
  config.validate();
  if (proposals.empty()) return {};
  std::vector<std::string> prompts;
  for (const auto& name : vocab.names()) prompts.push_back(baseline_prompt(name));
  scorer.prepare(sample);

  const std::size_t n = std::min(proposals.size(), static_cast<std::size_t>(config.max_proposals));
  std::vector<Detection> raw;
  std::size_t skipped = 0;
  std::optional<Error> last_error;
  for (std::size_t i = 0; i < n; ++i) {
    const Image crop = crop_and_warp(sample.pixels, proposals[i], config.crop_size);
    std::vector<double> sims;
    try {
      sims = scorer.score(crop, proposals[i], prompts);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::transport && e.kind() != ErrorKind::protocol) throw;
      ++skipped;
      last_error = e;
      continue;
    }
    if (sims.size() != prompts.size()) fail(ErrorKind::protocol, "scorer returned the wrong number of similarities");
    const auto best = std::max_element(sims.begin(), sims.end());
    if (*best < config.min_score || !std::isfinite(*best)) continue;
    raw.push_back({proposals[i], static_cast<int>(best - sims.begin()), *best});
  }
  if (stats) {
    stats->scored += n - skipped;
    stats->skipped += skipped;
  }
  if (skipped == n && last_error) throw *last_error;
  return nms_per_class(raw, config.nms_threshold);
}

std::size_t export_features(const DetectorModel& model, std::span<const FeatureSource> sources, int n_per_class,
                            const std::filesystem::path& out, std::vector<std::string>* warnings) {
  if (n_per_class < 1) fail(ErrorKind::argument, "n_per_class must be >= 1");
  std::ofstream file(out, std::ios::binary);
  if (!file) fail(ErrorKind::io, "cannot write " + out.string());
  file << "class_id,provenance";
  for (int k = 0; k < model.config.encoder.d; ++k) file << ",f" << k;
  file << '\n';
  file.precision(17);

  std::size_t rows = 0;
  for (int c = 0; c < model.vocab.size(); ++c) {
    std::size_t class_rows = 0;
    for (const auto& src : sources) {
      int taken = 0;
      for (std::size_t i = 0; i < src.samples->size() && taken < n_per_class; ++i) {
        const auto& s = (*src.samples)[i];
        if (!s.class_labels || std::find(s.class_labels->begin(), s.class_labels->end(), c) == s.class_labels->end())
          continue;
        const auto& props = (*src.proposals)[i];
        if (props.empty()) continue;
        const Mat f = proposal_features(model.config, model.params, s.pixels, props);
        const Mat scores = proposal_class_scores(model.config.head, model.params.head, f);
        Eigen::Index best = 0;
        scores.col(c).maxCoeff(&best);
        file << c << ',' << to_string(s.provenance);
        for (Eigen::Index k = 0; k < f.cols(); ++k) file << ',' << f(best, k);
        file << '\n';
        ++taken;
      }
      class_rows += static_cast<std::size_t>(taken);
    }
    if (class_rows == 0 && warnings) warnings->push_back("class " + model.vocab.name(c) + " has no samples, skipped");
    rows += class_rows;
  }
  if (!file) fail(ErrorKind::io, "failed writing " + out.string());
  return rows;
}

}  // namespace imdet
