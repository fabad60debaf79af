#include "imdet/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <regex>
#include <set>

#include "imdet/codec.hpp"
#include "imdet/error.hpp"
#include "imdet/parallel.hpp"

namespace imdet {

const char* to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
    case ShapeKind::cross: return "cross";
  }
  return "shape";
}

void ProceduralSpec::validate() const {
  if (width < 8 || height < 8) fail(ErrorKind::config, "procedural canvas must be at least 8x8");
  if (shape_classes.empty()) fail(ErrorKind::config, "procedural spec needs at least one shape class");
  if (min_shapes < 1 || max_shapes < min_shapes) fail(ErrorKind::config, "shapes_per_image must satisfy 1 <= min <= max");
  if (min_object_px < 6) fail(ErrorKind::config, "min_object_px must be >= 6");
  if (max_object_px < min_object_px) fail(ErrorKind::config, "max_object_px must be >= min_object_px");
  if (min_object_px > std::min(width, height))
    fail(ErrorKind::config, "canvas " + std::to_string(width) + "x" + std::to_string(height) +
                                " is too small for min_object_px " + std::to_string(min_object_px));
  if (noise_amplitude < 0 || noise_amplitude > 0.5) fail(ErrorKind::config, "noise amplitude must be in [0, 0.5]");
  if (distractor_prob < 0 || distractor_prob > 1) fail(ErrorKind::config, "distractor_prob must be in [0, 1]");
}

ProceduralSpec ProceduralSpec::defaults() {
  ProceduralSpec spec;
  const Rgb red{0.85f, 0.15f, 0.15f};
  const Rgb blue{0.15f, 0.30f, 0.85f};
  for (const auto& [color, name] : {std::pair{red, "red"}, std::pair{blue, "blue"}})
    for (ShapeKind kind : {ShapeKind::circle, ShapeKind::square, ShapeKind::triangle, ShapeKind::cross})
      spec.shape_classes.push_back({kind, color, name});
  return spec;
}

ClassVocab ProceduralSpec::vocab() const {
  std::vector<std::string> names;
  for (const auto& sc : shape_classes) names.push_back(sc.color_name + " " + to_string(sc.kind));
  return ClassVocab(std::move(names));
}

bool shape_covers(const ShapeInstance& s, int px, int py) {
  if (px < s.x || py < s.y || px >= s.x + s.size || py >= s.y + s.size) return false;
  const double half = s.size / 2.0;
  const double cx = s.x + half;
  const double u = px + 0.5, v = py + 0.5;
  switch (s.kind) {
    case ShapeKind::square: return true;
    case ShapeKind::circle: {
      const double dx = u - cx, dy = v - (s.y + half);
      return dx * dx + dy * dy <= half * half;
    }
    case ShapeKind::triangle: {
      const double depth = v - s.y;  // apex at the top edge, base at the bottom
      return std::abs(u - cx) <= half * depth / s.size;
    }
    case ShapeKind::cross: {
      const int t = std::max(2, static_cast<int>(std::lround(s.size / 3.0)));
      const int off = (s.size - t) / 2;
      const int lx = px - s.x, ly = py - s.y;
      return (lx >= off && lx < off + t) || (ly >= off && ly < off + t);
    }
  }
  return false;
}

BoxF draw_shape(Image& image, const ShapeInstance& s, double noise_amplitude, std::mt19937_64* rng) {
  std::uniform_real_distribution<double> noise(-noise_amplitude, noise_amplitude);
  int x0 = image.width(), y0 = image.height(), x1 = -1, y1 = -1;
  const float color[3] = {s.color.r, s.color.g, s.color.b};
  for (int py = std::max(0, s.y); py < std::min(image.height(), s.y + s.size); ++py)
    for (int px = std::max(0, s.x); px < std::min(image.width(), s.x + s.size); ++px) {
      if (!shape_covers(s, px, py)) continue;
      for (int c = 0; c < 3; ++c) {
        const double n = (rng && noise_amplitude > 0) ? noise(*rng) : 0.0;
        image.at(c, py, px) = static_cast<float>(std::clamp(color[c] + n, 0.0, 1.0));
      }
      x0 = std::min(x0, px), y0 = std::min(y0, py), x1 = std::max(x1, px), y1 = std::max(y1, py);
    }
  if (x1 < 0) fail(ErrorKind::invariant, "shape covers no pixel");
  return {static_cast<double>(x0), static_cast<double>(y0), x1 + 1.0, y1 + 1.0};
}

namespace {

void paint_background(Image& image, const ProceduralSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double amp = spec.style == SceneStyle::textured ? spec.noise_amplitude * 1.5 : spec.noise_amplitude;
  std::uniform_real_distribution<double> noise(-amp, amp);
  const int w = image.width(), h = image.height();
  if (spec.style == SceneStyle::flat) {
    const double base = 0.3 + 0.4 * unit(rng);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          image.at(c, y, x) = static_cast<float>(std::clamp(base + (amp > 0 ? noise(rng) : 0.0), 0.0, 1.0));
    return;
  }
  const double g0 = 0.25 + 0.5 * unit(rng), g1 = 0.25 + 0.5 * unit(rng);
  const double angle = 2 * std::numbers::pi * unit(rng);
  const double freq = 0.2 + 0.4 * unit(rng), phase = 2 * std::numbers::pi * unit(rng);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double tint[3] = {0.05 * (unit(rng) - 0.5), 0.05 * (unit(rng) - 0.5), 0.05 * (unit(rng) - 0.5)};
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double t = ((x - w / 2.0) * ca + (y - h / 2.0) * sa) / std::max(w, h) + 0.5;
        const double stripes = 0.04 * std::sin(freq * (x * sa - y * ca) + phase);
        const double v = g0 + (g1 - g0) * t + stripes + tint[c] + (amp > 0 ? noise(rng) : 0.0);
        image.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
}

bool overlaps(const ShapeInstance& a, const ShapeInstance& b, int margin) {
  return a.x < b.x + b.size + margin && b.x < a.x + a.size + margin && a.y < b.y + b.size + margin &&
         b.y < a.y + a.size + margin;
}

}  // namespace

ImageSample procedural_scene(const ProceduralSpec& spec, int target_class, std::mt19937_64& rng) {
  spec.validate();
  const int n_classes = static_cast<int>(spec.shape_classes.size());
  if (target_class < 0 || target_class >= n_classes)
    fail(ErrorKind::argument, "target class " + std::to_string(target_class) + " out of range");

  ImageSample sample;
  sample.pixels = Image(spec.width, spec.height);
  sample.provenance = Provenance::imaginary;
  paint_background(sample.pixels, spec, rng);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n_shapes = std::uniform_int_distribution<int>(spec.min_shapes, spec.max_shapes)(rng);
  const int max_size = std::min({spec.max_object_px, spec.width, spec.height});
  std::vector<ShapeInstance> placed;
  std::vector<LabeledBox> boxes;
  for (int k = 0; k < n_shapes; ++k) {
    int cls = target_class;
    if (k > 0 && n_classes > 1 && unit(rng) < spec.distractor_prob) {
      cls = std::uniform_int_distribution<int>(0, n_classes - 2)(rng);
      if (cls >= target_class) ++cls;
    }
    const auto& sc = spec.shape_classes[static_cast<std::size_t>(cls)];
    ShapeInstance inst{cls, sc.kind, sc.color, 0, 0, 0};
    if (spec.style == SceneStyle::textured) {
      auto jitter = [&](float v) { return static_cast<float>(std::clamp(v + 0.2 * (unit(rng) - 0.5), 0.0, 1.0)); };
      inst.color = {jitter(sc.color.r), jitter(sc.color.g), jitter(sc.color.b)};
    }
    bool ok = false;
    for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
      inst.size = std::uniform_int_distribution<int>(spec.min_object_px, max_size)(rng);
      inst.x = std::uniform_int_distribution<int>(0, spec.width - inst.size)(rng);
      inst.y = std::uniform_int_distribution<int>(0, spec.height - inst.size)(rng);
      ok = std::none_of(placed.begin(), placed.end(), [&](const ShapeInstance& p) { return overlaps(p, inst, 2); });
    }
    if (!ok) continue;
    placed.push_back(inst);
    boxes.push_back({draw_shape(sample.pixels, inst, spec.noise_amplitude, &rng), cls});
  }
  sample.pixels.quantize();

  std::set<int> labels;
  for (const auto& b : boxes) labels.insert(b.class_id);
  sample.class_labels = std::vector<int>(labels.begin(), labels.end());
  sample.gt_boxes = std::move(boxes);
  return sample;
}

void SynthRequest::validate() const {
  if (prompt.empty()) fail(ErrorKind::argument, "synthesis prompt must not be empty");
  if (width < 8 || height < 8) fail(ErrorKind::argument, "synthesis size must be at least 8x8");
}

ProceduralSynthesizer::ProceduralSynthesizer(ProceduralSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

ImageSample ProceduralSynthesizer::synthesize(const Description& desc, const SynthRequest& request) const {
  request.validate();
  ProceduralSpec spec = spec_;
  spec.width = request.width;
  spec.height = request.height;
  std::mt19937_64 rng(static_cast<std::uint64_t>(request.seed) * 0x9E3779B97F4A7C15ull ^ fnv1a(request.prompt));
  ImageSample sample = procedural_scene(spec, desc.class_id, rng);
  sample.class_labels = std::vector<int>{desc.class_id};
  sample.description = desc.text;
  sample.seed = request.seed;
  return sample;
}

RemoteSynthesizer::RemoteSynthesizer(std::string endpoint, ServicePolicy policy)
    : endpoint_(std::move(endpoint)), policy_(policy) {}

ImageSample RemoteSynthesizer::synthesize(const Description& desc, const SynthRequest& request) const {
  request.validate();
  const nlohmann::json body = {
      {"prompt", request.prompt}, {"seed", request.seed}, {"width", request.width}, {"height", request.height}};
  const auto reply = post_json(endpoint_, "/synthesize", body, policy_);
  if (!reply.is_object() || !reply.contains("image_png_b64") || !reply["image_png_b64"].is_string())
    fail(ErrorKind::protocol, endpoint_ + "/synthesize: response lacks string field 'image_png_b64'");
  Image image;
  try {
    image = decode_png(base64_decode(reply["image_png_b64"].get<std::string>()));
  } catch (const Error& e) {
    fail(ErrorKind::protocol, endpoint_ + "/synthesize: undecodable image payload: " + e.what());
  }
  if (image.width() != request.width || image.height() != request.height)
    fail(ErrorKind::protocol, endpoint_ + "/synthesize: image is " + std::to_string(image.width()) + "x" +
                                  std::to_string(image.height()) + ", requested " + std::to_string(request.width) +
                                  "x" + std::to_string(request.height));
  ImageSample sample;
  sample.pixels = std::move(image);
  sample.provenance = Provenance::imaginary;
  sample.class_labels = std::vector<int>{desc.class_id};
  sample.description = desc.text;
  sample.seed = request.seed;
  return sample;
}

std::string RemoteSynthesizer::health() const {
  const auto reply = get_json(endpoint_, "/health", policy_);
  if (!reply.is_object() || reply.value("status", "") != "ok")
    fail(ErrorKind::protocol, endpoint_ + "/health: status is not ok");
  return reply.value("backend", "unknown");
}

GenerateSummary generate_dataset(const ClassVocab& vocab, const LmClient& lm, const Synthesizer& synth,
                                 const GenerateOptions& options, const std::filesystem::path& out) {
  if (options.n_samples < 1) fail(ErrorKind::argument, "n_samples must be >= 1");
  if (vocab.size() == 0) fail(ErrorKind::config, "empty class vocab");
  if (options.class_subset) {
    if (options.class_subset->empty()) fail(ErrorKind::config, "class subset must not be empty");
    for (int c : *options.class_subset)
      if (!vocab.contains(c)) fail(ErrorKind::config, "class subset contains unknown id " + std::to_string(c));
  }

  namespace fs = std::filesystem;
  fs::create_directories(out / "images");
  static const std::regex kImageName(R"(\d+\.png)");
  for (const auto& entry : fs::directory_iterator(out / "images"))
    if (std::regex_match(entry.path().filename().string(), kImageName)) fs::remove(entry.path());

  const auto n = static_cast<std::size_t>(options.n_samples);
  std::vector<std::optional<ManifestRecord>> records(n);
  std::vector<std::string> errors(n);
  std::vector<ErrorKind> error_kinds(n, ErrorKind::transport);
  std::vector<int> targets(n, -1);

  parallel_for(n, options.workers, [&](std::size_t i) {
    const std::int64_t sample_seed = options.seed + static_cast<std::int64_t>(i);
    std::mt19937_64 rng(static_cast<std::uint64_t>(sample_seed));
    int cls = 0;
    if (options.class_subset) {
      const auto& subset = *options.class_subset;
      cls = subset[std::uniform_int_distribution<std::size_t>(0, subset.size() - 1)(rng)];
    } else {
      cls = sample_class(vocab, rng);
    }
    targets[i] = cls;
    try {
      const PromptText prompt = build_prefix(vocab, cls);
      const Description desc = lm.extend(prompt, sample_seed);
      ImageSample sample = synth.synthesize(desc, {desc.text, sample_seed, options.width, options.height});
      if (!sample.pixels.valid() || sample.pixels.width() != options.width || sample.pixels.height() != options.height)
        fail(ErrorKind::format, "generated image has the wrong size or pixel range");

      ManifestRecord rec;
      rec.idx = static_cast<int>(i);
      rec.file = "images/" + std::to_string(i) + ".png";
      rec.provenance = options.provenance;
      rec.seed = sample_seed;
      rec.gt_boxes = sample.gt_boxes;
      if (options.provenance == Provenance::real && sample.gt_boxes) {
        std::set<int> labels;
        for (const auto& b : *sample.gt_boxes) labels.insert(b.class_id);
        rec.class_labels.assign(labels.begin(), labels.end());
      } else {
        rec.class_labels = sample.class_labels.value_or(std::vector<int>{cls});
        rec.description = sample.description;
      }
      write_png(out / rec.file, sample.pixels);
      records[i] = std::move(rec);
    } catch (const Error& e) {
      errors[i] = e.what();
      error_kinds[i] = e.kind();
    }
  });

  GenerateSummary summary;
  summary.requested = options.n_samples;
  summary.per_class_targets.assign(static_cast<std::size_t>(vocab.size()), 0);
  std::vector<ManifestRecord> written;
  for (std::size_t i = 0; i < n; ++i) {
    if (records[i]) {
      written.push_back(std::move(*records[i]));
      ++summary.per_class_targets[static_cast<std::size_t>(targets[i])];
    } else {
      summary.failures.push_back("sample " + std::to_string(i) + ": " + errors[i]);
      std::cerr << "warning: skipped sample " << i << ": " << errors[i] << '\n';
    }
  }
  summary.written = static_cast<int>(written.size());
  summary.failed = summary.requested - summary.written;
  if (summary.failed > options.max_failure_fraction * summary.requested) {
    const auto first = static_cast<std::size_t>(
        std::find_if(records.begin(), records.end(), [](const auto& r) { return !r.has_value(); }) - records.begin());
    throw Error(error_kinds[first], "generation failed for " + std::to_string(summary.failed) + " of " +
                                        std::to_string(summary.requested) + " samples; first: " +
                                        summary.failures.front());
  }

  write_manifest(out / "manifest.jsonl", written);
  DatasetInfo info;
  info.vocab = vocab;
  info.backend = synth.backend_name();
  info.seed = options.seed;
  info.requested = summary.requested;
  info.written = summary.written;
  info.failed = summary.failed;
  info.class_subset = options.class_subset;
  write_text(out / "dataset.json", to_json(info).dump(2) + "\n");
  return summary;
}

}  // namespace imdet
