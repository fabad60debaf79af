#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "imdet/dataset.hpp"
#include "imdet/image.hpp"
#include "imdet/imagination.hpp"
#include "imdet/service.hpp"

namespace imdet {

enum class ShapeKind { circle, square, triangle, cross };

const char* to_string(ShapeKind kind);

struct Rgb {
  float r = 0, g = 0, b = 0;
};

struct ShapeClass {
  ShapeKind kind = ShapeKind::square;
  Rgb color;
  std::string color_name;
};

/// flat: uniform grey background. textured: gradient plus stripes, stronger
/// noise and per-instance colour jitter (used for the "real" domain).
enum class SceneStyle { flat, textured };

struct ProceduralSpec {
  int width = 64;
  int height = 64;
  int min_shapes = 1;
  int max_shapes = 3;
  std::vector<ShapeClass> shape_classes;
  double noise_amplitude = 0.06;
  int min_object_px = 14;
  int max_object_px = 26;
  /// Probability that each shape after the first belongs to another class.
  double distractor_prob = 0.5;
  SceneStyle style = SceneStyle::flat;

  /// Throws ErrorKind::config on an unusable spec.
  void validate() const;

  /// Eight shape x colour classes.
  static ProceduralSpec defaults();
  ClassVocab vocab() const;
};

/// One rendered object. Extent `size` is the side of its square footprint.
struct ShapeInstance {
  int class_id = 0;
  ShapeKind kind = ShapeKind::square;
  Rgb color;
  int x = 0, y = 0, size = 0;
};

/// Per-pixel coverage test used by the renderer.
bool shape_covers(const ShapeInstance& shape, int px, int py);

/// Paints the shape (plus optional noise) and returns the tight box of the
/// pixels it actually covered.
BoxF draw_shape(Image& image, const ShapeInstance& shape, double noise_amplitude, std::mt19937_64* rng);

/// Renders a scene with at least one instance of `target_class`; gt_boxes lists
/// every drawn shape and class_labels every drawn class.
ImageSample procedural_scene(const ProceduralSpec& spec, int target_class, std::mt19937_64& rng);

struct SynthRequest {
  std::string prompt;
  std::int64_t seed = 0;
  int width = 64;
  int height = 64;

  void validate() const;
};

class Synthesizer {
 public:
  virtual ~Synthesizer() = default;
  virtual std::string backend_name() const = 0;
  /// Imaginary sample labelled with desc.class_id. Deterministic per
  /// (backend, prompt, seed) for the procedural backend.
  virtual ImageSample synthesize(const Description& desc, const SynthRequest& request) const = 0;
};

class ProceduralSynthesizer final : public Synthesizer {
 public:
  explicit ProceduralSynthesizer(ProceduralSpec spec);
  std::string backend_name() const override { return "procedural"; }
  ImageSample synthesize(const Description& desc, const SynthRequest& request) const override;
  const ProceduralSpec& spec() const { return spec_; }

 private:
  ProceduralSpec spec_;
};

/// Text-to-image service client (POST /synthesize).
class RemoteSynthesizer final : public Synthesizer {
 public:
  RemoteSynthesizer(std::string endpoint, ServicePolicy policy);
  std::string backend_name() const override { return "remote"; }
  ImageSample synthesize(const Description& desc, const SynthRequest& request) const override;
  /// GET /health; returns the reported backend name.
  std::string health() const;

 private:
  std::string endpoint_;
  ServicePolicy policy_;
};

inline ImageSample synthesize(const Synthesizer& client, const Description& desc, const SynthRequest& request) {
  return client.synthesize(desc, request);
}

struct GenerateOptions {
  int n_samples = 0;
  std::int64_t seed = 0;
  int workers = 1;
  int width = 64;
  int height = 64;
  /// "real" datasets carry every drawn class as their image-level labels.
  Provenance provenance = Provenance::imaginary;
  /// Restricts class sampling to these ids (ids stay relative to the full vocab).
  std::optional<std::vector<int>> class_subset;
  double max_failure_fraction = 0.1;
};

struct GenerateSummary {
  int requested = 0;
  int written = 0;
  int failed = 0;
  std::vector<int> per_class_targets;
  std::vector<std::string> failures;
};

/// Writes images/<idx>.png, manifest.jsonl and dataset.json under `out`.
/// Per-sample seed = seed + idx. Throws if more than max_failure_fraction of
/// samples fail.
GenerateSummary generate_dataset(const ClassVocab& vocab, const LmClient& lm, const Synthesizer& synth,
                                 const GenerateOptions& options, const std::filesystem::path& out);

}  // namespace imdet
