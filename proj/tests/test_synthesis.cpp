#include <doctest.h>

#include <set>

#include <map>
#include <random>

#include "imdet/codec.hpp"
#include "imdet/dataset.hpp"
#include "imdet/error.hpp"
#include "imdet/synthesis.hpp"
#include "support.hpp"

using namespace imdet;
using imdet::testing::TempDir;

namespace {

LmClient scene_lm() { return LmClient(LmClientConfig{}); }

// Bounding rectangle of the pixels that differ from the background colour.
BoxF foreground_rect(const Image& img, float bg) {
  int x0 = img.width(), y0 = img.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (img.at(0, y, x) != bg) x0 = std::min(x0, x), y0 = std::min(y0, y), x1 = std::max(x1, x), y1 = std::max(y1, y);
  return {double(x0), double(y0), x1 + 1.0, y1 + 1.0};
}

}  // namespace

TEST_CASE("drawn square box equals the foreground rectangle") {
  for (int size : {8, 20, 25})
    for (ShapeKind kind : {ShapeKind::square, ShapeKind::circle, ShapeKind::triangle, ShapeKind::cross}) {
      Image img(64, 64, 0.5f);
      const ShapeInstance s{0, kind, {0.9f, 0.1f, 0.1f}, 17, 9, size};
      const BoxF box = draw_shape(img, s, 0.0, nullptr);
      CHECK(box == foreground_rect(img, 0.5f));
      if (kind == ShapeKind::square) CHECK(box == BoxF{17, 9, 17.0 + size, 9.0 + size});
      CHECK(box.x1 >= 17 - 1);
      CHECK(box.x2 <= 17 + size + 1);
    }
}

TEST_CASE("procedural scenes satisfy the box invariants") {
  const ProceduralSpec spec = ProceduralSpec::defaults();
  std::mt19937_64 rng(1);
  for (int t = 0; t < 300; ++t) {
    const int target = t % 8;
    const ImageSample s = procedural_scene(spec, target, rng);
    REQUIRE(s.gt_boxes);
    CHECK(s.pixels.valid());
    bool has_target = false;
    for (const auto& b : *s.gt_boxes) {
      CHECK(b.box.valid());
      CHECK(b.box.within(64, 64));
      has_target |= b.class_id == target;
    }
    CHECK(has_target);
    CHECK(s.gt_boxes->size() <= 3u);
  }
}

TEST_CASE("single-shape spec yields exactly one box of the target class") {
  ProceduralSpec spec = ProceduralSpec::defaults();
  spec.min_shapes = spec.max_shapes = 1;
  std::mt19937_64 rng(4);
  const ImageSample s = procedural_scene(spec, 0, rng);
  REQUIRE(s.gt_boxes);
  CHECK(s.gt_boxes->size() == 1u);
  CHECK(s.gt_boxes->front().class_id == 0);
  CHECK_THROWS_AS(procedural_scene(spec, 8, rng), Error);
  spec.max_shapes = 0;
  CHECK_THROWS_AS(spec.validate(), Error);
}

TEST_CASE("procedural synthesis is deterministic and seed sensitive") {
  const ProceduralSynthesizer synth(ProceduralSpec::defaults());
  const Description d{"A photo of a red square in a park.", 1, true};
  const ImageSample a = synthesize(synth, d, {d.text, 1, 64, 64});
  const ImageSample b = synthesize(synth, d, {d.text, 1, 64, 64});
  const ImageSample c = synthesize(synth, d, {d.text, 2, 64, 64});
  CHECK(a.pixels == b.pixels);
  CHECK(a.pixels.width() == 64);
  CHECK(a.pixels.data().size() == 3u * 64u * 64u);
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.pixels.data().size(); ++i) diff += a.pixels.data()[i] != c.pixels.data()[i];
  CHECK(diff >= a.pixels.data().size() / 100);
  CHECK(a.class_labels == std::vector<int>{1});
  CHECK(a.description == d.text);
  CHECK(synthesize(synth, d, {d.text, 1, 48, 32}).pixels.width() == 48);
  CHECK_THROWS_AS(synthesize(synth, d, {"", 1, 64, 64}), Error);
}

TEST_CASE("textured scenes differ from flat ones") {
  ProceduralSpec spec = ProceduralSpec::defaults();
  spec.style = SceneStyle::textured;
  std::mt19937_64 rng(2);
  const ImageSample s = procedural_scene(spec, 3, rng);
  CHECK(s.pixels.valid());
  std::set<float> values(s.pixels.data().begin(), s.pixels.data().end());
  CHECK(values.size() > 50u);
}

TEST_CASE("generate_dataset writes a reproducible dataset") {
  TempDir a, b;
  const ProceduralSpec spec = ProceduralSpec::defaults();
  const ProceduralSynthesizer synth(spec);
  GenerateOptions o;
  o.n_samples = 5;
  o.seed = 42;
  const auto sa = generate_dataset(spec.vocab(), scene_lm(), synth, o, a.path());
  o.workers = 3;
  generate_dataset(spec.vocab(), scene_lm(), synth, o, b.path());
  CHECK(sa.written == 5);
  CHECK(sa.failed == 0);
  CHECK(imdet::testing::slurp(a / "manifest.jsonl") == imdet::testing::slurp(b / "manifest.jsonl"));
  CHECK(imdet::testing::slurp(a / "dataset.json") == imdet::testing::slurp(b / "dataset.json"));
  for (int i = 0; i < 5; ++i) {
    const std::string f = "images/" + std::to_string(i) + ".png";
    CHECK(imdet::testing::slurp(a / f) == imdet::testing::slurp(b / f));
  }

  const Dataset ds(a.path());
  CHECK(ds.size() == 5u);
  CHECK(ds.vocab() == spec.vocab());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const ImageSample s = ds.load(i);
    CHECK(s.provenance == Provenance::imaginary);
    REQUIRE(s.class_labels);
    CHECK(s.class_labels->size() == 1u);
    REQUIRE(s.description);
    CHECK(s.description->rfind(kPromptPrefix, 0) == 0);
    CHECK(s.seed == 42 + static_cast<std::int64_t>(i));
  }
}

TEST_CASE("real provenance labels every drawn class") {
  TempDir dir;
  const ProceduralSpec spec = ProceduralSpec::defaults();
  GenerateOptions o;
  o.n_samples = 20;
  o.provenance = Provenance::real;
  LmClientConfig lc;
  lc.enabled = false;
  generate_dataset(spec.vocab(), LmClient(lc), ProceduralSynthesizer(spec), o, dir.path());
  const Dataset ds(dir.path());
  for (const auto& r : ds.records()) {
    REQUIRE(r.gt_boxes);
    std::set<int> drawn;
    for (const auto& b : *r.gt_boxes) drawn.insert(b.class_id);
    CHECK(std::vector<int>(drawn.begin(), drawn.end()) == r.class_labels);
    CHECK_FALSE(r.description);
  }
}

TEST_CASE("class targets of a large run stay within binomial bounds") {
  TempDir dir;
  ProceduralSpec spec = ProceduralSpec::defaults();
  for (ShapeKind kind : {ShapeKind::circle, ShapeKind::square})
    spec.shape_classes.push_back({kind, {0.1f, 0.8f, 0.2f}, "green"});
  spec.width = spec.height = 32;
  REQUIRE(spec.vocab().size() == 10);
  GenerateOptions o;
  o.n_samples = 1000;
  o.seed = 3;
  o.width = o.height = 32;
  o.workers = 2;
  const auto summary = generate_dataset(spec.vocab(), scene_lm(), ProceduralSynthesizer(spec), o, dir.path());
  CHECK(summary.written == 1000);
  for (int n : summary.per_class_targets) {
    CHECK(n >= 60);
    CHECK(n <= 140);
  }
}

TEST_CASE("class subset restricts targets") {
  TempDir dir;
  const ProceduralSpec spec = ProceduralSpec::defaults();
  GenerateOptions o;
  o.n_samples = 30;
  o.class_subset = std::vector<int>{2, 5};
  const auto summary = generate_dataset(spec.vocab(), scene_lm(), ProceduralSynthesizer(spec), o, dir.path());
  for (int c = 0; c < 8; ++c)
    if (c != 2 && c != 5) CHECK(summary.per_class_targets[c] == 0);
  CHECK(Dataset(dir.path()).info().class_subset == std::vector<int>{2, 5});
  o.class_subset = std::vector<int>{9};
  CHECK_THROWS_AS(generate_dataset(spec.vocab(), scene_lm(), ProceduralSynthesizer(spec), o, dir.path()), Error);
}

TEST_CASE("zero samples is an argument error") {
  TempDir dir;
  const ProceduralSpec spec = ProceduralSpec::defaults();
  GenerateOptions o;
  try {
    generate_dataset(spec.vocab(), scene_lm(), ProceduralSynthesizer(spec), o, dir.path());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::argument);
  }
}

TEST_CASE("manifest records round trip") {
  ManifestRecord r;
  r.idx = 3;
  r.file = "images/3.png";
  r.provenance = Provenance::real;
  r.class_labels = {1, 4};
  r.gt_boxes = std::vector<LabeledBox>{{{1, 2, 3, 4}, 1}, {{5, 5, 9, 9}, 4}};
  r.seed = 17;
  const ManifestRecord back = record_from_json(to_json(r));
  CHECK(back.idx == 3);
  CHECK(back.file == r.file);
  CHECK(back.provenance == r.provenance);
  CHECK(back.class_labels == r.class_labels);
  CHECK(back.gt_boxes == r.gt_boxes);
  CHECK(back.seed == r.seed);
  CHECK_FALSE(back.description);
  CHECK_THROWS_AS(record_from_json(nlohmann::json{{"idx", 0}}), Error);
}
