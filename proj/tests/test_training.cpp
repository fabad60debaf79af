#include <doctest.h>

#include <algorithm>
#include <random>

#include "imdet/error.hpp"
#include "imdet/synthesis.hpp"
#include "imdet/training.hpp"
#include "support.hpp"

using namespace imdet;

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.encoder.channels = {4, 8};
  m.encoder.downsample = {true, true};
  m.encoder.d = m.head.d = 16;
  return m;
}

std::vector<ImageSample> scenes(int n, std::uint64_t seed, Provenance prov) {
  ProceduralSpec spec = ProceduralSpec::defaults();
  spec.width = spec.height = 40;
  spec.min_object_px = 10;
  spec.max_object_px = 16;
  std::mt19937_64 rng(seed);
  std::vector<ImageSample> out;
  for (int i = 0; i < n; ++i) {
    const int target = static_cast<int>(rng() % 8);
    out.push_back(procedural_scene(spec, target, rng));
    out.back().provenance = prov;
    if (prov == Provenance::imaginary) out.back().class_labels = std::vector<int>{target};
  }
  return out;
}

std::vector<std::vector<BoxF>> grid_for(const std::vector<ImageSample>& samples) {
  GridParams g;
  g.scales = {12, 20};
  g.aspect_ratios = {1};
  g.stride = 8;
  std::vector<std::vector<BoxF>> out;
  for (const auto& s : samples) out.push_back(grid_proposals(s.pixels, g).boxes);
  return out;
}

TrainingPool pool(DatasetRole role, int n, std::uint64_t seed) {
  const Provenance prov = role == DatasetRole::imaginary ? Provenance::imaginary : Provenance::real;
  auto s = scenes(n, seed, prov);
  auto p = grid_for(s);
  return make_pool(role, std::move(s), std::move(p));
}

TrainConfig quick(int steps) {
  TrainConfig c;
  c.steps = steps;
  c.batch_size = 2;
  c.lr = 1e-2;
  c.seed = 7;
  return c;
}

const ClassVocab& vocab() {
  static const ClassVocab v = ProceduralSpec::defaults().vocab();
  return v;
}

std::vector<std::uint8_t> bytes(const DetectorModel& m) { return serialize_checkpoint(m); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto imag = pool(DatasetRole::imaginary, 6, 1);
  TrainConfig c = quick(1);
  c.lr = 0.0;
  const auto r = train_isod(tiny_model(), vocab(), c, imag);
  const DetectorModel init = init_model(tiny_model(), vocab(), c.seed);
  CHECK(bytes(r.student) == bytes(init));
  CHECK(std::isfinite(r.history.steps[0].total));
}

TEST_CASE("mil loss falls over 200 steps") {
  const auto imag = pool(DatasetRole::imaginary, 40, 2);
  TrainConfig c = quick(200);
  c.batch_size = 4;
  const auto r = train_isod(tiny_model(), vocab(), c, imag);
  REQUIRE(r.history.steps.size() == 200u);
  std::vector<double> first, last;
  for (int i = 0; i < 20; ++i) {
    first.push_back(r.history.steps[i].mil);
    last.push_back(r.history.steps[180 + i].mil);
  }
  CHECK(median(last) < median(first));
  CHECK(r.student.params.all_finite());
}

TEST_CASE("training is reproducible and independent of the worker count") {
  const auto imag = pool(DatasetRole::imaginary, 8, 3);
  TrainConfig c = quick(6);
  const auto a = train_isod(tiny_model(), vocab(), c, imag);
  const auto b = train_isod(tiny_model(), vocab(), c, imag);
  c.workers = 3;
  const auto d = train_isod(tiny_model(), vocab(), c, imag);
  CHECK(bytes(a.student) == bytes(b.student));
  CHECK(bytes(a.student) == bytes(d.student));
  c.seed = 8;
  CHECK(bytes(train_isod(tiny_model(), vocab(), c, imag).student) != bytes(a.student));
}

TEST_CASE("isod training never reads oracle boxes") {
  auto samples = scenes(8, 4, Provenance::imaginary);
  auto props = grid_for(samples);
  for (const auto& s : samples) REQUIRE(s.gt_boxes.has_value());
  reset_oracle_box_reads();
  const auto imag = make_pool(DatasetRole::imaginary, std::move(samples), std::move(props));
  train_isod(tiny_model(), vocab(), quick(5), imag);
  CHECK(oracle_box_reads() == 0u);
  for (const auto& s : imag.samples) CHECK_FALSE(s.gt_boxes.has_value());
}

TEST_CASE("training_boxes counts reads on imaginary samples only") {
  reset_oracle_box_reads();
  auto imag = scenes(1, 5, Provenance::imaginary);
  auto real = scenes(1, 5, Provenance::real);
  CHECK(training_boxes(real[0]) != nullptr);
  CHECK(oracle_box_reads() == 0u);
  training_boxes(imag[0]);
  CHECK(oracle_box_reads() == 1u);
  reset_oracle_box_reads();
}

TEST_CASE("make_pool enforces roles") {
  auto kind = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::invariant;
  };
  auto real = scenes(3, 6, Provenance::real);
  auto imag = scenes(3, 6, Provenance::imaginary);

  const auto weak = make_pool(DatasetRole::real_weak, real, grid_for(real));
  for (const auto& s : weak.samples) {
    CHECK_FALSE(s.gt_boxes.has_value());
    CHECK(s.class_labels.has_value());
  }
  const auto unl = make_pool(DatasetRole::real_unlabeled, real, grid_for(real));
  for (const auto& s : unl.samples) {
    CHECK_FALSE(s.gt_boxes.has_value());
    CHECK_FALSE(s.class_labels.has_value());
  }
  CHECK(make_pool(DatasetRole::real_boxed, real, grid_for(real)).samples[0].gt_boxes.has_value());

  CHECK(kind([&] { make_pool(DatasetRole::real_boxed, imag, grid_for(imag)); }) == ErrorKind::config);
  CHECK(kind([&] { make_pool(DatasetRole::real_weak, imag, grid_for(imag)); }) == ErrorKind::config);
  auto unlabelled = imag;
  unlabelled[1].class_labels.reset();
  CHECK(kind([&] { make_pool(DatasetRole::imaginary, unlabelled, grid_for(imag)); }) == ErrorKind::config);
  CHECK(kind([&] { make_pool(DatasetRole::imaginary, imag, {}); }) == ErrorKind::invariant);

  auto props = grid_for(imag);
  props[1].clear();
  CHECK(make_pool(DatasetRole::imaginary, imag, props).size() == 2u);
  for (auto& p : props) p.clear();
  CHECK(kind([&] { make_pool(DatasetRole::imaginary, imag, props); }) == ErrorKind::argument);
}

TEST_CASE("mixed sampler") {
  MixedSampler isod(5, 7, TrainMode::isod, 1);
  for (int i = 0; i < 200; ++i) {
    const auto r = isod.next();
    CHECK(r.source == 0);
    CHECK(r.index < 5u);
  }
  MixedSampler mixed(5, 7, TrainMode::wsod_mixed, 2);
  int real = 0;
  for (int i = 0; i < 4000; ++i) {
    const auto r = mixed.next();
    CHECK(r.index < (r.source ? 7u : 5u));
    real += r.source;
  }
  CHECK(real > 1800);
  CHECK(real < 2200);
  MixedSampler only_real(0, 3, TrainMode::wsod_mixed, 3);
  for (int i = 0; i < 50; ++i) CHECK(only_real.next().source == 1);
  CHECK_THROWS_AS(MixedSampler(0, 3, TrainMode::isod, 1), Error);
  CHECK_THROWS_AS(MixedSampler(0, 0, TrainMode::wsod_mixed, 1), Error);
}

TEST_CASE("wsod_mixed logs provenance counts and degrades to isod") {
  const auto imag = pool(DatasetRole::imaginary, 6, 7);
  const auto weak = pool(DatasetRole::real_weak, 6, 8);
  TrainConfig c = quick(12);
  c.batch_size = 3;
  const auto r = train_wsod_mixed(tiny_model(), vocab(), c, imag, weak);
  int real = 0;
  for (const auto& s : r.history.steps) {
    CHECK(s.imaginary + s.real == 3);
    real += s.real;
  }
  CHECK(real > 0);
  CHECK(real < 36);
  CHECK(r.history.warnings.empty());

  TrainingPool empty;
  empty.role = DatasetRole::real_weak;
  const auto solo = train_wsod_mixed(tiny_model(), vocab(), c, imag, empty);
  CHECK(solo.history.warnings.size() == 1u);
  CHECK(bytes(solo.student) == bytes(train_isod(tiny_model(), vocab(), c, imag).student));
}

TEST_CASE("flip and scale augmentation move boxes with the image") {
  CHECK(flip_box({2, 3, 7, 9}, 20) == BoxF{13, 3, 18, 9});
  CHECK(flip_box(flip_box({2, 3, 7, 9}, 20), 20) == BoxF{2, 3, 7, 9});

  auto s = scenes(1, 9, Provenance::real)[0];
  const ImageSample original = s;
  std::vector<BoxF> props = {{0, 0, 10, 10}, {5, 5, 30, 20}};
  const auto props0 = props;
  std::mt19937_64 rng(1);
  augment(s, props, rng, {}, true);
  CHECK(s.pixels.data() == flip_horizontal(original.pixels).data());
  CHECK(props[0] == flip_box(props0[0], 40));
  CHECK((*s.gt_boxes)[0].box == flip_box((*original.gt_boxes)[0].box, 40));
  augment(s, props, rng, {}, true);
  CHECK(s.pixels.data() == original.pixels.data());
  CHECK(props == props0);

  AugmentFlags jitter;
  jitter.scale_jitter = true;
  for (int t = 0; t < 20; ++t) {
    auto a = original;
    auto p = props0;
    augment(a, p, rng, jitter);
    const int w = a.pixels.width();
    CHECK(w == a.pixels.height());
    CHECK(w >= 32);
    CHECK(w <= 48);
    for (const auto& b : p) CHECK(b.within(w, w));
    CHECK(a.gt_boxes->size() <= original.gt_boxes->size());
    for (const auto& g : *a.gt_boxes) CHECK(g.box.within(w, w));
  }
}

TEST_CASE("sample_rng is keyed by seed, step and slot") {
  CHECK(sample_rng(1, 2, 3)() == sample_rng(1, 2, 3)());
  CHECK(sample_rng(1, 2, 3)() != sample_rng(1, 2, 4)());
  CHECK(sample_rng(1, 2, 3)() != sample_rng(1, 3, 3)());
  CHECK(sample_rng(1, 2, 3)() != sample_rng(2, 2, 3)());
}

TEST_CASE("ema update") {
  std::mt19937_64 rng(1);
  const ModelParams a = init_params(tiny_model(), rng);
  const ModelParams b = init_params(tiny_model(), rng);
  ModelParams t = a;
  ema_update(t, b, 1.0);
  CHECK(serialize_checkpoint({tiny_model(), vocab(), t}) == serialize_checkpoint({tiny_model(), vocab(), a}));
  ema_update(t, b, 0.0);
  CHECK(serialize_checkpoint({tiny_model(), vocab(), t}) == serialize_checkpoint({tiny_model(), vocab(), b}));
  t = a;
  ema_update(t, b, 0.25);
  std::vector<const Mat*> ta, tb, tt;
  a.visit([&](const std::string&, const Mat& m) { ta.push_back(&m); });
  b.visit([&](const std::string&, const Mat& m) { tb.push_back(&m); });
  t.visit([&](const std::string&, const Mat& m) { tt.push_back(&m); });
  for (std::size_t i = 0; i < tt.size(); ++i)
    CHECK((*tt[i] - (0.25 * *ta[i] + 0.75 * *tb[i])).cwiseAbs().maxCoeff() < 1e-15);

  ModelConfig wide = tiny_model();
  wide.encoder.d = wide.head.d = 24;
  const ModelParams w = init_params(wide, rng);
  CHECK_THROWS_AS(ema_update(t, w, 0.5), Error);
  CHECK_THROWS_AS(ema_update(t, b, 1.5), Error);
}

TEST_CASE("ssod: frozen teacher equals the burn-in student") {
  const auto boxed = pool(DatasetRole::real_boxed, 6, 10);
  const auto imag = pool(DatasetRole::imaginary, 6, 11);
  TrainingPool none;
  none.role = DatasetRole::real_unlabeled;
  TrainConfig c = quick(6);
  c.burn_in_steps = 3;
  c.lr_decay_at = 1.0;
  c.ema_momentum = 1.0;
  c.pgt_confidence_threshold = 0.2;
  const auto full = train_ssod(tiny_model(), vocab(), c, boxed, none, imag);
  REQUIRE(full.teacher.has_value());
  TrainConfig burn = c;
  burn.steps = 3;
  const auto short_run = train_ssod(tiny_model(), vocab(), burn, boxed, none, imag);
  CHECK_FALSE(short_run.teacher.has_value());
  CHECK(bytes(*full.teacher) == bytes(short_run.student));
  CHECK(bytes(full.student) != bytes(short_run.student));
}

TEST_CASE("ssod: an unreachable threshold yields no pseudo labels") {
  const auto boxed = pool(DatasetRole::real_boxed, 5, 12);
  const auto imag = pool(DatasetRole::imaginary, 5, 13);
  TrainingPool none;
  none.role = DatasetRole::real_unlabeled;
  TrainConfig c = quick(6);
  c.burn_in_steps = 2;
  c.pgt_confidence_threshold = 1.0 - 1e-12;
  const auto r = train_ssod(tiny_model(), vocab(), c, boxed, none, imag);
  for (const auto& s : r.history.steps) CHECK(s.pseudo_labels == 0);
}

TEST_CASE("ssod: no unlabeled data is supervised training with a warning") {
  const auto boxed = pool(DatasetRole::real_boxed, 5, 14);
  TrainingPool none;
  none.role = DatasetRole::real_unlabeled;
  TrainingPool no_imag;
  const auto r = train_ssod(tiny_model(), vocab(), quick(4), boxed, none, no_imag);
  CHECK(r.history.warnings.size() == 1u);
  CHECK_FALSE(r.teacher.has_value());
  for (const auto& s : r.history.steps) {
    CHECK(s.mil == 0.0);
    CHECK(s.supervised > 0.0);
  }
  TrainingPool empty_boxed;
  empty_boxed.role = DatasetRole::real_boxed;
  CHECK_THROWS_AS(train_ssod(tiny_model(), vocab(), quick(1), empty_boxed, none, no_imag), Error);
}

TEST_CASE("checkpoint round trip") {
  const DetectorModel m = init_model(tiny_model(), vocab(), 5);
  const nlohmann::json extra = {{"note", "x"}};
  const auto b = serialize_checkpoint(m, extra);
  CHECK(std::string(b.begin(), b.begin() + 8) == "IMDETCKP");
  nlohmann::json back_extra;
  const DetectorModel back = deserialize_checkpoint(b, &back_extra);
  CHECK(back_extra["note"] == "x");
  CHECK(serialize_checkpoint(back, extra) == b);
  CHECK(back.config_hash() == m.config_hash());
  auto bad = b;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad), Error);
  auto cut = b;
  cut.resize(b.size() - 3);
  CHECK_THROWS_AS(deserialize_checkpoint(cut), Error);
  imdet::testing::TempDir dir;
  save_checkpoint(dir / "m.bin", m, extra);
  CHECK(serialize_checkpoint(load_checkpoint(dir / "m.bin"), extra) == b);
}

TEST_CASE("train config json round trip and validation") {
  TrainConfig c;
  c.mode = TrainMode::ssod;
  c.steps = 17;
  c.scale_min = 0.9;
  c.burn_in_steps = 4;
  const nlohmann::json j = c;
  const TrainConfig back = j.get<TrainConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.resolved_burn_in() == 4);
  TrainConfig d;
  d.steps = 50;
  CHECK(d.resolved_burn_in() == 10);
  d.momentum = 1.0;
  CHECK_THROWS_AS(d.validate(), Error);
  CHECK(train_mode_from_string("wsod_mixed") == TrainMode::wsod_mixed);
  CHECK_THROWS_AS(train_mode_from_string("fsod"), Error);
}

TEST_CASE("ensemble class selection") {
  EvalReport with, base;
  with.class_names = base.class_names = {"a", "b", "c"};
  with.per_class_ap = {{0, 0.5}, {1, 0.2}, {2, 0.9}};
  base.per_class_ap = {{0, 0.4}, {1, 0.2}, {2, 0.95}};
  CHECK(select_ensemble_classes(with, base) == std::vector<int>{0});
  base.class_names = {"a", "b", "d"};
  CHECK_THROWS_AS(select_ensemble_classes(with, base), Error);
}
