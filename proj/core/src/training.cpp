#include "imdet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "imdet/error.hpp"
#include "imdet/parallel.hpp"

namespace imdet {

const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::isod: return "isod";
    case TrainMode::wsod_mixed: return "wsod_mixed";
    case TrainMode::ssod: return "ssod";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "isod") return TrainMode::isod;
  if (s == "wsod_mixed" || s == "wsod-mixed" || s == "wsod") return TrainMode::wsod_mixed;
  if (s == "ssod") return TrainMode::ssod;
  fail(ErrorKind::config, "unknown training mode '" + s + "' (expected isod, wsod_mixed or ssod)");
}

const char* to_string(DatasetRole r) {
  switch (r) {
    case DatasetRole::imaginary: return "imaginary";
    case DatasetRole::real_weak: return "real_weak";
    case DatasetRole::real_boxed: return "real_boxed";
    case DatasetRole::real_unlabeled: return "real_unlabeled";
  }
  return "?";
}

int TrainConfig::resolved_burn_in() const {
  return burn_in_steps >= 0 ? std::min(burn_in_steps, steps) : static_cast<int>(std::lround(0.2 * steps));
}

void TrainConfig::validate() const {
  if (steps < 1) fail(ErrorKind::config, "steps must be >= 1");
  if (batch_size < 1) fail(ErrorKind::config, "batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail(ErrorKind::config, "lr must be a finite non-negative number");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorKind::config, "momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) fail(ErrorKind::config, "weight_decay must be >= 0");
  if (!(lr_decay_at >= 0.0 && lr_decay_at <= 1.0)) fail(ErrorKind::config, "lr_decay_at must lie in [0, 1]");
  if (!(lr_decay > 0.0)) fail(ErrorKind::config, "lr_decay must be positive");
  if (!(scale_min > 0.0 && scale_min <= scale_max)) fail(ErrorKind::config, "scale range must satisfy 0 < min <= max");
  if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) fail(ErrorKind::config, "ema_momentum must lie in [0, 1]");
  if (!(pgt_confidence_threshold > 0.0 && pgt_confidence_threshold < 1.0))
    fail(ErrorKind::config, "pgt_confidence_threshold must lie in (0, 1)");
  if (!(teacher_nms_threshold >= 0.0 && teacher_nms_threshold <= 1.0))
    fail(ErrorKind::config, "teacher_nms_threshold must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"mode", to_string(c.mode)},
       {"steps", c.steps},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"lr_decay_at", c.lr_decay_at},
       {"lr_decay", c.lr_decay},
       {"seed", c.seed},
       {"hflip", c.hflip},
       {"scale_jitter", c.scale_jitter},
       {"scale_range", {c.scale_min, c.scale_max}},
       {"ema_momentum", c.ema_momentum},
       {"pgt_confidence_threshold", c.pgt_confidence_threshold},
       {"burn_in_steps", c.burn_in_steps},
       {"teacher_nms_threshold", c.teacher_nms_threshold}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.mode = train_mode_from_string(j.value("mode", std::string(to_string(c.mode))));
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.lr_decay_at = j.value("lr_decay_at", c.lr_decay_at);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.seed = j.value("seed", c.seed);
  c.hflip = j.value("hflip", c.hflip);
  c.scale_jitter = j.value("scale_jitter", c.scale_jitter);
  if (j.contains("scale_range")) {
    const auto r = j["scale_range"].get<std::vector<double>>();
    if (r.size() != 2) fail(ErrorKind::config, "scale_range must be [min, max]");
    c.scale_min = r[0];
    c.scale_max = r[1];
  }
  c.ema_momentum = j.value("ema_momentum", c.ema_momentum);
  c.pgt_confidence_threshold = j.value("pgt_confidence_threshold", c.pgt_confidence_threshold);
  c.burn_in_steps = j.value("burn_in_steps", c.burn_in_steps);
  c.teacher_nms_threshold = j.value("teacher_nms_threshold", c.teacher_nms_threshold);
  c.validate();
}

TrainingPool make_pool(DatasetRole role, std::vector<ImageSample> samples, std::vector<std::vector<BoxF>> proposals) {
  if (samples.size() != proposals.size()) fail(ErrorKind::invariant, "proposal lists do not match pool samples");
  TrainingPool pool;
  pool.role = role;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& s = samples[i];
    switch (role) {
      case DatasetRole::imaginary:
      case DatasetRole::real_weak:
        if (!s.class_labels || s.class_labels->empty())
          fail(ErrorKind::config, std::string(to_string(role)) + " sample " + std::to_string(i) + " has no class labels");
        s.gt_boxes.reset();
        break;
      case DatasetRole::real_boxed:
        if (s.provenance != Provenance::real)
          fail(ErrorKind::config, "real_boxed sample " + std::to_string(i) + " is not of real provenance");
        if (!s.gt_boxes) fail(ErrorKind::config, "real_boxed sample " + std::to_string(i) + " has no gt_boxes");
        break;
      case DatasetRole::real_unlabeled:
        s.gt_boxes.reset();
        s.class_labels.reset();
        break;
    }
    if (role != DatasetRole::imaginary && s.provenance != Provenance::real)
      fail(ErrorKind::config, std::string(to_string(role)) + " sample " + std::to_string(i) + " is not of real provenance");
    if (proposals[i].empty()) continue;
    pool.samples.push_back(std::move(s));
    pool.proposals.push_back(std::move(proposals[i]));
  }
  if (!samples.empty() && pool.samples.empty())
    fail(ErrorKind::argument, std::string(to_string(role)) + ": proposal extraction failed for every sample");
  return pool;
}

std::vector<std::vector<BoxF>> dataset_proposals(const Dataset& dataset, const std::vector<ImageSample>& samples,
                                                 const ProposalConfig& config, int workers, bool use_cache) {
  const std::string key = config.cache_key();
  std::vector<std::vector<BoxF>> out(samples.size());
  parallel_for(samples.size(), workers, [&](std::size_t i) {
    const auto path = dataset.root() / "proposals" / (std::to_string(dataset.records()[i].idx) + ".json");
    if (use_cache) {
      if (auto cached = load_proposals(path, key)) {
        out[i] = std::move(cached->boxes);
        return;
      }
    }
    ProposalSet set = extract_proposals(samples[i].pixels, config);
    if (use_cache) {
      try {
        save_proposals(path, set, key);
      } catch (const Error&) {
        // read-only dataset: recompute next time
      }
    }
    out[i] = std::move(set.boxes);
  });
  return out;
}

TrainingPool load_pool(const std::filesystem::path& dir, DatasetRole role, const ProposalConfig& proposals,
                       int workers) {
  const Dataset dataset(dir);
  auto samples = dataset.load_all(workers);
  auto boxes = dataset_proposals(dataset, samples, proposals, workers);
  return make_pool(role, std::move(samples), std::move(boxes));
}

MixedSampler::MixedSampler(std::size_t imaginary, std::size_t real, TrainMode mode, std::uint64_t seed)
    : imaginary_(imaginary), real_(real), mode_(mode), rng_(seed) {
  if (imaginary_ == 0 && real_ == 0) fail(ErrorKind::config, "sampler has no data");
  if (mode_ == TrainMode::isod && imaginary_ == 0) fail(ErrorKind::config, "isod mode needs imaginary data");
}

SampleRef MixedSampler::next() {
  int source = 0;
  if (mode_ == TrainMode::isod || real_ == 0) {
    source = 0;
  } else if (imaginary_ == 0) {
    source = 1;
  } else {
    source = std::bernoulli_distribution(0.5)(rng_) ? 1 : 0;
  }
  const std::size_t n = source == 0 ? imaginary_ : real_;
  return {source, std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_)};
}

BoxF flip_box(const BoxF& b, double width) { return {width - b.x2, b.y1, width - b.x1, b.y2}; }

namespace {

BoxF scale_box(const BoxF& b, double sx, double sy, double w, double h) {
  return clip({b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy}, w, h);
}

}  // namespace

void augment(ImageSample& sample, std::vector<BoxF>& proposals, std::mt19937_64& rng, const AugmentFlags& flags,
             std::optional<bool> force_flip) {
  if (flags.scale_jitter) {
    const double u = std::uniform_real_distribution<double>(flags.scale_min, flags.scale_max)(rng);
    const int w = std::max(1, static_cast<int>(std::lround(sample.pixels.width() * u)));
    const int h = std::max(1, static_cast<int>(std::lround(sample.pixels.height() * u)));
    if (w != sample.pixels.width() || h != sample.pixels.height()) {
      const double sx = static_cast<double>(w) / sample.pixels.width();
      const double sy = static_cast<double>(h) / sample.pixels.height();
      sample.pixels = resize_bilinear(sample.pixels, w, h);
      std::vector<BoxF> kept;
      for (const auto& b : proposals) {
        const BoxF s = scale_box(b, sx, sy, w, h);
        if (s.valid()) kept.push_back(s);
      }
      proposals = std::move(kept);
      if (sample.gt_boxes) {
        std::vector<LabeledBox> boxes;
        for (const auto& g : *sample.gt_boxes) {
          const BoxF s = scale_box(g.box, sx, sy, w, h);
          if (s.valid()) boxes.push_back({s, g.class_id});
        }
        sample.gt_boxes = std::move(boxes);
      }
    }
  }
  bool flip = false;
  if (force_flip) {
    flip = *force_flip;
  } else if (flags.hflip) {
    flip = std::bernoulli_distribution(0.5)(rng);
  }
  if (flip) {
    const double w = sample.pixels.width();
    sample.pixels = flip_horizontal(sample.pixels);
    for (auto& b : proposals) b = flip_box(b, w);
    if (sample.gt_boxes)
      for (auto& g : *sample.gt_boxes) g.box = flip_box(g.box, w);
  }
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t slot) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                    static_cast<std::uint32_t>(slot), 0x1A2B3C4Du};
  return std::mt19937_64(seq);
}

nlohmann::json to_json(const StepRecord& r) {
  return {{"step", r.step},
          {"lr", r.lr},
          {"mil", r.mil},
          {"ref", r.ref},
          {"supervised", r.supervised},
          {"total", r.total},
          {"provenance", {{"imaginary", r.imaginary}, {"real", r.real}}},
          {"pseudo_labels", r.pseudo_labels}};
}

HeadLoss weak_sample_loss(const ModelConfig& config, const ModelParams& params, const Image& image,
                          std::span<const BoxF> proposals, std::span<const int> image_classes, ModelParams* grad,
                          ForwardTrace* trace) {
  ForwardTrace local;
  ForwardTrace* tr = trace ? trace : (grad ? &local : nullptr);
  const Mat features = proposal_features(config, params, image, proposals, tr);
  HeadLoss loss = weak_head_loss(config.head, params.head, features, proposals, image_classes,
                                 grad ? &grad->head : nullptr);
  if (grad) backward_features(config, params, *tr, loss.grad_features, *grad);
  return loss;
}

HeadLoss supervised_sample_loss(const ModelConfig& config, const ModelParams& params, const Image& image,
                                std::span<const BoxF> proposals, std::span<const BoxTarget> targets,
                                ModelParams* grad, ForwardTrace* trace) {
  ForwardTrace local;
  ForwardTrace* tr = trace ? trace : (grad ? &local : nullptr);
  const Mat features = proposal_features(config, params, image, proposals, tr);
  HeadLoss loss = supervised_head_loss(config.head, params.head, features, proposals, targets,
                                       grad ? &grad->head : nullptr);
  if (grad && !targets.empty()) backward_features(config, params, *tr, loss.grad_features, *grad);
  return loss;
}

void ema_update(ModelParams& teacher, const ModelParams& student, double m) {
  if (!(m >= 0.0 && m <= 1.0)) fail(ErrorKind::argument, "EMA momentum must lie in [0, 1]");
  std::vector<const Mat*> src;
  student.visit([&](const std::string&, const Mat& s) { src.push_back(&s); });
  std::size_t i = 0;
  teacher.visit([&](const std::string& name, Mat& t) {
    if (i >= src.size() || src[i]->rows() != t.rows() || src[i]->cols() != t.cols())
      fail(ErrorKind::argument, "EMA shape mismatch at " + name);
    if (m != 1.0) t = m * t + (1.0 - m) * *src[i];
    ++i;
  });
  if (i != src.size()) fail(ErrorKind::argument, "EMA parameter sets differ in size");
}

std::vector<int> select_ensemble_classes(const EvalReport& with_imaginary, const EvalReport& baseline) {
  if (with_imaginary.class_names != baseline.class_names)
    fail(ErrorKind::config, "evaluation reports use different vocabularies");
  std::vector<int> out;
  for (const auto& [c, ap] : with_imaginary.per_class_ap) {
    const auto it = baseline.per_class_ap.find(c);
    if (it == baseline.per_class_ap.end())
      fail(ErrorKind::config, "class " + std::to_string(c) + " missing from the baseline report");
    if (ap > it->second) out.push_back(c);
  }
  return out;
}

namespace {

class Sgd {
 public:
  explicit Sgd(const ModelParams& params) : velocity_(params.zeros_like()) {}

  void step(ModelParams& params, const ModelParams& grad, double lr, double momentum, double weight_decay) {
    std::vector<const Mat*> g;
    grad.visit([&](const std::string&, const Mat& m) { g.push_back(&m); });
    std::vector<Mat*> v;
    velocity_.visit([&](const std::string&, Mat& m) { v.push_back(&m); });
    std::size_t i = 0;
    params.visit([&](const std::string&, Mat& p) {
      *v[i] = momentum * *v[i] + lr * (*g[i] + weight_decay * p);
      p -= *v[i];
      ++i;
    });
  }

 private:
  ModelParams velocity_;
};

enum class JobKind { weak, supervised, pseudo };

struct Job {
  const TrainingPool* pool = nullptr;
  std::size_t index = 0;
  JobKind kind = JobKind::weak;
};

struct JobResult {
  ModelParams grad;
  HeadLoss loss;
  int pseudo_labels = 0;
};

double step_lr(const TrainConfig& c, int step) {
  const int decay_step = static_cast<int>(std::floor(c.lr_decay_at * c.steps));
  return step >= decay_step && c.lr_decay_at < 1.0 ? c.lr * c.lr_decay : c.lr;
}

DetectorModel initial_model(const ModelConfig& model, const ClassVocab& vocab, const TrainConfig& config,
                            const DetectorModel* init) {
  model.validate();
  if (vocab.size() != model.head.num_classes)
    fail(ErrorKind::config, "vocabulary has " + std::to_string(vocab.size()) + " classes but the head is configured for " +
                                std::to_string(model.head.num_classes));
  DetectorModel m = init_model(model, vocab, config.seed);
  if (init) {
    if (init->config_hash() != m.config_hash())
      fail(ErrorKind::config, "initial checkpoint was built with a different model configuration or vocabulary");
    m.params = init->params;
  }
  return m;
}

void check_labels(const TrainingPool& pool, int num_classes) {
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (pool.samples[i].class_labels)
      for (int c : *pool.samples[i].class_labels)
        if (c < 0 || c >= num_classes)
          fail(ErrorKind::config, std::string(to_string(pool.role)) + " sample " + std::to_string(i) +
                                      " has class id " + std::to_string(c) + " outside the vocabulary");
}

/// Runs one optimisation step over `jobs`. Jobs are evaluated in parallel
/// and their gradients summed in job order; each group's gradient is
/// averaged over the group's size.
StepRecord run_step(DetectorModel& student, const DetectorModel* teacher, Sgd& sgd, const TrainConfig& config,
                    int step, const std::vector<Job>& jobs) {
  const AugmentFlags flags{config.hflip, config.scale_jitter, config.scale_min, config.scale_max};
  std::vector<JobResult> results(jobs.size());
  parallel_for(jobs.size(), config.workers, [&](std::size_t j) {
    const Job& job = jobs[j];
    ImageSample sample = job.pool->samples[job.index];
    std::vector<BoxF> proposals = job.pool->proposals[job.index];
    auto rng = sample_rng(config.seed, static_cast<std::uint64_t>(step), j);
    augment(sample, proposals, rng, flags);
    auto& r = results[j];
    r.grad = student.params.zeros_like();
    if (proposals.empty()) return;
    switch (job.kind) {
      case JobKind::weak:
        r.loss = weak_sample_loss(student.config, student.params, sample.pixels, proposals, *sample.class_labels,
                                  &r.grad);
        break;
      case JobKind::supervised: {
        std::vector<BoxTarget> targets;
        if (const auto* boxes = training_boxes(sample))
          for (const auto& b : *boxes) targets.push_back({b.box, b.class_id, 1.0, -1});
        r.loss = supervised_sample_loss(student.config, student.params, sample.pixels, proposals, targets, &r.grad);
        break;
      }
      case JobKind::pseudo: {
        const DetectConfig dc{config.teacher_nms_threshold, config.pgt_confidence_threshold};
        std::vector<BoxTarget> targets;
        for (const auto& d : detect(*teacher, sample.pixels, proposals, dc))
          targets.push_back({d.box, d.class_id, d.score, -1});
        r.pseudo_labels = static_cast<int>(targets.size());
        r.loss = supervised_sample_loss(student.config, student.params, sample.pixels, proposals, targets, &r.grad);
        break;
      }
    }
  });

  std::map<JobKind, int> group_size;
  for (const auto& j : jobs) ++group_size[j.kind];

  StepRecord rec;
  rec.step = step;
  rec.lr = step_lr(config, step);
  ModelParams grad = student.params.zeros_like();
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const double scale = 1.0 / group_size[jobs[j].kind];
    const auto& l = results[j].loss;
    if (!std::isfinite(l.total))
      fail(ErrorKind::numeric, "step " + std::to_string(step) + ": non-finite loss on " +
                                   to_string(jobs[j].pool->role) + " sample " + std::to_string(jobs[j].index));
    grad.axpy(scale, results[j].grad);
    rec.mil += scale * l.mil;
    rec.ref += scale * l.ref;
    rec.supervised += scale * l.supervised;
    rec.pseudo_labels += results[j].pseudo_labels;
    if (jobs[j].pool->samples[jobs[j].index].provenance == Provenance::imaginary)
      ++rec.imaginary;
    else
      ++rec.real;
  }
  rec.total = rec.mil + rec.ref + rec.supervised;
  if (!grad.all_finite()) fail(ErrorKind::numeric, "step " + std::to_string(step) + ": non-finite gradient");
  sgd.step(student.params, grad, rec.lr, config.momentum, config.weight_decay);
  if (!student.params.all_finite())
    fail(ErrorKind::numeric, "step " + std::to_string(step) + ": parameters diverged (lr " + std::to_string(rec.lr) + ")");
  return rec;
}

TrainResult train_weak(const ModelConfig& model, const ClassVocab& vocab, const TrainConfig& config,
                       const TrainingPool& imaginary, const TrainingPool& real_weak, TrainMode mode,
                       const StepCallback& on_step, const DetectorModel* init) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  TrainResult result{initial_model(model, vocab, config, init), std::nullopt, {}};
  result.history.mode = mode;
  result.history.seed = config.seed;
  check_labels(imaginary, vocab.size());
  check_labels(real_weak, vocab.size());
  if (mode == TrainMode::wsod_mixed) {
    if (real_weak.empty()) result.history.warnings.push_back("real_weak pool is empty; training on imaginary data only");
    if (imaginary.empty()) result.history.warnings.push_back("imaginary pool is empty; training on real_weak data only");
  }
  MixedSampler sampler(imaginary.size(), mode == TrainMode::isod ? 0 : real_weak.size(), mode, config.seed);
  Sgd sgd(result.student.params);
  for (int step = 0; step < config.steps; ++step) {
    std::vector<Job> jobs;
    for (int b = 0; b < config.batch_size; ++b) {
      const SampleRef ref = sampler.next();
      jobs.push_back({ref.source == 0 ? &imaginary : &real_weak, ref.index, JobKind::weak});
    }
    result.history.steps.push_back(run_step(result.student, nullptr, sgd, config, step, jobs));
    if (on_step) on_step(result.history.steps.back());
  }
  result.history.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace

TrainResult train_isod(const ModelConfig& model, const ClassVocab& vocab, const TrainConfig& config,
                       const TrainingPool& imaginary, const StepCallback& on_step, const DetectorModel* init) {
  if (imaginary.empty()) fail(ErrorKind::config, "isod training needs a non-empty imaginary dataset");
  if (imaginary.role != DatasetRole::imaginary) fail(ErrorKind::config, "isod training needs an imaginary-role pool");
  return train_weak(model, vocab, config, imaginary, TrainingPool{DatasetRole::real_weak, {}, {}}, TrainMode::isod,
                    on_step, init);
}

TrainResult train_wsod_mixed(const ModelConfig& model, const ClassVocab& vocab, const TrainConfig& config,
                             const TrainingPool& imaginary, const TrainingPool& real_weak, const StepCallback& on_step,
                             const DetectorModel* init) {
  if (imaginary.empty() && real_weak.empty()) fail(ErrorKind::config, "wsod_mixed training needs at least one dataset");
  if (real_weak.role != DatasetRole::real_weak) fail(ErrorKind::config, "wsod_mixed expects a real_weak pool");
  return train_weak(model, vocab, config, imaginary, real_weak, TrainMode::wsod_mixed, on_step, init);
}

TrainResult train_ssod(const ModelConfig& model, const ClassVocab& vocab, const TrainConfig& config,
                       const TrainingPool& real_boxed, const TrainingPool& real_unlabeled,
                       const TrainingPool& imaginary, const StepCallback& on_step, const DetectorModel* init) {
  config.validate();
  if (real_boxed.empty()) fail(ErrorKind::config, "ssod training needs a non-empty real_boxed dataset");
  if (real_boxed.role != DatasetRole::real_boxed) fail(ErrorKind::config, "ssod expects a real_boxed pool");
  const auto start = std::chrono::steady_clock::now();
  TrainResult result{initial_model(model, vocab, config, init), std::nullopt, {}};
  result.history.mode = TrainMode::ssod;
  result.history.seed = config.seed;
  for (const auto& s : real_boxed.samples)
    for (const auto& b : *s.gt_boxes)
      if (b.class_id < 0 || b.class_id >= vocab.size()) fail(ErrorKind::config, "real_boxed box class outside vocabulary");

  std::vector<std::pair<const TrainingPool*, std::size_t>> unlabeled;
  for (const TrainingPool* p : {&real_unlabeled, &imaginary})
    for (std::size_t i = 0; i < p->size(); ++i) unlabeled.emplace_back(p, i);
  if (unlabeled.empty()) result.history.warnings.push_back("no unlabeled data; training is purely supervised");

  std::mt19937_64 rng(config.seed ^ 0x55D0D5EEDULL);
  Sgd sgd(result.student.params);
  const int burn_in = config.resolved_burn_in();
  for (int step = 0; step < config.steps; ++step) {
    if (step == burn_in && !unlabeled.empty()) result.teacher = result.student;
    std::vector<Job> jobs;
    for (int b = 0; b < config.batch_size; ++b) {
      const auto i = std::uniform_int_distribution<std::size_t>(0, real_boxed.size() - 1)(rng);
      jobs.push_back({&real_boxed, i, JobKind::supervised});
    }
    if (result.teacher) {
      for (int b = 0; b < config.batch_size; ++b) {
        const auto i = std::uniform_int_distribution<std::size_t>(0, unlabeled.size() - 1)(rng);
        jobs.push_back({unlabeled[i].first, unlabeled[i].second, JobKind::pseudo});
      }
    }
    const DetectorModel* teacher = result.teacher ? &*result.teacher : nullptr;
    result.history.steps.push_back(run_step(result.student, teacher, sgd, config, step, jobs));
    if (result.teacher) ema_update(result.teacher->params, result.student.params, config.ema_momentum);
    if (on_step) on_step(result.history.steps.back());
  }
  result.history.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::string history_text(const TrainHistory& history) {
  std::string out;
  for (const auto& r : history.steps) {
    nlohmann::json j = to_json(r);
    j["mode"] = to_string(history.mode);
    j["seed"] = history.seed;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace imdet
