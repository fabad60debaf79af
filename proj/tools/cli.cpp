#include "cli.hpp"

#include <algorithm>
#include <iomanip>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "imdet/codec.hpp"
#include "imdet/config.hpp"
#include "imdet/error.hpp"
#include "imdet/evaluation.hpp"
#include "imdet/image.hpp"
#include "imdet/synthesis.hpp"
#include "imdet/training.hpp"

namespace imdet::cli {

namespace fs = std::filesystem;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::argument:
    case ErrorKind::format:
    case ErrorKind::io: return kUsage;
    case ErrorKind::transport:
    case ErrorKind::protocol: return kService;
    case ErrorKind::numeric: return kNumeric;
    case ErrorKind::invariant: return kFailure;
  }
  return kFailure;
}

template <class T>
void set_if(const std::optional<T>& flag, T& target) {
  if (flag) target = *flag;
}

struct GlobalFlags {
  std::optional<std::string> config;
  int workers = 0;
};

struct GeneratorFlags {
  std::optional<std::string> backend, endpoint, lm_endpoint, style, lm;
  std::optional<int> max_tokens, width, height, retries;
  std::optional<double> timeout;

  void add(CLI::App* app) {
    app->add_option("--backend", backend, "Image backend")->check(CLI::IsMember({"procedural", "remote"}));
    app->add_option("--endpoint", endpoint, "Generator service URL (remote backend; env IMDET_GEN_ENDPOINT)");
    app->add_option("--lm", lm, "Language-model extension")->check(CLI::IsMember({"on", "off"}));
    app->add_option("--lm-endpoint", lm_endpoint, "Language model: mock:echo | mock:scene | mock:fixed-suffix:<text> | URL");
    app->add_option("--max-tokens", max_tokens, "Maximum continuation words")->check(CLI::NonNegativeNumber);
    app->add_option("--width", width, "Image width")->check(CLI::Range(8, 4096));
    app->add_option("--height", height, "Image height")->check(CLI::Range(8, 4096));
    app->add_option("--style", style, "Procedural scene style")->check(CLI::IsMember({"flat", "textured"}));
    app->add_option("--timeout", timeout, "Service request timeout in seconds")->check(CLI::PositiveNumber);
    app->add_option("--retries", retries, "Attempts per service request")->check(CLI::PositiveNumber);
  }

  void apply(GeneratorConfig& g) const {
    set_if(backend, g.backend);
    set_if(endpoint, g.endpoint);
    set_if(lm_endpoint, g.lm);
    if (lm) g.lm_enabled = *lm == "on";
    set_if(max_tokens, g.max_tokens);
    set_if(width, g.width);
    set_if(height, g.height);
    set_if(style, g.style);
    set_if(timeout, g.timeout_s);
    set_if(retries, g.max_attempts);
    g.validate();
  }
};

struct ProposalFlags {
  std::optional<std::string> method;
  std::optional<int> max_proposals;

  void add(CLI::App* app, const char* default_note) {
    app->add_option("--proposals", method, std::string("Proposal method ") + default_note)
        ->check(CLI::IsMember({"selective_search", "grid"}));
    app->add_option("--max-proposals", max_proposals, "Proposal cap per image");
  }
  void apply(ProposalConfig& p) const {
    if (method) p.method = proposal_source_from_string(*method);
    if (max_proposals) {
      if (*max_proposals < 1) fail(ErrorKind::config, "--max-proposals must be >= 1");
      p.selective_search.max_proposals = *max_proposals;
      p.grid.max_proposals = *max_proposals;
    }
  }
};

struct Context {
  GlobalFlags global;
  std::ostream& out;
  std::ostream& err;

  RunConfig config() const {
    return load_run_config(global.config ? std::optional<fs::path>(*global.config) : std::nullopt);
  }
};

LmClient make_lm(const GeneratorConfig& g) {
  LmClientConfig c;
  c.endpoint = g.lm;
  c.enabled = g.lm_enabled;
  c.max_tokens = g.max_tokens;
  c.request_timeout_s = g.timeout_s;
  c.max_attempts = g.max_attempts;
  c.initial_backoff_s = g.initial_backoff_s;
  return LmClient(c);
}

ProceduralSpec procedural_spec(const GeneratorConfig& g) {
  ProceduralSpec spec = ProceduralSpec::defaults();
  spec.width = g.width;
  spec.height = g.height;
  spec.style = g.style == "textured" ? SceneStyle::textured : SceneStyle::flat;
  return spec;
}

GenerateSummary run_generate(Context& ctx, const GeneratorConfig& g, int n, std::int64_t seed, Provenance provenance,
                             std::optional<std::vector<int>> subset, const fs::path& out_dir) {
  const ProceduralSpec spec = procedural_spec(g);
  const ClassVocab vocab = spec.vocab();
  std::unique_ptr<Synthesizer> synth;
  if (g.backend == "remote") {
    auto remote = std::make_unique<RemoteSynthesizer>(g.endpoint, g.policy());
    ctx.out << "generator " << g.endpoint << " backend=" << remote->health() << "\n";
    synth = std::move(remote);
  } else {
    synth = std::make_unique<ProceduralSynthesizer>(spec);
  }
  GenerateOptions o;
  o.n_samples = n;
  o.seed = seed;
  o.workers = ctx.global.workers;
  o.width = g.width;
  o.height = g.height;
  o.provenance = provenance;
  o.class_subset = std::move(subset);
  const auto summary = generate_dataset(vocab, make_lm(g), *synth, o, out_dir);
  ctx.out << "wrote " << summary.written << "/" << summary.requested << " images to " << out_dir.string()
          << " (backend " << synth->backend_name() << ", lm " << (g.lm_enabled ? g.lm : "off") << ", failed "
          << summary.failed << ")\n";
  for (int c = 0; c < vocab.size(); ++c)
    ctx.out << "  " << std::left << std::setw(16) << vocab.name(c) << summary.per_class_targets[c] << "\n";
  return summary;
}

std::vector<int> parse_class_list(const std::string& text, const ClassVocab& vocab) {
  std::vector<int> ids;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (const auto found = vocab.find(item)) {
      ids.push_back(*found);
      continue;
    }
    try {
      std::size_t used = 0;
      const int id = std::stoi(item, &used);
      if (used != item.size() || !vocab.contains(id)) throw std::invalid_argument(item);
      ids.push_back(id);
    } catch (const std::logic_error&) {
      fail(ErrorKind::config, "unknown class '" + item + "'");
    }
  }
  if (ids.empty()) fail(ErrorKind::config, "--classes selects no class");
  return ids;
}

void print_report(std::ostream& out, const EvalReport& r) {
  out << std::fixed << std::setprecision(4);
  for (const auto& [c, ap] : r.per_class_ap) {
    const std::string name = c < static_cast<int>(r.class_names.size()) ? r.class_names[c] : std::to_string(c);
    out << "  " << std::left << std::setw(16) << name << " AP " << ap << "  (gt " << r.n_gt.at(c) << ")\n";
  }
  for (int c : r.excluded_classes) {
    const std::string name = c < static_cast<int>(r.class_names.size()) ? r.class_names[c] : std::to_string(c);
    out << "  " << std::left << std::setw(16) << name << " no ground truth, excluded\n";
  }
  out << "mAP@" << r.iou_threshold << " " << r.mAP << " over " << r.n_images << " images\n";
  out.unsetf(std::ios::floatfield);
}

void write_report(const std::optional<std::string>& path, const EvalReport& r, std::ostream& out) {
  if (!path) return;
  write_text(*path, to_json(r).dump(2) + "\n");
  out << "report written to " << *path << "\n";
}

struct LoadedSet {
  std::unique_ptr<Dataset> dataset;
  std::vector<ImageSample> samples;
  std::vector<std::vector<BoxF>> proposals;
};

LoadedSet load_set(const fs::path& dir, const ProposalConfig& proposals, int workers) {
  LoadedSet s;
  s.dataset = std::make_unique<Dataset>(dir);
  s.samples = s.dataset->load_all(workers);
  s.proposals = dataset_proposals(*s.dataset, s.samples, proposals, workers);
  return s;
}

// generate ---------------------------------------------------------------

void add_generate(CLI::App& app, Context& ctx) {
  auto* cmd = app.add_subcommand("generate", "Generate an imaginary (or procedural real-domain) dataset");
  struct Flags {
    GeneratorFlags gen;
    int n = 100;
    std::int64_t seed = 0;
    std::string out;
    std::string provenance = "imaginary";
    std::optional<std::string> classes;
  };
  auto f = std::make_shared<Flags>();
  f->gen.add(cmd);
  cmd->add_option("--n", f->n, "Number of images")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", f->seed, "Base seed (sample i uses seed + i)");
  cmd->add_option("--out", f->out, "Output dataset directory")->required();
  cmd->add_option("--provenance", f->provenance, "Provenance recorded in the manifest")
      ->check(CLI::IsMember({"imaginary", "real"}));
  cmd->add_option("--classes", f->classes, "Comma-separated class names or ids to sample from");
  cmd->callback([f, &ctx] {
    RunConfig config = ctx.config();
    f->gen.apply(config.generator);
    std::optional<std::vector<int>> subset;
    if (f->classes) subset = parse_class_list(*f->classes, procedural_spec(config.generator).vocab());
    run_generate(ctx, config.generator, f->n, f->seed, provenance_from_string(f->provenance), subset, f->out);
  });
}

// train ------------------------------------------------------------------

void add_train(CLI::App& app, Context& ctx) {
  auto* cmd = app.add_subcommand("train", "Train a detector (isod, wsod_mixed or ssod)");
  struct Flags {
    std::string mode;
    std::optional<std::string> imaginary, real_weak, real_boxed, real_unlabeled, init;
    std::string out;
    std::optional<int> steps, batch_size, refine_stages, burn_in, seed_int;
    std::optional<double> lr, momentum, weight_decay, ema, pgt_threshold;
    bool no_hflip = false, no_scale_jitter = false;
    int log_every = 100;
    ProposalFlags proposals;
  };
  auto f = std::make_shared<Flags>();
  cmd->add_option("--mode", f->mode, "Supervision mode")
      ->required()
      ->check(CLI::IsMember({"isod", "wsod_mixed", "ssod"}));
  cmd->add_option("--imaginary", f->imaginary, "Imaginary dataset (class labels only)");
  cmd->add_option("--real-weak", f->real_weak, "Real dataset with image-level labels (wsod_mixed)");
  cmd->add_option("--real-boxed", f->real_boxed, "Real dataset with boxes (ssod)");
  cmd->add_option("--real-unlabeled", f->real_unlabeled, "Real dataset used without annotations (ssod)");
  cmd->add_option("--out", f->out, "Run directory")->required();
  cmd->add_option("--init", f->init, "Start from this checkpoint");
  cmd->add_option("--steps", f->steps, "Optimisation steps")->check(CLI::PositiveNumber);
  cmd->add_option("--batch-size", f->batch_size, "Images per step")->check(CLI::PositiveNumber);
  cmd->add_option("--lr", f->lr, "Learning rate");
  cmd->add_option("--momentum", f->momentum, "Momentum");
  cmd->add_option("--weight-decay", f->weight_decay, "Weight decay");
  cmd->add_option("--seed", f->seed_int, "Seed");
  cmd->add_option("--refine-stages", f->refine_stages, "Refinement stages K")->check(CLI::NonNegativeNumber);
  cmd->add_option("--ema-momentum", f->ema, "Teacher EMA momentum (ssod)");
  cmd->add_option("--pgt-threshold", f->pgt_threshold, "Teacher confidence threshold for pseudo labels (ssod)");
  cmd->add_option("--burn-in", f->burn_in, "Supervised burn-in steps (ssod; default 20% of steps)");
  cmd->add_flag("--no-hflip", f->no_hflip, "Disable horizontal flips");
  cmd->add_flag("--no-scale-jitter", f->no_scale_jitter, "Disable scale jitter");
  cmd->add_option("--log-every", f->log_every, "Print losses every N steps (0 = never)");
  f->proposals.add(cmd, "(default selective_search)");
  cmd->callback([f, &ctx] {
    RunConfig config = ctx.config();
    auto& t = config.train;
    t.mode = train_mode_from_string(f->mode);
    set_if(f->steps, t.steps);
    set_if(f->batch_size, t.batch_size);
    set_if(f->lr, t.lr);
    set_if(f->momentum, t.momentum);
    set_if(f->weight_decay, t.weight_decay);
    if (f->seed_int) t.seed = static_cast<std::uint64_t>(*f->seed_int);
    set_if(f->ema, t.ema_momentum);
    set_if(f->pgt_threshold, t.pgt_confidence_threshold);
    set_if(f->burn_in, t.burn_in_steps);
    if (f->no_hflip) t.hflip = false;
    if (f->no_scale_jitter) t.scale_jitter = false;
    set_if(f->refine_stages, config.model.head.refine_stages);
    f->proposals.apply(config.proposals);
    t.workers = ctx.global.workers;

    const auto need = [&](const std::optional<std::string>& p, const char* flag) {
      if (!p) fail(ErrorKind::config, std::string("--mode ") + f->mode + " requires " + flag);
    };
    const auto forbid = [&](const std::optional<std::string>& p, const char* flag) {
      if (p) fail(ErrorKind::config, std::string("--mode ") + f->mode + " does not use " + flag);
    };
    switch (t.mode) {
      case TrainMode::isod:
        need(f->imaginary, "--imaginary");
        forbid(f->real_weak, "--real-weak");
        forbid(f->real_boxed, "--real-boxed");
        forbid(f->real_unlabeled, "--real-unlabeled");
        break;
      case TrainMode::wsod_mixed:
        if (!f->real_weak && !f->imaginary) fail(ErrorKind::config, "--mode wsod_mixed requires --real-weak and/or --imaginary");
        forbid(f->real_boxed, "--real-boxed");
        forbid(f->real_unlabeled, "--real-unlabeled");
        break;
      case TrainMode::ssod:
        need(f->real_boxed, "--real-boxed");
        forbid(f->real_weak, "--real-weak");
        break;
    }

    nlohmann::json datasets = nlohmann::json::object();
    std::optional<ClassVocab> vocab;
    auto pool = [&](const std::optional<std::string>& dir, DatasetRole role) {
      if (!dir) return TrainingPool{role, {}, {}};
      datasets[to_string(role)] = *dir;
      const Dataset ds(*dir);
      if (vocab && !(*vocab == ds.vocab()))
        fail(ErrorKind::config, "dataset " + *dir + " uses a different class vocabulary");
      vocab = ds.vocab();
      auto samples = ds.load_all(ctx.global.workers);
      auto props = dataset_proposals(ds, samples, config.proposals, ctx.global.workers);
      TrainingPool p = make_pool(role, std::move(samples), std::move(props));
      ctx.out << "loaded " << p.size() << " " << to_string(role) << " images from " << *dir << "\n";
      return p;
    };
    const TrainingPool imaginary = pool(f->imaginary, DatasetRole::imaginary);
    const TrainingPool real_weak = pool(f->real_weak, DatasetRole::real_weak);
    const TrainingPool real_boxed = pool(f->real_boxed, DatasetRole::real_boxed);
    const TrainingPool real_unlabeled = pool(f->real_unlabeled, DatasetRole::real_unlabeled);
    config.model.head.num_classes = vocab->size();
    config.validate();

    std::optional<DetectorModel> init;
    if (f->init) init = load_checkpoint(*f->init);

    const auto log = [&](const StepRecord& r) {
      if (f->log_every > 0 && (r.step % f->log_every == 0 || r.step + 1 == t.steps))
        ctx.out << "step " << r.step << " lr " << r.lr << " mil " << r.mil << " ref " << r.ref << " sup "
                << r.supervised << "\n";
    };
    reset_oracle_box_reads();
    const DetectorModel* init_ptr = init ? &*init : nullptr;
    TrainResult result;
    switch (t.mode) {
      case TrainMode::isod: result = train_isod(config.model, *vocab, t, imaginary, log, init_ptr); break;
      case TrainMode::wsod_mixed:
        result = train_wsod_mixed(config.model, *vocab, t, imaginary, real_weak, log, init_ptr);
        break;
      case TrainMode::ssod:
        result = train_ssod(config.model, *vocab, t, real_boxed, real_unlabeled, imaginary, log, init_ptr);
        break;
    }
    for (const auto& w : result.history.warnings) ctx.err << "warning: " << w << "\n";
    write_run(f->out, config, datasets, result);
    ctx.out << "trained " << result.history.steps.size() << " steps in " << std::setprecision(3)
            << result.history.wall_time_s << "s; oracle box reads " << oracle_box_reads() << "\n";
    ctx.out << "checkpoint " << (fs::path(f->out) / "checkpoint.bin").string() << " config " << config.hash() << "\n";
  });
}

// eval -------------------------------------------------------------------

void add_eval(CLI::App& app, Context& ctx) {
  auto* cmd = app.add_subcommand("eval", "Evaluate a checkpoint on an annotated dataset");
  struct Flags {
    std::string checkpoint, data;
    std::optional<std::string> out;
    std::optional<double> iou, nms, min_score;
    bool voc07 = false, force = false, teacher = false;
    ProposalFlags proposals;
  };
  auto f = std::make_shared<Flags>();
  cmd->add_option("--checkpoint", f->checkpoint, "Checkpoint file or run directory")->required();
  cmd->add_option("--data", f->data, "Annotated test dataset")->required();
  cmd->add_option("--out", f->out, "Write the report JSON here");
  cmd->add_option("--iou", f->iou, "IoU threshold for a true positive");
  cmd->add_option("--nms", f->nms, "Per-class NMS threshold");
  cmd->add_option("--min-score", f->min_score, "Minimum detection score");
  cmd->add_flag("--voc07-11point", f->voc07, "Use 11-point interpolated AP");
  cmd->add_flag("--teacher", f->teacher, "Evaluate teacher.bin of a run directory");
  cmd->add_flag("--force", f->force, "Evaluate despite a configuration mismatch");
  f->proposals.add(cmd, "(default: as trained)");
  cmd->callback([f, &ctx] {
    fs::path path = f->checkpoint;
    if (fs::is_directory(path)) path /= f->teacher ? "teacher.bin" : "checkpoint.bin";
    nlohmann::json extra;
    const DetectorModel model = load_checkpoint(path, &extra);

    RunConfig config = ctx.config();
    if (!ctx.global.config && extra.contains("proposals")) config.proposals = extra["proposals"].get<ProposalConfig>();
    f->proposals.apply(config.proposals);
    set_if(f->nms, config.detect.nms_threshold);
    set_if(f->min_score, config.detect.min_score);
    set_if(f->iou, config.eval.iou_threshold);
    if (f->voc07) config.eval.voc07_11point = true;
    config.detect.validate();

    const Dataset ds(f->data);
    std::vector<std::string> problems;
    if (!(ds.vocab() == model.vocab)) problems.push_back("dataset vocabulary differs from the checkpoint's");
    if (ctx.global.config) {
      ModelConfig expected = config.model;
      expected.head.num_classes = model.vocab.size();
      const DetectorModel probe{expected, model.vocab, {}};
      if (probe.config_hash() != model.config_hash())
        problems.push_back("checkpoint config hash " + model.config_hash() + " differs from the configured " +
                           probe.config_hash());
    }
    for (const auto& p : problems) ctx.err << (f->force ? "warning: " : "error: ") << p << "\n";
    if (!problems.empty() && !f->force) fail(ErrorKind::config, "refusing to evaluate (use --force to override)");

    auto samples = ds.load_all(ctx.global.workers);
    evaluation_ground_truth(samples);
    const auto proposals = dataset_proposals(ds, samples, config.proposals, ctx.global.workers);
    EvalOptions options;
    options.detect = config.detect;
    options.iou_threshold = config.eval.iou_threshold;
    options.mode = config.eval.voc07_11point ? ApMode::voc07 : ApMode::all_points;
    options.workers = ctx.global.workers;
    const EvalReport report = evaluate(model, samples, proposals, options);
    print_report(ctx.out, report);
    write_report(f->out, report, ctx.out);
  });
}

// baseline ---------------------------------------------------------------

void add_baseline(CLI::App& app, Context& ctx) {
  auto* cmd = app.add_subcommand("baseline", "Proposal-scoring baseline (prompt similarity per crop)");
  struct Flags {
    std::string data;
    std::string scorer = "oracle";
    std::optional<std::string> scorer_endpoint, out, method;
    std::optional<int> max_proposals, crop_size;
    std::optional<double> nms, iou;
    int random_count = 100;
    std::int64_t seed = 0;
    bool voc07 = false;
  };
  auto f = std::make_shared<Flags>();
  cmd->add_option("--data", f->data, "Annotated test dataset")->required();
  cmd->add_option("--scorer", f->scorer, "oracle | color | remote | random (random boxes, no scorer)")
      ->check(CLI::IsMember({"oracle", "color", "remote", "random"}));
  cmd->add_option("--scorer-endpoint", f->scorer_endpoint, "Scoring service URL (remote scorer)");
  cmd->add_option("--proposals", f->method, "Proposal method (default grid)")
      ->check(CLI::IsMember({"selective_search", "grid"}));
  cmd->add_option("--max-proposals", f->max_proposals, "Proposals scored per image (default 1000)");
  cmd->add_option("--crop-size", f->crop_size, "Side of the square crop given to the scorer");
  cmd->add_option("--nms", f->nms, "Per-class NMS threshold");
  cmd->add_option("--iou", f->iou, "IoU threshold for a true positive");
  cmd->add_option("--random-count", f->random_count, "Boxes per image for --scorer random")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", f->seed, "Seed for --scorer random");
  cmd->add_option("--out", f->out, "Write the report JSON here");
  cmd->add_flag("--voc07-11point", f->voc07, "Use 11-point interpolated AP");
  cmd->callback([f, &ctx] {
    RunConfig config = ctx.config();
    auto& b = config.baseline;
    set_if(f->max_proposals, b.max_proposals);
    set_if(f->crop_size, b.crop_size);
    set_if(f->nms, b.nms_threshold);
    set_if(f->iou, config.eval.iou_threshold);
    if (f->voc07) config.eval.voc07_11point = true;
    b.validate();
    ProposalConfig proposals = config.proposals;
    proposals.method = f->method ? proposal_source_from_string(*f->method) : ProposalSource::grid;
    proposals.grid.max_proposals = b.max_proposals;
    proposals.selective_search.max_proposals = b.max_proposals;

    const Dataset ds(f->data);
    auto samples = ds.load_all(ctx.global.workers);
    const auto gts = evaluation_ground_truth(samples);
    std::vector<std::vector<Detection>> dets(samples.size());
    BaselineStats stats;
    if (f->scorer == "random") {
      for (std::size_t i = 0; i < samples.size(); ++i)
        dets[i] = random_detections(samples[i].pixels.width(), samples[i].pixels.height(), ds.vocab().size(),
                                    f->random_count, static_cast<std::uint64_t>(f->seed) + i);
    } else {
      std::unique_ptr<ProposalScorer> scorer;
      if (f->scorer == "oracle") {
        scorer = std::make_unique<OracleScorer>();
      } else if (f->scorer == "color") {
        scorer = std::make_unique<ColorPromptScorer>(ColorPromptScorer::from_spec(ProceduralSpec::defaults()));
      } else {
        if (!f->scorer_endpoint) fail(ErrorKind::config, "--scorer remote requires --scorer-endpoint");
        scorer = std::make_unique<RemoteScorer>(*f->scorer_endpoint, config.generator.policy());
      }
      const auto props = dataset_proposals(ds, samples, proposals, ctx.global.workers);
      for (std::size_t i = 0; i < samples.size(); ++i)
        dets[i] = baseline_detect(*scorer, samples[i], ds.vocab(), props[i], b, &stats);
      if (stats.skipped) ctx.err << "warning: " << stats.skipped << " proposals skipped after scorer errors\n";
    }
    EvalReport report = evaluate_detections(dets, gts, ds.vocab().size(), config.eval.iou_threshold,
                                            config.eval.voc07_11point ? ApMode::voc07 : ApMode::all_points);
    report.class_names = ds.vocab().names();
    report.config_hash = json_hash({{"scorer", f->scorer},
                                    {"baseline", to_json(config).at("baseline")},
                                    {"proposals", proposals},
                                    {"random_count", f->random_count},
                                    {"seed", f->seed}});
    ctx.out << "baseline scorer " << f->scorer << " on " << to_string(proposals.method) << " proposals\n";
    print_report(ctx.out, report);
    write_report(f->out, report, ctx.out);
  });
}

// ensemble ---------------------------------------------------------------

void add_ensemble(CLI::App& app, Context& ctx) {
  auto* cmd = app.add_subcommand("ensemble", "Select classes that gained from imaginary data");
  struct Flags {
    std::string with, baseline;
    std::optional<std::string> regenerate, out;
    GeneratorFlags gen;
    int n = 100;
    std::int64_t seed = 0;
  };
  auto f = std::make_shared<Flags>();
  cmd->add_option("--with", f->with, "Report of the model trained with imaginary data")->required();
  cmd->add_option("--baseline", f->baseline, "Report of the model trained without it")->required();
  cmd->add_option("--out", f->out, "Write the selection as JSON");
  cmd->add_option("--regenerate", f->regenerate, "Generate a dataset restricted to the selected classes here");
  cmd->add_option("--n", f->n, "Images to regenerate")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", f->seed, "Seed for regeneration");
  f->gen.add(cmd);
  cmd->callback([f, &ctx] {
    const auto read_report = [](const std::string& p) {
      const auto bytes = read_file(p);
      try {
        return eval_report_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, p + ": " + e.what());
      }
    };
    const EvalReport with = read_report(f->with);
    const EvalReport base = read_report(f->baseline);
    std::vector<int> selected = select_ensemble_classes(with, base);
    const bool fallback = selected.empty();
    if (fallback) {
      ctx.err << "warning: no class improved; falling back to the full vocabulary\n";
      for (std::size_t c = 0; c < with.class_names.size(); ++c) selected.push_back(static_cast<int>(c));
    }
    nlohmann::json names = nlohmann::json::array();
    ctx.out << "selected classes:";
    for (int c : selected) {
      const std::string name = c < static_cast<int>(with.class_names.size()) ? with.class_names[c] : std::to_string(c);
      names.push_back(name);
      ctx.out << " " << name;
    }
    ctx.out << "\n";
    if (f->out)
      write_text(*f->out, nlohmann::json{{"selected", selected}, {"names", names}, {"fallback", fallback}}.dump(2) + "\n");
    if (f->regenerate) {
      RunConfig config = ctx.config();
      f->gen.apply(config.generator);
      if (procedural_spec(config.generator).vocab().names() != with.class_names)
        fail(ErrorKind::config, "report vocabulary does not match the generator vocabulary");
      run_generate(ctx, config.generator, f->n, f->seed, Provenance::imaginary, selected, *f->regenerate);
    }
  });
}

// export-features --------------------------------------------------------

void add_export(CLI::App& app, Context& ctx) {
  auto* cmd = app.add_subcommand("export-features", "Write top-proposal representations per class as CSV");
  struct Flags {
    std::string checkpoint, out;
    std::vector<std::string> data;
    int n_per_class = 10;
    ProposalFlags proposals;
  };
  auto f = std::make_shared<Flags>();
  cmd->add_option("--checkpoint", f->checkpoint, "Checkpoint file or run directory")->required();
  cmd->add_option("--data", f->data, "Datasets to draw images from (repeatable)")->required();
  cmd->add_option("--n-per-class", f->n_per_class, "Images per class and dataset")->check(CLI::PositiveNumber);
  cmd->add_option("--out", f->out, "CSV output path")->required();
  f->proposals.add(cmd, "(default: as trained)");
  cmd->callback([f, &ctx] {
    fs::path path = f->checkpoint;
    if (fs::is_directory(path)) path /= "checkpoint.bin";
    nlohmann::json extra;
    const DetectorModel model = load_checkpoint(path, &extra);
    RunConfig config = ctx.config();
    if (!ctx.global.config && extra.contains("proposals")) config.proposals = extra["proposals"].get<ProposalConfig>();
    f->proposals.apply(config.proposals);
    std::vector<LoadedSet> sets;
    for (const auto& d : f->data) {
      sets.push_back(load_set(d, config.proposals, ctx.global.workers));
      if (!(sets.back().dataset->vocab() == model.vocab))
        fail(ErrorKind::config, "dataset " + d + " vocabulary differs from the checkpoint's");
    }
    std::vector<FeatureSource> sources;
    for (const auto& s : sets) sources.push_back({&s.samples, &s.proposals});
    std::vector<std::string> warnings;
    const auto rows = export_features(model, sources, f->n_per_class, f->out, &warnings);
    for (const auto& w : warnings) ctx.err << "warning: " << w << "\n";
    ctx.out << "wrote " << rows << " feature rows to " << f->out << "\n";
  });
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context ctx{{}, out, err};
  CLI::App app{"imdet: object detectors trained from generated images"};
  app.name("imdet");
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.add_option("--config", ctx.global.config, "JSON configuration file (flags override it)");
  app.add_option("--workers", ctx.global.workers, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  add_generate(app, ctx);
  add_train(app, ctx);
  add_eval(app, ctx);
  add_baseline(app, ctx);
  add_ensemble(app, ctx);
  add_export(app, ctx);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    err << "error (format): " << e.what() << "\n";
    return kUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error (io): " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}

}  // namespace imdet::cli
