#include <benchmark/benchmark.h>

#include <random>

#include "imdet/evaluation.hpp"
#include "imdet/heads.hpp"
#include "imdet/proposals.hpp"
#include "imdet/synthesis.hpp"
#include "imdet/training.hpp"

using namespace imdet;

namespace {

ImageSample scene(std::uint64_t seed, SceneStyle style = SceneStyle::flat) {
  ProceduralSpec spec = ProceduralSpec::defaults();
  spec.style = style;
  std::mt19937_64 rng(seed);
  return procedural_scene(spec, static_cast<int>(seed % 8), rng);
}

void BM_SelectiveSearch(benchmark::State& state) {
  const ImageSample s = scene(1, state.range(0) ? SceneStyle::textured : SceneStyle::flat);
  const SelectiveSearchParams params;
  for (auto _ : state) benchmark::DoNotOptimize(selective_search(s.pixels, params));
}
BENCHMARK(BM_SelectiveSearch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_GridProposals(benchmark::State& state) {
  const ImageSample s = scene(2);
  for (auto _ : state) benchmark::DoNotOptimize(grid_proposals(s.pixels, GridParams{}));
}
BENCHMARK(BM_GridProposals);

struct ModelFixture {
  ModelConfig config;
  ModelParams params;
  ImageSample sample = scene(3);
  std::vector<BoxF> proposals;
  std::vector<int> classes{3};

  ModelFixture() {
    std::mt19937_64 rng(4);
    params = init_params(config, rng);
    proposals = grid_proposals(sample.pixels, GridParams{}).boxes;
  }
};

void BM_ProposalFeatures(benchmark::State& state) {
  const ModelFixture f;
  for (auto _ : state) benchmark::DoNotOptimize(proposal_features(f.config, f.params, f.sample.pixels, f.proposals));
  state.counters["proposals"] = static_cast<double>(f.proposals.size());
}
BENCHMARK(BM_ProposalFeatures)->Unit(benchmark::kMillisecond);

void BM_WeakLossAndGradient(benchmark::State& state) {
  const ModelFixture f;
  ModelParams grad = f.params.zeros_like();
  for (auto _ : state)
    benchmark::DoNotOptimize(weak_sample_loss(f.config, f.params, f.sample.pixels, f.proposals, f.classes, &grad));
}
BENCHMARK(BM_WeakLossAndGradient)->Unit(benchmark::kMillisecond);

void BM_MilScores(benchmark::State& state) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  Mat a(state.range(0), 8), b(state.range(0), 8);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng), b.data()[i] = g(rng);
  for (auto _ : state) benchmark::DoNotOptimize(mil_scores(a, b));
}
BENCHMARK(BM_MilScores)->Arg(50)->Arg(500);

std::vector<Detection> random_dets(int n, std::uint64_t seed) { return random_detections(64, 64, 8, n, seed); }

void BM_Nms(benchmark::State& state) {
  const auto dets = random_dets(static_cast<int>(state.range(0)), 6);
  for (auto _ : state) benchmark::DoNotOptimize(nms_per_class(dets, 0.3));
}
BENCHMARK(BM_Nms)->Arg(100)->Arg(1000);

void BM_EvaluateDetections(benchmark::State& state) {
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<LabeledBox>> gts;
  for (int i = 0; i < 100; ++i) {
    const ImageSample s = scene(100 + i);
    gts.push_back(*s.gt_boxes);
    dets.push_back(random_dets(static_cast<int>(state.range(0)), 200 + i));
  }
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_detections(dets, gts, 8));
}
BENCHMARK(BM_EvaluateDetections)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
