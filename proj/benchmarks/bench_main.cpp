#include <benchmark/benchmark.h>

#include "cozad/contrastive.hpp"
#include "cozad/eval.hpp"
#include "cozad/feature_io.hpp"
#include "cozad/meta.hpp"
#include "cozad/model.hpp"

#include <vector>

using namespace cozad;

static void BM_LossBackward(benchmark::State& state) {
  const auto b = state.range(0);
  const ModelParams p = init_params(64, 64, 64, 1);
  Rng rng(1);
  const Matrix batch = gaussian_matrix(b, 64, 1.0, rng);
  const Matrix noise = gaussian_matrix(b, 64, 0.015, rng);
  const std::vector<double> w(static_cast<std::size_t>(b), 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(loss_backward(p, batch, noise, w, 1e-5));
  }
  state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(BM_LossBackward)->RangeMultiplier(4)->Range(64, 4096);

static void BM_BatchContrastive(benchmark::State& state) {
  const auto b = state.range(0);
  Rng rng(2);
  const Matrix x = gaussian_matrix(b, 64, 1.0, rng);
  const Matrix aug = x + gaussian_matrix(b, 64, 0.01, rng);
  ContrastiveConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(batch_contrastive(x, aug, cfg));
  }
  state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(BM_BatchContrastive)->RangeMultiplier(4)->Range(64, 1024);

static void BM_Auroc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::normal_distribution<double> normal;
  std::vector<double> scores(n);
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<std::uint8_t>(i % 2);
    scores[i] = normal(rng) + labels[i];
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(auroc(scores, labels));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Auroc)->RangeMultiplier(8)->Range(1 << 10, 1 << 19);

static void BM_TrainEpoch(benchmark::State& state) {
  SynthConfig cfg;
  cfg.seed = 1;
  cfg.n_normal = static_cast<std::uint32_t>(state.range(0));
  cfg.feat_dim = 64;
  cfg.grid_h = 8;
  cfg.grid_w = 8;
  const FeatureDataset d = synth_generate(cfg);
  TrainOptions o;
  o.meta.epochs = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(train(d, o));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainEpoch)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

static void BM_Evaluate(benchmark::State& state) {
  SynthConfig cfg;
  cfg.seed = 1;
  cfg.n_normal = 50;
  cfg.n_anomalous = 50;
  cfg.feat_dim = 64;
  cfg.grid_h = 8;
  cfg.grid_w = 8;
  const FeatureDataset d = synth_generate(cfg);
  const ModelParams p = init_params(64, 64, 64, 1);
  const auto threads = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(evaluate(p, d, {}, threads));
  }
}
BENCHMARK(BM_Evaluate)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
