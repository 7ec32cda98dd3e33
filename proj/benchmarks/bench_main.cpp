// Hot paths at the default model scale: one dense matmul, one masked
// attention, a forward pass, a full training step and a short sampling run.

#include <benchmark/benchmark.h>

#include <random>

#include "revealtoy/autodiff.hpp"
#include "revealtoy/masks.hpp"
#include "revealtoy/model.hpp"
#include "revealtoy/sampler.hpp"
#include "revealtoy/scene.hpp"
#include "revealtoy/train.hpp"

using namespace revealtoy;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& x : t.values()) x = n(rng);
  return t;
}

LayeredScene bench_scene() {
  return generate_scene(GeneratorConfig{}, 12345).scene;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const Var a = constant(random_tensor({n, 64}, rng)), b = constant(random_tensor({64, 64}, rng));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n) * 64 * 64);
}
BENCHMARK(BM_Matmul)->Arg(256)->Arg(1024);

void BM_RaaAttention(benchmark::State& state) {
  const LayeredScene s = bench_scene();
  const SequenceData seq = build_sequence(s, 2, 4);
  const AttentionMask mask = build_raa_mask(seq.layout);
  const std::size_t len = seq.layout.length();
  std::mt19937_64 rng(2);
  const Var q = constant(random_tensor({len, 64}, rng)), k = constant(random_tensor({len, 64}, rng)),
            v = constant(random_tensor({len, 64}, rng));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(masked_attention(q, k, v, mask.bias, 4));
  state.counters["tokens"] = static_cast<double>(len);
}
BENCHMARK(BM_RaaAttention);

void BM_Forward(benchmark::State& state) {
  const ModelConfig cfg;
  const ModelParams params = init_params(cfg, 3);
  const LayeredScene s = bench_scene();
  const SequenceData seq = build_sequence(s, cfg.patch, cfg.text_tokens);
  const PreparedLayout prep = prepare_layout(cfg, seq.layout);
  const Var z = constant(seq.stacked_latents());
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(forward(params, prep, seq.cond, z, 0.5));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  ModelParams params = init_params(ModelConfig{}, 4);
  Adam opt;
  const LayeredScene s = bench_scene();
  std::mt19937_64 rng(5);
  for (auto _ : state) benchmark::DoNotOptimize(train_step(params, opt, s, LossConfig{}, rng));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_Sample(benchmark::State& state) {
  const ModelParams params = init_params(ModelConfig{}, 6);
  const LayeredScene s = bench_scene();
  const SampleOptions opts{static_cast<std::size_t>(state.range(0)), 7, false};
  for (auto _ : state) benchmark::DoNotOptimize(sample_euler(params, s.composite, s.boxes, opts));
}
BENCHMARK(BM_Sample)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace

// libbenchmark_main.a ships LTO bytecode from a different gcc; define main here.
BENCHMARK_MAIN();
