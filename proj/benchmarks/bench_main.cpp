// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <torch/torch.h>

#include "osfpi/backbone.hpp"
#include "osfpi/fusion_head.hpp"
#include "osfpi/losses.hpp"
#include "osfpi/model.hpp"
#include "osfpi/rng.hpp"
#include "osfpi/synth.hpp"

namespace {

using namespace osfpi;

BackboneConfig config_for(int preset) {
  return preset == 0 ? ModelConfig::miniature().backbone : BackboneConfig{};
}

// Arg 0: miniature inputs (32 / 128 px), arg 1: default (96 / 384 px).
void BM_BackboneForward(benchmark::State& state) {
  const auto cfg = config_for(static_cast<int>(state.range(0)));
  torch::manual_seed(0);
  OsPcpvt net(cfg);
  net->eval();
  const auto u = torch::randn({1, 3, cfg.uav_input.rows, cfg.uav_input.cols});
  const auto s = torch::randn({1, 3, cfg.sat_input.rows, cfg.sat_input.cols});
  torch::NoGradGuard ng;
  for (auto _ : state) {
    benchmark::DoNotOptimize(net->forward(u, s));
  }
}
BENCHMARK(BM_BackboneForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ModelForward(benchmark::State& state) {
  const auto cfg = state.range(0) == 0 ? ModelConfig::miniature() : ModelConfig::defaults();
  auto model = make_model(cfg, 0);
  model->eval();
  const auto& b = cfg.backbone;
  const auto u = torch::randn({1, 3, b.uav_input.rows, b.uav_input.cols});
  const auto s = torch::randn({1, 3, b.sat_input.rows, b.sat_input.cols});
  torch::NoGradGuard ng;
  for (auto _ : state) {
    benchmark::DoNotOptimize(model->forward(u, s));
  }
}
BENCHMARK(BM_ModelForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

// Stage-1 sized correlation: 64 channels, 24x24 template over a 96x96 map.
void BM_GroupedCorrelation(benchmark::State& state) {
  torch::manual_seed(1);
  const auto t = torch::randn({1, 64, 24, 24});
  const auto s = torch::randn({1, 64, 96, 96});
  const auto groups = state.range(0);
  torch::NoGradGuard ng;
  for (auto _ : state) {
    benchmark::DoNotOptimize(grouped_correlation(t, s, groups));
  }
}
BENCHMARK(BM_GroupedCorrelation)->Arg(1)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_SelectPositiveSamples(benchmark::State& state) {
  const auto side = state.range(0);
  torch::manual_seed(2);
  const auto heat = torch::randn({side, side});
  const SampleLabel label{side / 2.0 + 0.3, side / 2.0 - 0.7, 33, 300};
  for (auto _ : state) {
    benchmark::DoNotOptimize(select_positive_samples(heat, label));
  }
}
BENCHMARK(BM_SelectPositiveSamples)->Arg(128)->Arg(384);

void BM_TotalLossBackward(benchmark::State& state) {
  torch::manual_seed(3);
  const std::vector<SampleLabel> labels(8, SampleLabel{190.2, 170.8, 33, 300});
  const auto h0 = torch::randn({8, 1, 384, 384});
  const auto o0 = torch::randn({8, 2, 384, 384});
  for (auto _ : state) {
    auto h = h0.clone().requires_grad_(true);
    auto o = o0.clone().requires_grad_(true);
    total_loss({h, o}, labels).total.backward();
    benchmark::DoNotOptimize(h.grad());
  }
}
BENCHMARK(BM_TotalLossBackward)->Unit(benchmark::kMillisecond);

void BM_GenerateWorld(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate_world(seed++, size));
  }
}
BENCHMARK(BM_GenerateWorld)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);

void BM_SamplePair(benchmark::State& state) {
  const auto world = generate_world(4, 2048);
  SampleOptions opts;
  Rng rng(5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(sample_pair(world, rng, 321.5, opts));
  }
}
BENCHMARK(BM_SamplePair)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
