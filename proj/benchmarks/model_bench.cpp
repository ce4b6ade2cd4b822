// Copyright 2026 The autous Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <benchmark/benchmark.h>

#include <memory>
#include <span>
#include <vector>

#include "autous/ctu_net.hpp"
#include "autous/rng.hpp"
#include "autous/train_eval.hpp"

namespace {

using autous::Rng;
using autous::Tensor;
using autous::model::CtuNet;
using autous::model::ModelConfig;

ModelConfig Preset(int which) { return which == 0 ? ModelConfig::Tiny() : ModelConfig::Desk(); }

Tensor<float> RandomBatch(const ModelConfig& cfg, std::size_t batch) {
  Rng rng(1);
  Tensor<float> x({batch, static_cast<std::size_t>(cfg.input.frames), static_cast<std::size_t>(cfg.input.height),
                   static_cast<std::size_t>(cfg.input.width), static_cast<std::size_t>(cfg.input.channels)});
  for (auto& v : x.values()) v = static_cast<float>(rng.Uniform());
  return x;
}

void BM_Predict(benchmark::State& state) {
  ModelConfig cfg = Preset(static_cast<int>(state.range(0)));
  CtuNet<float> net(cfg);
  Tensor<float> x = RandomBatch(cfg, static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(net.Predict(x));
  state.SetItemsProcessed(state.iterations() * state.range(1));
}
BENCHMARK(BM_Predict)->ArgNames({"desk", "batch"})->Args({0, 1})->Args({1, 1})->Args({1, 4});

void BM_ForwardBackward(benchmark::State& state) {
  ModelConfig cfg = Preset(static_cast<int>(state.range(0)));
  CtuNet<float> net(cfg);
  Tensor<float> x = RandomBatch(cfg, 4);
  std::vector<int> labels = {0, 1, 2, 3};
  for (auto _ : state) {
    auto r = net.Forward(x, {.training = true}, true);
    Tensor<float> d;
    autous::model::CrossEntropy(r.prediction, labels, &d);
    benchmark::DoNotOptimize(net.Backward(*r.trace, d));
  }
}
BENCHMARK(BM_ForwardBackward)->ArgName("desk")->Arg(0)->Arg(1);

void BM_RfftMagnitude(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(2);
  std::vector<double> plane(static_cast<std::size_t>(n * n));
  for (double& v : plane) v = rng.Uniform();
  for (auto _ : state) benchmark::DoNotOptimize(autous::model::RfftMagnitude(plane, n, n));
}
BENCHMARK(BM_RfftMagnitude)->Arg(32)->Arg(224);

void BM_Auc(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<double> scores(n);
  std::unique_ptr<bool[]> pos(new bool[n]);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = rng.Uniform();
    pos[i] = rng.Uniform() < 0.3;
  }
  std::span<const bool> positive(pos.get(), n);
  for (auto _ : state) benchmark::DoNotOptimize(autous::train::AucOneVsRest(scores, positive));
}
BENCHMARK(BM_Auc)->Arg(100)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
