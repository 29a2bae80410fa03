/* Copyright 2026 The FedGTST Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <benchmark/benchmark.h>

#include "fedgtst/domains.hpp"
#include "fedgtst/federation.hpp"
#include "fedgtst/models.hpp"

namespace {

using namespace fedgtst;
using models::ModelSpec;

ModelSpec spec_for(int kind) {
  switch (kind) {
    case 0: return ModelSpec::linear_regression(20);
    case 1: return ModelSpec::logistic(20, 10);
    default: return ModelSpec::mlp(20, {32}, 10, models::Activation::kTanh);
  }
}

Dataset bench_data() { return domains::generate_gaussian_mixture(10, 20, 100, 2.0, 11); }

void BM_LossAndGradient(benchmark::State& state) {
  const ModelSpec spec = spec_for(static_cast<int>(state.range(0)));
  const Dataset d = bench_data();
  const auto w = models::init_weights(spec, 3, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(models::loss_and_gradient(spec, w, d));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(d.size()));
}
BENCHMARK(BM_LossAndGradient)->Arg(0)->Arg(1)->Arg(2);

void BM_Hvp(benchmark::State& state) {
  const ModelSpec spec = spec_for(static_cast<int>(state.range(0)));
  const auto mode = state.range(1) == 0 ? models::HvpMode::kAnalytic : models::HvpMode::kFiniteDifference;
  const Dataset d = bench_data();
  const auto w = models::init_weights(spec, 3, 0.5);
  const auto v = models::init_weights(spec, 4, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(models::hvp(spec, w, d, v, mode));
}
BENCHMARK(BM_Hvp)->Args({1, 0})->Args({1, 1})->Args({2, 1});

void BM_RunRound(benchmark::State& state) {
  const Dataset d = bench_data();
  const auto plan = domains::partition_label_subset(d, 20, 2, 5);
  const auto problem = federation::make_problem(ModelSpec::logistic(20, 10), d, plan);
  federation::RoundConfig c;
  c.algorithm = static_cast<federation::Algorithm>(state.range(0));
  c.lr_schedule.initial = 0.5;
  c.xi = 1.0;
  c.threads = static_cast<int>(state.range(1));
  const auto server = federation::init_server(models::init_weights(problem.spec, 3, 0.5), 9);
  for (auto _ : state) benchmark::DoNotOptimize(federation::run_round(server, problem, c));
}
BENCHMARK(BM_RunRound)
    ->Args({static_cast<int>(federation::Algorithm::kFedAvg), 1})
    ->Args({static_cast<int>(federation::Algorithm::kFedGtst), 1})
    ->Args({static_cast<int>(federation::Algorithm::kFedGtst), 4})
    ->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
