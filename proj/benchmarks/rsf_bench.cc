/* Copyright 2026 The RSFNet Authors. All Rights Reserved.

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

#include "rsf/model.h"
#include "rsf/plg.h"
#include "rsf/reparam.h"

namespace rsf {
namespace {

void BM_Conv2d3x3(benchmark::State& state) {
  const std::int64_t c = state.range(0);
  Rng rng(1);
  ConvParams p;
  p.weight = random_normal({c, c, 3, 3}, rng, 0.1, DType::kFloat32);
  p.padding = {1, 1};
  const Tensor x = random_normal({1, c, 32, 32}, rng, 1.0, DType::kFloat32);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, p));
  state.SetItemsProcessed(state.iterations() * 2 * c * c * 9 * 32 * 32);
}
BENCHMARK(BM_Conv2d3x3)->Arg(8)->Arg(32);

// Multi-branch block versus its fused KxK conv on the same input.
void BM_BranchBlock(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const bool fused = state.range(1) != 0;
  Rng rng(2);
  const BranchBlockParams b = BranchBlockParams::random(16, k, rng, DType::kFloat32);
  const ConvParams f = fuse_branch_block(b);
  const Tensor x = random_normal({1, 16, 32, 32}, rng, 1.0, DType::kFloat32);
  NoGradGuard no_grad;
  for (auto _ : state) {
    benchmark::DoNotOptimize(fused ? conv2d(x, f) : branch_forward(x, b, false));
  }
}
BENCHMARK(BM_BranchBlock)->ArgsProduct({{3, 5}, {0, 1}})->ArgNames({"K", "fused"});

void BM_Saliency(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  Rng rng(3);
  const IntensityMap img{random_uniform({n, n}, rng, 0, 255)};
  const std::vector<int> scales{2, 4, 8};
  for (auto _ : state) benchmark::DoNotOptimize(fine_grained_saliency(img, scales));
}
BENCHMARK(BM_Saliency)->Arg(64)->Arg(256);

void BM_PseudoLabels(benchmark::State& state) {
  Rng rng(4);
  const Tensor rgb = random_uniform({3, 64, 64}, rng, 0, 255);
  const Tensor thm = random_uniform({1, 64, 64}, rng, 0, 255);
  LabelMap gt(64, 64, 0);
  for (std::int64_t i = 0; i < gt.size(); i += 3) gt.labels[i] = 1;
  for (auto _ : state) benchmark::DoNotOptimize(generate_pseudo_labels(rgb, thm, gt, 3));
}
BENCHMARK(BM_PseudoLabels);

void BM_ModelForward(benchmark::State& state) {
  const bool fused = state.range(0) != 0;
  Rng rng(5);
  RsfNet net(ModelConfig::toy(), rng);
  if (fused) net.fuse();
  const Tensor rgb = random_uniform({1, 3, 64, 64}, rng, 0, 1, DType::kFloat32);
  const Tensor thm = random_uniform({1, 1, 64, 64}, rng, 0, 1, DType::kFloat32);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(rgb, thm, false));
}
BENCHMARK(BM_ModelForward)->Arg(0)->Arg(1)->ArgName("fused")->Unit(benchmark::kMillisecond);

void BM_TrainingStepBackward(benchmark::State& state) {
  Rng rng(6);
  RsfNet net(ModelConfig::toy(), rng);
  const Tensor rgb = random_uniform({2, 3, 32, 32}, rng, 0, 1, DType::kFloat32);
  const Tensor thm = random_uniform({2, 1, 32, 32}, rng, 0, 1, DType::kFloat32);
  for (auto _ : state) {
    const ForwardResult r = net.forward(rgb, thm, true);
    mean(r.logits).backward();
  }
}
BENCHMARK(BM_TrainingStepBackward)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace rsf

BENCHMARK_MAIN();
