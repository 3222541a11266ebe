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

#ifndef RSF_EVAL_H_
#define RSF_EVAL_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rsf/dataset.h"
#include "rsf/label_map.h"
#include "rsf/model.h"

namespace rsf {

// counts[gt][pred] over evaluated pixels.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  // Throws on mismatched extents or indices outside [0, num_classes).
  void accumulate(const LabelMap& gt, const LabelMap& pred);
  void merge(const ConfusionMatrix& other);

  int num_classes() const { return classes_; }
  std::int64_t at(int gt, int pred) const { return counts_[gt * classes_ + pred]; }
  std::int64_t total() const;
  std::int64_t row_sum(int gt) const;
  std::int64_t col_sum(int pred) const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  int classes_;
  std::vector<std::int64_t> counts_;
};

struct SegMetrics {
  // Undefined entries (zero denominator) hold NaN.
  std::vector<double> acc;
  std::vector<double> iou;
  double macc = 0.0;
  double miou = 0.0;
  // Classes absent from both ground truth and prediction.
  std::vector<int> excluded;
};

// acc_c = diag / rowsum, iou_c = diag / (rowsum + colsum - diag). Means run
// over classes with a nonzero denominator; with include_unlabeled = false
// class 0 is also left out of the means.
SegMetrics macc_miou(const ConfusionMatrix& cm, bool include_unlabeled = true);

// Inference over `samples` in batches of `batch_size`.
ConfusionMatrix evaluate(const RsfNet& net, std::span<const SamplePair> samples,
                         int batch_size = 4);

struct LatencyStats {
  int trials = 0;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double stddev_ms = 0.0;
};

struct LayerCost {
  std::string name;
  std::int64_t params = 0;
  std::int64_t flops = 0;
};

// FLOPs count 2 per multiply-accumulate. Convolutions and fully connected
// layers add one FLOP per output for the bias; batch norm costs 2 FLOPs per
// element. Activations, pooling, resizing and elementwise sums are free.
struct CostReport {
  std::int64_t params = 0;
  std::int64_t flops = 0;
  std::vector<LayerCost> layers;
  std::optional<LatencyStats> latency;
};

LayerCost conv_cost(const ConvParams& c, std::int64_t out_h, std::int64_t out_w);
LayerCost batch_norm_cost(std::int64_t channels, std::int64_t h, std::int64_t w);
LayerCost linear_cost(std::int64_t in, std::int64_t out, bool bias);
CostReport branch_block_cost(const BranchBlockParams& b, std::int64_t h,
                             std::int64_t w);

// Single-image inference cost of `net` at input extents h x w.
CostReport count_cost(const RsfNet& net, std::int64_t h, std::int64_t w);
CostReport count_cost(const ModelConfig& cfg, std::int64_t h, std::int64_t w);

// Wall-clock stats of `fn` over `trials` runs after `warmup` runs.
LatencyStats bench_latency(const std::function<void()>& fn, int trials,
                           int warmup = 1);
// Single-threaded inference of one random h x w input.
LatencyStats bench_model(const RsfNet& net, std::int64_t h, std::int64_t w,
                         int trials, int warmup = 1, std::uint64_t seed = 0);

}  // namespace rsf

#endif  // RSF_EVAL_H_
