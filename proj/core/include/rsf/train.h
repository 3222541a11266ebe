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

#ifndef RSF_TRAIN_H_
#define RSF_TRAIN_H_

#include <functional>
#include <span>
#include <vector>

#include "rsf/config.h"
#include "rsf/label_map.h"
#include "rsf/model.h"
#include "rsf/plg.h"

namespace rsf {

// omega_c = 1 / ln(1.05 + p_c).
double class_weight(double freq);
std::vector<double> class_weights(std::span<const double> freqs);

// Pixel frequency of each class over `labels`.
std::vector<double> class_frequencies(std::span<const LabelMap> labels,
                                      int num_classes);

inline constexpr double kLogClamp = 1e-12;

// -(1 / (N H W)) sum_pixels omega(y) log max(probs[y], 1e-12), with y the
// ground-truth class. probs: [N, C, H, W].
Tensor segmentation_loss(const Tensor& probs, std::span<const LabelMap> labels,
                         std::span<const double> weights);

// Same loss with a one-hot target [N, C, H, W].
Tensor segmentation_loss_one_hot(const Tensor& probs, const Tensor& one_hot,
                                 std::span<const double> weights);

// 0.5 e^2 for e < 1, e - 0.5 otherwise.
double smooth_l1(double e);
Tensor smooth_l1(const Tensor& e);

// Batch mean of smooth_l1(|p - p^|) summed over both modalities. conf_*
// are [N]; targets one pair per sample.
Tensor regression_loss(const Tensor& conf_rgb, const Tensor& conf_thm,
                       std::span<const PseudoLabelPair> targets);

Tensor total_loss(const Tensor& seg, const Tensor& reg, double lambda);

// lr0 (1 - iter / iter_max)^power; iter must lie in [0, iter_max].
double poly_lr(double lr0, int iter, int iter_max, double power = 0.9);

// SGD with momentum and L2 weight decay folded into the velocity:
//   v <- mu v + g + wd theta;  theta <- theta - lr v.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, double momentum, double weight_decay);
  // Consumes the accumulated gradients and clears them.
  void step(double lr);
  void zero_grad();
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
  double weight_decay_;
};

struct Batch {
  Tensor rgb;  // [N, 3, H, W] in [0, 1]
  Tensor thm;  // [N, 1, H, W] in [0, 1]
  std::vector<LabelMap> labels;
  std::vector<PseudoLabelPair> pseudo;
};

struct StepResult {
  double total = 0.0;
  double seg = 0.0;
  double reg = 0.0;
};

struct LossTerms {
  Tensor total;
  Tensor seg;
  Tensor reg;
};

// Loss of `net` on `batch` (training-mode forward), with gradients tracked.
LossTerms compute_loss(const RsfNet& net, const Batch& batch,
                       std::span<const double> weights, double lambda);

// One forward/backward/update. Throws rsf::Error on a non-finite loss.
StepResult train_step(RsfNet& net, const Batch& batch, Sgd& opt,
                      std::span<const double> weights, double lambda, double lr);

}  // namespace rsf

#endif  // RSF_TRAIN_H_
