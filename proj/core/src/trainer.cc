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

#include "rsf/trainer.h"

#include <numeric>
#include <string>

#include "rsf/train.h"

namespace rsf {

int resolve_steps(const TrainConfig& cfg, std::size_t samples) {
  if (cfg.epochs <= 0) return cfg.steps;
  const std::size_t per_epoch =
      (samples + static_cast<std::size_t>(cfg.batch_size) - 1) / cfg.batch_size;
  return static_cast<int>(per_epoch) * cfg.epochs;
}

std::vector<TrainLogEntry> train_model(RsfNet& net,
                                       std::span<const SamplePair> data,
                                       const TrainConfig& cfg,
                                       const StepCallback& on_step) {
  cfg.validate();
  if (data.empty()) throw Error("train_model: empty dataset");
  std::vector<LabelMap> labels;
  for (const SamplePair& s : data) labels.push_back(s.gt);
  const std::vector<double> weights =
      class_weights(class_frequencies(labels, net.config().num_classes));

  const int steps = resolve_steps(cfg, data.size());
  Sgd opt(net.parameters(), cfg.momentum, cfg.weight_decay);
  Rng order_rng = Rng::derive(cfg.seed, "batches");
  AugmentPolicy policy;
  policy.crop = cfg.crop_size;

  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  std::vector<TrainLogEntry> log;
  for (int step = 0; step < steps; ++step) {
    std::vector<SamplePair> batch_samples;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1],
                    order[order_rng.uniform_int(static_cast<std::int64_t>(i))]);
        }
        cursor = 0;
      }
      const SamplePair& s = data[order[cursor++]];
      if (cfg.augment || cfg.crop_size > 0) {
        AugmentPolicy p = policy;
        if (!cfg.augment) {
          p.flip = false;
          p.max_rotation_deg = 0.0;
        }
        Rng rng = Rng::derive(cfg.seed,
                              "augment/" + s.id + "/" + std::to_string(step));
        batch_samples.push_back(augment(s, rng, p));
      } else {
        batch_samples.push_back(s);
      }
    }
    std::vector<std::size_t> idx(batch_samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    const Batch batch = make_batch(batch_samples, idx);
    const double lr = poly_lr(cfg.lr, step, steps, cfg.poly_power);
    const StepResult r = train_step(net, batch, opt, weights, cfg.lambda, lr);
    log.push_back({step, lr, r.total, r.seg, r.reg});
    if (on_step) on_step(log.back(), net);
  }
  return log;
}

}  // namespace rsf
