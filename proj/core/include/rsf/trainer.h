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

#ifndef RSF_TRAINER_H_
#define RSF_TRAINER_H_

#include <functional>
#include <span>
#include <vector>

#include "rsf/config.h"
#include "rsf/dataset.h"
#include "rsf/model.h"

namespace rsf {

struct TrainLogEntry {
  int step = 0;
  double lr = 0.0;
  double total = 0.0;
  double seg = 0.0;
  double reg = 0.0;
};

// Step budget implied by cfg for a dataset of `samples` items.
int resolve_steps(const TrainConfig& cfg, std::size_t samples);

using StepCallback = std::function<void(const TrainLogEntry&, RsfNet&)>;

// SGD with poly decay over shuffled mini-batches. Batch order and augment
// draws derive from cfg.seed, so equal inputs give equal logs. Samples must
// carry pseudo labels.
std::vector<TrainLogEntry> train_model(RsfNet& net,
                                       std::span<const SamplePair> data,
                                       const TrainConfig& cfg,
                                       const StepCallback& on_step = {});

}  // namespace rsf

#endif  // RSF_TRAINER_H_
