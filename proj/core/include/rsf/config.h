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

#ifndef RSF_CONFIG_H_
#define RSF_CONFIG_H_

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "rsf/tensor.h"

namespace rsf {

// Which confidence scales modality m's cross-modality term.
enum class GateMode : std::uint8_t {
  kCounterpart = 0,  // p_hat of the other modality
  kOwn = 1,          // p_hat of m itself
  kFrozenZero = 2,   // gates fixed at 0: no cross-modality term
};

// Activation the segmentation loss is evaluated on. Prediction always uses
// the argmax of the per-channel sigmoid, which equals the logit argmax.
enum class SegActivation : std::uint8_t { kSoftmax = 0, kSigmoid = 1 };

const char* gate_mode_name(GateMode mode);
const char* seg_activation_name(SegActivation act);

struct BranchConfig {
  std::array<int, 4> widths{};
  std::array<int, 4> blocks{};
};

struct ModelConfig {
  int num_classes = 3;
  BranchConfig rgb{{16, 32, 64, 64}, {2, 2, 2, 2}};
  BranchConfig thm{{8, 16, 32, 32}, {1, 1, 1, 1}};
  // Spatial reduction of each stage relative to the previous one (stage 1
  // relative to the input). Stage 1 accepts {1, 2, 4}; later stages {1, 2}.
  std::array<int, 4> downsample{4, 2, 2, 2};
  std::array<int, 4> reduced{8, 16, 16, 16};  // C~_s
  int inner = 8;                              // C~
  int kernel = 5;                             // K
  int recal_kernel = 3;
  GateMode gate = GateMode::kCounterpart;
  SegActivation seg_activation = SegActivation::kSoftmax;
  DType dtype = DType::kFloat32;

  // Input extents must be multiples of this.
  std::int64_t divisor() const;
  void validate() const;

  static ModelConfig toy();
  static ModelConfig full();
};

struct TrainConfig {
  double lambda = 0.3;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double poly_power = 0.9;
  int epochs = 0;  // when > 0, overrides steps with epochs * batches/epoch
  int steps = 500;
  int batch_size = 4;
  int crop_size = 0;  // 0 keeps full extents
  bool augment = true;
  int checkpoint_every = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Config {
  ModelConfig model;
  TrainConfig train;
};

// Unknown keys and malformed values.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error(message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

// Applies one `key = value` setting. Lists are comma separated. The key
// `preset` (toy | full) resets every model field.
void set_config_value(Config& cfg, std::string_view key, std::string_view value);

// Parses `key = value` lines; `#` starts a comment. Throws ConfigError.
Config parse_config(std::string_view text, Config base = {});
Config load_config_file(const std::string& path, Config base = {});

// Canonical text form that parse_config reads back to the same Config.
std::string serialize_config(const Config& cfg);

}  // namespace rsf

#endif  // RSF_CONFIG_H_
