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

#ifndef RSF_MODEL_H_
#define RSF_MODEL_H_

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rsf/checkpoint.h"
#include "rsf/config.h"
#include "rsf/label_map.h"
#include "rsf/ops.h"
#include "rsf/random.h"
#include "rsf/reparam.h"

namespace rsf {

// Basic residual block: conv3x3-BN-ReLU-conv3x3-BN plus a projected shortcut
// (1x1 conv + BN) when stride or width changes, then ReLU.
struct ResidualBlock {
  ConvBn a;
  ConvBn b;
  std::optional<ConvBn> shortcut;
};

struct EncoderBranch {
  ConvBn stem1;  // 3x3, in -> widths[0] / 2
  ConvBn stem2;  // 3x3, widths[0] / 2 -> widths[0]
  std::array<std::vector<ResidualBlock>, 4> stages;
};

// fc1: [hidden, C_4], fc2: [1, hidden].
struct ConfidenceHeadParams {
  Tensor fc1_weight;
  Tensor fc1_bias;
  Tensor fc2_weight;
  Tensor fc2_bias;
};

// Channel attention from a 1D conv over pooled channels, then a 1x1 conv
// from C_s to C~_s.
struct RecalParams {
  Tensor kernel;
  ConvParams reduce;
};

// Cross-modality path producing modality m's fused feature. `block` runs on
// the counterpart's squeezed feature to give m's spatial weight.
struct FusionParams {
  ConvBn squeeze;  // 1x1, C~_s -> C~, no bias
  BranchBlockParams block;
  std::optional<ConvParams> fused;  // set once `block` is re-parameterized
  ConvParams expand;                // 1x1, 2 C~ -> C~_s
};

struct RsfStageParams {
  RecalParams recal_rgb;
  RecalParams recal_thm;
  FusionParams rgb;
  FusionParams thm;
};

// Stage s -> s-1: 3x3 to the finer width, bilinear upsample, add the skip,
// then two 3x3 refinements. Every conv is followed by BN and ReLU.
struct DecoderBlock {
  ConvBn reduce;
  ConvBn refine1;
  ConvBn refine2;
};

struct DecoderParams {
  std::array<std::vector<DecoderBlock>, 2> streams;  // [rgb, thm], 3 each
  ConvParams classifier;                             // 1x1, C~_1 -> classes
};

struct RsfNetParams {
  EncoderBranch rgb;
  EncoderBranch thm;
  ConfidenceHeadParams head_rgb;
  ConfidenceHeadParams head_thm;
  std::array<RsfStageParams, 4> rsf;
  DecoderParams decoder;
};

// He-initialized RSF parameters for one stage: recalibration of c_rgb / c_thm
// input channels down to `reduced`, fusion with inner width `inner`.
RsfStageParams make_rsf_stage(std::int64_t c_rgb, std::int64_t c_thm,
                              std::int64_t reduced, std::int64_t inner, int kernel,
                              int recal_kernel, Rng& rng, DType dtype);

struct StageFeatures {
  Tensor f_rgb;
  Tensor f_thm;
};

// ---- Building blocks. Tensors are batched [N, C, H, W]. ----

Tensor conv_bn_relu(const Tensor& x, const ConvBn& p, bool training);
Tensor residual_forward(const Tensor& x, const ResidualBlock& p, bool training);

// Stage outputs of one branch. Strides live in the conv parameters.
std::array<Tensor, 4> encode_branch(const Tensor& x, const EncoderBranch& p,
                                    bool training);

// rgb: [N, 3, H, W], thm: [N, 1, H, W] in [0, 1]. H and W must be multiples
// of cfg.divisor().
std::array<StageFeatures, 4> encoder_forward(const Tensor& rgb, const Tensor& thm,
                                             const EncoderBranch& enc_rgb,
                                             const EncoderBranch& enc_thm,
                                             const ModelConfig& cfg,
                                             bool training);

// sigmoid(fc2(relu(fc1(GAP(f4))))) -> [N].
Tensor confidence_head(const Tensor& f4, const ConfidenceHeadParams& p);

Tensor feature_recalibration(const Tensor& f, const RecalParams& p);

// Spatial weight sigmoid(block(z)), using the fused conv when present.
Tensor fusion_spatial_weight(const Tensor& z, const FusionParams& p,
                             bool training);

// Cross-modality fusion of recalibrated features. conf_rgb / conf_thm are
// [N] gates. Returns (F^_rgb, F^_thm).
std::pair<Tensor, Tensor> rsf_forward(const Tensor& rf_rgb, const Tensor& rf_thm,
                                      const Tensor& conf_rgb,
                                      const Tensor& conf_thm,
                                      const RsfStageParams& p, GateMode gate,
                                      bool training);

// Logits [N, classes, out_h, out_w] from the enhanced stage features.
Tensor decoder_forward(const std::vector<std::pair<Tensor, Tensor>>& enhanced,
                       const DecoderParams& p, std::int64_t out_h,
                       std::int64_t out_w, bool training);

struct ForwardResult {
  Tensor logits;  // [N, classes, H, W]
  Tensor probs;   // softmax or per-channel sigmoid of logits, per config
  Tensor conf_rgb;  // [N]
  Tensor conf_thm;  // [N]
};

enum class TensorRole : std::uint8_t { kParameter, kBuffer };

using TensorVisitor =
    std::function<void(const std::string& name, Tensor& t, TensorRole role)>;

struct FuseReport {
  int blocks = 0;
  double max_abs_deviation = 0.0;
  double max_scaled_deviation = 0.0;
  double tolerance = 0.0;
  int trials = 0;
  bool passed = true;
};

class RsfNet {
 public:
  // He-initialized weights from `rng`.
  RsfNet(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  RsfNetParams& params() { return p_; }
  const RsfNetParams& params() const { return p_; }

  ForwardResult forward(const Tensor& rgb, const Tensor& thm,
                        bool training) const;

  // Per-pixel argmax over classes; ties go to the lowest index.
  std::vector<LabelMap> predict(const Tensor& rgb, const Tensor& thm) const;

  // Every tensor with a stable dotted name, in a fixed order. Fused models
  // list `.fused.weight` / `.fused.bias` in place of the branch tensors.
  void visit(const TensorVisitor& fn);
  std::vector<Tensor> parameters();
  std::int64_t parameter_count();

  // Sets every learnable tensor (including BN gamma) to zero.
  void zero_parameters();

  // Re-parameterizes every RSF branch block in place and checks each against
  // its multi-branch form. Already-fused blocks are skipped.
  FuseReport fuse(double tol = 1e-5, int trials = 3, std::uint64_t seed = 0);
  bool is_fused() const;
  const std::optional<FuseReport>& fuse_report() const { return report_; }

  // Deep copy.
  RsfNet clone() const;

  Checkpoint to_checkpoint() const;
  // Rebuilds a model (fused or not) from the stored config and tensors.
  static RsfNet from_checkpoint(const Checkpoint& ckpt);

 private:
  RsfNet() = default;

  ModelConfig cfg_;
  RsfNetParams p_;
  std::optional<FuseReport> report_;
};

// Checkpoint entries for a ModelConfig ("config/..."), and back.
void write_model_config(const ModelConfig& cfg, Checkpoint& ckpt);
ModelConfig read_model_config(const Checkpoint& ckpt);

// Argmax over axis 1 of [N, C, H, W]; lowest index on ties.
std::vector<LabelMap> argmax_labels(const Tensor& scores);

}  // namespace rsf

#endif  // RSF_MODEL_H_
