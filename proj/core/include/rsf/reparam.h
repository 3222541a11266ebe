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

#ifndef RSF_REPARAM_H_
#define RSF_REPARAM_H_

#include <cstdint>

#include "rsf/ops.h"
#include "rsf/random.h"

namespace rsf {

struct ConvBn {
  ConvParams conv;
  BatchNormParams bn;
};

// 1x1 convolution followed by a 1xK (or Kx1) convolution and batch norm.
struct SeqConvBn {
  ConvParams pointwise;
  ConvParams spatial;
  BatchNormParams bn;
};

// Training-time multi-branch KxK block: KxK, 1x1, 1x1->1xK and 1x1->Kx1
// branches, each ending in its own batch norm, summed. All branches map C
// channels to C channels at stride 1 and preserve spatial extents.
struct BranchBlockParams {
  int kernel = 5;
  ConvBn main;
  ConvBn pointwise;
  SeqConvBn horizontal;
  SeqConvBn vertical;

  std::int64_t channels() const { return main.conv.out_channels(); }
  DType dtype() const { return main.conv.weight.dtype(); }
  // Throws ShapeError/Error when the block structure is inconsistent.
  void validate() const;

  // Every weight zero, identity batch norms with beta = 0.
  static BranchBlockParams zeros(std::int64_t channels, int kernel,
                                 DType dtype = DType::kFloat64);
  // He-style random weights and non-trivial batch-norm statistics.
  static BranchBlockParams random(std::int64_t channels, int kernel, Rng& rng,
                                  DType dtype = DType::kFloat64);
};

Tensor branch_forward(const Tensor& x, const BranchBlockParams& b,
                      bool training);

// Absorbs bn into conv: W' = W * g / sqrt(var + eps), b' = beta + (b - mean) *
// g / sqrt(var + eps).
ConvParams fold_bn(const ConvParams& conv, const BatchNormParams& bn);

// Collapses a bias-carrying 1x1 conv k1 followed by k2 into one conv with
// k2's spatial extent: W'[o,i] = sum_m W2[o,m] W1[m,i], b' = sum W2 b1 + b2.
// The bias term is exact wherever k2's window does not touch zero padding;
// with a bias-free k1 the merge is exact everywhere.
ConvParams merge_seq_pointwise(const ConvParams& k1, const ConvParams& k2);

// Centers an odd-extent kernel inside a KxK kernel and sets "same" padding.
ConvParams zero_pad_kernel(const ConvParams& k, int kernel);

// fold_bn on every branch, merge the sequential pairs, pad to KxK, sum.
ConvParams fuse_branch_block(const BranchBlockParams& b);

// Puts `fused` in the KxK branch behind an exact identity batch norm
// (eps = 0) with every other branch zeroed.
BranchBlockParams wrap_as_block(const ConvParams& fused, int kernel);

struct EquivalenceReport {
  double max_abs_deviation = 0.0;
  // max_abs_deviation / max(1, max |reference output|).
  double max_scaled_deviation = 0.0;
  double tolerance = 0.0;
  int trials = 0;
  bool passed = false;
};

// Compares branch_forward (inference mode) against conv2d(fused) on `trials`
// random inputs of shape [batch, C, height, width] in the block's dtype.
// Passes when the scaled deviation is within tol, which equals the absolute
// test whenever the reference outputs stay within [-1, 1].
EquivalenceReport verify_equivalence(const BranchBlockParams& b,
                                     const ConvParams& fused, int trials,
                                     double tol, std::uint64_t seed = 0,
                                     std::int64_t height = 8,
                                     std::int64_t width = 8,
                                     std::int64_t batch = 2);

}  // namespace rsf

#endif  // RSF_REPARAM_H_
