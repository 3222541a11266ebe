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

#ifndef RSF_OPS_H_
#define RSF_OPS_H_

#include <array>
#include <cstdint>
#include <vector>

#include "rsf/tensor.h"

namespace rsf {

// Learnable 2D convolution. weight is [C_out, C_in, K_h, K_w]; bias, when
// defined, is [C_out].
struct ConvParams {
  Tensor weight;
  Tensor bias;
  std::array<int, 2> stride{1, 1};
  std::array<int, 2> padding{0, 0};

  std::int64_t out_channels() const { return weight.dim(0); }
  std::int64_t in_channels() const { return weight.dim(1); }
  std::int64_t kernel_h() const { return weight.dim(2); }
  std::int64_t kernel_w() const { return weight.dim(3); }
  bool has_bias() const { return bias.defined(); }
  void validate() const;
};

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  std::int64_t channels() const { return gamma.numel(); }
  void validate() const;

  // gamma=1, beta=0, mean=0, var=1.
  static BatchNormParams identity(std::int64_t channels, double eps = 1e-5,
                                  DType dtype = DType::kFloat64);
};

// Cross-correlation (no kernel flip) over x:[N, C_in, H, W].
Tensor conv2d(const Tensor& x, const ConvParams& p);

// Zero-padded 1D convolution along the channel axis of v:[N, C] with an
// odd-length kernel:[k].
Tensor conv1d_channel(const Tensor& v, const Tensor& kernel);

// [N, C, H, W] -> [N, C].
Tensor global_avg_pool(const Tensor& x);

// Half-pixel-center bilinear resampling (align_corners = false).
Tensor bilinear_resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w);

// Training mode normalizes with batch statistics and updates the running
// statistics in p; inference mode uses the running statistics.
Tensor batch_norm(const Tensor& x, const BatchNormParams& p, bool training);

// Numpy-style broadcasting (trailing-aligned; extent-1 axes stretch).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Concatenate / slice along axis 1 of rank >= 2 tensors.
Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor slice_channels(const Tensor& x, std::int64_t begin, std::int64_t count);

// x:[N, in], weight:[out, in], bias:[out] (optional) -> [N, out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor reshape(const Tensor& x, Shape shape);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Softmax over axis 1 of [N, C, ...].
Tensor softmax_channels(const Tensor& x);

// Tallies FLOPs (2 per multiply-accumulate, 1 per bias add, 2 per batch-norm
// element) of conv2d, conv1d_channel, linear and batch_norm executed on this
// thread while alive. Counters nest; the innermost one receives the counts.
class FlopCounter {
 public:
  FlopCounter();
  ~FlopCounter();
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;

  std::int64_t flops() const { return flops_; }
  static void record(std::int64_t flops);

 private:
  std::int64_t flops_ = 0;
  FlopCounter* prev_;
};

// Shape of broadcasting a against b; throws ShapeError when incompatible.
Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace rsf

#endif  // RSF_OPS_H_
