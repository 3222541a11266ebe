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

#include "rsf/reparam.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace rsf {
namespace {

ConvParams make_conv(std::int64_t cout, std::int64_t cin, std::int64_t kh,
                     std::int64_t kw, int ph, int pw, DType dtype) {
  ConvParams c;
  c.weight = Tensor::zeros({cout, cin, kh, kw}, dtype);
  c.padding = {ph, pw};
  return c;
}

void fill_he(Tensor& t, Rng& rng) {
  const double fan_in = static_cast<double>(t.numel() / t.dim(0));
  const double sd = std::sqrt(2.0 / fan_in);
  for (double& v : t.mutable_values()) v = rng.normal() * sd;
  t.quantize();
}

void randomize_bn(BatchNormParams& bn, Rng& rng) {
  for (double& v : bn.gamma.mutable_values()) v = rng.uniform(0.5, 1.5);
  for (double& v : bn.beta.mutable_values()) v = rng.uniform(-0.5, 0.5);
  for (double& v : bn.running_mean.mutable_values()) v = rng.uniform(-0.5, 0.5);
  for (double& v : bn.running_var.mutable_values()) v = rng.uniform(0.5, 2.0);
  bn.gamma.quantize();
  bn.beta.quantize();
  bn.running_mean.quantize();
  bn.running_var.quantize();
}

void expect(bool ok, const std::string& what) {
  if (!ok) throw ShapeError("branch block: " + what);
}

void expect_conv(const ConvParams& c, std::int64_t channels, std::int64_t kh,
                 std::int64_t kw, const char* name) {
  c.validate();
  expect(c.out_channels() == channels && c.in_channels() == channels,
         std::string(name) + " must map " + std::to_string(channels) + " -> " +
             std::to_string(channels) + " channels");
  expect(c.kernel_h() == kh && c.kernel_w() == kw,
         std::string(name) + " kernel must be " + std::to_string(kh) + "x" +
             std::to_string(kw));
  expect(c.stride[0] == 1 && c.stride[1] == 1,
         std::string(name) + " must have stride 1");
  expect(c.padding[0] == kh / 2 && c.padding[1] == kw / 2,
         std::string(name) + " padding must preserve spatial extents");
}

Tensor seq_forward(const Tensor& x, const SeqConvBn& s, bool training) {
  return batch_norm(conv2d(conv2d(x, s.pointwise), s.spatial), s.bn, training);
}

}  // namespace

void BranchBlockParams::validate() const {
  expect(kernel >= 1 && kernel % 2 == 1,
         "kernel size must be odd, got " + std::to_string(kernel));
  const std::int64_t c = channels();
  expect_conv(main.conv, c, kernel, kernel, "main");
  expect_conv(pointwise.conv, c, 1, 1, "pointwise");
  expect_conv(horizontal.pointwise, c, 1, 1, "horizontal 1x1");
  expect_conv(horizontal.spatial, c, 1, kernel, "horizontal 1xK");
  expect_conv(vertical.pointwise, c, 1, 1, "vertical 1x1");
  expect_conv(vertical.spatial, c, kernel, 1, "vertical Kx1");
  expect(!horizontal.pointwise.has_bias() && !vertical.pointwise.has_bias(),
         "leading 1x1 convs of the sequential branches must be bias-free");
  for (const BatchNormParams* bn :
       {&main.bn, &pointwise.bn, &horizontal.bn, &vertical.bn}) {
    bn->validate();
    expect(bn->channels() == c, "batch norm channel count mismatch");
  }
}

BranchBlockParams BranchBlockParams::zeros(std::int64_t channels, int kernel,
                                           DType dtype) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw ShapeError("branch block kernel size must be odd, got " +
                     std::to_string(kernel));
  }
  const int r = kernel / 2;
  BranchBlockParams b;
  b.kernel = kernel;
  b.main = {make_conv(channels, channels, kernel, kernel, r, r, dtype),
            BatchNormParams::identity(channels, 1e-5, dtype)};
  b.pointwise = {make_conv(channels, channels, 1, 1, 0, 0, dtype),
                 BatchNormParams::identity(channels, 1e-5, dtype)};
  b.horizontal = {make_conv(channels, channels, 1, 1, 0, 0, dtype),
                  make_conv(channels, channels, 1, kernel, 0, r, dtype),
                  BatchNormParams::identity(channels, 1e-5, dtype)};
  b.vertical = {make_conv(channels, channels, 1, 1, 0, 0, dtype),
                make_conv(channels, channels, kernel, 1, r, 0, dtype),
                BatchNormParams::identity(channels, 1e-5, dtype)};
  return b;
}

BranchBlockParams BranchBlockParams::random(std::int64_t channels, int kernel,
                                            Rng& rng, DType dtype) {
  BranchBlockParams b = zeros(channels, kernel, dtype);
  fill_he(b.main.conv.weight, rng);
  fill_he(b.pointwise.conv.weight, rng);
  fill_he(b.horizontal.pointwise.weight, rng);
  fill_he(b.horizontal.spatial.weight, rng);
  fill_he(b.vertical.pointwise.weight, rng);
  fill_he(b.vertical.spatial.weight, rng);
  randomize_bn(b.main.bn, rng);
  randomize_bn(b.pointwise.bn, rng);
  randomize_bn(b.horizontal.bn, rng);
  randomize_bn(b.vertical.bn, rng);
  return b;
}

Tensor branch_forward(const Tensor& x, const BranchBlockParams& b,
                      bool training) {
  b.validate();
  if (x.rank() != 4 || x.dim(1) != b.channels()) {
    throw ShapeError("branch_forward: input channel dimension (axis 1) of " +
                     shape_str(x.shape()) + " does not match block channels " +
                     std::to_string(b.channels()));
  }
  Tensor y = batch_norm(conv2d(x, b.main.conv), b.main.bn, training);
  y = add(y, batch_norm(conv2d(x, b.pointwise.conv), b.pointwise.bn, training));
  y = add(y, seq_forward(x, b.horizontal, training));
  y = add(y, seq_forward(x, b.vertical, training));
  return y;
}

ConvParams fold_bn(const ConvParams& conv, const BatchNormParams& bn) {
  conv.validate();
  bn.validate();
  const std::int64_t co = conv.out_channels();
  if (bn.channels() != co) {
    throw ShapeError("fold_bn: batch norm has " + std::to_string(bn.channels()) +
                     " channels but conv C_out is " + std::to_string(co));
  }
  const std::int64_t per_out = conv.weight.numel() / co;
  auto w = conv.weight.values();
  auto gamma = bn.gamma.values();
  auto beta = bn.beta.values();
  auto mu = bn.running_mean.values();
  auto var = bn.running_var.values();
  std::vector<double> nw(w.size());
  std::vector<double> nb(co);
  for (std::int64_t o = 0; o < co; ++o) {
    const double s = gamma[o] / std::sqrt(var[o] + bn.eps);
    for (std::int64_t k = 0; k < per_out; ++k) {
      nw[o * per_out + k] = w[o * per_out + k] * s;
    }
    const double b = conv.has_bias() ? conv.bias.values()[o] : 0.0;
    nb[o] = beta[o] + (b - mu[o]) * s;
  }
  const DType dtype = promote({conv.weight, bn.gamma});
  ConvParams out;
  out.weight = Tensor::from_values(conv.weight.shape(), std::move(nw), dtype);
  out.bias = Tensor::from_values({co}, std::move(nb), dtype);
  out.stride = conv.stride;
  out.padding = conv.padding;
  return out;
}

ConvParams merge_seq_pointwise(const ConvParams& k1, const ConvParams& k2) {
  k1.validate();
  k2.validate();
  if (k1.kernel_h() != 1 || k1.kernel_w() != 1) {
    throw ShapeError("merge_seq_pointwise: first kernel must be 1x1");
  }
  if (k1.padding[0] != 0 || k1.padding[1] != 0) {
    throw ShapeError("merge_seq_pointwise: first kernel must not be padded");
  }
  if (k1.stride[0] != 1 || k1.stride[1] != 1) {
    throw ShapeError("merge_seq_pointwise: first kernel must have stride 1");
  }
  if (k2.in_channels() != k1.out_channels()) {
    throw ShapeError("merge_seq_pointwise: second kernel C_in " +
                     std::to_string(k2.in_channels()) +
                     " does not match first kernel C_out " +
                     std::to_string(k1.out_channels()));
  }
  const std::int64_t co = k2.out_channels(), mid = k2.in_channels(),
                     ci = k1.in_channels(), kh = k2.kernel_h(),
                     kw = k2.kernel_w(), taps = kh * kw;
  auto w1 = k1.weight.values();
  auto w2 = k2.weight.values();
  std::vector<double> w(co * ci * taps, 0.0);
  std::vector<double> b(co, 0.0);
  for (std::int64_t o = 0; o < co; ++o) {
    for (std::int64_t m = 0; m < mid; ++m) {
      const double* w2row = w2.data() + (o * mid + m) * taps;
      for (std::int64_t i = 0; i < ci; ++i) {
        const double w1v = w1[m * ci + i];
        double* dst = w.data() + (o * ci + i) * taps;
        for (std::int64_t t = 0; t < taps; ++t) dst[t] += w2row[t] * w1v;
      }
      if (k1.has_bias()) {
        double s = 0.0;
        for (std::int64_t t = 0; t < taps; ++t) s += w2row[t];
        b[o] += s * k1.bias.values()[m];
      }
    }
    if (k2.has_bias()) b[o] += k2.bias.values()[o];
  }
  const DType dtype = promote({k1.weight, k2.weight});
  ConvParams out;
  out.weight = Tensor::from_values({co, ci, kh, kw}, std::move(w), dtype);
  if (k1.has_bias() || k2.has_bias()) {
    out.bias = Tensor::from_values({co}, std::move(b), dtype);
  }
  out.stride = k2.stride;
  out.padding = k2.padding;
  return out;
}

ConvParams zero_pad_kernel(const ConvParams& k, int kernel) {
  k.validate();
  if (kernel < 1 || kernel % 2 == 0) {
    throw ShapeError("zero_pad_kernel: target size must be odd, got " +
                     std::to_string(kernel));
  }
  const std::int64_t kh = k.kernel_h(), kw = k.kernel_w();
  if (kh > kernel || kw > kernel) {
    throw ShapeError("zero_pad_kernel: kernel " + std::to_string(kh) + "x" +
                     std::to_string(kw) + " larger than target " +
                     std::to_string(kernel));
  }
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ShapeError("zero_pad_kernel: even kernel extents cannot be centered");
  }
  const std::int64_t co = k.out_channels(), ci = k.in_channels();
  const std::int64_t oy = (kernel - kh) / 2, ox = (kernel - kw) / 2;
  auto src = k.weight.values();
  std::vector<double> w(co * ci * kernel * kernel, 0.0);
  for (std::int64_t p = 0; p < co * ci; ++p) {
    for (std::int64_t i = 0; i < kh; ++i) {
      for (std::int64_t j = 0; j < kw; ++j) {
        w[(p * kernel + oy + i) * kernel + ox + j] = src[(p * kh + i) * kw + j];
      }
    }
  }
  ConvParams out;
  out.weight =
      Tensor::from_values({co, ci, kernel, kernel}, std::move(w), k.weight.dtype());
  out.bias = k.bias.defined() ? k.bias.clone() : Tensor();
  out.stride = k.stride;
  out.padding = {kernel / 2, kernel / 2};
  return out;
}

ConvParams fuse_branch_block(const BranchBlockParams& b) {
  b.validate();
  const int k = b.kernel;
  const ConvParams parts[4] = {
      zero_pad_kernel(fold_bn(b.main.conv, b.main.bn), k),
      zero_pad_kernel(fold_bn(b.pointwise.conv, b.pointwise.bn), k),
      zero_pad_kernel(merge_seq_pointwise(b.horizontal.pointwise,
                                          fold_bn(b.horizontal.spatial,
                                                  b.horizontal.bn)),
                      k),
      zero_pad_kernel(merge_seq_pointwise(b.vertical.pointwise,
                                          fold_bn(b.vertical.spatial,
                                                  b.vertical.bn)),
                      k),
  };
  const std::int64_t c = b.channels();
  std::vector<double> w(c * c * k * k, 0.0);
  std::vector<double> bias(c, 0.0);
  for (const auto& part : parts) {
    auto pw = part.weight.values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += pw[i];
    auto pb = part.bias.values();
    for (std::int64_t o = 0; o < c; ++o) bias[o] += pb[o];
  }
  ConvParams fused;
  fused.weight = Tensor::from_values({c, c, k, k}, std::move(w), b.dtype());
  fused.bias = Tensor::from_values({c}, std::move(bias), b.dtype());
  fused.padding = {k / 2, k / 2};
  return fused;
}

BranchBlockParams wrap_as_block(const ConvParams& fused, int kernel) {
  fused.validate();
  BranchBlockParams b =
      BranchBlockParams::zeros(fused.out_channels(), kernel, fused.weight.dtype());
  b.main.conv.weight = fused.weight.clone();
  b.main.conv.bias = fused.bias.defined() ? fused.bias.clone() : Tensor();
  for (BatchNormParams* bn :
       {&b.main.bn, &b.pointwise.bn, &b.horizontal.bn, &b.vertical.bn}) {
    bn->eps = 0.0;
  }
  return b;
}

EquivalenceReport verify_equivalence(const BranchBlockParams& b,
                                     const ConvParams& fused, int trials,
                                     double tol, std::uint64_t seed,
                                     std::int64_t height, std::int64_t width,
                                     std::int64_t batch) {
  NoGradGuard no_grad;
  EquivalenceReport report;
  report.tolerance = tol;
  report.trials = trials;
  Rng rng = Rng::derive(seed, "verify_equivalence");
  double scale = 1.0;
  for (int t = 0; t < trials; ++t) {
    Tensor x = random_uniform({batch, b.channels(), height, width}, rng, -1.0,
                              1.0, b.dtype());
    Tensor ref = branch_forward(x, b, /*training=*/false);
    Tensor got = conv2d(x, fused);
    if (ref.shape() != got.shape()) {
      throw ShapeError("verify_equivalence: fused output shape " +
                       shape_str(got.shape()) + " differs from " +
                       shape_str(ref.shape()));
    }
    auto rv = ref.values();
    auto gv = got.values();
    for (std::size_t i = 0; i < rv.size(); ++i) {
      report.max_abs_deviation =
          std::max(report.max_abs_deviation, std::abs(rv[i] - gv[i]));
      scale = std::max(scale, std::abs(rv[i]));
    }
  }
  report.max_scaled_deviation = report.max_abs_deviation / scale;
  report.passed = report.max_scaled_deviation <= tol;
  return report;
}

}  // namespace rsf
