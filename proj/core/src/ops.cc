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

#include "rsf/ops.h"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "rsf/parallel.h"

namespace rsf {
namespace {

void require_rank(const Tensor& x, int rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + " input, got shape " +
                     shape_str(x.shape()));
  }
}

thread_local FlopCounter* active_counter = nullptr;

using SharedValues = std::shared_ptr<const std::vector<double>>;

SharedValues share(std::span<const double> v) {
  return std::make_shared<const std::vector<double>>(v.begin(), v.end());
}

// Unfolds one [C, H, W] image into a [C*Kh*Kw, Ho*Wo] column matrix.
void im2col(const double* img, std::int64_t channels, std::int64_t height,
            std::int64_t width, std::int64_t kh, std::int64_t kw, int sh,
            int sw, int ph, int pw, std::int64_t out_h, std::int64_t out_w,
            double* col) {
  const std::int64_t plane = out_h * out_w;
  for (std::int64_t c = 0; c < channels; ++c) {
    const double* src = img + c * height * width;
    for (std::int64_t i = 0; i < kh; ++i) {
      for (std::int64_t j = 0; j < kw; ++j) {
        double* dst = col + ((c * kh + i) * kw + j) * plane;
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
          const std::int64_t y = oy * sh - ph + i;
          double* row = dst + oy * out_w;
          if (y < 0 || y >= height) {
            std::fill(row, row + out_w, 0.0);
            continue;
          }
          const double* src_row = src + y * width;
          for (std::int64_t ox = 0; ox < out_w; ++ox) {
            const std::int64_t x = ox * sw - pw + j;
            row[ox] = (x >= 0 && x < width) ? src_row[x] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column gradients back onto the image.
void col2im(const double* col, std::int64_t channels, std::int64_t height,
            std::int64_t width, std::int64_t kh, std::int64_t kw, int sh,
            int sw, int ph, int pw, std::int64_t out_h, std::int64_t out_w,
            double* img) {
  const std::int64_t plane = out_h * out_w;
  for (std::int64_t c = 0; c < channels; ++c) {
    double* dst = img + c * height * width;
    for (std::int64_t i = 0; i < kh; ++i) {
      for (std::int64_t j = 0; j < kw; ++j) {
        const double* src = col + ((c * kh + i) * kw + j) * plane;
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
          const std::int64_t y = oy * sh - ph + i;
          if (y < 0 || y >= height) continue;
          double* dst_row = dst + y * width;
          const double* row = src + oy * out_w;
          for (std::int64_t ox = 0; ox < out_w; ++ox) {
            const std::int64_t x = ox * sw - pw + j;
            if (x >= 0 && x < width) dst_row[x] += row[ox];
          }
        }
      }
    }
  }
}

// Broadcast iteration: calls fn(out_index, a_index, b_index) for every output
// element. Strides of broadcast axes are zero.
struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> stride_a;
  std::vector<std::int64_t> stride_b;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  plan.out = broadcast_shape(a, b);
  const std::size_t rank = plan.out.size();
  auto strides_for = [&](const Shape& s) {
    std::vector<std::int64_t> st(rank, 0);
    std::int64_t acc = 1;
    for (std::size_t k = 0; k < s.size(); ++k) {
      std::size_t axis_in = s.size() - 1 - k;
      std::size_t axis_out = rank - 1 - k;
      st[axis_out] = s[axis_in] == 1 ? 0 : acc;
      acc *= s[axis_in];
    }
    return st;
  };
  plan.stride_a = strides_for(a);
  plan.stride_b = strides_for(b);
  return plan;
}

template <typename Fn>
void for_each_broadcast(const BroadcastPlan& plan, Fn&& fn) {
  const std::size_t rank = plan.out.size();
  const std::int64_t inner = plan.out[rank - 1];
  const std::int64_t inner_a = plan.stride_a[rank - 1];
  const std::int64_t inner_b = plan.stride_b[rank - 1];
  const std::int64_t outer = numel(plan.out) / inner;
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t ia = 0, ib = 0, io = 0;
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t k = 0; k < inner; ++k) {
      fn(io + k, ia + k * inner_a, ib + k * inner_b);
    }
    io += inner;
    // Advance the odometer over the outer axes.
    for (int axis = static_cast<int>(rank) - 2; axis >= 0; --axis) {
      ++idx[axis];
      ia += plan.stride_a[axis];
      ib += plan.stride_b[axis];
      if (idx[axis] < plan.out[axis]) break;
      ia -= plan.stride_a[axis] * idx[axis];
      ib -= plan.stride_b[axis] * idx[axis];
      idx[axis] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const DType dtype = promote({a, b});
  if (a.shape() == b.shape()) {
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      switch (kind) {
        case BinaryKind::kAdd: out[i] = av[i] + bv[i]; break;
        case BinaryKind::kSub: out[i] = av[i] - bv[i]; break;
        case BinaryKind::kMul: out[i] = av[i] * bv[i]; break;
      }
    }
    SharedValues a_vals, b_vals;
    if (kind == BinaryKind::kMul && grad_enabled()) {
      if (b.requires_grad()) a_vals = share(av);
      if (a.requires_grad()) b_vals = share(bv);
    }
    return make_result(
        a.shape(), dtype, std::move(out), {a, b},
        [a, b, kind, a_vals, b_vals](std::span<const double> g) mutable {
          if (a.requires_grad()) {
            auto ga = a.grad_sink();
            for (std::size_t i = 0; i < g.size(); ++i) {
              ga[i] += kind == BinaryKind::kMul ? g[i] * (*b_vals)[i] : g[i];
            }
          }
          if (b.requires_grad()) {
            auto gb = b.grad_sink();
            for (std::size_t i = 0; i < g.size(); ++i) {
              switch (kind) {
                case BinaryKind::kAdd: gb[i] += g[i]; break;
                case BinaryKind::kSub: gb[i] -= g[i]; break;
                case BinaryKind::kMul: gb[i] += g[i] * (*a_vals)[i]; break;
              }
            }
          }
        });
  }

  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(a.shape(), b.shape()));
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(numel(plan->out));
  for_each_broadcast(*plan, [&](std::int64_t o, std::int64_t i, std::int64_t j) {
    switch (kind) {
      case BinaryKind::kAdd: out[o] = av[i] + bv[j]; break;
      case BinaryKind::kSub: out[o] = av[i] - bv[j]; break;
      case BinaryKind::kMul: out[o] = av[i] * bv[j]; break;
    }
  });
  SharedValues a_vals, b_vals;
  if (kind == BinaryKind::kMul && grad_enabled()) {
    if (b.requires_grad()) a_vals = share(av);
    if (a.requires_grad()) b_vals = share(bv);
  }
  Shape out_shape = plan->out;
  return make_result(
      std::move(out_shape), dtype, std::move(out), {a, b},
      [a, b, kind, plan, a_vals, b_vals](std::span<const double> g) mutable {
        std::span<double> ga, gb;
        if (a.requires_grad()) ga = a.grad_sink();
        if (b.requires_grad()) gb = b.grad_sink();
        for_each_broadcast(*plan, [&](std::int64_t o, std::int64_t i,
                                      std::int64_t j) {
          if (!ga.empty()) {
            ga[i] += kind == BinaryKind::kMul ? g[o] * (*b_vals)[j] : g[o];
          }
          if (!gb.empty()) {
            switch (kind) {
              case BinaryKind::kAdd: gb[j] += g[o]; break;
              case BinaryKind::kSub: gb[j] -= g[o]; break;
              case BinaryKind::kMul: gb[j] += g[o] * (*a_vals)[i]; break;
            }
          }
        });
      });
}

}  // namespace

FlopCounter::FlopCounter() : prev_(active_counter) { active_counter = this; }

FlopCounter::~FlopCounter() { active_counter = prev_; }

void FlopCounter::record(std::int64_t flops) {
  if (active_counter) active_counter->flops_ += flops;
}

void ConvParams::validate() const {
  if (!weight.defined() || weight.rank() != 4) {
    throw ShapeError("conv weight must be rank 4 [C_out, C_in, K_h, K_w]");
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_channels())) {
    throw ShapeError("conv bias length " + std::to_string(bias.numel()) +
                     " does not match C_out " + std::to_string(out_channels()));
  }
  if (stride[0] < 1 || stride[1] < 1) throw ShapeError("conv stride must be >= 1");
  if (padding[0] < 0 || padding[1] < 0) {
    throw ShapeError("conv padding must be >= 0");
  }
}

void BatchNormParams::validate() const {
  const auto c = gamma.numel();
  if (beta.numel() != c || running_mean.numel() != c ||
      running_var.numel() != c) {
    throw ShapeError("batch norm vectors must share length " +
                     std::to_string(c));
  }
  // eps = 0 is accepted for exact-identity statistics.
  if (eps < 0.0) throw Error("batch norm eps must be >= 0");
  if (!(momentum > 0.0 && momentum < 1.0)) {
    throw Error("batch norm momentum must lie in (0, 1)");
  }
  for (double v : running_var.values()) {
    if (v < 0.0) throw Error("batch norm running_var must be >= 0");
  }
}

BatchNormParams BatchNormParams::identity(std::int64_t channels, double eps,
                                          DType dtype) {
  BatchNormParams p;
  p.gamma = Tensor::full({channels}, 1.0, dtype);
  p.beta = Tensor::zeros({channels}, dtype);
  p.running_mean = Tensor::zeros({channels}, dtype);
  p.running_var = Tensor::full({channels}, 1.0, dtype);
  p.eps = eps;
  return p;
}

Tensor conv2d(const Tensor& x, const ConvParams& p) {
  p.validate();
  require_rank(x, 4, "conv2d");
  const std::int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t co = p.out_channels(), kh = p.kernel_h(),
                     kw = p.kernel_w();
  if (p.in_channels() != ci) {
    throw ShapeError("conv2d: input channel dimension (axis 1) is " +
                     std::to_string(ci) + " but weight expects C_in = " +
                     std::to_string(p.in_channels()));
  }
  const int sh = p.stride[0], sw = p.stride[1];
  const int ph = p.padding[0], pw = p.padding[1];
  if (h + 2 * ph < kh) {
    throw ShapeError("conv2d: padded height " + std::to_string(h + 2 * ph) +
                     " smaller than kernel height " + std::to_string(kh));
  }
  if (w + 2 * pw < kw) {
    throw ShapeError("conv2d: padded width " + std::to_string(w + 2 * pw) +
                     " smaller than kernel width " + std::to_string(kw));
  }
  const std::int64_t oh = (h + 2 * ph - kh) / sh + 1;
  const std::int64_t ow = (w + 2 * pw - kw) / sw + 1;
  const std::int64_t plane = oh * ow;
  const std::int64_t kdim = ci * kh * kw;
  const bool pointwise = kh == 1 && kw == 1 && sh == 1 && sw == 1 && ph == 0 &&
                         pw == 0;

  FlopCounter::record(n * co * plane * (2 * kdim + (p.has_bias() ? 1 : 0)));
  auto xv = x.values();
  auto wv = p.weight.values();
  std::vector<double> out(n * co * plane, 0.0);
  const double* bias = p.has_bias() ? p.bias.values().data() : nullptr;

  parallel_for(0, n, [&](std::int64_t b) {
    std::vector<double> col_buf;
    const double* col = xv.data() + b * ci * h * w;
    if (!pointwise) {
      col_buf.resize(kdim * plane);
      im2col(col, ci, h, w, kh, kw, sh, sw, ph, pw, oh, ow, col_buf.data());
      col = col_buf.data();
    }
    double* dst = out.data() + b * co * plane;
    for (std::int64_t o = 0; o < co; ++o) {
      double* row = dst + o * plane;
      if (bias) std::fill(row, row + plane, bias[o]);
      const double* wrow = wv.data() + o * kdim;
      for (std::int64_t k = 0; k < kdim; ++k) {
        const double wk = wrow[k];
        if (wk == 0.0) continue;
        const double* crow = col + k * plane;
        for (std::int64_t q = 0; q < plane; ++q) row[q] += wk * crow[q];
      }
    }
  });

  Tensor weight = p.weight;
  Tensor bias_t = p.bias;
  return make_result(
      {n, co, oh, ow}, promote({x, p.weight, p.bias}), std::move(out),
      {x, p.weight, p.bias},
      [x, weight, bias_t, n, ci, h, w, co, kh, kw, sh, sw, ph, pw, oh, ow,
       plane, kdim, pointwise](std::span<const double> g) mutable {
        auto xv = x.values();
        auto wv = weight.values();
        const bool need_x = x.requires_grad();
        const bool need_w = weight.requires_grad();
        const bool need_b = bias_t.defined() && bias_t.requires_grad();
        if (need_b) {
          auto gb = bias_t.grad_sink();
          for (std::int64_t b = 0; b < n; ++b) {
            for (std::int64_t o = 0; o < co; ++o) {
              const double* gr = g.data() + (b * co + o) * plane;
              double s = 0.0;
              for (std::int64_t q = 0; q < plane; ++q) s += gr[q];
              gb[o] += s;
            }
          }
        }
        if (need_w) {
          auto gw = weight.grad_sink();
          std::vector<double> col_buf(pointwise ? 0 : kdim * plane);
          // Batch order is fixed so the reduction is deterministic.
          for (std::int64_t b = 0; b < n; ++b) {
            const double* col = xv.data() + b * ci * h * w;
            if (!pointwise) {
              im2col(col, ci, h, w, kh, kw, sh, sw, ph, pw, oh, ow,
                     col_buf.data());
              col = col_buf.data();
            }
            const double* gimg = g.data() + b * co * plane;
            parallel_for(0, co, [&](std::int64_t o) {
              const double* gr = gimg + o * plane;
              double* gwr = gw.data() + o * kdim;
              for (std::int64_t k = 0; k < kdim; ++k) {
                const double* crow = col + k * plane;
                double s = 0.0;
                for (std::int64_t q = 0; q < plane; ++q) s += gr[q] * crow[q];
                gwr[k] += s;
              }
            });
          }
        }
        if (need_x) {
          auto gx = x.grad_sink();
          parallel_for(0, n, [&](std::int64_t b) {
            std::vector<double> dcol(kdim * plane, 0.0);
            const double* gimg = g.data() + b * co * plane;
            for (std::int64_t o = 0; o < co; ++o) {
              const double* gr = gimg + o * plane;
              const double* wrow = wv.data() + o * kdim;
              for (std::int64_t k = 0; k < kdim; ++k) {
                const double wk = wrow[k];
                if (wk == 0.0) continue;
                double* drow = dcol.data() + k * plane;
                for (std::int64_t q = 0; q < plane; ++q) drow[q] += wk * gr[q];
              }
            }
            double* gimg_x = gx.data() + b * ci * h * w;
            if (pointwise) {
              for (std::int64_t k = 0; k < kdim * plane; ++k) gimg_x[k] += dcol[k];
            } else {
              col2im(dcol.data(), ci, h, w, kh, kw, sh, sw, ph, pw, oh, ow,
                     gimg_x);
            }
          });
        }
      });
}

Tensor conv1d_channel(const Tensor& v, const Tensor& kernel) {
  require_rank(v, 2, "conv1d_channel");
  require_rank(kernel, 1, "conv1d_channel kernel");
  const std::int64_t k = kernel.dim(0);
  if (k % 2 == 0) {
    throw ShapeError("conv1d_channel: kernel size must be odd, got " +
                     std::to_string(k));
  }
  const std::int64_t n = v.dim(0), c = v.dim(1), r = (k - 1) / 2;
  FlopCounter::record(2 * n * c * k);
  auto vv = v.values();
  auto kv = kernel.values();
  std::vector<double> out(n * c, 0.0);
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t i = 0; i < c; ++i) {
      double s = 0.0;
      for (std::int64_t j = 0; j < k; ++j) {
        const std::int64_t src = i + j - r;
        if (src >= 0 && src < c) s += kv[j] * vv[b * c + src];
      }
      out[b * c + i] = s;
    }
  }
  return make_result(
      {n, c}, promote({v, kernel}), std::move(out), {v, kernel},
      [v, kernel, n, c, k, r](std::span<const double> g) mutable {
        auto vv = v.values();
        auto kv = kernel.values();
        std::span<double> gv, gk;
        if (v.requires_grad()) gv = v.grad_sink();
        if (kernel.requires_grad()) gk = kernel.grad_sink();
        for (std::int64_t b = 0; b < n; ++b) {
          for (std::int64_t i = 0; i < c; ++i) {
            const double gi = g[b * c + i];
            for (std::int64_t j = 0; j < k; ++j) {
              const std::int64_t src = i + j - r;
              if (src < 0 || src >= c) continue;
              if (!gv.empty()) gv[b * c + src] += kv[j] * gi;
              if (!gk.empty()) gk[j] += vv[b * c + src] * gi;
            }
          }
        }
      });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  auto xv = x.values();
  std::vector<double> out(n * c);
  for (std::int64_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    for (std::int64_t q = 0; q < plane; ++q) s += xv[i * plane + q];
    out[i] = s / static_cast<double>(plane);
  }
  return make_result({n, c}, x.dtype(), std::move(out), {x},
                     [x, n, c, plane](std::span<const double> g) mutable {
                       auto gx = x.grad_sink();
                       const double inv = 1.0 / static_cast<double>(plane);
                       for (std::int64_t i = 0; i < n * c; ++i) {
                         for (std::int64_t q = 0; q < plane; ++q) {
                           gx[i * plane + q] += g[i] * inv;
                         }
                       }
                     });
}

namespace {

struct AxisSample {
  std::int64_t lo;
  std::int64_t hi;
  double frac;
};

std::vector<AxisSample> sample_axis(std::int64_t in, std::int64_t out) {
  std::vector<AxisSample> s(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::int64_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::int64_t hi = std::min(lo + 1, in - 1);
    s[i] = {lo, hi, src - static_cast<double>(lo)};
  }
  return s;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  require_rank(x, 4, "bilinear_resize");
  if (out_h < 1 || out_w < 1) {
    throw ShapeError("bilinear_resize: output extents must be >= 1");
  }
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto rows = std::make_shared<std::vector<AxisSample>>(sample_axis(h, out_h));
  auto cols = std::make_shared<std::vector<AxisSample>>(sample_axis(w, out_w));
  auto xv = x.values();
  std::vector<double> out(n * c * out_h * out_w);
  for (std::int64_t p = 0; p < n * c; ++p) {
    const double* src = xv.data() + p * h * w;
    double* dst = out.data() + p * out_h * out_w;
    for (std::int64_t i = 0; i < out_h; ++i) {
      const auto& r = (*rows)[i];
      for (std::int64_t j = 0; j < out_w; ++j) {
        const auto& q = (*cols)[j];
        const double top =
            src[r.lo * w + q.lo] * (1.0 - q.frac) + src[r.lo * w + q.hi] * q.frac;
        const double bot =
            src[r.hi * w + q.lo] * (1.0 - q.frac) + src[r.hi * w + q.hi] * q.frac;
        dst[i * out_w + j] = top * (1.0 - r.frac) + bot * r.frac;
      }
    }
  }
  return make_result(
      {n, c, out_h, out_w}, x.dtype(), std::move(out), {x},
      [x, rows, cols, n, c, h, w, out_h, out_w](std::span<const double> g) mutable {
        auto gx = x.grad_sink();
        for (std::int64_t p = 0; p < n * c; ++p) {
          double* dst = gx.data() + p * h * w;
          const double* src = g.data() + p * out_h * out_w;
          for (std::int64_t i = 0; i < out_h; ++i) {
            const auto& r = (*rows)[i];
            for (std::int64_t j = 0; j < out_w; ++j) {
              const auto& q = (*cols)[j];
              const double gv = src[i * out_w + j];
              dst[r.lo * w + q.lo] += gv * (1.0 - r.frac) * (1.0 - q.frac);
              dst[r.lo * w + q.hi] += gv * (1.0 - r.frac) * q.frac;
              dst[r.hi * w + q.lo] += gv * r.frac * (1.0 - q.frac);
              dst[r.hi * w + q.hi] += gv * r.frac * q.frac;
            }
          }
        }
      });
}

Tensor batch_norm(const Tensor& x, const BatchNormParams& p, bool training) {
  p.validate();
  require_rank(x, 4, "batch_norm");
  const std::int64_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (c != p.channels()) {
    throw ShapeError("batch_norm: channel dimension (axis 1) is " +
                     std::to_string(c) + " but parameters have " +
                     std::to_string(p.channels()));
  }
  const std::int64_t count = n * plane;
  FlopCounter::record(2 * count * c);
  auto xv = x.values();
  auto gamma = p.gamma.values();
  auto beta = p.beta.values();

  auto mean = std::make_shared<std::vector<double>>(c);
  auto inv_std = std::make_shared<std::vector<double>>(c);
  if (training) {
    std::vector<double> var(c);
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::int64_t b = 0; b < n; ++b) {
        const double* src = xv.data() + (b * c + ch) * plane;
        for (std::int64_t q = 0; q < plane; ++q) s += src[q];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::int64_t b = 0; b < n; ++b) {
        const double* src = xv.data() + (b * c + ch) * plane;
        for (std::int64_t q = 0; q < plane; ++q) {
          const double d = src[q] - mu;
          ss += d * d;
        }
      }
      (*mean)[ch] = mu;
      var[ch] = ss / static_cast<double>(count);
      (*inv_std)[ch] = 1.0 / std::sqrt(var[ch] + p.eps);
    }
    // Running statistics use the unbiased variance estimate.
    Tensor rm = p.running_mean;
    Tensor rv = p.running_var;
    auto rmv = rm.mutable_values();
    auto rvv = rv.mutable_values();
    const double unbias =
        count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1)
                  : 1.0;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      rmv[ch] = (1.0 - p.momentum) * rmv[ch] + p.momentum * (*mean)[ch];
      rvv[ch] = (1.0 - p.momentum) * rvv[ch] + p.momentum * var[ch] * unbias;
    }
    rm.quantize();
    rv.quantize();
  } else {
    auto rmv = p.running_mean.values();
    auto rvv = p.running_var.values();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      (*mean)[ch] = rmv[ch];
      (*inv_std)[ch] = 1.0 / std::sqrt(rvv[ch] + p.eps);
    }
  }

  std::vector<double> out(xv.size());
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::int64_t off = (b * c + ch) * plane;
      const double a = gamma[ch] * (*inv_std)[ch];
      const double mu = (*mean)[ch];
      for (std::int64_t q = 0; q < plane; ++q) {
        out[off + q] = a * (xv[off + q] - mu) + beta[ch];
      }
    }
  }

  Tensor g_t = p.gamma;
  Tensor b_t = p.beta;
  return make_result(
      x.shape(), promote({x, p.gamma, p.beta}), std::move(out), {x, g_t, b_t},
      [x, g_t, b_t, mean, inv_std, training, n, c, plane,
       count](std::span<const double> g) mutable {
        auto xv = x.values();
        auto gamma = g_t.values();
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::int64_t b = 0; b < n; ++b) {
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const std::int64_t off = (b * c + ch) * plane;
            const double mu = (*mean)[ch], is = (*inv_std)[ch];
            for (std::int64_t q = 0; q < plane; ++q) {
              sum_g[ch] += g[off + q];
              sum_gx[ch] += g[off + q] * (xv[off + q] - mu) * is;
            }
          }
        }
        if (g_t.requires_grad()) {
          auto gg = g_t.grad_sink();
          for (std::int64_t ch = 0; ch < c; ++ch) gg[ch] += sum_gx[ch];
        }
        if (b_t.requires_grad()) {
          auto gb = b_t.grad_sink();
          for (std::int64_t ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
        }
        if (!x.requires_grad()) return;
        auto gx = x.grad_sink();
        const double m = static_cast<double>(count);
        for (std::int64_t b = 0; b < n; ++b) {
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const std::int64_t off = (b * c + ch) * plane;
            const double mu = (*mean)[ch], is = (*inv_std)[ch];
            const double a = gamma[ch] * is;
            for (std::int64_t q = 0; q < plane; ++q) {
              if (training) {
                const double xhat = (xv[off + q] - mu) * is;
                gx[off + q] +=
                    a * (g[off + q] - sum_g[ch] / m - xhat * sum_gx[ch] / m);
              } else {
                gx[off + q] += a * g[off + q];
              }
            }
          }
        }
      });
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::int64_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::int64_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("incompatible shapes for broadcasting: " + shape_str(a) +
                       " vs " + shape_str(b) + " at axis " +
                       std::to_string(rank - 1 - k));
    }
    out[rank - 1 - k] = std::max(da, db);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, BinaryKind::kAdd);
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, BinaryKind::kSub);
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, BinaryKind::kMul);
}

Tensor scale(const Tensor& x, double factor) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  return make_result(x.shape(), x.dtype(), std::move(out), {x},
                     [x, factor](std::span<const double> g) mutable {
                       auto gx = x.grad_sink();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         gx[i] += g[i] * factor;
                       }
                     });
}

Tensor relu(const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return make_result(x.shape(), x.dtype(), std::move(out), {x},
                     [x](std::span<const double> g) mutable {
                       auto xv = x.values();
                       auto gx = x.grad_sink();
                       // Subgradient 0 at exactly 0.
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (xv[i] > 0.0) gx[i] += g[i];
                       }
                     });
}

Tensor sigmoid(const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xv[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  SharedValues y = grad_enabled() && x.requires_grad() ? share(out) : nullptr;
  return make_result(x.shape(), x.dtype(), std::move(out), {x},
                     [x, y](std::span<const double> g) mutable {
                       auto gx = x.grad_sink();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double s = (*y)[i];
                         gx[i] += g[i] * s * (1.0 - s);
                       }
                     });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& first = parts[0].shape();
  if (first.size() < 2) {
    throw ShapeError("concat_channels: inputs must have rank >= 2");
  }
  std::int64_t total_c = 0;
  for (const auto& t : parts) {
    const Shape& s = t.shape();
    if (s.size() != first.size()) {
      throw ShapeError("concat_channels: rank mismatch " + shape_str(s) +
                       " vs " + shape_str(first));
    }
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (k != 1 && s[k] != first[k]) {
        throw ShapeError("concat_channels: extent mismatch at axis " +
                         std::to_string(k) + ": " + shape_str(s) + " vs " +
                         shape_str(first));
      }
    }
    total_c += s[1];
  }
  const std::int64_t n = first[0];
  const std::int64_t inner = numel(first) / (first[0] * first[1]);
  Shape out_shape = first;
  out_shape[1] = total_c;
  std::vector<double> out(numel(out_shape));
  std::int64_t offset_c = 0;
  for (const auto& t : parts) {
    const std::int64_t pc = t.dim(1);
    auto tv = t.values();
    for (std::int64_t b = 0; b < n; ++b) {
      std::copy_n(tv.data() + b * pc * inner, pc * inner,
                  out.data() + (b * total_c + offset_c) * inner);
    }
    offset_c += pc;
  }
  return make_result(
      std::move(out_shape), promote(parts), std::move(out), parts,
      [parts, n, inner, total_c](std::span<const double> g) mutable {
        std::int64_t offset = 0;
        for (auto& t : parts) {
          const std::int64_t pc = t.dim(1);
          if (t.requires_grad()) {
            auto gt = t.grad_sink();
            for (std::int64_t b = 0; b < n; ++b) {
              const double* src = g.data() + (b * total_c + offset) * inner;
              double* dst = gt.data() + b * pc * inner;
              for (std::int64_t i = 0; i < pc * inner; ++i) dst[i] += src[i];
            }
          }
          offset += pc;
        }
      });
}

Tensor slice_channels(const Tensor& x, std::int64_t begin, std::int64_t count) {
  if (x.rank() < 2) throw ShapeError("slice_channels: rank must be >= 2");
  const std::int64_t n = x.dim(0), c = x.dim(1);
  if (begin < 0 || count < 1 || begin + count > c) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside axis 1 of " +
                     shape_str(x.shape()));
  }
  const std::int64_t inner = x.numel() / (n * c);
  Shape out_shape = x.shape();
  out_shape[1] = count;
  auto xv = x.values();
  std::vector<double> out(n * count * inner);
  for (std::int64_t b = 0; b < n; ++b) {
    std::copy_n(xv.data() + (b * c + begin) * inner, count * inner,
                out.data() + b * count * inner);
  }
  return make_result(std::move(out_shape), x.dtype(), std::move(out), {x},
                     [x, n, c, begin, count, inner](std::span<const double> g) mutable {
                       auto gx = x.grad_sink();
                       for (std::int64_t b = 0; b < n; ++b) {
                         const double* src = g.data() + b * count * inner;
                         double* dst = gx.data() + (b * c + begin) * inner;
                         for (std::int64_t i = 0; i < count * inner; ++i) {
                           dst[i] += src[i];
                         }
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear weight");
  const std::int64_t n = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ShapeError("linear: input features (axis 1) " + std::to_string(in) +
                     " do not match weight in_features " +
                     std::to_string(weight.dim(1)));
  }
  if (bias.defined() && bias.numel() != out_f) {
    throw ShapeError("linear: bias length " + std::to_string(bias.numel()) +
                     " does not match out_features " + std::to_string(out_f));
  }
  FlopCounter::record(n * out_f * (2 * in + (bias.defined() ? 1 : 0)));
  auto xv = x.values();
  auto wv = weight.values();
  std::vector<double> out(n * out_f);
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t o = 0; o < out_f; ++o) {
      double s = bias.defined() ? bias.values()[o] : 0.0;
      for (std::int64_t i = 0; i < in; ++i) s += xv[b * in + i] * wv[o * in + i];
      out[b * out_f + o] = s;
    }
  }
  return make_result(
      {n, out_f}, promote({x, weight, bias}), std::move(out), {x, weight, bias},
      [x, weight, bias, n, in, out_f](std::span<const double> g) mutable {
        auto xv = x.values();
        auto wv = weight.values();
        if (x.requires_grad()) {
          auto gx = x.grad_sink();
          for (std::int64_t b = 0; b < n; ++b) {
            for (std::int64_t o = 0; o < out_f; ++o) {
              for (std::int64_t i = 0; i < in; ++i) {
                gx[b * in + i] += g[b * out_f + o] * wv[o * in + i];
              }
            }
          }
        }
        if (weight.requires_grad()) {
          auto gw = weight.grad_sink();
          for (std::int64_t b = 0; b < n; ++b) {
            for (std::int64_t o = 0; o < out_f; ++o) {
              for (std::int64_t i = 0; i < in; ++i) {
                gw[o * in + i] += g[b * out_f + o] * xv[b * in + i];
              }
            }
          }
        }
        if (bias.defined() && bias.requires_grad()) {
          auto gb = bias.grad_sink();
          for (std::int64_t b = 0; b < n; ++b) {
            for (std::int64_t o = 0; o < out_f; ++o) gb[o] += g[b * out_f + o];
          }
        }
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  auto xv = x.values();
  return make_result(std::move(shape), x.dtype(),
                     std::vector<double>(xv.begin(), xv.end()), {x},
                     [x](std::span<const double> g) mutable {
                       auto gx = x.grad_sink();
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_result({1}, x.dtype(), {s}, {x},
                     [x](std::span<const double> g) mutable {
                       auto gx = x.grad_sink();
                       for (double& v : gx) v += g[0];
                     });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor softmax_channels(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("softmax_channels: rank must be >= 2");
  const std::int64_t n = x.dim(0), c = x.dim(1);
  const std::int64_t inner = x.numel() / (n * c);
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t q = 0; q < inner; ++q) {
      const std::int64_t base = b * c * inner + q;
      double mx = xv[base];
      for (std::int64_t k = 1; k < c; ++k) mx = std::max(mx, xv[base + k * inner]);
      double z = 0.0;
      for (std::int64_t k = 0; k < c; ++k) {
        out[base + k * inner] = std::exp(xv[base + k * inner] - mx);
        z += out[base + k * inner];
      }
      for (std::int64_t k = 0; k < c; ++k) out[base + k * inner] /= z;
    }
  }
  SharedValues y = grad_enabled() && x.requires_grad() ? share(out) : nullptr;
  return make_result(x.shape(), x.dtype(), std::move(out), {x},
                     [x, y, n, c, inner](std::span<const double> g) mutable {
                       auto gx = x.grad_sink();
                       const auto& s = *y;
                       for (std::int64_t b = 0; b < n; ++b) {
                         for (std::int64_t q = 0; q < inner; ++q) {
                           const std::int64_t base = b * c * inner + q;
                           double dot = 0.0;
                           for (std::int64_t k = 0; k < c; ++k) {
                             dot += g[base + k * inner] * s[base + k * inner];
                           }
                           for (std::int64_t k = 0; k < c; ++k) {
                             const std::int64_t i = base + k * inner;
                             gx[i] += s[i] * (g[i] - dot);
                           }
                         }
                       }
                     });
}

}  // namespace rsf
