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

#include "rsf/plg.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace rsf {
namespace {

void require_plane(const Tensor& t, const char* what) {
  if (!t.defined() || t.rank() != 2) {
    throw ShapeError(std::string(what) + ": expected an [H, W] map");
  }
}

int bin_of(double v) {
  if (!(v > 0.0)) return 0;
  return std::min(255, static_cast<int>(std::floor(v)));
}

}  // namespace

std::int64_t BinaryMask::count() const {
  std::int64_t n = 0;
  for (double v : values.values()) n += v != 0.0;
  return n;
}

IntensityMap to_grayscale(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) {
    throw ShapeError("to_grayscale: expected [3, H, W], got " +
                     shape_str(rgb.shape()));
  }
  const std::int64_t h = rgb.dim(1), w = rgb.dim(2), plane = h * w;
  auto v = rgb.values();
  std::vector<double> out(plane);
  for (std::int64_t i = 0; i < plane; ++i) {
    out[i] = 0.299 * v[i] + 0.587 * v[plane + i] + 0.114 * v[2 * plane + i];
  }
  return {Tensor::from_values({h, w}, std::move(out))};
}

IntensityMap intensity_from_plane(const Tensor& plane) {
  if (plane.rank() == 3 && plane.dim(0) == 1) {
    return {Tensor::from_values({plane.dim(1), plane.dim(2)},
                                {plane.values().begin(), plane.values().end()})};
  }
  require_plane(plane, "intensity_from_plane");
  return {plane.to(DType::kFloat64)};
}

std::vector<int> clip_scales(std::span<const int> scales, std::int64_t height,
                             std::int64_t width) {
  std::vector<int> out;
  const std::int64_t limit = std::min(height, width);
  for (int r : scales) {
    if (r >= 1 && 2 * static_cast<std::int64_t>(r) < limit) out.push_back(r);
  }
  return out;
}

SaliencyMap fine_grained_saliency(const IntensityMap& img,
                                  std::span<const int> scales) {
  require_plane(img.values, "fine_grained_saliency");
  if (scales.empty()) throw Error("fine_grained_saliency: empty scale list");
  const std::int64_t h = img.height(), w = img.width();
  for (int r : scales) {
    if (r < 1 || 2 * static_cast<std::int64_t>(r) >= std::min(h, w)) {
      throw Error("fine_grained_saliency: radius " + std::to_string(r) +
                  " outside [1, min(H, W) / 2) for a " + std::to_string(h) +
                  "x" + std::to_string(w) + " image");
    }
  }
  auto v = img.values.values();
  // Integral image with a zero guard row/column.
  const std::int64_t stride = w + 1;
  std::vector<double> integral((h + 1) * stride, 0.0);
  for (std::int64_t y = 0; y < h; ++y) {
    double row = 0.0;
    for (std::int64_t x = 0; x < w; ++x) {
      row += v[y * w + x];
      integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
    }
  }
  std::vector<double> sal(h * w, 0.0);
  for (int r : scales) {
    for (std::int64_t y = 0; y < h; ++y) {
      const std::int64_t y0 = std::max<std::int64_t>(0, y - r);
      const std::int64_t y1 = std::min<std::int64_t>(h - 1, y + r);
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int64_t x0 = std::max<std::int64_t>(0, x - r);
        const std::int64_t x1 = std::min<std::int64_t>(w - 1, x + r);
        const double box = integral[(y1 + 1) * stride + x1 + 1] -
                           integral[y0 * stride + x1 + 1] -
                           integral[(y1 + 1) * stride + x0] +
                           integral[y0 * stride + x0];
        const double area = static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
        // on-center + off-center = |I - surround|
        sal[y * w + x] += std::abs(v[y * w + x] - box / area);
      }
    }
  }
  // Contrast at the level of integral-image roundoff counts as flat.
  double magnitude = 1.0;
  for (double x : v) magnitude = std::max(magnitude, std::abs(x));
  const double floor =
      1e-9 * magnitude * static_cast<double>(scales.size());
  const double peak = *std::max_element(sal.begin(), sal.end());
  if (peak > floor) {
    for (double& s : sal) s = s * 255.0 / peak;
  } else {
    std::fill(sal.begin(), sal.end(), 0.0);
  }
  return {Tensor::from_values({h, w}, std::move(sal))};
}

OtsuResult otsu_binarize(const SaliencyMap& m) {
  require_plane(m.values, "otsu_binarize");
  auto v = m.values.values();
  std::array<std::int64_t, 256> hist{};
  for (double x : v) ++hist[bin_of(x)];
  const std::int64_t total = static_cast<std::int64_t>(v.size());
  std::int64_t total_sum = 0;
  for (int k = 0; k < 256; ++k) total_sum += k * hist[k];

  double best = 0.0;
  int best_t = -1;
  std::int64_t n0 = 0, s0 = 0;
  for (int t = 0; t < 256; ++t) {
    n0 += hist[t];
    s0 += static_cast<std::int64_t>(t) * hist[t];
    const std::int64_t n1 = total - n0;
    if (n0 == 0 || n1 == 0) continue;
    // w0 w1 (mu0 - mu1)^2 = (N S0 - N0 S)^2 / (N^2 N0 N1)
    const double diff = static_cast<double>(total * s0 - n0 * total_sum);
    const double var = diff * diff / (static_cast<double>(n0) *
                                      static_cast<double>(n1));
    if (var > best) {
      best = var;
      best_t = t;
    }
  }
  if (best_t < 0) {
    // Single occupied bin: threshold at it, nothing above.
    best_t = 0;
    for (int k = 0; k < 256; ++k) {
      if (hist[k] > 0) {
        best_t = k;
        break;
      }
    }
  }
  std::vector<double> mask(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) mask[i] = bin_of(v[i]) > best_t;
  return {best_t, {Tensor::from_values(m.values.shape(), std::move(mask))}};
}

BinaryMask binarize_ground_truth(const LabelMap& y, int num_classes) {
  std::vector<double> mask(y.labels.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const std::int32_t c = y.labels[i];
    if (c < 0 || c >= num_classes) {
      throw Error("binarize_ground_truth: class index " + std::to_string(c) +
                  " outside [0, " + std::to_string(num_classes) + ")");
    }
    mask[i] = c != 0;
  }
  return {Tensor::from_values({y.height, y.width}, std::move(mask))};
}

double iou_score(const BinaryMask& a, const BinaryMask& b) {
  if (a.values.shape() != b.values.shape()) {
    throw ShapeError("iou_score: mask shapes differ: " +
                     shape_str(a.values.shape()) + " vs " +
                     shape_str(b.values.shape()));
  }
  auto av = a.values.values();
  auto bv = b.values.values();
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const bool x = av[i] != 0.0, y = bv[i] != 0.0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

PseudoLabelPair generate_pseudo_labels(const Tensor& rgb, const Tensor& thm,
                                       const LabelMap& gt, int num_classes,
                                       const PlgOptions& options) {
  IntensityMap gray = to_grayscale(rgb);
  IntensityMap heat = intensity_from_plane(thm);
  if (gray.height() != heat.height() || gray.width() != heat.width() ||
      gray.height() != gt.height || gray.width() != gt.width) {
    throw ShapeError("generate_pseudo_labels: rgb, thermal and label extents "
                     "must agree");
  }
  if (options.stretch_thermal) {
    auto v = heat.values.mutable_values();
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double a = *lo, span = *hi - *lo;
    if (span > 0.0) {
      for (double& x : v) x = (x - a) * 255.0 / span;
    }
  }
  const auto scales = clip_scales(options.scales, gt.height, gt.width);
  const BinaryMask truth = binarize_ground_truth(gt, num_classes);
  PseudoLabelPair out;
  out.p_rgb = iou_score(otsu_binarize(fine_grained_saliency(gray, scales)).mask,
                        truth);
  out.p_thm = iou_score(otsu_binarize(fine_grained_saliency(heat, scales)).mask,
                        truth);
  return out;
}

}  // namespace rsf
