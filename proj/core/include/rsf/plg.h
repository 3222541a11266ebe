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

#ifndef RSF_PLG_H_
#define RSF_PLG_H_

#include <cstdint>
#include <span>
#include <vector>

#include "rsf/label_map.h"
#include "rsf/tensor.h"

namespace rsf {

// Single-channel intensity image [H, W] with entries in [0, 255].
struct IntensityMap {
  Tensor values;
  std::int64_t height() const { return values.dim(0); }
  std::int64_t width() const { return values.dim(1); }
};

// Saliency [H, W] in [0, 255]; the maximum is 255 unless the map is all zero.
struct SaliencyMap {
  Tensor values;
  std::int64_t height() const { return values.dim(0); }
  std::int64_t width() const { return values.dim(1); }
};

// Strictly {0, 1} mask [H, W].
struct BinaryMask {
  Tensor values;
  std::int64_t height() const { return values.dim(0); }
  std::int64_t width() const { return values.dim(1); }
  std::int64_t count() const;
};

// IoU soft targets for the two confidence heads.
struct PseudoLabelPair {
  double p_rgb = 0.0;
  double p_thm = 0.0;
};

struct OtsuResult {
  int threshold = 0;  // histogram bin; pixels in bins > threshold are set
  BinaryMask mask;
};

struct PlgOptions {
  std::vector<int> scales{2, 4, 8};
  // Min-max stretch the thermal plane to [0, 255] before saliency.
  bool stretch_thermal = false;
};

// BT.601 luma of rgb:[3, H, W] in [0, 255].
IntensityMap to_grayscale(const Tensor& rgb);

// Wraps a [1, H, W] or [H, W] plane in [0, 255].
IntensityMap intensity_from_plane(const Tensor& plane);

// Drops radii that are not in [1, min(H, W) / 2).
std::vector<int> clip_scales(std::span<const int> scales, std::int64_t height,
                             std::int64_t width);

// Multi-scale center-surround contrast: sum over radii r of
// |I(p) - boxmean_r(I)(p)|, where the box is clipped to the image, then
// rescaled so the maximum is 255.
SaliencyMap fine_grained_saliency(const IntensityMap& img,
                                  std::span<const int> scales);

// Threshold maximizing the inter-class variance of the 256-bin histogram
// (bin = floor(value)); ties go to the smallest threshold. A map with a
// single occupied bin yields that bin as threshold and an empty mask.
OtsuResult otsu_binarize(const SaliencyMap& m);

// Foreground = class != 0. Throws on indices outside [0, num_classes).
BinaryMask binarize_ground_truth(const LabelMap& y, int num_classes);

// |a & b| / |a | b|, or 0 when the union is empty.
double iou_score(const BinaryMask& a, const BinaryMask& b);

// rgb:[3, H, W] and thm:[1, H, W] in [0, 255].
PseudoLabelPair generate_pseudo_labels(const Tensor& rgb, const Tensor& thm,
                                       const LabelMap& gt, int num_classes,
                                       const PlgOptions& options = {});

}  // namespace rsf

#endif  // RSF_PLG_H_
