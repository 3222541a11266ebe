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

#ifndef RSF_DATASET_H_
#define RSF_DATASET_H_

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rsf/label_map.h"
#include "rsf/plg.h"
#include "rsf/random.h"
#include "rsf/tensor.h"
#include "rsf/train.h"

namespace rsf {

struct SamplePair {
  std::string id;
  Tensor rgb;    // [3, H, W] in [0, 1]
  Tensor thm;    // [1, H, W] in [0, 1]
  LabelMap gt;
  std::optional<PseudoLabelPair> pseudo;

  std::int64_t height() const { return gt.height; }
  std::int64_t width() const { return gt.width; }
  // Extents agree; labels in [0, num_classes) when num_classes > 0.
  void validate(int num_classes = 0) const;
};

// Interleaved 8-bit image (HWC), 1 or 3 channels.
struct Image8 {
  std::int64_t height = 0;
  std::int64_t width = 0;
  int channels = 1;
  std::vector<std::uint8_t> data;
};

// Throws IoError. Palette and alpha inputs are converted to gray or RGB.
Image8 read_png(const std::string& path);
void write_png(const std::string& path, const Image8& img);

// [C, H, W] with v / 255.
Tensor image_to_tensor(const Image8& img);
// Inverse of image_to_tensor, rounding and clamping to [0, 255].
Image8 tensor_to_image(const Tensor& chw);
LabelMap image_to_labels(const Image8& img);
Image8 labels_to_image(const LabelMap& labels);

// root/{rgb,thm,labels}/<id>.png with ids listed in root/<split>.txt.
// Samples come back sorted by id. Missing files or mismatched extents throw
// IoError / ShapeError naming the sample id.
std::vector<SamplePair> load_dataset(const std::string& root,
                                     const std::string& split,
                                     int num_classes = 0);

// Writes the layout read by load_dataset (8-bit quantized).
void save_dataset(const std::string& root, const std::string& split,
                  std::span<const SamplePair> samples);

struct AugmentPolicy {
  bool flip = true;
  double max_rotation_deg = 10.0;
  int crop = 0;  // square crop side; 0 keeps full extents
};

// One geometric transform shared by every modality of a sample. Output pixel
// (y, x) reads the source at source(y, x): crop offset, then rotation about
// the image center, then the optional horizontal flip.
struct Transform {
  bool flip = false;
  double angle_deg = 0.0;
  std::int64_t src_h = 0;
  std::int64_t src_w = 0;
  std::int64_t crop_y = 0;
  std::int64_t crop_x = 0;
  std::int64_t out_h = 0;
  std::int64_t out_w = 0;

  static Transform identity(std::int64_t h, std::int64_t w);
  std::array<double, 2> source(std::int64_t y, std::int64_t x) const;
};

Transform sample_transform(Rng& rng, const AugmentPolicy& policy,
                           std::int64_t height, std::int64_t width);
// Images bilinear with zero fill; labels nearest neighbour with class 0 fill.
SamplePair apply_transform(const SamplePair& s, const Transform& t);
SamplePair augment(const SamplePair& s, Rng& rng, const AugmentPolicy& policy);

enum class SceneMode : std::uint8_t { kDay, kNight };

const char* scene_mode_name(SceneMode mode);
SceneMode parse_scene_mode(const std::string& name);

inline constexpr int kSyntheticClasses = 3;  // background, hot, warm

// 64x64 scenes with one to three hot or warm objects. Thermal shows every
// object; rgb shows them only in day mode (night rgb is low-variance noise).
std::vector<SamplePair> make_synthetic_dataset(int n, std::uint64_t seed,
                                               SceneMode mode,
                                               std::int64_t size = 64);

// Runs the pseudo-label generator on each sample (images scaled to 0..255).
void attach_pseudo_labels(std::vector<SamplePair>& samples, int num_classes,
                          const PlgOptions& options = {});

// Stacks samples[indices] into a batch. Every sample needs pseudo labels.
Batch make_batch(std::span<const SamplePair> samples,
                 std::span<const std::size_t> indices);

}  // namespace rsf

#endif  // RSF_DATASET_H_
