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

#ifndef RSF_LABEL_MAP_H_
#define RSF_LABEL_MAP_H_

#include <cstdint>
#include <vector>

namespace rsf {

// Per-pixel class indices, row-major [height, width]. Class 0 is background.
struct LabelMap {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::int32_t> labels;

  LabelMap() = default;
  LabelMap(std::int64_t h, std::int64_t w, std::int32_t fill = 0)
      : height(h), width(w), labels(static_cast<std::size_t>(h * w), fill) {}

  std::int32_t& at(std::int64_t y, std::int64_t x) { return labels[y * width + x]; }
  std::int32_t at(std::int64_t y, std::int64_t x) const {
    return labels[y * width + x];
  }
  std::int64_t size() const { return height * width; }
  bool same_extents(const LabelMap& o) const {
    return height == o.height && width == o.width;
  }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

}  // namespace rsf

#endif  // RSF_LABEL_MAP_H_
