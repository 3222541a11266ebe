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

#include "rsf/dataset.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace rsf {
namespace fs = std::filesystem;
namespace {

std::vector<std::string> read_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open split file " + path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' ||
                             line.back() == '\t')) {
      line.pop_back();
    }
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    ids.push_back(line.substr(first));
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

double sample_bilinear(const double* plane, std::int64_t h, std::int64_t w,
                       double sy, double sx) {
  const double fy0 = std::floor(sy), fx0 = std::floor(sx);
  const std::int64_t y0 = static_cast<std::int64_t>(fy0);
  const std::int64_t x0 = static_cast<std::int64_t>(fx0);
  const double ty = sy - fy0, tx = sx - fx0;
  auto pix = [&](std::int64_t y, std::int64_t x) {
    return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : plane[y * w + x];
  };
  double v = (1.0 - ty) * (1.0 - tx) * pix(y0, x0);
  if (tx != 0.0) v += (1.0 - ty) * tx * pix(y0, x0 + 1);
  if (ty != 0.0) {
    v += ty * (1.0 - tx) * pix(y0 + 1, x0);
    if (tx != 0.0) v += ty * tx * pix(y0 + 1, x0 + 1);
  }
  return v;
}

Tensor transform_planes(const Tensor& chw, const Transform& t) {
  const std::int64_t c = chw.dim(0), plane = t.src_h * t.src_w;
  auto v = chw.values();
  std::vector<double> out(c * t.out_h * t.out_w);
  for (std::int64_t y = 0; y < t.out_h; ++y) {
    for (std::int64_t x = 0; x < t.out_w; ++x) {
      const auto [sy, sx] = t.source(y, x);
      for (std::int64_t k = 0; k < c; ++k) {
        out[(k * t.out_h + y) * t.out_w + x] =
            sample_bilinear(v.data() + k * plane, t.src_h, t.src_w, sy, sx);
      }
    }
  }
  return Tensor::from_values({c, t.out_h, t.out_w}, std::move(out), chw.dtype());
}

// Axis-aligned rectangle or disk.
struct Shape2d {
  bool disk = true;
  double cy = 0, cx = 0, ry = 0, rx = 0;
  bool contains(double y, double x) const {
    const double dy = (y - cy) / ry, dx = (x - cx) / rx;
    return disk ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
  }
};

}  // namespace

void SamplePair::validate(int num_classes) const {
  const std::int64_t h = gt.height, w = gt.width;
  if (rgb.rank() != 3 || rgb.dim(0) != 3 || rgb.dim(1) != h || rgb.dim(2) != w) {
    throw ShapeError("sample " + id + ": rgb " + shape_str(rgb.shape()) +
                     " does not match labels " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  if (thm.rank() != 3 || thm.dim(0) != 1 || thm.dim(1) != h || thm.dim(2) != w) {
    throw ShapeError("sample " + id + ": thermal " + shape_str(thm.shape()) +
                     " does not match labels " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  if (num_classes > 0) {
    for (std::int32_t c : gt.labels) {
      if (c < 0 || c >= num_classes) {
        throw Error("sample " + id + ": label " + std::to_string(c) +
                    " outside [0, " + std::to_string(num_classes) + ")");
      }
    }
  }
}

Image8 read_png(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot read PNG " + path + ": " + msg);
  }
  Image8 img;
  img.channels = (image.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  img.height = image.height;
  img.width = image.width;
  img.data.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, img.data.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path + ": " + msg);
  }
  return img;
}

void write_png(const std::string& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw Error("write_png: expected 1 or 3 channels, got " +
                std::to_string(img.channels));
  }
  if (static_cast<std::int64_t>(img.data.size()) !=
      img.height * img.width * img.channels) {
    throw ShapeError("write_png: buffer size does not match extents");
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.data.data(), 0,
                               nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot write PNG " + path + ": " + msg);
  }
}

Tensor image_to_tensor(const Image8& img) {
  const std::int64_t plane = img.height * img.width;
  std::vector<double> out(img.channels * plane);
  for (std::int64_t q = 0; q < plane; ++q) {
    for (int c = 0; c < img.channels; ++c) {
      out[c * plane + q] = img.data[q * img.channels + c] / 255.0;
    }
  }
  return Tensor::from_values({img.channels, img.height, img.width}, std::move(out));
}

Image8 tensor_to_image(const Tensor& chw) {
  if (chw.rank() != 3 || (chw.dim(0) != 1 && chw.dim(0) != 3)) {
    throw ShapeError("tensor_to_image: expected [1|3, H, W], got " +
                     shape_str(chw.shape()));
  }
  Image8 img;
  img.channels = static_cast<int>(chw.dim(0));
  img.height = chw.dim(1);
  img.width = chw.dim(2);
  const std::int64_t plane = img.height * img.width;
  img.data.resize(plane * img.channels);
  auto v = chw.values();
  for (std::int64_t q = 0; q < plane; ++q) {
    for (int c = 0; c < img.channels; ++c) {
      const double x = std::round(std::clamp(v[c * plane + q], 0.0, 1.0) * 255.0);
      img.data[q * img.channels + c] = static_cast<std::uint8_t>(x);
    }
  }
  return img;
}

LabelMap image_to_labels(const Image8& img) {
  if (img.channels != 1) throw Error("label images must be single-channel");
  LabelMap m(img.height, img.width, 0);
  for (std::size_t i = 0; i < img.data.size(); ++i) m.labels[i] = img.data[i];
  return m;
}

Image8 labels_to_image(const LabelMap& labels) {
  Image8 img;
  img.height = labels.height;
  img.width = labels.width;
  img.data.resize(labels.labels.size());
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    const std::int32_t c = labels.labels[i];
    if (c < 0 || c > 255) {
      throw Error("labels_to_image: class " + std::to_string(c) +
                  " does not fit an 8-bit label image");
    }
    img.data[i] = static_cast<std::uint8_t>(c);
  }
  return img;
}

std::vector<SamplePair> load_dataset(const std::string& root,
                                     const std::string& split, int num_classes) {
  const fs::path base(root);
  std::vector<SamplePair> out;
  for (const std::string& id : read_split((base / (split + ".txt")).string())) {
    SamplePair s;
    s.id = id;
    auto load = [&](const char* dir) {
      const fs::path p = base / dir / (id + ".png");
      if (!fs::exists(p)) {
        throw IoError("sample " + id + ": missing " + std::string(dir) +
                      " image " + p.string());
      }
      try {
        return read_png(p.string());
      } catch (const IoError& e) {
        throw IoError("sample " + id + ": " + e.what());
      }
    };
    Image8 rgb = load("rgb");
    Image8 thm = load("thm");
    Image8 lab = load("labels");
    if (rgb.channels != 3) {
      throw ShapeError("sample " + id + ": rgb image must have 3 channels");
    }
    if (thm.channels != 1) {
      throw ShapeError("sample " + id + ": thermal image must be single-channel");
    }
    if (lab.channels != 1) {
      throw ShapeError("sample " + id + ": label image must be single-channel");
    }
    s.rgb = image_to_tensor(rgb);
    s.thm = image_to_tensor(thm);
    s.gt = image_to_labels(lab);
    s.validate(num_classes);
    out.push_back(std::move(s));
  }
  return out;
}

void save_dataset(const std::string& root, const std::string& split,
                  std::span<const SamplePair> samples) {
  const fs::path base(root);
  std::error_code ec;
  for (const char* dir : {"rgb", "thm", "labels"}) {
    fs::create_directories(base / dir, ec);
    if (ec) throw IoError("cannot create " + (base / dir).string());
  }
  std::ofstream list(base / (split + ".txt"));
  if (!list) throw IoError("cannot write split file in " + root);
  for (const SamplePair& s : samples) {
    s.validate();
    write_png((base / "rgb" / (s.id + ".png")).string(), tensor_to_image(s.rgb));
    write_png((base / "thm" / (s.id + ".png")).string(), tensor_to_image(s.thm));
    write_png((base / "labels" / (s.id + ".png")).string(), labels_to_image(s.gt));
    list << s.id << "\n";
  }
}

Transform Transform::identity(std::int64_t h, std::int64_t w) {
  Transform t;
  t.src_h = t.out_h = h;
  t.src_w = t.out_w = w;
  return t;
}

std::array<double, 2> Transform::source(std::int64_t y, std::int64_t x) const {
  const double cy = 0.5 * static_cast<double>(src_h - 1);
  const double cx = 0.5 * static_cast<double>(src_w - 1);
  double sy = static_cast<double>(y + crop_y);
  double sx = static_cast<double>(x + crop_x);
  if (angle_deg != 0.0) {
    const double a = angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(a), s = std::sin(a);
    const double dy = sy - cy, dx = sx - cx;
    sy = cy + c * dy - s * dx;
    sx = cx + s * dy + c * dx;
  }
  if (flip) sx = static_cast<double>(src_w - 1) - sx;
  return {sy, sx};
}

Transform sample_transform(Rng& rng, const AugmentPolicy& policy,
                           std::int64_t height, std::int64_t width) {
  const std::int64_t crop = policy.crop;
  if (crop < 0 || crop > height || crop > width) {
    throw Error("augment: crop " + std::to_string(crop) + " exceeds image extents " +
                std::to_string(height) + "x" + std::to_string(width));
  }
  Transform t = Transform::identity(height, width);
  t.flip = policy.flip && rng.bernoulli(0.5);
  if (policy.max_rotation_deg > 0.0) {
    t.angle_deg = rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg);
  }
  if (crop > 0) {
    t.out_h = t.out_w = crop;
    t.crop_y = rng.uniform_int(height - crop + 1);
    t.crop_x = rng.uniform_int(width - crop + 1);
  }
  return t;
}

SamplePair apply_transform(const SamplePair& s, const Transform& t) {
  s.validate();
  if (t.src_h != s.height() || t.src_w != s.width()) {
    throw ShapeError("apply_transform: transform built for " +
                     std::to_string(t.src_h) + "x" + std::to_string(t.src_w) +
                     ", sample " + s.id + " is " + std::to_string(s.height()) +
                     "x" + std::to_string(s.width()));
  }
  SamplePair out;
  out.id = s.id;
  out.pseudo = s.pseudo;
  out.rgb = transform_planes(s.rgb, t);
  out.thm = transform_planes(s.thm, t);
  out.gt = LabelMap(t.out_h, t.out_w, 0);
  for (std::int64_t y = 0; y < t.out_h; ++y) {
    for (std::int64_t x = 0; x < t.out_w; ++x) {
      const auto [sy, sx] = t.source(y, x);
      const auto ny = static_cast<std::int64_t>(std::floor(sy + 0.5));
      const auto nx = static_cast<std::int64_t>(std::floor(sx + 0.5));
      if (ny >= 0 && ny < t.src_h && nx >= 0 && nx < t.src_w) {
        out.gt.at(y, x) = s.gt.at(ny, nx);
      }
    }
  }
  return out;
}

SamplePair augment(const SamplePair& s, Rng& rng, const AugmentPolicy& policy) {
  return apply_transform(s, sample_transform(rng, policy, s.height(), s.width()));
}

const char* scene_mode_name(SceneMode mode) {
  return mode == SceneMode::kDay ? "day" : "night";
}

SceneMode parse_scene_mode(const std::string& name) {
  if (name == "day") return SceneMode::kDay;
  if (name == "night") return SceneMode::kNight;
  throw Error("unknown synthetic mode '" + name + "' (expected day or night)");
}

std::vector<SamplePair> make_synthetic_dataset(int n, std::uint64_t seed,
                                               SceneMode mode, std::int64_t size) {
  if (n < 1) throw Error("make_synthetic_dataset: n must be >= 1");
  if (size < 16) throw Error("make_synthetic_dataset: size must be >= 16");
  std::vector<SamplePair> out;
  const double s = static_cast<double>(size);
  const std::int64_t plane = size * size;
  for (int i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "syn_%04d", i);
    Rng rng = Rng::derive(seed, std::string("synthetic/") + scene_mode_name(mode) +
                                    "/" + id);
    SamplePair p;
    p.id = id;
    p.gt = LabelMap(size, size, 0);

    const int count = 1 + static_cast<int>(rng.uniform_int(3));
    std::vector<Shape2d> shapes;
    std::vector<int> classes;
    std::vector<double> heat;
    std::vector<std::array<double, 3>> colors;
    for (int k = 0; k < count; ++k) {
      Shape2d sh;
      sh.disk = rng.bernoulli(0.5);
      sh.ry = s * rng.uniform(0.1, 0.2);
      sh.rx = s * rng.uniform(0.1, 0.2);
      sh.cy = s * rng.uniform(0.2, 0.8);
      sh.cx = s * rng.uniform(0.2, 0.8);
      shapes.push_back(sh);
      const int cls = 1 + static_cast<int>(rng.uniform_int(2));
      classes.push_back(cls);
      heat.push_back(cls == 1 ? rng.uniform(0.82, 0.92) : rng.uniform(0.52, 0.62));
      colors.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    }
    for (std::int64_t y = 0; y < size; ++y) {
      for (std::int64_t x = 0; x < size; ++x) {
        for (int k = 0; k < count; ++k) {
          if (shapes[k].contains(static_cast<double>(y), static_cast<double>(x))) {
            p.gt.at(y, x) = k + 1;  // object slot, mapped to a class below
          }
        }
      }
    }

    const double bg_heat = rng.uniform(0.15, 0.3);
    const double tilt = rng.uniform(-0.05, 0.05);
    std::vector<double> thm(plane);
    for (std::int64_t q = 0; q < plane; ++q) {
      const int slot = p.gt.labels[q];
      const double x = static_cast<double>(q % size) / s - 0.5;
      const double base = slot == 0 ? bg_heat + tilt * x : heat[slot - 1];
      thm[q] = std::clamp(base + rng.uniform(-0.03, 0.03), 0.0, 1.0);
    }

    std::vector<double> rgb(3 * plane);
    if (mode == SceneMode::kDay) {
      std::array<double, 3> bg;
      for (double& c : bg) c = rng.uniform(0.15, 0.45);
      for (auto& col : colors) {
        // At least one channel differs from the background by >= 0.35.
        const int lead = static_cast<int>(rng.uniform_int(3));
        col[lead] = bg[lead] + rng.uniform(0.35, 0.5);
      }
      for (std::int64_t q = 0; q < plane; ++q) {
        const int slot = p.gt.labels[q];
        for (int c = 0; c < 3; ++c) {
          const double base = slot == 0 ? bg[c] : colors[slot - 1][c];
          rgb[c * plane + q] = std::clamp(base + rng.uniform(-0.04, 0.04), 0.0, 1.0);
        }
      }
    } else {
      const double level = rng.uniform(0.05, 0.12);
      for (double& v : rgb) v = level + rng.uniform(-0.04, 0.04);
    }
    for (std::int32_t& l : p.gt.labels) {
      if (l > 0) l = classes[l - 1];
    }
    p.rgb = Tensor::from_values({3, size, size}, std::move(rgb));
    p.thm = Tensor::from_values({1, size, size}, std::move(thm));
    out.push_back(std::move(p));
  }
  return out;
}

void attach_pseudo_labels(std::vector<SamplePair>& samples, int num_classes,
                          const PlgOptions& options) {
  for (SamplePair& s : samples) {
    s.pseudo = generate_pseudo_labels(scale(s.rgb, 255.0), scale(s.thm, 255.0),
                                      s.gt, num_classes, options);
  }
}

Batch make_batch(std::span<const SamplePair> samples,
                 std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error("make_batch: empty batch");
  const SamplePair& first = samples[indices[0]];
  const std::int64_t n = static_cast<std::int64_t>(indices.size());
  const std::int64_t h = first.height(), w = first.width(), plane = h * w;
  std::vector<double> rgb(n * 3 * plane), thm(n * plane);
  Batch b;
  for (std::int64_t i = 0; i < n; ++i) {
    const SamplePair& s = samples[indices[i]];
    if (s.height() != h || s.width() != w) {
      throw ShapeError("make_batch: sample " + s.id + " extents differ from " +
                       first.id);
    }
    if (!s.pseudo) throw Error("make_batch: sample " + s.id + " has no pseudo labels");
    std::copy(s.rgb.values().begin(), s.rgb.values().end(),
              rgb.begin() + i * 3 * plane);
    std::copy(s.thm.values().begin(), s.thm.values().end(), thm.begin() + i * plane);
    b.labels.push_back(s.gt);
    b.pseudo.push_back(*s.pseudo);
  }
  b.rgb = Tensor::from_values({n, 3, h, w}, std::move(rgb));
  b.thm = Tensor::from_values({n, 1, h, w}, std::move(thm));
  return b;
}

}  // namespace rsf
