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

#include "rsf/checkpoint.h"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace rsf {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

constexpr char kMagic[4] = {'R', 'S', 'F', 'C'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what), sizeof(T));
    return v;
  }

  const std::uint8_t* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(CheckpointErrc::kTruncated,
                            std::string("ran out of bytes reading ") + what + " at byte " + std::to_string(pos_));
    }
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const char* checkpoint_errc_name(CheckpointErrc code) {
  switch (code) {
    case CheckpointErrc::kIo: return "io error";
    case CheckpointErrc::kBadMagic: return "bad magic";
    case CheckpointErrc::kVersionMismatch: return "version mismatch";
    case CheckpointErrc::kTruncated: return "truncated payload";
    case CheckpointErrc::kDuplicateName: return "duplicate name";
    case CheckpointErrc::kUnknownName: return "unknown name";
    case CheckpointErrc::kMissingName: return "missing name";
    case CheckpointErrc::kShapeMismatch: return "shape mismatch";
  }
  return "?";
}

void Checkpoint::add(std::string name, const Tensor& value) {
  if (contains(name)) {
    throw CheckpointError(CheckpointErrc::kDuplicateName, name);
  }
  entries_.push_back({std::move(name), value.detach().clone()});
}

void Checkpoint::add_scalar(std::string name, double value) {
  add(std::move(name), Tensor::scalar(value));
}

bool Checkpoint::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.name == name; });
}

const Tensor& Checkpoint::get(std::string_view name) const {
  for (const Entry& e : entries_) {
    if (e.name == name) return e.value;
  }
  throw CheckpointError(CheckpointErrc::kUnknownName,
                        "no tensor named '" + std::string(name) + "'");
}

double Checkpoint::get_scalar(std::string_view name) const {
  const Tensor& t = get(name);
  if (t.numel() != 1) {
    throw CheckpointError(CheckpointErrc::kShapeMismatch,
                          "'" + std::string(name) + "' is not a scalar");
  }
  return t[0];
}

std::vector<std::uint8_t> Checkpoint::encode() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const Entry& e : entries_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(e.value.dtype()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
    for (std::int64_t d : e.value.shape()) {
      put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    }
    if (e.value.dtype() == DType::kFloat32) {
      for (double v : e.value.values()) put<float>(out, static_cast<float>(v));
    } else {
      for (double v : e.value.values()) put<double>(out, v);
    }
  }
  return out;
}

Checkpoint Checkpoint::decode(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(CheckpointErrc::kBadMagic,
                          "file does not start with \"RSFC\"");
  }
  r.take(4, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) {
    throw CheckpointError(CheckpointErrc::kVersionMismatch,
                          "file version " + std::to_string(version) +
                              ", reader version " + std::to_string(kVersion));
  }
  const auto count = r.get<std::uint32_t>("entry count");
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("name length");
    const auto* name_bytes = r.take(name_len, "name");
    std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
    const auto dtype_code = r.get<std::uint8_t>("dtype");
    if (dtype_code > 1) {
      throw CheckpointError(CheckpointErrc::kBadMagic,
                            "unknown dtype code " + std::to_string(dtype_code) +
                                " for '" + name + "'");
    }
    const auto dtype = static_cast<DType>(dtype_code);
    const auto rank = r.get<std::uint32_t>("rank");
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint64_t>("dims");
      shape.push_back(static_cast<std::int64_t>(d));
      n *= d;
    }
    const std::size_t width = dtype == DType::kFloat32 ? 4 : 8;
    if (n > r.remaining() / width) {
      throw CheckpointError(CheckpointErrc::kTruncated,
                            "tensor '" + name + "' extends past the end");
    }
    const auto* payload = r.take(n * width, "payload");
    std::vector<double> values(n);
    for (std::uint64_t k = 0; k < n; ++k) {
      if (dtype == DType::kFloat32) {
        float f;
        std::memcpy(&f, payload + 4 * k, 4);
        values[k] = f;
      } else {
        std::memcpy(&values[k], payload + 8 * k, 8);
      }
    }
    ckpt.add(std::move(name), Tensor::from_values(shape, std::move(values), dtype));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const auto bytes = ckpt.encode();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw CheckpointError(CheckpointErrc::kIo, "cannot open " + path + " for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrc::kIo, "write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrc::kIo, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return Checkpoint::decode(bytes);
}

}  // namespace rsf
