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

#ifndef RSF_CHECKPOINT_H_
#define RSF_CHECKPOINT_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "rsf/tensor.h"

namespace rsf {

enum class CheckpointErrc : std::uint8_t {
  kIo,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kDuplicateName,
  kUnknownName,
  kMissingName,
  kShapeMismatch,
};

const char* checkpoint_errc_name(CheckpointErrc code);

class CheckpointError : public IoError {
 public:
  CheckpointError(CheckpointErrc code, const std::string& message)
      : IoError(std::string(checkpoint_errc_name(code)) + ": " + message),
        code_(code) {}
  CheckpointErrc code() const { return code_; }

 private:
  CheckpointErrc code_;
};

// Ordered list of uniquely named tensors.
//
// Binary layout (little-endian):
//   "RSFC" | u32 version | u32 count |
//   count x (u32 name_len | name | u8 dtype | u32 rank | rank x u64 dim |
//            payload: numel x f32 or f64)
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  struct Entry {
    std::string name;
    Tensor value;
  };

  // Stores a detached copy. Throws kDuplicateName.
  void add(std::string name, const Tensor& value);
  void add_scalar(std::string name, double value);
  bool contains(std::string_view name) const;
  // Throws kUnknownName.
  const Tensor& get(std::string_view name) const;
  double get_scalar(std::string_view name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::vector<std::uint8_t> encode() const;
  static Checkpoint decode(std::span<const std::uint8_t> bytes);

 private:
  std::vector<Entry> entries_;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace rsf

#endif  // RSF_CHECKPOINT_H_
