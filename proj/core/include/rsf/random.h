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

#ifndef RSF_RANDOM_H_
#define RSF_RANDOM_H_

#include <cstdint>
#include <random>
#include <string_view>

#include "rsf/tensor.h"

namespace rsf {

// Seeded generator with platform-stable uniform/normal draws. The standard
// <random> distributions are implementation-defined, so draws are derived
// from raw mt19937_64 bits instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Independent stream named `stream` under `seed` (e.g. "init", "augment").
  static Rng derive(std::uint64_t seed, std::string_view stream);

  std::uint64_t next_u64() { return engine_(); }
  // [0, 1)
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // [0, n)
  std::int64_t uniform_int(std::int64_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix_seed(std::uint64_t seed, std::string_view stream);

Tensor random_uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                      DType dtype = DType::kFloat64);
Tensor random_normal(Shape shape, Rng& rng, double stddev = 1.0,
                     DType dtype = DType::kFloat64);

}  // namespace rsf

#endif  // RSF_RANDOM_H_
