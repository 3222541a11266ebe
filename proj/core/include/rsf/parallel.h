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

#ifndef RSF_PARALLEL_H_
#define RSF_PARALLEL_H_

#include <cstdint>
#include <functional>

namespace rsf {

// Worker count used by parallel_for. Defaults to the RSF_THREADS environment
// variable when set, otherwise std::thread::hardware_concurrency().
int thread_count();
void set_thread_count(int n);

// Runs fn(i) for i in [begin, end). Each index is handled by exactly one
// worker, so callers that write disjoint outputs per index stay deterministic.
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& fn);

// RAII override of the worker count.
class ScopedThreadCount {
 public:
  explicit ScopedThreadCount(int n);
  ~ScopedThreadCount();
  ScopedThreadCount(const ScopedThreadCount&) = delete;
  ScopedThreadCount& operator=(const ScopedThreadCount&) = delete;

 private:
  int previous_;
};

}  // namespace rsf

#endif  // RSF_PARALLEL_H_
