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

#ifndef RSF_TENSOR_H_
#define RSF_TENSOR_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsf {

// Storage precision. Values always live in a double buffer; float32 tensors
// hold values that are exactly representable as float (every op result is
// rounded on construction), so checkpoints and equivalence tests see true
// float32 storage while reductions accumulate in double.
enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

const char* dtype_name(DType dtype);

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// File access and on-disk format problems.
class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {
struct Node;
}  // namespace detail

// Receives the gradient of the loss w.r.t. an op's output.
using BackwardFn = std::function<void(std::span<const double> out_grad)>;

// Handle to a dense row-major tensor. Copies share the underlying buffer
// (and autograd node); use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::kFloat64);
  static Tensor full(Shape shape, double value, DType dtype = DType::kFloat64);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            DType dtype = DType::kFloat64);
  static Tensor scalar(double value, DType dtype = DType::kFloat64);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const;
  DType dtype() const;

  std::span<const double> values() const;
  // Direct write access for parameter initialization and optimizer updates.
  // Call quantize() afterwards on float32 tensors.
  std::span<double> mutable_values();
  void quantize();
  double item() const;
  double operator[](std::int64_t i) const { return values()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  // Zero-initialized on first access.
  std::span<double> grad_sink() const;
  void zero_grad();

  // Reverse-mode pass from a scalar tracked tensor.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;
  Tensor to(DType dtype) const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape, DType, std::vector<double>,
                            const std::vector<Tensor>&, BackwardFn);

  std::shared_ptr<detail::Node> node_;
};

// Builds an op output. When gradient recording is enabled and any input
// requires grad, the result is tracked and `backward` is invoked with the
// output gradient during Tensor::backward().
Tensor make_result(Shape shape, DType dtype, std::vector<double> values,
                   const std::vector<Tensor>& inputs, BackwardFn backward);

DType promote(const std::vector<Tensor>& inputs);
double round_to(DType dtype, double v);

bool grad_enabled();

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace rsf

#endif  // RSF_TENSOR_H_
