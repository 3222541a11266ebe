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

#include "rsf/tensor.h"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace rsf {
namespace detail {

struct Node {
  Shape shape;
  DType dtype = DType::kFloat64;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

void check_shape(const Shape& shape) {
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] < 1) {
      throw ShapeError("tensor extent at axis " + std::to_string(i) +
                       " must be >= 1, got " + std::to_string(shape[i]));
    }
  }
}

std::shared_ptr<detail::Node> new_node(Shape shape, DType dtype,
                                       std::vector<double> values) {
  check_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != numel(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->dtype = dtype;
  node->values = std::move(values);
  if (dtype == DType::kFloat32) {
    for (double& v : node->values) v = static_cast<float>(v);
  }
  return node;
}

}  // namespace

const char* dtype_name(DType dtype) {
  return dtype == DType::kFloat32 ? "float32" : "float64";
}

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

double round_to(DType dtype, double v) {
  return dtype == DType::kFloat32 ? static_cast<double>(static_cast<float>(v))
                                  : v;
}

DType promote(const std::vector<Tensor>& inputs) {
  for (const auto& t : inputs) {
    if (t.defined() && t.dtype() == DType::kFloat64) return DType::kFloat64;
  }
  return inputs.empty() ? DType::kFloat64 : DType::kFloat32;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::zeros(Shape shape, DType dtype) {
  auto n = rsf::numel(shape);
  check_shape(shape);
  return Tensor(new_node(std::move(shape), dtype, std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  check_shape(shape);
  auto n = rsf::numel(shape);
  return Tensor(
      new_node(std::move(shape), dtype, std::vector<double>(n, value)));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           DType dtype) {
  return Tensor(new_node(std::move(shape), dtype, std::move(values)));
}

Tensor Tensor::scalar(double value, DType dtype) {
  return from_values({1}, {value}, dtype);
}

const Shape& Tensor::shape() const {
  if (!node_) throw Error("use of undefined tensor");
  return node_->shape;
}

std::int64_t Tensor::dim(int axis) const {
  const auto& s = shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  return s[axis];
}

std::int64_t Tensor::numel() const { return rsf::numel(shape()); }

DType Tensor::dtype() const {
  if (!node_) throw Error("use of undefined tensor");
  return node_->dtype;
}

std::span<const double> Tensor::values() const {
  if (!node_) throw Error("use of undefined tensor");
  return node_->values;
}

std::span<double> Tensor::mutable_values() {
  if (!node_) throw Error("use of undefined tensor");
  return node_->values;
}

void Tensor::quantize() {
  if (node_ && node_->dtype == DType::kFloat32) {
    for (double& v : node_->values) v = static_cast<float>(v);
  }
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() requires a single-element tensor, got " +
                     shape_str(shape()));
  }
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!node_) throw Error("use of undefined tensor");
  node_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) throw Error("use of undefined tensor");
  return node_->grad;
}

std::span<double> Tensor::grad_sink() const {
  if (!node_) throw Error("use of undefined tensor");
  if (node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  if (!node_) throw Error("backward() on undefined tensor");
  if (numel() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " +
                     shape_str(shape()));
  }
  if (!node_->requires_grad) {
    throw Error("backward() on a tensor that does not require grad");
  }

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  if (node_->grad.empty()) node_->grad.assign(1, 0.0);
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(node->grad);
  }
}

Tensor Tensor::detach() const {
  if (!node_) return {};
  return Tensor(new_node(node_->shape, node_->dtype, node_->values));
}

Tensor Tensor::clone() const {
  if (!node_) return {};
  auto node = new_node(node_->shape, node_->dtype, node_->values);
  node->requires_grad = node_->requires_grad && node_->parents.empty();
  return Tensor(node);
}

Tensor Tensor::to(DType dtype) const {
  if (!node_) return {};
  return Tensor(new_node(node_->shape, dtype, node_->values));
}

Tensor make_result(Shape shape, DType dtype, std::vector<double> values,
                   const std::vector<Tensor>& inputs, BackwardFn backward) {
  auto node = new_node(std::move(shape), dtype, std::move(values));
  if (g_grad_enabled && backward) {
    bool tracked = false;
    for (const auto& in : inputs) tracked = tracked || in.requires_grad();
    if (tracked) {
      node->requires_grad = true;
      for (const auto& in : inputs) {
        if (in.requires_grad()) node->parents.push_back(in.node_);
      }
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

}  // namespace rsf
