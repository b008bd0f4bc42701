// Copyright 2026 The transvw Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "transvw/tensor.hpp"

namespace tvw {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated lazily on first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  bool consumed = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> inputs;
  // Receives dLoss/dValue and accumulates into the inputs' grads.
  std::function<void(const Tensor<T>&)> backward_fn;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>::zeros_like(value);
    return grad;
  }
};

// Handle to a node of the define-by-run graph. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;

  static Var constant(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->op = "constant";
    return Var(std::move(node));
  }

  static Var parameter(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = true;
    node->op = "parameter";
    return Var(std::move(node));
  }

  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool valid() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Zero tensor of matching shape when no gradient has reached this node.
  const Tensor<T>& grad() const { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Tensor<T>(); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled();

// Records a result node. The backward closure is stored only when recording
// is on and at least one input requires a gradient.
template <typename T>
Var<T> record(Tensor<T> value, std::string op,
              std::vector<Var<T>> inputs,
              std::function<void(const Tensor<T>&)> backward_fn) {
  if (!value.all_finite()) {
    throw NumericalError("non-finite output from op '" + op + "'");
  }
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = std::move(op);
  node->is_leaf = false;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any && grad_recording_enabled()) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.shared());
    node->backward_fn = std::move(backward_fn);
  }
  return Var<T>(std::move(node));
}

// Reverse sweep from a scalar loss. Leaf gradients accumulate; intermediate
// nodes are released afterwards and the loss is marked consumed.
template <typename T>
void backward(const Var<T>& loss);

// Zeroes the given parameters' grads, runs backward and returns a copy of
// each gradient (zeros for parameters the loss does not reach).
template <typename T>
std::vector<Tensor<T>> gradients(const Var<T>& loss,
                                 std::span<const Var<T>> params);

}  // namespace tvw
