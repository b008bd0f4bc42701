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

#include "transvw/autodiff.hpp"

#include <unordered_set>

namespace tvw {
namespace {
thread_local bool g_recording = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }

bool grad_recording_enabled() { return g_recording; }

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.valid()) throw UsageError("backward on an empty variable");
  Node<T>* root = loss.node();
  if (root->consumed) {
    throw UsageError("backward called on an already consumed graph");
  }
  if (root->value.size() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " +
                     shape_to_string(root->value.shape()));
  }
  if (!root->requires_grad) {
    root->consumed = true;
    return;
  }

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && !child->is_leaf && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  root->grad_buffer().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->grad.empty() || !node->backward_fn) continue;
    node->backward_fn(node->grad);
  }

  for (Node<T>* node : order) {
    for (const auto& in : node->inputs) {
      if (in->is_leaf && in->requires_grad && !in->grad.all_finite()) {
        throw NumericalError("non-finite gradient flowing out of op '" +
                             node->op + "'");
      }
    }
  }
  for (Node<T>* node : order) {
    node->backward_fn = nullptr;
    node->inputs.clear();
    node->grad = Tensor<T>();
    node->consumed = true;
  }
}

template <typename T>
std::vector<Tensor<T>> gradients(const Var<T>& loss,
                                 std::span<const Var<T>> params) {
  for (const auto& p : params) const_cast<Var<T>&>(p).zero_grad();
  backward(loss);
  std::vector<Tensor<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.grad());
  return out;
}

template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);
template std::vector<Tensor<float>> gradients<float>(
    const Var<float>&, std::span<const Var<float>>);
template std::vector<Tensor<double>> gradients<double>(
    const Var<double>&, std::span<const Var<double>>);

}  // namespace tvw
