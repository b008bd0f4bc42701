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

#include "transvw/training.hpp"

#include <algorithm>

#include "transvw/rng.hpp"

namespace tvw {

template <typename T>
Tensor<T> stack_batch(const std::vector<const Tensor<T>*>& samples) {
  if (samples.empty()) throw UsageError("cannot stack an empty batch");
  const Shape& s = samples.front()->shape();
  Shape shape{samples.size()};
  shape.insert(shape.end(), s.begin(), s.end());
  std::vector<T> data;
  data.reserve(shape_numel(shape));
  for (const auto* t : samples) {
    if (t->shape() != s) {
      throw UsageError("batch samples differ in shape: " + shape_to_string(s) +
                       " vs " + shape_to_string(t->shape()));
    }
    data.insert(data.end(), t->data().begin(), t->data().end());
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> unstack(const Tensor<T>& batch, std::size_t i) {
  if (batch.rank() < 2 || i >= batch.dim(0)) throw UsageError("unstack index out of range");
  Shape shape(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t n = shape_numel(shape);
  std::vector<T> data(batch.data().begin() + i * n, batch.data().begin() + (i + 1) * n);
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
  Tensor<T> out({labels.size(), classes});
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] >= classes) throw UsageError("label out of range");
    out[b * classes + labels[b]] = T(1);
  }
  return out;
}

template <typename T>
void apply_adam(const std::vector<Var<T>>& params, AdamState<T>& state) {
  std::vector<Tensor<T>*> values;
  std::vector<Tensor<T>> grads;
  values.reserve(params.size());
  grads.reserve(params.size());
  for (auto p : params) {
    grads.push_back(p.grad());
    values.push_back(&p.mutable_value());
  }
  adam_step<T>(values, grads, state);
  for (auto p : params) p.zero_grad();
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch,
                                                    std::uint64_t seed,
                                                    std::size_t epoch) {
  if (batch == 0) throw ConfigError("batch size must be >= 1");
  Rng rng(derive_seed(seed, "epoch", epoch));
  const auto order = rng.permutation(n);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch) {
    out.emplace_back(order.begin() + i, order.begin() + std::min(n, i + batch));
  }
  return out;
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& probs) {
  std::vector<std::size_t> out;
  const std::size_t C = probs.dim(1);
  for (std::size_t b = 0; b < probs.dim(0); ++b) {
    const auto row = probs.data().subspan(b * C, C);
    out.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

#define TVW_INSTANTIATE(T)                                                     \
  template Tensor<T> stack_batch(const std::vector<const Tensor<T>*>&);        \
  template Tensor<T> unstack(const Tensor<T>&, std::size_t);                   \
  template Tensor<T> one_hot(const std::vector<std::size_t>&, std::size_t);    \
  template void apply_adam(const std::vector<Var<T>>&, AdamState<T>&);         \
  template std::vector<std::size_t> argmax_rows(const Tensor<T>&);
TVW_INSTANTIATE(float)
TVW_INSTANTIATE(double)
#undef TVW_INSTANTIATE

}  // namespace tvw
