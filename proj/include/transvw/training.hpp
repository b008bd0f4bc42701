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

#include <cstdint>
#include <string>
#include <vector>

#include "transvw/adam.hpp"
#include "transvw/autodiff.hpp"

// Small helpers shared by the training loops.
namespace tvw {

// Stacks equally shaped samples into [B, sample shape...].
template <typename T>
Tensor<T> stack_batch(const std::vector<const Tensor<T>*>& samples);

// Sample i of a [B, ...] batch.
template <typename T>
Tensor<T> unstack(const Tensor<T>& batch, std::size_t i);

template <typename T>
Tensor<T> one_hot(const std::vector<std::size_t>& labels, std::size_t classes);

// Adam update from the gradients currently held by `params`; clears them.
template <typename T>
void apply_adam(const std::vector<Var<T>>& params, AdamState<T>& state);

// Shuffled mini-batches for one epoch; the order depends only on
// (seed, epoch). The last batch may be short.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch,
                                                    std::uint64_t seed,
                                                    std::size_t epoch);

// Row-wise argmax of a [B, C] tensor.
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& probs);

}  // namespace tvw
