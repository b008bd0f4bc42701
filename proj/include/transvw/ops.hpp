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

#include <cstddef>

#include "transvw/autodiff.hpp"

// Differentiable layer set for U-Net style encoder-decoders. Activations are
// laid out [batch, channels, spatial...] with one to three spatial axes.
namespace tvw::ops {

struct ConvParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Output extent per axis is floor((in + 2*padding - k) / stride) + 1.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel,
                               std::size_t stride, std::size_t padding);

// input [B, Cin, s...], kernel [Cout, Cin, k...], bias [Cout].
template <typename T>
Var<T> conv(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias,
            ConvParams params = {});

// Nearest-neighbour resize by an integer factor along every spatial axis.
template <typename T>
Var<T> upsample_nearest(const Var<T>& input, std::size_t factor = 2);

// Channel concatenation of two activations with equal batch/spatial extents.
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

// input [B, In], weight [Out, In], bias [Out].
template <typename T>
Var<T> dense(const Var<T>& input, const Var<T>& weight, const Var<T>& bias);

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> sigmoid(const Var<T>& x);

// Softmax over axis 1 of a [B, C] tensor, max-subtracted.
template <typename T>
Var<T> softmax(const Var<T>& logits);

// [B, C, s...] -> [B, C]
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

// [B, ...] -> [B, prod(...)]
template <typename T>
Var<T> flatten(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& x, T factor);

template <typename T>
Var<T> sum(const Var<T>& x);

// --- losses (all return a scalar of shape [1]) ---

// -(1/B) sum_b sum_c Y_bc log(max(P_bc, 1e-12)). Y rows must be exactly
// one-hot and P rows must sum to one.
template <typename T>
Var<T> categorical_cross_entropy(const Var<T>& probs, const Tensor<T>& onehot);

// (1/B) sum_i ||x_i - x'_i||_2 over flattened samples; with `squared`,
// (1/B) sum_i ||x_i - x'_i||_2^2.
template <typename T>
Var<T> restoration_loss(const Var<T>& original, const Var<T>& restored,
                        bool squared = false);

template <typename T>
Var<T> mse(const Var<T>& prediction, const Tensor<T>& target);

// Mean binary cross-entropy of probabilities against {0,1} targets.
template <typename T>
Var<T> binary_cross_entropy(const Var<T>& probs, const Tensor<T>& target);

// Row-sum tolerance used by categorical_cross_entropy's precondition.
template <typename T>
constexpr double probability_row_tolerance() {
  return sizeof(T) >= 8 ? 1e-9 : 1e-5;
}

}  // namespace tvw::ops
