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

#include "transvw/adam.hpp"

#include <cmath>

namespace tvw {

template <typename T>
void adam_step(std::span<Tensor<T>* const> params,
               std::span<const Tensor<T>> grads, AdamState<T>& state) {
  const AdamConfig& c = state.config;
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) {
    throw ConfigError("adam: learning rate must be finite and non-negative");
  }
  if (c.beta1 < 0.0 || c.beta1 >= 1.0 || c.beta2 < 0.0 || c.beta2 >= 1.0 ||
      c.epsilon <= 0.0) {
    throw ConfigError("adam: betas must lie in [0, 1) and epsilon be positive");
  }
  if (params.size() != grads.size()) {
    throw ConfigError("adam: " + std::to_string(params.size()) +
                      " parameters but " + std::to_string(grads.size()) +
                      " gradients");
  }
  if (state.first_moment.empty()) {
    for (const Tensor<T>* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ConfigError("adam: state holds " +
                      std::to_string(state.first_moment.size()) +
                      " accumulators for " + std::to_string(params.size()) +
                      " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() ||
        state.first_moment[i].shape() != grads[i].shape()) {
      throw ConfigError("adam: shape mismatch at parameter " + std::to_string(i) +
                        ": " + shape_to_string(params[i]->shape()) + " vs grad " +
                        shape_to_string(grads[i].shape()));
    }
  }

  ++state.step;
  const T b1 = static_cast<T>(c.beta1);
  const T b2 = static_cast<T>(c.beta2);
  const T lr = static_cast<T>(c.learning_rate);
  const T eps = static_cast<T>(c.epsilon);
  const T corr1 =
      T(1) - static_cast<T>(std::pow(c.beta1, static_cast<double>(state.step)));
  const T corr2 =
      T(1) - static_cast<T>(std::pow(c.beta2, static_cast<double>(state.step)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i]->data().data();
    const T* g = grads[i].data().data();
    T* m = state.first_moment[i].data().data();
    T* v = state.second_moment[i].data().data();
    for (std::size_t k = 0; k < grads[i].size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      const T m_hat = m[k] / corr1;
      const T v_hat = v[k] / corr2;
      p[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template void adam_step<float>(std::span<Tensor<float>* const>,
                               std::span<const Tensor<float>>,
                               AdamState<float>&);
template void adam_step<double>(std::span<Tensor<double>* const>,
                                std::span<const Tensor<double>>,
                                AdamState<double>&);

}  // namespace tvw
