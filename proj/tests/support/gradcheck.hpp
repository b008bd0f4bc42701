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

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "transvw/autodiff.hpp"
#include "transvw/rng.hpp"

namespace tvw::testing {

// Central finite differences against reverse-mode gradients at 64-bit.
// Element error is |analytic - numeric| / max(|analytic|, |numeric|, floor);
// the floor keeps entries that are zero up to round-off from dominating.
struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

inline GradCheckResult grad_check(const std::function<Var<double>()>& loss_fn,
                                  const std::vector<Var<double>>& wrt,
                                  double h = 1e-5, double floor = 1e-5) {
  for (auto v : wrt) v.zero_grad();
  Var<double> loss = loss_fn();
  backward(loss);
  std::vector<Tensor<double>> analytic;
  for (const auto& v : wrt) analytic.push_back(v.grad());

  GradCheckResult result;
  for (std::size_t p = 0; p < wrt.size(); ++p) {
    Var<double> v = wrt[p];
    Tensor<double>& value = v.mutable_value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      double plus, minus;
      {
        NoGradGuard guard;
        value[i] = saved + h;
        plus = loss_fn().value()[0];
        value[i] = saved - h;
        minus = loss_fn().value()[0];
      }
      value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic[p][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      result.max_relative_error =
          std::max(result.max_relative_error, std::abs(a - numeric) / denom);
      ++result.checked;
    }
  }
  return result;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0,
                        double hi = 1.0) {
  Rng rng(seed);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace tvw::testing
