// Copyright 2026 The MBL Authors. All Rights Reserved.
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
#include <vector>

#include "mbl/tensor.hpp"

namespace mbl {

// Compares tape gradients with central differences
// (f(x+eps) - f(x-eps)) / (2 eps), coordinate by coordinate, and returns the
// largest |g_fd - g_ad| / max(1e-8, |g_fd| + |g_ad|).
//
// `f` must return a scalar and must be deterministic across calls.
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& input,
                  double eps = 1e-5);

// Multi-tensor variant: `f` reads `params` by handle (e.g. model parameters)
// and each of them is perturbed in place. `max_coords_per_tensor` bounds the
// work on large tensors; coordinates are then taken with a fixed stride.
double grad_check(const std::function<Tensor(Tape&)>& f, std::vector<Tensor> params,
                  double eps = 1e-5, std::size_t max_coords_per_tensor = 0);

}  // namespace mbl
