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

#include "mbl/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace mbl {

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& input,
                  double eps) {
  Tensor x(input.shape(), std::vector<double>(input.data().begin(), input.data().end()), true);
  return grad_check([&](Tape& tape) { return f(tape, x); }, std::vector<Tensor>{x}, eps);
}

double grad_check(const std::function<Tensor(Tape&)>& f, std::vector<Tensor> params, double eps,
                  std::size_t max_coords_per_tensor) {
  for (Tensor& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape tape;
    Tensor loss = f(tape);
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.size(), 0.0);
    }
  }

  auto evaluate = [&]() {
    Tape tape;
    return f(tape).item();
  };

  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = params[t];
    const std::size_t n = p.size();
    std::size_t step = 1;
    if (max_coords_per_tensor > 0 && n > max_coords_per_tensor) {
      step = (n + max_coords_per_tensor - 1) / max_coords_per_tensor;
    }
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < n; i += step) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double plus = evaluate();
      data[i] = saved - eps;
      const double minus = evaluate();
      data[i] = saved;
      const double fd = (plus - minus) / (2.0 * eps);
      const double ad = analytic[t][i];
      const double rel = std::abs(fd - ad) / std::max(1e-8, std::abs(fd) + std::abs(ad));
      worst = std::max(worst, rel);
    }
  }
  for (Tensor& p : params) p.zero_grad();
  return worst;
}

}  // namespace mbl
