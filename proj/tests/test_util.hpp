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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mbl/rng.hpp"
#include "mbl/tensor.hpp"

namespace testutil {

inline mbl::Tensor random_tensor(mbl::Shape shape, mbl::Rng& rng, double lo = -1.0, double hi = 1.0,
                                 bool requires_grad = true) {
  std::vector<double> v(mbl::numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return mbl::Tensor(std::move(shape), v, requires_grad);
}

// Magnitudes in [0.05, 1], so relu and max kinks stay far outside eps.
inline mbl::Tensor kinkless_tensor(mbl::Shape shape, mbl::Rng& rng, bool requires_grad = true) {
  std::vector<double> v(mbl::numel(shape));
  for (double& x : v) {
    const double m = rng.uniform(0.05, 1.0);
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return mbl::Tensor(std::move(shape), v, requires_grad);
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mbl_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace testutil
