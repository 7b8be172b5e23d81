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
#include <stdexcept>
#include <string>

#include "mbl/model.hpp"

namespace mbl {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// FNV-1a over the model code version and the canonical config JSON.
std::uint64_t config_digest(const ModelConfig& config);

// Layout (all integers little-endian):
//   "MBL1" | u64 digest | u32 len + code version | u64 len + config JSON |
//   u64 count | count x (u32 len + name, u32 rank, rank x u64 dim, u64 offset) |
//   f64 values
// Offsets count doubles from the start of the value section. Batch-norm
// running statistics are stored next to the trainable parameters.
std::string encode_checkpoint(const SedModel& model);
SedModel decode_checkpoint(const std::string& bytes, const std::string& source = "<memory>");

void save_checkpoint(const SedModel& model, const std::filesystem::path& path);
// Refuses checkpoints whose digest does not match this build's model code.
SedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace mbl
