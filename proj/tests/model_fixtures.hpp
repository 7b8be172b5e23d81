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

#include <algorithm>

#include "mbl/model.hpp"
#include "mbl/rng.hpp"
#include "mbl/train.hpp"

namespace testutil {

using namespace mbl;

inline const std::vector<std::string> kClasses{"a", "b", "c"};

// Tiny encoder for fast tests: 2 blocks, 64 -> 4 bands.
inline ModelConfig tiny(std::vector<std::string> branches, std::uint64_t seed = 1) {
  ModelConfig m = ModelConfig::small(kClasses, parse_branches(branches));
  m.encoder.resize(2);
  m.encoder[0].out_channels = 4;
  m.encoder[0].freq_pool = 4;
  m.encoder[1].out_channels = 4;
  m.encoder[1].freq_pool = 4;
  m.attention_scale = static_cast<double>(m.feature_dim()) / 2.5;
  m.optimizer.batch_size = 4;
  m.seed = seed;
  return m;
}

// Class k raises bands [16k, 16k + 12) in frames [5k, 5k + 10).
inline WeakDataset toy_dataset(std::size_t n, std::size_t frames, std::uint64_t seed) {
  Rng rng(seed);
  WeakDataset d;
  d.class_names = kClasses;
  for (std::size_t i = 0; i < n; ++i) {
    LogMelClip clip;
    clip.frames = frames;
    clip.bands = 64;
    clip.frame_hop_seconds = 0.02;
    clip.clip_id = "toy" + std::to_string(i);
    clip.features.resize(frames * 64);
    for (double& v : clip.features) v = rng.uniform(-1.0, 1.0);
    std::vector<double> y(3, 0.0);
    for (std::size_t k = 0; k < 3; ++k) {
      if (rng.uniform() < 0.5) continue;
      y[k] = 1.0;
      for (std::size_t t = 5 * k; t < std::min(frames, 5 * k + 10); ++t)
        for (std::size_t b = 16 * k; b < 16 * k + 12; ++b) clip.features[t * 64 + b] += 3.0;
    }
    d.clips.push_back(std::move(clip));
    d.labels.push_back(y);
  }
  return d;
}

inline std::vector<std::vector<double>> snapshot(const SedModel& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  for (const auto& [name, buf] : m.buffers()) out.push_back(*buf);
  return out;
}

}  // namespace testutil
