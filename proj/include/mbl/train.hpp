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
#include <string>
#include <vector>

#include "mbl/logmel.hpp"
#include "mbl/model.hpp"

namespace mbl {

// Clips with clip-level (weak) label vectors, one entry per class.
struct WeakDataset {
  std::vector<std::string> class_names;
  std::vector<LogMelClip> clips;
  std::vector<std::vector<double>> labels;

  std::size_t size() const { return clips.size(); }
  void validate() const;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, const OptimizerConfig& config);

  // Applies one update from the accumulated gradients, then clears them.
  void step();
  void zero_grad();
  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  OptimizerConfig config_;
  std::size_t t_ = 0;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

// Mini-batch Adam on the weighted multi-branch loss. Shuffle order and
// dropout masks derive from config().seed, so identical inputs give
// bit-identical parameters.
TrainResult train(SedModel& model, const WeakDataset& data, const EpochCallback& on_epoch = {});

}  // namespace mbl
