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

#include "mbl/train.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mbl/rng.hpp"

namespace mbl {

void WeakDataset::validate() const {
  if (clips.empty()) throw std::invalid_argument("training set is empty");
  if (labels.size() != clips.size()) {
    throw std::invalid_argument("every clip needs a weak label vector");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].size() != class_names.size()) {
      throw std::invalid_argument("clip '" + clips[i].clip_id + "' has " +
                                  std::to_string(labels[i].size()) + " labels, expected " +
                                  std::to_string(class_names.size()));
    }
    for (double y : labels[i]) {
      if (y != 0.0 && y != 1.0) {
        throw std::invalid_argument("clip '" + clips[i].clip_id + "' has a non-binary label");
      }
    }
    for (std::size_t k = 0; k < clips[i].features.size(); ++k) {
      if (!std::isfinite(clips[i].features[k])) {
        throw std::invalid_argument("clip '" + clips[i].clip_id + "' has a non-finite feature at frame " +
                                    std::to_string(k / std::max<std::size_t>(1, clips[i].bands)));
      }
    }
  }
}

Adam::Adam(std::vector<Tensor> params, const OptimizerConfig& config)
    : params_(std::move(params)), config_(config) {
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = config_.learning_rate;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    auto data = p.mutable_data();
    auto grad = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < data.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
      v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
      data[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.epsilon);
    }
  }
  zero_grad();
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

TrainResult train(SedModel& model, const WeakDataset& data, const EpochCallback& on_epoch) {
  data.validate();
  const ModelConfig& cfg = model.config();
  if (data.class_names != cfg.class_names) {
    throw std::invalid_argument("dataset classes differ from the model's classes");
  }
  std::vector<Tensor> params;
  for (auto& np : model.parameters()) params.push_back(np.tensor);
  Adam optimizer(params, cfg.optimizer);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = cfg.optimizer.batch_size;

  TrainResult result;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.optimizer.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5348554646ULL + epoch));
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch, ++step) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<const LogMelClip*> clips;
      std::vector<std::vector<double>> labels;
      for (std::size_t k = start; k < end; ++k) {
        clips.push_back(&data.clips[order[k]]);
        labels.push_back(data.labels[order[k]]);
      }
      Tape tape;
      Tensor features = model.encode(tape, stack_clips(clips), Mode::kTrain,
                                     mix_seed(cfg.seed, 0x44524F50ULL + step));
      Tensor loss = model.batch_loss(tape, features, labels);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite training loss " << value << " at epoch " << epoch << ", step " << step
            << " (learning rate " << cfg.optimizer.learning_rate << ")";
        throw std::runtime_error(msg.str());
      }
      tape.backward(loss);
      optimizer.step();
      loss_sum += value;
      ++batches;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    if (on_epoch) on_epoch(epoch, result.epoch_loss.back());
  }
  return result;
}

}  // namespace mbl
