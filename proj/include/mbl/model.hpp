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

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "mbl/logmel.hpp"
#include "mbl/mil.hpp"
#include "mbl/ops.hpp"
#include "mbl/tensor.hpp"

namespace mbl {

// Bumped whenever a change alters what a checkpoint's parameters mean.
inline constexpr const char* kModelCodeVersion = "mbl-model-1";

struct CnnBlockSpec {
  std::size_t out_channels = 40;
  std::array<std::size_t, 2> kernel{3, 3};
  std::size_t freq_pool = 1;
  std::size_t time_pool = 1;
  double dropout = 0.0;
};

struct BranchSpec {
  MilStrategy strategy = MilStrategy::kEmbedding;
  PoolMethod method = PoolMethod::kAtp;
  double loss_weight = 1.0;

  bool is_main() const { return strategy == MilStrategy::kEmbedding; }
  std::string name() const;  // "E-ATP", "I-GMP", ...
};

// Parses "E-ATP" style names. Main branches get weight `alpha`, auxiliary
// ones `beta`.
BranchSpec parse_branch(const std::string& name, double alpha = 1.0, double beta = 0.5);
std::vector<BranchSpec> parse_branches(const std::vector<std::string>& names, double alpha = 1.0,
                                       double beta = 0.5);
std::string branch_list_name(const std::vector<BranchSpec>& branches);  // "E-ATP + I-GAP"

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 16;
  std::size_t epochs = 60;
};

struct ModelConfig {
  std::vector<CnnBlockSpec> encoder;
  std::size_t input_bands = 64;
  std::vector<std::string> class_names;
  std::vector<BranchSpec> branches;
  double attention_scale = 64.0;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;

  std::size_t num_classes() const { return class_names.size(); }
  std::size_t output_bands() const;
  std::size_t feature_dim() const;
  std::size_t time_reduction() const;
  std::size_t main_branch_index() const;

  // Throws std::invalid_argument on any broken invariant.
  void validate() const;

  // 3 blocks x 40 channels, frequency pooling 4/2/2: E = 40 * 4 = 160,
  // d = 160 / 2.5.
  static ModelConfig small(std::vector<std::string> classes, std::vector<BranchSpec> branches);
  // 9 blocks with dropout 0.3, channels up to 256, frequency pooled to 4
  // bins: E = 1024, d = 1024 / 3.
  static ModelConfig large(std::vector<std::string> classes, std::vector<BranchSpec> branches);
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct ClipPrediction {
  std::vector<double> clip_probs;   // [C]
  std::vector<double> frame_probs;  // [T', C] row-major
  std::size_t frames = 0;
  std::size_t classes = 0;
};

// Shared CNN encoder plus one embedding-level main branch and any number of
// instance-level auxiliary branches, each with its own classifier.
class SedModel {
 public:
  struct Block {
    Tensor kernel, bias, gamma, beta;
    BatchNormState bn;
  };
  struct Branch {
    BranchSpec spec;
    Classifier classifier;
    std::optional<AttentionParams> attention;
  };

  explicit SedModel(ModelConfig config);

  // Parameters are shared handles, so copies must be explicit.
  SedModel(const SedModel&) = delete;
  SedModel& operator=(const SedModel&) = delete;
  SedModel(SedModel&&) = default;
  SedModel& operator=(SedModel&&) = default;

  SedModel clone() const;

  const ModelConfig& config() const { return config_; }
  const std::vector<Branch>& branches() const { return branches_; }
  const Branch& main_branch() const { return branches_[config_.main_branch_index()]; }

  // batch[N, 1, T, F] -> features[N, T', E]. Train mode uses batch statistics
  // and updates the running ones; dropout masks derive from `dropout_seed`.
  Tensor encode(Tape& tape, const Tensor& batch, Mode mode, std::uint64_t dropout_seed = 0);
  // Single clip in eval mode: [T', E]. Does not modify the model.
  Tensor encode(const LogMelClip& clip) const;

  // Clip probabilities [C] of every branch, in branch order.
  std::vector<Tensor> forward_multibranch(Tape& tape, const Tensor& features) const;
  // Main-branch frame probabilities [T', C].
  Tensor main_frame_probabilities(Tape& tape, const Tensor& features) const;

  // Main-branch inference; auxiliary branches are never consulted.
  ClipPrediction predict(const LogMelClip& clip) const;

  // Weighted multi-branch loss averaged over the batch.
  Tensor batch_loss(Tape& tape, const Tensor& features,
                    std::span<const std::vector<double>> labels) const;

  std::vector<NamedTensor> parameters() const;
  // Running statistics (not trained by gradient).
  std::vector<std::pair<std::string, std::vector<double>*>> buffers();
  std::vector<std::pair<std::string, const std::vector<double>*>> buffers() const;

  // Copy holding only the encoder and the main branch.
  SedModel main_only() const;

 private:
  SedModel(ModelConfig config, bool initialize);
  void initialize_parameters();

  ModelConfig config_;
  std::vector<Block> blocks_;
  std::vector<Branch> branches_;
};

// -sum_c [y_c log p_c + (1 - y_c) log(1 - p_c)], p clamped to [1e-7, 1 - 1e-7].
Tensor clip_loss(Tape& tape, const Tensor& clip_probs, std::span<const double> labels);

// alpha * main + beta * sum(aux)
Tensor total_loss(Tape& tape, const Tensor& main_loss, const std::vector<Tensor>& aux_losses,
                  double alpha = 1.0, double beta = 0.5);

// Stacks equally long clips into [N, 1, T, F].
Tensor stack_clips(std::span<const LogMelClip* const> clips);

}  // namespace mbl
