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

#include <string>

#include "mbl/tensor.hpp"

namespace mbl {

enum class PoolMethod { kGmp, kGap, kAtp };
enum class MilStrategy { kInstance, kEmbedding };

std::string to_string(PoolMethod method);
std::string to_string(MilStrategy strategy);

// Class-wise attention vectors w_c stored as rows of a [C, E] matrix, plus
// the softmax temperature d.
struct AttentionParams {
  Tensor weight;
  double scale = 1.0;

  std::size_t num_classes() const { return weight.dim(0); }
  std::size_t feature_dim() const { return weight.dim(1); }
};

// Affine map followed by a per-class sigmoid. weight is [E, C], bias [C].
struct Classifier {
  Tensor weight;
  Tensor bias;

  std::size_t num_classes() const { return weight.dim(1); }
  std::size_t feature_dim() const { return weight.dim(0); }
};

// features[T, E] -> a[C, T]; row c is softmax_t((w_c . x_t) / d).
Tensor attention_weights(Tape& tape, const Tensor& features, const AttentionParams& attn);
// Single class: a_c[T].
Tensor attention_weights(Tape& tape, const Tensor& features, const AttentionParams& attn,
                         std::size_t cls);

// sigmoid(features · W + b): [T, E] -> [T, C]
Tensor classify_frames(Tape& tape, const Tensor& features, const Classifier& classifier);
// Class-specific embeddings h[C, E] -> p[C] with p_c = sigmoid(h_c . W[:, c] + b_c).
Tensor classify_embeddings(Tape& tape, const Tensor& embeddings, const Classifier& classifier);

// Instance-level pooling of frame probabilities [T, C] into clip
// probabilities [C]. ATP derives its weights from `features` and `attn`.
Tensor instance_pool(Tape& tape, const Tensor& frame_probs, PoolMethod method,
                     const AttentionParams* attn = nullptr, const Tensor* features = nullptr);

// Embedding-level pooling of features [T, E] into h[C, E]. GMP and GAP are
// class independent; their single embedding is replicated over the
// `num_classes` rows.
Tensor embedding_pool(Tape& tape, const Tensor& features, PoolMethod method,
                      std::size_t num_classes, const AttentionParams* attn = nullptr);

// Frame-level probabilities [T, C] used for detection.
//   instance level         : classifier per frame
//   embedding level GMP/GAP: classifier per frame
//   embedding level ATP    : sigmoid((w_c . x_t) / d)
Tensor frame_probabilities(Tape& tape, MilStrategy strategy, PoolMethod method,
                           const Tensor& features, const Classifier& classifier,
                           const AttentionParams* attn = nullptr);

// Clip-level probabilities [C] of one branch.
Tensor clip_probabilities(Tape& tape, MilStrategy strategy, PoolMethod method,
                          const Tensor& features, const Classifier& classifier,
                          const AttentionParams* attn = nullptr);

}  // namespace mbl
