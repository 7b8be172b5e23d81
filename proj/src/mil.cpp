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

#include "mbl/mil.hpp"

#include <stdexcept>

#include "mbl/ops.hpp"

namespace mbl {
namespace {

void check_attention(const AttentionParams* attn, const Tensor& features, const char* where) {
  if (attn == nullptr || !attn->weight.defined()) {
    throw std::invalid_argument(std::string(where) + ": ATP requires attention parameters");
  }
  if (!(attn->scale > 0.0)) {
    throw std::invalid_argument(std::string(where) + ": attention scale d must be positive");
  }
  if (attn->weight.rank() != 2 || attn->feature_dim() != features.dim(1)) {
    throw ShapeError(std::string(where) + ": attention weight " + shape_str(attn->weight.shape()) +
                     " does not match features " + shape_str(features.shape()));
  }
}

void check_features(const Tensor& features, const char* where) {
  if (!features.defined() || features.rank() != 2) {
    throw ShapeError(std::string(where) + ": features must be a [T, E] matrix");
  }
}

// (w_c . x_t) for all t, c: [T, C]
Tensor attention_scores(Tape& tape, const Tensor& features, const AttentionParams& attn) {
  return matmul(tape, features, transpose(tape, attn.weight));
}

}  // namespace

std::string to_string(PoolMethod method) {
  switch (method) {
    case PoolMethod::kGmp: return "GMP";
    case PoolMethod::kGap: return "GAP";
    case PoolMethod::kAtp: return "ATP";
  }
  return "?";
}

std::string to_string(MilStrategy strategy) {
  return strategy == MilStrategy::kInstance ? "I" : "E";
}

Tensor attention_weights(Tape& tape, const Tensor& features, const AttentionParams& attn) {
  check_features(features, "attention_weights");
  check_attention(&attn, features, "attention_weights");
  Tensor scores = transpose(tape, attention_scores(tape, features, attn));
  return softmax(tape, scores, attn.scale);
}

Tensor attention_weights(Tape& tape, const Tensor& features, const AttentionParams& attn,
                         std::size_t cls) {
  if (cls >= attn.num_classes()) throw std::out_of_range("attention_weights: class out of range");
  Tensor all = attention_weights(tape, features, attn);
  if (all.dim(0) == 1) return reshape(tape, all, {all.dim(1)});
  return select(tape, all, cls);
}

Tensor classify_frames(Tape& tape, const Tensor& features, const Classifier& classifier) {
  check_features(features, "classify_frames");
  return sigmoid(tape, linear(tape, features, classifier.weight, classifier.bias));
}

Tensor classify_embeddings(Tape& tape, const Tensor& embeddings, const Classifier& classifier) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != classifier.num_classes() ||
      embeddings.dim(1) != classifier.feature_dim()) {
    throw ShapeError("classify_embeddings: embeddings " + shape_str(embeddings.shape()) +
                     " vs classifier " + shape_str(classifier.weight.shape()));
  }
  Tensor logits = reduce(tape, mul(tape, embeddings, transpose(tape, classifier.weight)), 1,
                         ReduceMode::kSum);
  return sigmoid(tape, add(tape, logits, classifier.bias));
}

Tensor instance_pool(Tape& tape, const Tensor& frame_probs, PoolMethod method,
                     const AttentionParams* attn, const Tensor* features) {
  if (!frame_probs.defined() || frame_probs.rank() != 2) {
    throw ShapeError("instance_pool: frame probabilities must be a [T, C] matrix");
  }
  for (double p : frame_probs.data()) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument("instance_pool: frame probabilities must lie in [0, 1]");
    }
  }
  switch (method) {
    case PoolMethod::kGmp:
      return reduce(tape, frame_probs, 0, ReduceMode::kMax);
    case PoolMethod::kGap:
      return reduce(tape, frame_probs, 0, ReduceMode::kMean);
    case PoolMethod::kAtp: {
      if (features == nullptr) {
        throw std::invalid_argument("instance_pool: ATP requires the frame features");
      }
      check_features(*features, "instance_pool");
      check_attention(attn, *features, "instance_pool");
      if (features->dim(0) != frame_probs.dim(0) || attn->num_classes() != frame_probs.dim(1)) {
        throw ShapeError("instance_pool: features/attention do not match frame probabilities");
      }
      Tensor weights = attention_weights(tape, *features, *attn);  // [C, T]
      return reduce(tape, mul(tape, weights, transpose(tape, frame_probs)), 1, ReduceMode::kSum);
    }
  }
  throw std::invalid_argument("instance_pool: unknown pooling method");
}

Tensor embedding_pool(Tape& tape, const Tensor& features, PoolMethod method,
                      std::size_t num_classes, const AttentionParams* attn) {
  check_features(features, "embedding_pool");
  switch (method) {
    case PoolMethod::kGmp:
      return broadcast_rows(tape, reduce(tape, features, 0, ReduceMode::kMax), num_classes);
    case PoolMethod::kGap:
      return broadcast_rows(tape, reduce(tape, features, 0, ReduceMode::kMean), num_classes);
    case PoolMethod::kAtp: {
      check_attention(attn, features, "embedding_pool");
      if (attn->num_classes() != num_classes) {
        throw ShapeError("embedding_pool: attention class count differs from num_classes");
      }
      return matmul(tape, attention_weights(tape, features, *attn), features);
    }
  }
  throw std::invalid_argument("embedding_pool: unknown pooling method");
}

Tensor frame_probabilities(Tape& tape, MilStrategy strategy, PoolMethod method,
                           const Tensor& features, const Classifier& classifier,
                           const AttentionParams* attn) {
  check_features(features, "frame_probabilities");
  if (strategy == MilStrategy::kEmbedding && method == PoolMethod::kAtp) {
    check_attention(attn, features, "frame_probabilities");
    return sigmoid(tape, scale(tape, attention_scores(tape, features, *attn), 1.0 / attn->scale));
  }
  return classify_frames(tape, features, classifier);
}

Tensor clip_probabilities(Tape& tape, MilStrategy strategy, PoolMethod method,
                          const Tensor& features, const Classifier& classifier,
                          const AttentionParams* attn) {
  if (strategy == MilStrategy::kInstance) {
    return instance_pool(tape, classify_frames(tape, features, classifier), method, attn,
                         &features);
  }
  return classify_embeddings(
      tape, embedding_pool(tape, features, method, classifier.num_classes(), attn), classifier);
}

}  // namespace mbl
