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
#include <vector>

#include "mbl/tensor.hpp"

namespace mbl {

// Every op below is a pure function of its inputs. When any input requires a
// gradient the op appends its backward rule to `tape`; otherwise the tape is
// left untouched.

// Elementwise, identical shapes.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);

Tensor scale(Tape& tape, const Tensor& x, double factor);
Tensor add_scalar(Tape& tape, const Tensor& x, double value);

// x[..., C] + bias[C]
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias);

Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
// Natural log; throws DomainError on nonpositive entries.
Tensor log(Tape& tape, const Tensor& x);
// Gradient passes only where lo <= x <= hi.
Tensor clamp(Tape& tape, const Tensor& x, double lo, double hi);
// Inverted dropout. Identity in eval mode or when p == 0. The mask is a pure
// function of `seed`.
Tensor dropout(Tape& tape, const Tensor& x, double p, std::uint64_t seed, Mode mode);

// a[M,K] x b[K,N]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& x);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);
// out.shape[i] = x.shape[order[i]]
Tensor permute(Tape& tape, const Tensor& x, const std::vector<std::size_t>& order);
// x[index, ...] with the leading axis dropped.
Tensor select(Tape& tape, const Tensor& x, std::size_t index);
// v[E] -> [rows, E]
Tensor broadcast_rows(Tape& tape, const Tensor& v, std::size_t rows);

// x[..., E] · weight[E, C] + bias[C]
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);

enum class ReduceMode { kSum, kMean, kMax };

// Reduces along `axis`; the axis is removed from the shape (a rank-1 input
// yields shape [1]). Max routes its gradient to the lowest-index maximum.
Tensor reduce(Tape& tape, const Tensor& x, std::size_t axis, ReduceMode mode);
Tensor sum_all(Tape& tape, const Tensor& x);

// exp(x/scale) normalized along the last axis.
Tensor softmax(Tape& tape, const Tensor& x, double scale);

struct Conv2dParams {
  std::array<std::size_t, 2> stride{1, 1};
  std::array<std::size_t, 2> padding{0, 0};
};

// input[N,C,H,W], kernel[K,C,kh,kw], bias[K] -> [N,K,H',W'], zero padding.
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, const Tensor& bias,
              const Conv2dParams& params = {});

// Non-overlapping max pooling over the last two axes of [N,C,H,W]. Trailing
// rows/columns that do not fill a window are dropped.
Tensor max_pool2d(Tape& tape, const Tensor& input, std::array<std::size_t, 2> window);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// Per-channel normalization of [N,C,H,W] over (N,H,W). Train mode uses batch
// statistics and updates `state` (unbiased running variance); eval mode uses
// the running statistics.
Tensor batch_norm(Tape& tape, const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  double eps, Mode mode, BatchNormState& state);

}  // namespace mbl
