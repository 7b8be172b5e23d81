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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbl {

using Shape = std::vector<std::size_t>;

namespace detail {
void* buffer_allocate(std::size_t bytes);
void buffer_release(void* p, std::size_t bytes) noexcept;
}  // namespace detail

// Large activation buffers are recycled through a per-thread cache instead of
// being returned to the OS after every step.
template <typename T>
struct BufferAllocator {
  using value_type = T;
  BufferAllocator() = default;
  template <typename U>
  BufferAllocator(const BufferAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(detail::buffer_allocate(n * sizeof(T))); }
  void deallocate(T* p, std::size_t n) noexcept { detail::buffer_release(p, n * sizeof(T)); }
  template <typename U>
  bool operator==(const BufferAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, BufferAllocator<double>>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class Mode { kTrain, kEval };

// Storage shared between Tensor handles and the tape entries that reference
// it. The gradient buffer stays empty until backward touches the node.
struct TensorNode {
  Shape shape;
  Buffer data;
  Buffer grad;
  bool requires_grad = false;
  std::uint64_t id = 0;

  Buffer& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

// Dense row-major float64 array. Copies are shallow: two Tensor handles may
// refer to the same node. Only parameters are mutated in place (optimizer).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Buffer data, bool requires_grad = false);
  Tensor(Shape shape, const std::vector<double>& data, bool requires_grad = false);
  Tensor(Shape shape, std::initializer_list<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }

  double item() const;
  double operator[](std::size_t flat_index) const { return node_->data[flat_index]; }
  double at(std::initializer_list<std::size_t> index) const;

  std::uint64_t id() const { return node_->id; }
  const std::shared_ptr<TensorNode>& node() const { return node_; }

  // Deep copy without gradient tracking.
  Tensor detach() const;

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  friend class Tape;

  std::shared_ptr<TensorNode> node_;
};

// Linear record of differentiable operations. Entries are appended in
// execution order, so inputs of every entry were produced before it.
class Tape {
 public:
  // Receives the finished output node (data and accumulated grad).
  using BackwardFn = std::function<void(const TensorNode& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Builds an output tensor and, if any input requires a gradient, appends
  // an entry whose backward rule is `fn`.
  Tensor record(Shape shape, Buffer data,
                std::initializer_list<const Tensor*> inputs, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and runs the backward rules in reverse
  // recording order. Gradients accumulate into every participating node.
  // The tape is cleared afterwards.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear();

 private:
  struct Entry {
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::shared_ptr<TensorNode> output;
    BackwardFn fn;
  };

  std::vector<Entry> entries_;
  std::uint64_t next_id_ = 1;
};

inline void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

}  // namespace mbl
