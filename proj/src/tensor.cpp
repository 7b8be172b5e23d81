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

#include "mbl/tensor.hpp"

#include <algorithm>
#include <cstdlib>
#include <map>
#include <new>
#include <sstream>

namespace mbl {

namespace detail {
namespace {

constexpr std::size_t kPoolMinBytes = std::size_t{1} << 20;
constexpr std::size_t kPoolMaxCachedBytes = std::size_t{1} << 31;

constexpr std::size_t kAlignment = 64;

struct BufferPool {
  std::multimap<std::size_t, void*> free_blocks;
  std::size_t cached_bytes = 0;

  ~BufferPool() {
    for (auto& [bytes, p] : free_blocks) std::free(p);
  }
};

BufferPool& pool() {
  thread_local BufferPool p;
  return p;
}

}  // namespace

void* buffer_allocate(std::size_t bytes) {
  if (bytes >= kPoolMinBytes) {
    BufferPool& p = pool();
    auto it = p.free_blocks.find(bytes);
    if (it != p.free_blocks.end()) {
      void* ptr = it->second;
      p.free_blocks.erase(it);
      p.cached_bytes -= bytes;
      return ptr;
    }
  }
  // A fixed alignment keeps Eigen's vectorized loops from peeling differently
  // from one allocation to the next, which would change rounding.
  const std::size_t padded = (std::max<std::size_t>(bytes, 1) + kAlignment - 1) / kAlignment * kAlignment;
  void* ptr = std::aligned_alloc(kAlignment, padded);
  if (ptr == nullptr) throw std::bad_alloc();
  return ptr;
}

void buffer_release(void* ptr, std::size_t bytes) noexcept {
  if (ptr == nullptr) return;
  if (bytes >= kPoolMinBytes) {
    BufferPool& p = pool();
    if (p.cached_bytes + bytes <= kPoolMaxCachedBytes) {
      p.free_blocks.emplace(bytes, ptr);
      p.cached_bytes += bytes;
      return;
    }
  }
  std::free(ptr);
}

}  // namespace detail

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, const std::vector<double>& data, bool requires_grad)
    : Tensor(std::move(shape), Buffer(data.begin(), data.end()), requires_grad) {}

Tensor::Tensor(Shape shape, std::initializer_list<double> data, bool requires_grad)
    : Tensor(std::move(shape), Buffer(data.begin(), data.end()), requires_grad) {}

Tensor::Tensor(Shape shape, Buffer data, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_str(shape));
  }
  if (numel(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  node_ = std::make_shared<TensorNode>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), Buffer(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= node_->shape[axis]) throw std::out_of_range("tensor index out of range");
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

Tensor Tensor::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

Tensor Tape::record(Shape shape, Buffer data,
                    std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  Tensor out(std::move(shape), std::move(data), false);
  bool any_grad = false;
  for (const Tensor* in : inputs) any_grad = any_grad || in->requires_grad();
  if (!any_grad) return out;

  out.node_->requires_grad = true;
  out.node_->id = next_id_++;
  Entry entry;
  entry.inputs.reserve(inputs.size());
  for (const Tensor* in : inputs) {
    if (in->node_->id == 0) in->node_->id = next_id_++;
    entry.inputs.push_back(in->node_);
  }
  entry.output = out.node_;
  entry.fn = std::move(fn);
  entries_.push_back(std::move(entry));
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward requires a scalar loss");
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("loss does not depend on any tensor that requires a gradient");
  }

  loss.node_->grad_buffer()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    const TensorNode& out = *it->output;
    if (out.grad.size() != out.data.size()) continue;  // no gradient reached it
    for (const auto& in : it->inputs) {
      if (in->requires_grad) in->grad_buffer();
    }
    it->fn(out);
  }
  clear();
}

void Tape::clear() {
  entries_.clear();
}

}  // namespace mbl
