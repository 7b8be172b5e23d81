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

#include "mbl/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mbl/rng.hpp"

namespace mbl {
namespace {

using NodePtr = std::shared_ptr<TensorNode>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
  }
}

// Applies `grad_fn(i)` scaled by the upstream gradient to a unary input.
template <typename F>
Tensor unary(Tape& tape, const Tensor& x, Buffer out, F local_grad) {
  NodePtr xn = x.node();
  return tape.record(x.shape(), std::move(out), {&x},
                     [xn, local_grad](const TensorNode& o) {
                       if (!xn->requires_grad) return;
                       auto& g = xn->grad;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         g[i] += o.grad[i] * local_grad(xn->data[i], o.data[i]);
                       }
                     });
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  NodePtr an = a.node(), bn = b.node();
  return tape.record(a.shape(), std::move(out), {&a, &b}, [an, bn](const TensorNode& o) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i];
  });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  NodePtr an = a.node(), bn = b.node();
  return tape.record(a.shape(), std::move(out), {&a, &b}, [an, bn](const TensorNode& o) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] -= o.grad[i];
  });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  NodePtr an = a.node(), bn = b.node();
  return tape.record(a.shape(), std::move(out), {&a, &b}, [an, bn](const TensorNode& o) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * bn->data[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i] * an->data[i];
  });
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return unary(tape, x, std::move(out), [factor](double, double) { return factor; });
}

Tensor add_scalar(Tape& tape, const Tensor& x, double value) {
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + value;
  return unary(tape, x, std::move(out), [](double, double) { return 1.0; });
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  require_rank(bias, 1, "add_bias");
  const std::size_t c = bias.dim(0);
  if (x.shape().back() != c) {
    throw ShapeError("add_bias: last axis " + shape_str(x.shape()) + " vs bias " +
                     shape_str(bias.shape()));
  }
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bias[i % c];
  NodePtr xn = x.node(), bn = bias.node();
  return tape.record(x.shape(), std::move(out), {&x, &bias}, [xn, bn, c](const TensorNode& o) {
    if (xn->requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i % c] += o.grad[i];
  });
}

Tensor relu(Tape& tape, const Tensor& x) {
  Buffer out(x.size());
  // NaN passes through so that a corrupt input still surfaces as a NaN loss.
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] < 0.0 ? 0.0 : x[i];
  return unary(tape, x, std::move(out), [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return unary(tape, x, std::move(out), [](double, double y) { return y * (1.0 - y); });
}

Tensor log(Tape& tape, const Tensor& x) {
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    // NaN is passed on; callers check the finished loss.
    if (x[i] <= 0.0) {
      throw DomainError("log: nonpositive input " + std::to_string(x[i]) + " at index " +
                        std::to_string(i));
    }
    out[i] = std::log(x[i]);
  }
  return unary(tape, x, std::move(out), [](double in, double) { return 1.0 / in; });
}

Tensor clamp(Tape& tape, const Tensor& x, double lo, double hi) {
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i], lo, hi);
  return unary(tape, x, std::move(out),
               [lo, hi](double in, double) { return (in >= lo && in <= hi) ? 1.0 : 0.0; });
}

Tensor dropout(Tape& tape, const Tensor& x, double p, std::uint64_t seed, Mode mode) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must lie in [0, 1)");
  if (mode == Mode::kEval || p == 0.0) return x;
  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - p);
  Buffer mult(x.size());
  for (double& m : mult) m = rng.uniform() < p ? 0.0 : keep_scale;
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mult[i];
  NodePtr xn = x.node();
  return tape.record(x.shape(), std::move(out), {&x},
                     [xn, mult = std::move(mult)](const TensorNode& o) {
                       for (std::size_t i = 0; i < o.grad.size(); ++i)
                         xn->grad[i] += o.grad[i] * mult[i];
                     });
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Buffer out(m * n);
  MapMat(out.data(), m, n).noalias() =
      ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), k, n);
  NodePtr an = a.node(), bn = b.node();
  return tape.record({m, n}, std::move(out), {&a, &b}, [an, bn, m, k, n](const TensorNode& o) {
    ConstMapMat dy(o.grad.data(), m, n);
    if (an->requires_grad) {
      MapMat(an->grad.data(), m, k).noalias() +=
          dy * ConstMapMat(bn->data.data(), k, n).transpose();
    }
    if (bn->requires_grad) {
      MapMat(bn->grad.data(), k, n).noalias() +=
          ConstMapMat(an->data.data(), m, k).transpose() * dy;
    }
  });
}

Tensor transpose(Tape& tape, const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Buffer out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  NodePtr xn = x.node();
  return tape.record({c, r}, std::move(out), {&x}, [xn, r, c](const TensorNode& o) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) xn->grad[i * c + j] += o.grad[j * r + i];
  });
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Buffer out(x.data().begin(), x.data().end());
  NodePtr xn = x.node();
  return tape.record(std::move(shape), std::move(out), {&x}, [xn](const TensorNode& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
  });
}

Tensor permute(Tape& tape, const Tensor& x, const std::vector<std::size_t>& order) {
  const std::size_t rank = x.rank();
  if (order.size() != rank) throw ShapeError("permute: order rank mismatch");
  std::vector<bool> seen(rank, false);
  for (std::size_t a : order) {
    if (a >= rank || seen[a]) throw ShapeError("permute: invalid axis order");
    seen[a] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * x.dim(i);
  Shape out_shape(rank);
  std::vector<std::size_t> strides(rank);  // input stride per output axis
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.dim(order[i]);
    strides[i] = in_strides[order[i]];
  }
  // map[out_flat] = in_flat
  std::vector<std::size_t> map(x.size());
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < map.size(); ++flat) {
    map[flat] = offset;
    for (std::size_t ax = rank; ax-- > 0;) {
      offset += strides[ax];
      if (++idx[ax] < out_shape[ax]) break;
      offset -= strides[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[map[i]];
  NodePtr xn = x.node();
  return tape.record(std::move(out_shape), std::move(out), {&x},
                     [xn, map = std::move(map)](const TensorNode& o) {
                       for (std::size_t i = 0; i < o.grad.size(); ++i)
                         xn->grad[map[i]] += o.grad[i];
                     });
}

Tensor select(Tape& tape, const Tensor& x, std::size_t index) {
  if (x.rank() < 2) throw ShapeError("select: rank must be at least 2");
  if (index >= x.dim(0)) throw std::out_of_range("select: index out of range");
  Shape shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t stride = numel(shape);
  const std::size_t begin = index * stride;
  Buffer out(x.data().begin() + begin, x.data().begin() + begin + stride);
  NodePtr xn = x.node();
  return tape.record(std::move(shape), std::move(out), {&x}, [xn, begin](const TensorNode& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[begin + i] += o.grad[i];
  });
}

Tensor broadcast_rows(Tape& tape, const Tensor& v, std::size_t rows) {
  require_rank(v, 1, "broadcast_rows");
  if (rows == 0) throw ShapeError("broadcast_rows: rows must be positive");
  const std::size_t e = v.dim(0);
  Buffer out(rows * e);
  for (std::size_t r = 0; r < rows; ++r) std::copy(v.data().begin(), v.data().end(), out.begin() + r * e);
  NodePtr vn = v.node();
  return tape.record({rows, e}, std::move(out), {&v}, [vn, e](const TensorNode& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) vn->grad[i % e] += o.grad[i];
  });
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear");
  require_rank(bias, 1, "linear");
  const std::size_t e = weight.dim(0), c = weight.dim(1);
  if (x.shape().back() != e) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(weight.shape()));
  }
  if (bias.dim(0) != c) throw ShapeError("linear: bias length differs from weight columns");
  const std::size_t m = x.size() / e;
  Shape shape = x.shape();
  shape.back() = c;
  Buffer out(m * c);
  MapMat y(out.data(), m, c);
  y.noalias() = ConstMapMat(x.data().data(), m, e) * ConstMapMat(weight.data().data(), e, c);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < c; ++j) y(i, j) += bias[j];
  NodePtr xn = x.node(), wn = weight.node(), bn = bias.node();
  return tape.record(std::move(shape), std::move(out), {&x, &weight, &bias},
                     [xn, wn, bn, m, e, c](const TensorNode& o) {
                       ConstMapMat dy(o.grad.data(), m, c);
                       if (xn->requires_grad) {
                         MapMat(xn->grad.data(), m, e).noalias() +=
                             dy * ConstMapMat(wn->data.data(), e, c).transpose();
                       }
                       if (wn->requires_grad) {
                         MapMat(wn->grad.data(), e, c).noalias() +=
                             ConstMapMat(xn->data.data(), m, e).transpose() * dy;
                       }
                       if (bn->requires_grad) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < c; ++j) bn->grad[j] += dy(i, j);
                       }
                     });
}

Tensor reduce(Tape& tape, const Tensor& x, std::size_t axis, ReduceMode mode) {
  if (axis >= x.rank()) throw ShapeError("reduce: axis out of range for " + shape_str(x.shape()));
  const std::size_t n = x.dim(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Shape shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) shape.push_back(x.dim(i));
  if (shape.empty()) shape.push_back(1);

  Buffer out(outer * inner);
  std::vector<std::size_t> argmax;
  if (mode == ReduceMode::kMax) argmax.resize(out.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      const std::size_t dst = o * inner + i;
      if (mode == ReduceMode::kMax) {
        std::size_t best = 0;
        double best_v = x[base];
        for (std::size_t k = 1; k < n; ++k) {
          const double v = x[base + k * inner];
          if (v > best_v) {
            best_v = v;
            best = k;
          }
        }
        out[dst] = best_v;
        argmax[dst] = base + best * inner;
      } else {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += x[base + k * inner];
        out[dst] = mode == ReduceMode::kMean ? acc / static_cast<double>(n) : acc;
      }
    }
  }
  NodePtr xn = x.node();
  return tape.record(std::move(shape), std::move(out), {&x},
                     [xn, mode, n, outer, inner, argmax = std::move(argmax)](const TensorNode& o) {
                       if (mode == ReduceMode::kMax) {
                         for (std::size_t d = 0; d < o.grad.size(); ++d)
                           xn->grad[argmax[d]] += o.grad[d];
                         return;
                       }
                       const double f = mode == ReduceMode::kMean ? 1.0 / static_cast<double>(n) : 1.0;
                       for (std::size_t oo = 0; oo < outer; ++oo)
                         for (std::size_t i = 0; i < inner; ++i) {
                           const double g = o.grad[oo * inner + i] * f;
                           const std::size_t base = oo * n * inner + i;
                           for (std::size_t k = 0; k < n; ++k) xn->grad[base + k * inner] += g;
                         }
                     });
}

Tensor sum_all(Tape& tape, const Tensor& x) {
  return reduce(tape, reshape(tape, x, {x.size()}), 0, ReduceMode::kSum);
}

Tensor softmax(Tape& tape, const Tensor& x, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("softmax: scale must be positive");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  Buffer out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      y[k] = std::exp((in[k] - mx) / scale);
      total += y[k];
    }
    for (std::size_t k = 0; k < n; ++k) y[k] /= total;
  }
  NodePtr xn = x.node();
  return tape.record(x.shape(), std::move(out), {&x}, [xn, n, rows, scale](const TensorNode& o) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * n;
      const double* dy = o.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t k = 0; k < n; ++k) dot += dy[k] * y[k];
      for (std::size_t k = 0; k < n; ++k) xn->grad[r * n + k] += y[k] * (dy[k] - dot) / scale;
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t c, h, w, k, kh, kw, sh, sw, ph, pw, oh, ow;
  std::size_t rows() const { return c * kh * kw; }
  std::size_t cols() const { return oh * ow; }
};

// cols[(c*kh + i)*kw + j, oy*ow + ox] = x[c, oy*sh + i - ph, ox*sw + j - pw]
void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const std::size_t p = g.cols();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * p;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + i) -
                                    static_cast<std::ptrdiff_t>(g.ph);
          double* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.sw + j) -
                                      static_cast<std::ptrdiff_t>(g.pw);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* dx) {
  const std::size_t p = g.cols();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * p;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + i) -
                                    static_cast<std::ptrdiff_t>(g.ph);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const double* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.sw + j) -
                                      static_cast<std::ptrdiff_t>(g.pw);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, const Tensor& bias,
              const Conv2dParams& params) {
  require_rank(input, 4, "conv2d");
  require_rank(kernel, 4, "conv2d");
  require_rank(bias, 1, "conv2d");
  if (kernel.dim(1) != input.dim(1)) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                     " input channels, input has " + std::to_string(input.dim(1)));
  }
  if (bias.dim(0) != kernel.dim(0)) throw ShapeError("conv2d: bias length differs from kernel count");
  if (params.stride[0] == 0 || params.stride[1] == 0) throw ShapeError("conv2d: zero stride");

  ConvGeometry g{};
  const std::size_t n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.k = kernel.dim(0);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  g.sh = params.stride[0];
  g.sw = params.stride[1];
  g.ph = params.padding[0];
  g.pw = params.padding[1];
  if (g.kh > g.h + 2 * g.ph || g.kw > g.w + 2 * g.pw) {
    throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                     shape_str(input.shape()));
  }
  g.oh = (g.h + 2 * g.ph - g.kh) / g.sh + 1;
  g.ow = (g.w + 2 * g.pw - g.kw) / g.sw + 1;

  const std::size_t r = g.rows(), p = g.cols();
  const std::size_t in_stride = g.c * g.h * g.w, out_stride = g.k * p;
  Buffer out(n * out_stride);
  Buffer cols(r * p);
  ConstMapMat wmat(kernel.data().data(), g.k, r);
  for (std::size_t s = 0; s < n; ++s) {
    im2col(input.data().data() + s * in_stride, g, cols.data());
    MapMat y(out.data() + s * out_stride, g.k, p);
    y.noalias() = wmat * ConstMapMat(cols.data(), r, p);
    for (std::size_t k = 0; k < g.k; ++k) y.row(k).array() += bias[k];
  }

  NodePtr xn = input.node(), kn = kernel.node(), bn = bias.node();
  return tape.record(
      {n, g.k, g.oh, g.ow}, std::move(out), {&input, &kernel, &bias},
      [xn, kn, bn, g, n, r, p, in_stride, out_stride](const TensorNode& o) {
        Buffer cols(r * p);
        ConstMapMat wmat(kn->data.data(), g.k, r);
        for (std::size_t s = 0; s < n; ++s) {
          ConstMapMat dy(o.grad.data() + s * out_stride, g.k, p);
          if (bn->requires_grad) {
            for (std::size_t k = 0; k < g.k; ++k) bn->grad[k] += dy.row(k).sum();
          }
          if (kn->requires_grad) {
            im2col(xn->data.data() + s * in_stride, g, cols.data());
            MapMat(kn->grad.data(), g.k, r).noalias() +=
                dy * ConstMapMat(cols.data(), r, p).transpose();
          }
          if (xn->requires_grad) {
            MapMat(cols.data(), r, p).noalias() = wmat.transpose() * dy;
            col2im_add(cols.data(), g, xn->grad.data() + s * in_stride);
          }
        }
      });
}

Tensor max_pool2d(Tape& tape, const Tensor& input, std::array<std::size_t, 2> window) {
  require_rank(input, 4, "max_pool2d");
  const auto [wh, ww] = window;
  if (wh == 0 || ww == 0) throw ShapeError("max_pool2d: window must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = h / wh, ow = w / ww;
  if (oh == 0 || ow == 0) {
    throw ShapeError("max_pool2d: window larger than input " + shape_str(input.shape()));
  }
  Buffer out(n * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  std::size_t dst = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++dst) {
        std::size_t best = base + oy * wh * w + ox * ww;
        double best_v = input[best];
        for (std::size_t i = 0; i < wh; ++i) {
          for (std::size_t j = 0; j < ww; ++j) {
            const std::size_t idx = base + (oy * wh + i) * w + ox * ww + j;
            if (input[idx] > best_v || (std::isnan(input[idx]) && !std::isnan(best_v))) {
              best_v = input[idx];
              best = idx;
            }
          }
        }
        out[dst] = best_v;
        argmax[dst] = best;
      }
    }
  }
  NodePtr xn = input.node();
  return tape.record({n, c, oh, ow}, std::move(out), {&input},
                     [xn, argmax = std::move(argmax)](const TensorNode& o) {
                       for (std::size_t i = 0; i < o.grad.size(); ++i)
                         xn->grad[argmax[i]] += o.grad[i];
                     });
}

Tensor batch_norm(Tape& tape, const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  double eps, Mode mode, BatchNormState& state) {
  require_rank(input, 4, "batch_norm");
  if (!(eps > 0.0)) throw std::invalid_argument("batch_norm: eps must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (gamma.size() != c || beta.size() != c) {
    throw ShapeError("batch_norm: gamma/beta must have one entry per channel");
  }
  if (state.running_mean.size() != c || state.running_var.size() != c) {
    throw ShapeError("batch_norm: running statistics sized for a different channel count");
  }
  const std::size_t m = n * hw;
  std::vector<double> mean(c), inv_std(c);
  const auto& x = input.data();
  if (mode == Mode::kTrain) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const double* p = x.data() + (s * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) acc += p[i];
      }
      const double mu = acc / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const double* p = x.data() + (s * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(m);
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(var + eps);
      const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
      state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mu;
      state.running_var[ch] =
          (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + eps);
    }
  }

  Buffer out(input.size());
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (s * c + ch) * hw;
      const double a = gamma[ch] * inv_std[ch];
      const double b = beta[ch] - a * mean[ch];
      for (std::size_t i = 0; i < hw; ++i) out[off + i] = a * x[off + i] + b;
    }
  }

  NodePtr xn = input.node(), gn = gamma.node(), bn = beta.node();
  const bool train = mode == Mode::kTrain;
  return tape.record(
      input.shape(), std::move(out), {&input, &gamma, &beta},
      [xn, gn, bn, n, c, hw, m, train, mean = std::move(mean),
       inv_std = std::move(inv_std)](const TensorNode& o) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t off = (s * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const double xhat = (xn->data[off + i] - mean[ch]) * inv_std[ch];
              sum_dy += o.grad[off + i];
              sum_dy_xhat += o.grad[off + i] * xhat;
            }
          }
          if (gn->requires_grad) gn->grad[ch] += sum_dy_xhat;
          if (bn->requires_grad) bn->grad[ch] += sum_dy;
          if (!xn->requires_grad) continue;
          const double g = gn->data[ch] * inv_std[ch];
          const double inv_m = 1.0 / static_cast<double>(m);
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t off = (s * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              if (train) {
                const double xhat = (xn->data[off + i] - mean[ch]) * inv_std[ch];
                xn->grad[off + i] +=
                    g * (o.grad[off + i] - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat);
              } else {
                xn->grad[off + i] += g * o.grad[off + i];
              }
            }
          }
        }
      });
}

}  // namespace mbl
