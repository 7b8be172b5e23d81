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

#include <cmath>

#include "doctest.h"
#include "mbl/grad_check.hpp"
#include "mbl/ops.hpp"
#include "test_util.hpp"

using namespace mbl;
using testutil::kinkless_tensor;
using testutil::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;

// Weighted sum so every output coordinate has a distinct upstream gradient.
Tensor weighted_sum(Tape& tape, const Tensor& y) {
  std::vector<double> w(y.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.7 * std::sin(1.0 + 0.37 * static_cast<double>(i));
  return sum_all(tape, mul(tape, y, Tensor(y.shape(), w)));
}

std::vector<double> naive_conv(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t ph,
                               std::size_t pw, std::size_t sh, std::size_t sw, std::size_t& oh,
                               std::size_t& ow) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t kk = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  oh = (h + 2 * ph - kh) / sh + 1;
  ow = (w + 2 * pw - kw) / sw + 1;
  std::vector<double> out(n * kk * oh * ow, 0.0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < kk; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t z = 0; z < ow; ++z) {
          double acc = b[o];
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long iy = static_cast<long>(y * sh + i) - static_cast<long>(ph);
                const long ix = static_cast<long>(z * sw + j) - static_cast<long>(pw);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                acc += k.at({o, ch, i, j}) * x.at({s, ch, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)});
              }
          out[((s * kk + o) * oh + y) * ow + z] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("elementwise ops compute the expected values") {
  Tape tape;
  Tensor a({3}, {1.0, -2.0, 3.0});
  Tensor b({3}, {0.5, 4.0, -1.0});
  CHECK(add(tape, a, b).data()[1] == doctest::Approx(2.0));
  CHECK(sub(tape, a, b).data()[2] == doctest::Approx(4.0));
  CHECK(mul(tape, a, b).data()[0] == doctest::Approx(0.5));
  CHECK(scale(tape, a, -2.0).data()[2] == doctest::Approx(-6.0));
  CHECK(add_scalar(tape, a, 1.0).data()[1] == doctest::Approx(-1.0));
  CHECK(relu(tape, a).data()[1] == 0.0);
  CHECK(sigmoid(tape, Tensor({1}, {0.0})).item() == doctest::Approx(0.5));
  CHECK(clamp(tape, a, -1.0, 2.0).data()[2] == 2.0);
  CHECK(tape.empty());  // nothing required a gradient
}

TEST_CASE("sigmoid is stable for large magnitudes") {
  Tape tape;
  Tensor y = sigmoid(tape, Tensor({2}, {-800.0, 800.0}));
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 1.0);
}

TEST_CASE("shape mismatches and bad domains are rejected") {
  Tape tape;
  Tensor a = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(add(tape, a, Tensor::zeros({3, 2})), ShapeError);
  CHECK_THROWS_AS(matmul(tape, a, Tensor::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(reshape(tape, a, {4}), ShapeError);
  CHECK_THROWS_AS(log(tape, Tensor({2}, {1.0, 0.0})), DomainError);
  CHECK_THROWS_AS(softmax(tape, a, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(dropout(tape, a, 1.0, 0, Mode::kTrain), std::invalid_argument);
}

TEST_CASE("matmul agrees with a triple loop") {
  Rng rng(3);
  Tape tape;
  Tensor a = random_tensor({4, 5}, rng, -1, 1, false);
  Tensor b = random_tensor({5, 3}, rng, -1, 1, false);
  Tensor c = matmul(tape, a, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 5; ++k) acc += a.at({i, k}) * b.at({k, j});
      CHECK(c.at({i, j}) == doctest::Approx(acc).epsilon(1e-14));
    }
}

TEST_CASE("reduce removes the axis; max routes gradient to the first maximum") {
  Tape tape;
  Tensor x({2, 3}, {1.0, 5.0, 5.0, -1.0, 2.0, 0.0}, true);
  Tensor m = reduce(tape, x, 1, ReduceMode::kMax);
  CHECK(m.shape() == Shape{2});
  CHECK(m[0] == 5.0);
  tape.backward(sum_all(tape, m));
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);
  CHECK(x.grad()[4] == 1.0);
  Tape t2;
  CHECK(reduce(t2, Tensor({3}, {1.0, 2.0, 3.0}), 0, ReduceMode::kMean).shape() == Shape{1});
}

TEST_CASE("softmax rows sum to one and respect the scale") {
  Rng rng(5);
  Tape tape;
  Tensor x = random_tensor({3, 7}, rng, -5, 5, false);
  Tensor y = softmax(tape, x, 2.5);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0, e = 0.0;
    for (std::size_t k = 0; k < 7; ++k) s += y.at({r, k});
    for (std::size_t k = 0; k < 7; ++k) e += std::exp(x.at({r, k}) / 2.5);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(y.at({r, 0}) == doctest::Approx(std::exp(x.at({r, 0}) / 2.5) / e).epsilon(1e-12));
  }
}

TEST_CASE("permute and transpose move elements to the right place") {
  Rng rng(8);
  Tape tape;
  Tensor x = random_tensor({2, 3, 4}, rng, -1, 1, false);
  Tensor p = permute(tape, x, {2, 0, 1});
  CHECK(p.shape() == Shape{4, 2, 3});
  CHECK(p.at({3, 1, 2}) == x.at({1, 2, 3}));
  Tensor m = random_tensor({2, 5}, rng, -1, 1, false);
  CHECK(transpose(tape, m).at({4, 1}) == m.at({1, 4}));
}

TEST_CASE("conv2d matches a direct nested-loop convolution") {
  Rng rng(11);
  struct Case {
    std::size_t n, c, h, w, k, kh, kw, ph, pw, sh, sw;
  };
  for (const Case& cs : {Case{2, 3, 7, 6, 4, 3, 3, 1, 1, 1, 1}, Case{1, 2, 5, 8, 3, 3, 5, 0, 2, 2, 1},
                         Case{3, 1, 4, 4, 2, 1, 1, 0, 0, 1, 1}}) {
    Tape tape;
    Tensor x = random_tensor({cs.n, cs.c, cs.h, cs.w}, rng, -1, 1, false);
    Tensor k = random_tensor({cs.k, cs.c, cs.kh, cs.kw}, rng, -1, 1, false);
    Tensor b = random_tensor({cs.k}, rng, -1, 1, false);
    Conv2dParams p;
    p.padding = {cs.ph, cs.pw};
    p.stride = {cs.sh, cs.sw};
    Tensor y = conv2d(tape, x, k, b, p);
    std::size_t oh = 0, ow = 0;
    const auto ref = naive_conv(x, k, b, cs.ph, cs.pw, cs.sh, cs.sw, oh, ow);
    REQUIRE(y.shape() == Shape{cs.n, cs.k, oh, ow});
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d rejects inconsistent geometry") {
  Tape tape;
  CHECK_THROWS_AS(conv2d(tape, Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({3, 1, 3, 3}), Tensor::zeros({3})),
                  ShapeError);
  CHECK_THROWS_AS(conv2d(tape, Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1})),
                  ShapeError);
}

TEST_CASE("max_pool2d keeps window maxima and drops ragged edges") {
  Tape tape;
  std::vector<double> v(15);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>((i * 7) % 15);
  Tensor x({1, 1, 3, 5}, v);
  Tensor y = max_pool2d(tape, x, {2, 2});
  CHECK(y.shape() == Shape{1, 1, 1, 2});
  CHECK(y[0] == std::max({v[0], v[1], v[5], v[6]}));
  CHECK(y[1] == std::max({v[2], v[3], v[7], v[8]}));
}

TEST_CASE("batch norm in train mode normalizes with batch statistics") {
  Rng rng(13);
  Tape tape;
  Tensor x = random_tensor({4, 3, 2, 5}, rng, -3, 7, false);
  Tensor gamma({3}, {1.0, 2.0, 0.5});
  Tensor beta({3}, {0.0, -1.0, 3.0});
  BatchNormState state(3);
  Tensor y = batch_norm(tape, x, gamma, beta, 1e-5, Mode::kTrain, state);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    // E[x^2] - E[x]^2 in long double as an independent route to the variance.
    long double s = 0, s2 = 0;
    std::size_t m = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 10; ++i) {
        const long double v = x[(n * 3 + ch) * 10 + i];
        s += v;
        s2 += v * v;
        ++m;
      }
    const long double mean = s / m, var = s2 / m - mean * mean;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 10; ++i) {
        const std::size_t idx = (n * 3 + ch) * 10 + i;
        const double expect =
            static_cast<double>(gamma[ch] * (x[idx] - mean) / std::sqrt(var + 1e-5L) + beta[ch]);
        CHECK(y[idx] == doctest::Approx(expect).epsilon(1e-10));
      }
    CHECK(state.running_mean[ch] == doctest::Approx(static_cast<double>(0.1L * mean)).epsilon(1e-10));
    CHECK(state.running_var[ch] ==
          doctest::Approx(static_cast<double>(0.9L + 0.1L * var * m / (m - 1))).epsilon(1e-10));
  }
}

TEST_CASE("batch norm in eval mode uses running statistics only") {
  Tape tape;
  BatchNormState state(1);
  state.running_mean = {2.0};
  state.running_var = {4.0};
  Tensor y = batch_norm(tape, Tensor({1, 1, 1, 2}, {2.0, 6.0}), Tensor({1}, {1.0}), Tensor({1}, {0.0}),
                        1e-5, Mode::kEval, state);
  CHECK(y[0] == doctest::Approx(0.0));
  CHECK(y[1] == doctest::Approx(4.0 / std::sqrt(4.0 + 1e-5)));
  CHECK(state.running_mean[0] == 2.0);
  CHECK_THROWS_AS(batch_norm(tape, Tensor::zeros({1, 1, 1, 2}), Tensor({1}, {1.0}), Tensor({1}, {0.0}), 0.0,
                             Mode::kEval, state),
                  std::invalid_argument);
}

TEST_CASE("dropout is the identity in eval mode and seeded in train mode") {
  Rng rng(17);
  Tensor x = random_tensor({1000}, rng, 0.5, 1.0, false);
  Tape tape;
  Tensor e = dropout(tape, x, 0.5, 1, Mode::kEval);
  CHECK(e.id() == x.id());
  Tensor a = dropout(tape, x, 0.5, 42, Mode::kTrain);
  Tensor b = dropout(tape, x, 0.5, 42, Mode::kTrain);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] == b[i]);
    if (a[i] == 0.0) ++zeros;
    else CHECK(a[i] == doctest::Approx(2.0 * x[i]));
  }
  CHECK(zeros > 400);
  CHECK(zeros < 600);
}

TEST_CASE("gradients of every differentiable op match central differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(100 + seed);
    const Tensor a = random_tensor({3, 4}, rng);
    const Tensor b = random_tensor({3, 4}, rng);
    const Tensor pos = random_tensor({3, 4}, rng, 0.2, 2.0);
    const Tensor kinky = kinkless_tensor({3, 4}, rng);
    const Tensor bias = random_tensor({4}, rng);
    const Tensor w = random_tensor({4, 2}, rng);
    const Tensor x3 = random_tensor({2, 3, 4}, rng);

    auto check = [](const char* name, const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& in) {
      CAPTURE(name);
      CHECK(grad_check([&](Tape& t, const Tensor& x) { return weighted_sum(t, f(t, x)); }, in) <= kGradTol);
    };
    check("add", [&](Tape& t, const Tensor& x) { return add(t, x, b); }, a);
    check("sub", [&](Tape& t, const Tensor& x) { return sub(t, b, x); }, a);
    check("mul", [&](Tape& t, const Tensor& x) { return mul(t, x, b); }, a);
    check("scale", [&](Tape& t, const Tensor& x) { return scale(t, x, -1.7); }, a);
    check("add_scalar", [&](Tape& t, const Tensor& x) { return add_scalar(t, x, 0.3); }, a);
    check("add_bias", [&](Tape& t, const Tensor& x) { return add_bias(t, a, x); }, bias);
    check("relu", [&](Tape& t, const Tensor& x) { return relu(t, x); }, kinky);
    check("sigmoid", [&](Tape& t, const Tensor& x) { return sigmoid(t, x); }, a);
    check("log", [&](Tape& t, const Tensor& x) { return log(t, x); }, pos);
    check("clamp", [&](Tape& t, const Tensor& x) { return clamp(t, x, -0.04, 0.04); }, kinky);
    check("dropout", [&](Tape& t, const Tensor& x) { return dropout(t, x, 0.3, 9, Mode::kTrain); }, a);
    check("matmul.a", [&](Tape& t, const Tensor& x) { return matmul(t, x, w); }, a);
    check("matmul.b", [&](Tape& t, const Tensor& x) { return matmul(t, a, x); }, w);
    check("transpose", [&](Tape& t, const Tensor& x) { return transpose(t, x); }, a);
    check("reshape", [&](Tape& t, const Tensor& x) { return reshape(t, x, {2, 6}); }, a);
    check("permute", [&](Tape& t, const Tensor& x) { return permute(t, x, {1, 2, 0}); }, x3);
    check("select", [&](Tape& t, const Tensor& x) { return select(t, x, 1); }, x3);
    check("broadcast_rows", [&](Tape& t, const Tensor& x) { return broadcast_rows(t, x, 3); }, bias);
    check("linear.x", [&](Tape& t, const Tensor& x) { return linear(t, x, w, Tensor::zeros({2})); }, x3);
    check("linear.w", [&](Tape& t, const Tensor& x) { return linear(t, x3, x, Tensor::zeros({2})); }, w);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      check("reduce.sum", [&](Tape& t, const Tensor& x) { return reduce(t, x, axis, ReduceMode::kSum); }, x3);
      check("reduce.mean", [&](Tape& t, const Tensor& x) { return reduce(t, x, axis, ReduceMode::kMean); }, x3);
      check("reduce.max", [&](Tape& t, const Tensor& x) { return reduce(t, x, axis, ReduceMode::kMax); }, x3);
    }
    check("softmax", [&](Tape& t, const Tensor& x) { return softmax(t, x, 1.3); }, a);
  }
}

TEST_CASE("conv, pooling and batch-norm gradients match central differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(200 + seed);
    const Tensor x = random_tensor({2, 2, 5, 4}, rng);
    const Tensor k = random_tensor({3, 2, 3, 3}, rng);
    const Tensor b = random_tensor({3}, rng);
    Conv2dParams p;
    p.padding = {1, 1};
    auto conv_x = [&](Tape& t, const Tensor& in) { return weighted_sum(t, conv2d(t, in, k, b, p)); };
    auto conv_k = [&](Tape& t, const Tensor& in) { return weighted_sum(t, conv2d(t, x, in, b, p)); };
    auto conv_b = [&](Tape& t, const Tensor& in) { return weighted_sum(t, conv2d(t, x, k, in, p)); };
    CHECK(grad_check(conv_x, x) <= kGradTol);
    CHECK(grad_check(conv_k, k) <= kGradTol);
    CHECK(grad_check(conv_b, b) <= kGradTol);

    // Distinct values keep every window's argmax unique under perturbation.
    std::vector<double> v(2 * 2 * 4 * 6);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.1 * static_cast<double>((i * 37) % v.size());
    const Tensor px({2, 2, 4, 6}, v, true);
    CHECK(grad_check([](Tape& t, const Tensor& in) { return weighted_sum(t, max_pool2d(t, in, {2, 3})); }, px) <=
          kGradTol);

    const Tensor gamma = random_tensor({2}, rng, 0.5, 1.5);
    const Tensor beta = random_tensor({2}, rng);
    for (Mode mode : {Mode::kTrain, Mode::kEval}) {
      BatchNormState state(2);
      state.running_mean = {0.1, -0.2};
      state.running_var = {1.5, 0.7};
      auto bn = [&](Tape& t, const Tensor& in, const Tensor& g, const Tensor& be) {
        BatchNormState s = state;  // keep the running stats fixed across evaluations
        return weighted_sum(t, batch_norm(t, in, g, be, 1e-5, mode, s));
      };
      CHECK(grad_check([&](Tape& t, const Tensor& in) { return bn(t, in, gamma, beta); }, x) <= kGradTol);
      CHECK(grad_check([&](Tape& t, const Tensor& in) { return bn(t, x, in, beta); }, gamma) <= kGradTol);
      CHECK(grad_check([&](Tape& t, const Tensor& in) { return bn(t, x, gamma, in); }, beta) <= kGradTol);
    }
  }
}
