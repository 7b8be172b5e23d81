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

#include "doctest.h"
#include "mbl/ops.hpp"
#include "mbl/rng.hpp"
#include "mbl/tensor.hpp"

using namespace mbl;

TEST_CASE("tensor construction validates shape and length") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({2, 0}), ShapeError);
  Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  CHECK(t.size() == 6);
  CHECK(t.at({1, 2}) == 5.0);
  CHECK_THROWS(t.item());
  CHECK(Tensor::scalar(4.5).item() == 4.5);
  CHECK(shape_str({2, 3}) == "[2, 3]");
}

TEST_CASE("detach makes an independent deep copy") {
  Tensor a({2}, {1.0, 2.0}, true);
  Tensor d = a.detach();
  d.mutable_data()[0] = 9.0;
  CHECK(a[0] == 1.0);
  CHECK_FALSE(d.requires_grad());
}

TEST_CASE("tape records only when an input requires a gradient") {
  Tape tape;
  Tensor c({2}, {1.0, 2.0});
  add(tape, c, c);
  CHECK(tape.empty());
  Tensor p({2}, {1.0, 2.0}, true);
  add(tape, c, p);
  CHECK(tape.size() == 1);
}

TEST_CASE("backward accumulates through shared subexpressions and clears the tape") {
  Tape tape;
  Tensor x({1}, {3.0}, true);
  Tensor y = mul(tape, x, x);               // x^2
  Tensor z = add(tape, y, scale(tape, x, 2.0));  // x^2 + 2x
  tape.backward(sum_all(tape, z));
  CHECK(x.grad()[0] == doctest::Approx(8.0));
  CHECK(tape.empty());
}

TEST_CASE("backward rejects non-scalar or gradient-free losses") {
  Tape tape;
  Tensor x({2}, {1.0, 2.0}, true);
  Tensor y = scale(tape, x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
  CHECK_THROWS(tape.backward(Tensor::scalar(1.0)));
}

TEST_CASE("seeded RNG streams are reproducible and distinct") {
  Rng a(mix_seed(7, 1)), b(mix_seed(7, 1)), c(mix_seed(7, 2));
  bool differs = false;
  for (int i = 0; i < 10; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    differs |= va != c.next_u64();
  }
  CHECK(differs);
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.index(5) < 5);
  }
}
