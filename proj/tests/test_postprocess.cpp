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
#include "mbl/postprocess.hpp"
#include "mbl/rng.hpp"

using namespace mbl;

namespace {

using Bits = std::vector<std::uint8_t>;

// True iff every event of `inner` lies within some event of `outer`.
bool contained(const std::vector<EventAnnotation>& inner, const std::vector<EventAnnotation>& outer) {
  for (const auto& e : inner) {
    bool ok = false;
    for (const auto& o : outer) ok |= o.onset <= e.onset && e.offset <= o.offset;
    if (!ok) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("binarize uses a strict threshold") {
  CHECK(binarize(std::vector<double>{0.4, 0.6}, 0.5) == Bits{0, 1});
  CHECK(binarize(std::vector<double>{0.5}, 0.5) == Bits{0});
  CHECK(binarize(std::vector<double>(4, 0.0), 0.5) == Bits(4, 0));
  CHECK_THROWS_AS(binarize(std::vector<double>{1.2}, 0.5), std::invalid_argument);
}

TEST_CASE("median filter removes spikes, fills gaps, and rejects even windows") {
  CHECK(median_filter(Bits{0, 0, 1, 0, 0}, 3) == Bits{0, 0, 0, 0, 0});
  CHECK(median_filter(Bits{1, 1, 0, 1, 1}, 3) == Bits{1, 1, 1, 1, 1});
  const Bits x{1, 0, 0, 1, 1, 0, 1};
  CHECK(median_filter(x, 1) == x);
  CHECK_THROWS_AS(median_filter(x, 4), std::invalid_argument);
  CHECK_THROWS_AS(median_filter(x, 0), std::invalid_argument);
  CHECK(median_filter(Bits{}, 3).empty());
  // Replicated edges keep a boundary run intact.
  CHECK(median_filter(Bits{1, 1, 0, 0, 0}, 3) == Bits{1, 1, 0, 0, 0});
}

TEST_CASE("a wide window removes runs shorter than half the window") {
  Bits x(60, 0);
  for (std::size_t t = 10; t < 14; ++t) x[t] = 1;   // 4 frames: removed by window 11
  for (std::size_t t = 30; t < 50; ++t) x[t] = 1;   // 20 frames: kept
  const Bits y = median_filter(x, 11);
  for (std::size_t t = 0; t < 20; ++t) CHECK(y[t] == 0);
  CHECK(y[40] == 1);
}

TEST_CASE("extract events maps runs to hop-aligned intervals") {
  auto e = extract_events(Bits{0, 1, 1, 1, 0}, 0.02, "dog", "c1");
  REQUIRE(e.size() == 1);
  CHECK(e[0].onset == doctest::Approx(0.02));
  CHECK(e[0].offset == doctest::Approx(0.08));
  CHECK(e[0].label == "dog");
  CHECK(e[0].clip_id == "c1");
  CHECK(extract_events(Bits(5, 0), 0.02, "x", "c").empty());
  auto two = extract_events(Bits{1, 0, 1}, 0.5, "x", "c");
  REQUIRE(two.size() == 2);
  CHECK(two[0].onset == 0.0);
  CHECK(two[0].offset == 0.5);
  CHECK(two[1].onset == 1.0);
  CHECK(two[1].offset == 1.5);
}

TEST_CASE("adaptive windows follow the declared rule") {
  CHECK(adaptive_window(0.54, 0.02) == 9);
  CHECK(adaptive_window(0.05, 0.02) == 3);
  CHECK(adaptive_window(10.0, 0.02) == 51);
  CHECK(adaptive_window(0.6, 0.02) == 11);  // 10 frames rounds up to the next odd
  std::vector<EventAnnotation> ev{{"c", "a", 0.0, 1.2}, {"c", "a", 2.0, 2.6}, {"c", "a", 3.0, 6.0}};
  const auto w = adaptive_windows(ev, {"a", "b"}, 0.02);
  CHECK(w == std::vector<std::size_t>{21, kDefaultMedianWindow});
}

TEST_CASE("postprocess_clip smooths per class and sorts the result") {
  const std::size_t t = 10;
  std::vector<double> p(t * 2, 0.1);
  for (std::size_t i = 2; i < 8; ++i) p[i * 2 + 1] = 0.9;  // class b active 2..7
  p[5 * 2 + 0] = 0.9;                                      // isolated class a blip at 5
  PostConfig cfg;
  cfg.median_windows = {3, 3};
  auto ev = postprocess_clip(p, t, {"a", "b"}, 0.1, "clip", cfg);
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].label == "b");
  CHECK(ev[0].onset == doctest::Approx(0.2));
  CHECK(ev[0].offset == doctest::Approx(0.8));
  cfg.median_windows = {2, 3};
  CHECK_THROWS_AS(postprocess_clip(p, t, {"a", "b"}, 0.1, "clip", cfg), std::invalid_argument);
}

TEST_CASE("hop-aligned events survive a rasterize/extract round trip") {
  Rng rng(21);
  for (int k = 0; k < 200; ++k) {
    const double hop = 0.02;
    std::vector<EventAnnotation> ev;
    std::size_t t = rng.index(5);
    while (t < 90) {
      const std::size_t len = 1 + rng.index(8);
      ev.push_back({"c", "x", static_cast<double>(t) * hop, static_cast<double>(t + len) * hop});
      t += len + 1 + rng.index(6);
    }
    CHECK(extract_events(rasterize_events(ev, 100, hop), hop, "x", "c") == ev);
  }
}

TEST_CASE("median filter with window 3 is idempotent on random binary sequences") {
  Rng rng(22);
  for (int k = 0; k < 1000; ++k) {
    Bits x(1 + rng.index(64));
    const double density = rng.uniform();
    for (auto& b : x) b = rng.uniform() < density;
    const Bits once = median_filter(x, 3);
    CHECK(median_filter(once, 3) == once);
  }
}

TEST_CASE("raising the threshold never lengthens or creates events") {
  Rng rng(23);
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> p(1 + rng.index(80));
    for (double& v : p) v = rng.uniform();
    double lo = rng.uniform(0.01, 0.99), hi = rng.uniform(0.01, 0.99);
    if (lo > hi) std::swap(lo, hi);
    const auto e_lo = extract_events(binarize(p, lo), 0.02, "x", "c");
    const auto e_hi = extract_events(binarize(p, hi), 0.02, "x", "c");
    CHECK(e_hi.size() <= p.size());
    CHECK(contained(e_hi, e_lo));
  }
}
