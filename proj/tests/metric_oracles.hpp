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

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mbl/events.hpp"
#include "mbl/rng.hpp"

namespace testutil {

using mbl::EventAnnotation;
using mbl::Rng;

using Events = std::vector<EventAnnotation>;

inline Events random_events(Rng& rng, std::size_t max_events, const std::vector<std::string>& labels,
                            const std::vector<std::string>& clips, double span) {
  Events out;
  const std::size_t n = rng.index(max_events + 1);
  for (std::size_t i = 0; i < n; ++i) {
    // 0.01 s grid keeps the rasterization oracle exact.
    const auto on = static_cast<double>(rng.index(static_cast<std::uint64_t>(span * 100))) / 100.0;
    const auto len = static_cast<double>(1 + rng.index(300)) / 100.0;
    out.push_back({clips[rng.index(clips.size())], labels[rng.index(labels.size())], on,
                   std::min(span, on + len)});
    if (out.back().offset <= out.back().onset) out.pop_back();
  }
  return out;
}

// Marks every 0.01 s cell whose midpoint lies inside an event, then calls a
// segment active if any of its cells is.
inline std::map<std::string, std::array<std::size_t, 3>> raster_oracle(const Events& refs, const Events& preds,
                                                                 double seg, double duration) {
  const auto cells = static_cast<std::size_t>(std::llround(duration * 100));
  const auto per_seg = static_cast<std::size_t>(std::llround(seg * 100));
  std::set<std::string> labels, clips;
  for (const auto* set : {&refs, &preds})
    for (const auto& e : *set) {
      labels.insert(e.label);
      clips.insert(e.clip_id);
    }
  auto active = [&](const Events& ev, const std::string& clip, const std::string& label) {
    std::vector<bool> seg_on((cells + per_seg - 1) / per_seg, false);
    for (std::size_t c = 0; c < cells; ++c) {
      const double mid = (static_cast<double>(c) + 0.5) / 100.0;
      for (const auto& e : ev)
        if (e.clip_id == clip && e.label == label && e.onset < mid && mid < e.offset) seg_on[c / per_seg] = true;
    }
    return seg_on;
  };
  std::map<std::string, std::array<std::size_t, 3>> out;
  for (const auto& l : labels) {
    auto& tpfpfn = out[l];
    tpfpfn = {0, 0, 0};
    for (const auto& c : clips) {
      const auto r = active(refs, c, l), p = active(preds, c, l);
      for (std::size_t s = 0; s < r.size(); ++s) {
        tpfpfn[0] += r[s] && p[s];
        tpfpfn[1] += !r[s] && p[s];
        tpfpfn[2] += r[s] && !p[s];
      }
    }
  }
  return out;
}

inline bool matches(const EventAnnotation& r, const EventAnnotation& p) {
  return std::abs(p.onset - r.onset) <= 0.2 && std::abs(p.offset - r.offset) <= std::max(0.2, 0.2 * r.duration());
}

// Maximum bipartite matching by exhaustive search, per (clip, label).
inline std::map<std::string, std::size_t> bipartite_oracle_tp(const Events& refs, const Events& preds) {
  std::map<std::pair<std::string, std::string>, std::pair<Events, Events>> groups;
  for (const auto& e : refs) groups[{e.clip_id, e.label}].first.push_back(e);
  for (const auto& e : preds) groups[{e.clip_id, e.label}].second.push_back(e);
  std::map<std::string, std::size_t> tp;
  for (const auto& [key, g] : groups) {
    const auto& [r, p] = g;
    std::vector<bool> used(p.size(), false);
    std::function<std::size_t(std::size_t)> best = [&](std::size_t i) -> std::size_t {
      if (i == r.size()) return 0;
      std::size_t b = best(i + 1);
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (used[j] || !matches(r[i], p[j])) continue;
        used[j] = true;
        b = std::max(b, 1 + best(i + 1));
        used[j] = false;
      }
      return b;
    };
    tp[key.second] += best(0);
  }
  return tp;
}


}  // namespace testutil
