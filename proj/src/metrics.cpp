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

#include "mbl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

namespace mbl {
namespace {

using Key = std::pair<std::string, std::string>;  // (clip, label)

std::map<Key, std::vector<const EventAnnotation*>> group(const std::vector<EventAnnotation>& events) {
  std::map<Key, std::vector<const EventAnnotation*>> out;
  for (const auto& e : events) {
    validate_event(e);
    out[{e.clip_id, e.label}].push_back(&e);
  }
  for (auto& [key, list] : out) {
    std::stable_sort(list.begin(), list.end(), [](const auto* a, const auto* b) {
      return a->onset < b->onset || (a->onset == b->onset && a->offset < b->offset);
    });
  }
  return out;
}

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

EvalReport finish(Protocol protocol, const std::map<std::string, Counts>& counts) {
  if (counts.empty()) {
    throw std::invalid_argument("cannot score: neither references nor predictions contain events");
  }
  EvalReport report;
  report.protocol = protocol;
  std::vector<double> f1;
  for (const auto& [label, c] : counts) {
    report.per_class[label] = score_from_counts(c.tp, c.fp, c.fn);
    f1.push_back(report.per_class[label].f1);
  }
  report.macro_f1 = macro_average(f1);
  return report;
}

}  // namespace

std::string to_string(Protocol protocol) {
  return protocol == Protocol::kEvent ? "event" : "segment";
}

Protocol parse_protocol(const std::string& name) {
  if (name == "event") return Protocol::kEvent;
  if (name == "segment") return Protocol::kSegment;
  throw std::invalid_argument("unknown protocol '" + name + "' (expected event or segment)");
}

ClassScore score_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  ClassScore s;
  s.tp = tp;
  s.fp = fp;
  s.fn = fn;
  s.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  s.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

EvalReport event_based_f1(const std::vector<EventAnnotation>& refs,
                          const std::vector<EventAnnotation>& preds, const EventMatchParams& params) {
  const auto ref_groups = group(refs);
  const auto pred_groups = group(preds);
  std::map<std::string, Counts> counts;
  for (const auto& [key, list] : ref_groups) counts[key.second].fn += list.size();
  for (const auto& [key, list] : pred_groups) counts[key.second].fp += list.size();

  for (const auto& [key, rlist] : ref_groups) {
    auto it = pred_groups.find(key);
    if (it == pred_groups.end()) continue;
    const auto& plist = it->second;
    std::vector<bool> used(plist.size(), false);
    std::size_t tp = 0;
    for (const auto* r : rlist) {
      const double tol = std::max(params.offset_min, params.offset_fraction * r->duration());
      for (std::size_t j = 0; j < plist.size(); ++j) {
        if (used[j]) continue;
        if (std::abs(plist[j]->onset - r->onset) <= params.onset_collar &&
            std::abs(plist[j]->offset - r->offset) <= tol) {
          used[j] = true;
          ++tp;
          break;
        }
      }
    }
    Counts& c = counts[key.second];
    c.tp += tp;
    c.fp -= tp;
    c.fn -= tp;
  }
  return finish(Protocol::kEvent, counts);
}

EvalReport segment_based_f1(const std::vector<EventAnnotation>& refs,
                            const std::vector<EventAnnotation>& preds, double segment_length,
                            double clip_duration) {
  if (!(segment_length > 0.0)) throw std::invalid_argument("segment length must be positive");
  if (!(clip_duration > 0.0)) throw std::invalid_argument("clip duration must be positive");

  // (clip, label) -> active segment indices
  auto activity = [&](const std::vector<EventAnnotation>& events) {
    std::map<Key, std::set<std::size_t>> out;
    for (const auto& e : events) {
      validate_event(e);
      auto& segs = out[{e.clip_id, e.label}];
      const double offset = std::min(e.offset, clip_duration);
      if (e.onset >= offset) continue;
      const double first = std::floor(e.onset / segment_length);
      const auto lo = static_cast<std::size_t>(std::max(0.0, first - 1.0));
      const auto hi = static_cast<std::size_t>(std::ceil(offset / segment_length)) + 1;
      for (std::size_t k = lo; k <= hi; ++k) {
        const double s0 = static_cast<double>(k) * segment_length;
        const double s1 = static_cast<double>(k + 1) * segment_length;
        if (e.onset < s1 && offset > s0) segs.insert(k);
      }
    }
    return out;
  };

  const auto ref_act = activity(refs);
  const auto pred_act = activity(preds);
  std::map<std::string, Counts> counts;
  std::set<Key> keys;
  for (const auto& [k, v] : ref_act) keys.insert(k);
  for (const auto& [k, v] : pred_act) keys.insert(k);
  static const std::set<std::size_t> kNone;
  for (const auto& key : keys) {
    auto r = ref_act.find(key);
    auto p = pred_act.find(key);
    const auto& rs = r == ref_act.end() ? kNone : r->second;
    const auto& ps = p == pred_act.end() ? kNone : p->second;
    Counts& c = counts[key.second];
    for (std::size_t s : rs) (ps.count(s) ? c.tp : c.fn) += 1;
    for (std::size_t s : ps)
      if (!rs.count(s)) c.fp += 1;
  }
  return finish(Protocol::kSegment, counts);
}

double macro_average(std::span<const double> f1_scores) {
  if (f1_scores.empty()) throw std::invalid_argument("macro_average: empty class list");
  double total = 0.0;
  for (double f : f1_scores) total += f;
  return total / static_cast<double>(f1_scores.size());
}

std::string format_report(const EvalReport& report) {
  std::string out;
  char buf[256];
  for (const auto& [label, s] : report.per_class) {
    std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f\t%.6f\t%zu\t%zu\t%zu\n", s.precision, s.recall, s.f1,
                  s.tp, s.fp, s.fn);
    out += label + buf;
  }
  std::snprintf(buf, sizeof buf, "macro_f1\t%.6f\n", report.macro_f1);
  out += buf;
  return out;
}

}  // namespace mbl
