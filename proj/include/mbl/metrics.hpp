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
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mbl/events.hpp"

namespace mbl {

enum class Protocol { kEvent, kSegment };

std::string to_string(Protocol protocol);
Protocol parse_protocol(const std::string& name);  // "event" | "segment"

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

// Precision, recall and F1 from counts; 0 wherever a ratio is undefined.
ClassScore score_from_counts(std::size_t tp, std::size_t fp, std::size_t fn);

struct EvalReport {
  Protocol protocol = Protocol::kEvent;
  std::map<std::string, ClassScore> per_class;  // classes seen in refs or preds
  double macro_f1 = 0.0;
};

struct EventMatchParams {
  double onset_collar = 0.2;
  double offset_min = 0.2;       // offset tolerance is max(offset_min,
  double offset_fraction = 0.2;  //   offset_fraction * reference duration)
};

// Greedy one-to-one matching per (clip, class): references in onset order,
// each taking the earliest-onset unmatched prediction within tolerance.
EvalReport event_based_f1(const std::vector<EventAnnotation>& refs,
                          const std::vector<EventAnnotation>& preds,
                          const EventMatchParams& params = {});

// A class is active in [k*len, (k+1)*len) iff one of its events overlaps it
// with positive measure. Event parts beyond clip_duration are ignored.
EvalReport segment_based_f1(const std::vector<EventAnnotation>& refs,
                            const std::vector<EventAnnotation>& preds, double segment_length = 1.0,
                            double clip_duration = 10.0);

// Unweighted mean; throws on an empty list.
double macro_average(std::span<const double> f1_scores);

// `label<TAB>P<TAB>R<TAB>F1<TAB>TP<TAB>FP<TAB>FN` per class, then
// `macro_f1<TAB>value`.
std::string format_report(const EvalReport& report);

}  // namespace mbl
