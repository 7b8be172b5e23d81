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

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace mbl {

struct EventAnnotation {
  std::string clip_id;
  std::string label;
  double onset = 0.0;
  double offset = 0.0;

  double duration() const { return offset - onset; }
  bool operator==(const EventAnnotation&) const = default;
};

// Throws std::invalid_argument unless 0 <= onset < offset and both finite.
void validate_event(const EventAnnotation& event);

// Sorts by (clip_id, onset, offset, label).
void sort_events(std::vector<EventAnnotation>& events);

// One event per line: clip_id<TAB>onset<TAB>offset<TAB>label, 6 decimals.
void write_events_tsv(std::ostream& out, const std::vector<EventAnnotation>& events);
void write_events_tsv(const std::filesystem::path& path, const std::vector<EventAnnotation>& events);

// Accepts the same format; blank lines and '#' comments are skipped. Lines
// with an empty label column ("clip_id" alone, or with empty fields) are
// ignored so that event-free clips may be listed. Malformed events throw.
std::vector<EventAnnotation> read_events_tsv(std::istream& in, const std::string& source = "<stream>");
std::vector<EventAnnotation> read_events_tsv(const std::filesystem::path& path);

}  // namespace mbl
