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

#include "mbl/events.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace mbl {
namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

double parse_seconds(const std::string& field, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(field, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument(where + ": '" + field + "' is not a number");
  }
  if (used != field.size()) throw std::invalid_argument(where + ": '" + field + "' is not a number");
  return v;
}

}  // namespace

void validate_event(const EventAnnotation& e) {
  if (!std::isfinite(e.onset) || !std::isfinite(e.offset)) {
    throw std::invalid_argument("event " + e.clip_id + "/" + e.label + " has non-finite times");
  }
  if (e.onset < 0.0) throw std::invalid_argument("event " + e.clip_id + "/" + e.label + " has negative onset");
  if (!(e.offset > e.onset)) {
    throw std::invalid_argument("event " + e.clip_id + "/" + e.label + " has offset <= onset");
  }
  if (e.label.empty()) throw std::invalid_argument("event in " + e.clip_id + " has an empty label");
}

void sort_events(std::vector<EventAnnotation>& events) {
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
    return std::tie(a.clip_id, a.onset, a.offset, a.label) <
           std::tie(b.clip_id, b.onset, b.offset, b.label);
  });
}

void write_events_tsv(std::ostream& out, const std::vector<EventAnnotation>& events) {
  char buf[64];
  for (const auto& e : events) {
    out << e.clip_id << '\t';
    std::snprintf(buf, sizeof(buf), "%.6f\t%.6f", e.onset, e.offset);
    out << buf << '\t' << e.label << '\n';
  }
}

void write_events_tsv(const std::filesystem::path& path, const std::vector<EventAnnotation>& events) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_events_tsv(out, events);
}

std::vector<EventAnnotation> read_events_tsv(std::istream& in, const std::string& source) {
  std::vector<EventAnnotation> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_tabs(line);
    const std::string where = source + ":" + std::to_string(line_no);
    if (fields.size() >= 2 && fields[1] == "onset") continue;  // header row
    if (fields.size() < 4 || fields[3].empty()) {
      if (fields.size() >= 2 && !fields[1].empty()) {
        throw std::invalid_argument(where + ": expected clip_id, onset, offset, label");
      }
      continue;  // clip listed without events
    }
    if (fields.size() > 4) throw std::invalid_argument(where + ": too many columns");
    EventAnnotation e{fields[0], fields[3], parse_seconds(fields[1], where),
                      parse_seconds(fields[2], where)};
    try {
      validate_event(e);
    } catch (const std::invalid_argument& err) {
      throw std::invalid_argument(where + ": " + err.what());
    }
    events.push_back(std::move(e));
  }
  return events;
}

std::vector<EventAnnotation> read_events_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_events_tsv(in, path.string());
}

}  // namespace mbl
