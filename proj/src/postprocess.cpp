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

#include "mbl/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mbl {

std::size_t PostConfig::window_for(std::size_t cls) const {
  if (median_windows.empty()) return kDefaultMedianWindow;
  if (cls >= median_windows.size()) {
    throw std::out_of_range("no median window configured for class " + std::to_string(cls));
  }
  return median_windows[cls];
}

void PostConfig::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("threshold must lie in (0, 1)");
  }
  for (std::size_t w : median_windows) {
    if (w == 0 || w % 2 == 0) {
      throw std::invalid_argument("median windows must be odd and positive, got " + std::to_string(w));
    }
  }
}

std::vector<std::uint8_t> binarize(std::span<const double> probs, double threshold) {
  std::vector<std::uint8_t> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] >= 0.0 && probs[i] <= 1.0)) {
      throw std::invalid_argument("binarize: probability " + std::to_string(probs[i]) +
                                  " outside [0, 1] at index " + std::to_string(i));
    }
    out[i] = probs[i] > threshold ? 1 : 0;
  }
  return out;
}

std::vector<std::uint8_t> median_filter(std::span<const std::uint8_t> binary, std::size_t window) {
  if (window == 0 || window % 2 == 0) {
    throw std::invalid_argument("median_filter: window must be odd and positive, got " +
                                std::to_string(window));
  }
  const std::size_t n = binary.size();
  std::vector<std::uint8_t> out(n);
  if (n == 0) return out;
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(window / 2);
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(n) - 1;
  for (std::ptrdiff_t t = 0; t <= last; ++t) {
    std::size_t ones = 0;
    for (std::ptrdiff_t k = -half; k <= half; ++k) {
      const std::ptrdiff_t i = t + k;
      if (k < 0) {
        ones += i < 0 ? (binary[0] != 0) : out[static_cast<std::size_t>(i)];
      } else {
        ones += binary[static_cast<std::size_t>(std::min(i, last))] != 0;
      }
    }
    out[static_cast<std::size_t>(t)] = ones > static_cast<std::size_t>(half) ? 1 : 0;
  }
  return out;
}

std::vector<EventAnnotation> extract_events(std::span<const std::uint8_t> binary, double hop_seconds,
                                            const std::string& label, const std::string& clip_id) {
  if (!(hop_seconds > 0.0)) throw std::invalid_argument("extract_events: hop must be positive");
  std::vector<EventAnnotation> events;
  std::size_t i = 0;
  while (i < binary.size()) {
    if (!binary[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < binary.size() && binary[j + 1]) ++j;
    events.push_back({clip_id, label, static_cast<double>(i) * hop_seconds,
                      static_cast<double>(j + 1) * hop_seconds});
    i = j + 1;
  }
  return events;
}

std::size_t adaptive_window(double duration_seconds, double hop_seconds) {
  if (!(duration_seconds > 0.0) || !(hop_seconds > 0.0)) {
    throw std::invalid_argument("adaptive_window: duration and hop must be positive");
  }
  // Snap away float noise such as 0.6 / 0.02 = 29.999999999999996.
  const double x = std::round(duration_seconds / hop_seconds / 3.0 * 1e6) / 1e6;
  // Nearest odd integer; exact even values round up.
  const double odd = 2.0 * std::floor(x / 2.0) + 1.0;
  return static_cast<std::size_t>(std::clamp(odd, 3.0, 51.0));
}

std::vector<std::size_t> adaptive_windows(const std::vector<EventAnnotation>& events,
                                          const std::vector<std::string>& classes, double hop_seconds) {
  std::vector<std::size_t> out;
  out.reserve(classes.size());
  for (const auto& cls : classes) {
    std::vector<double> d;
    for (const auto& e : events)
      if (e.label == cls) d.push_back(e.duration());
    if (d.empty()) {
      out.push_back(kDefaultMedianWindow);
      continue;
    }
    std::sort(d.begin(), d.end());
    const std::size_t m = d.size() / 2;
    const double median = d.size() % 2 ? d[m] : 0.5 * (d[m - 1] + d[m]);
    out.push_back(adaptive_window(median, hop_seconds));
  }
  return out;
}

std::vector<EventAnnotation> postprocess_clip(std::span<const double> frame_probs, std::size_t frames,
                                              const std::vector<std::string>& classes,
                                              double hop_seconds, const std::string& clip_id,
                                              const PostConfig& config) {
  config.validate();
  const std::size_t c = classes.size();
  if (frame_probs.size() != frames * c) {
    throw std::invalid_argument("postprocess_clip: expected " + std::to_string(frames) + "x" +
                                std::to_string(c) + " probabilities, got " +
                                std::to_string(frame_probs.size()));
  }
  std::vector<EventAnnotation> events;
  std::vector<double> column(frames);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t t = 0; t < frames; ++t) column[t] = frame_probs[t * c + k];
    const auto smoothed = median_filter(binarize(column, config.threshold), config.window_for(k));
    auto found = extract_events(smoothed, hop_seconds, classes[k], clip_id);
    events.insert(events.end(), found.begin(), found.end());
  }
  sort_events(events);
  return events;
}

std::vector<std::uint8_t> rasterize_events(const std::vector<EventAnnotation>& events,
                                           std::size_t frames, double hop_seconds) {
  std::vector<std::uint8_t> out(frames, 0);
  for (const auto& e : events) {
    for (std::size_t t = 0; t < frames; ++t) {
      const double lo = static_cast<double>(t) * hop_seconds;
      const double hi = static_cast<double>(t + 1) * hop_seconds;
      if (e.onset < hi && e.offset > lo) out[t] = 1;
    }
  }
  return out;
}

}  // namespace mbl
