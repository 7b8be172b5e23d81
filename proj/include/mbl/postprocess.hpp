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

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mbl/events.hpp"

namespace mbl {

inline constexpr std::size_t kDefaultMedianWindow = 27;

struct PostConfig {
  double threshold = 0.5;
  // One odd window per class; empty means kDefaultMedianWindow everywhere.
  std::vector<std::size_t> median_windows;

  std::size_t window_for(std::size_t cls) const;
  void validate() const;
};

// 1 iff p > threshold. Probabilities outside [0, 1] are rejected.
std::vector<std::uint8_t> binarize(std::span<const double> probs, double threshold);

// Running binary median with replicate padding. The output feeds back into
// the left half of the window, which makes the filter a root-converging one:
// a second pass with window 3 changes nothing. Even windows throw.
std::vector<std::uint8_t> median_filter(std::span<const std::uint8_t> binary, std::size_t window);

// Maximal runs of ones -> [i * hop, (j + 1) * hop), sorted by onset.
std::vector<EventAnnotation> extract_events(std::span<const std::uint8_t> binary, double hop_seconds,
                                            const std::string& label, const std::string& clip_id);

// Nearest odd integer to frames / 3, clamped to [3, 51].
std::size_t adaptive_window(double duration_seconds, double hop_seconds);

// Per-class windows from the median duration of each class's events; classes
// without events fall back to the default.
std::vector<std::size_t> adaptive_windows(const std::vector<EventAnnotation>& events,
                                          const std::vector<std::string>& classes, double hop_seconds);

// frame_probs is [frames, classes] row-major.
std::vector<EventAnnotation> postprocess_clip(std::span<const double> frame_probs, std::size_t frames,
                                              const std::vector<std::string>& classes,
                                              double hop_seconds, const std::string& clip_id,
                                              const PostConfig& config);

// Frame activation of one class: frame t is on iff [t*hop, (t+1)*hop) lies
// inside an event with positive overlap.
std::vector<std::uint8_t> rasterize_events(const std::vector<EventAnnotation>& events,
                                           std::size_t frames, double hop_seconds);

}  // namespace mbl
