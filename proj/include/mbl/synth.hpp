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
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "mbl/events.hpp"

namespace mbl {

enum class SynthKind { kTone, kChirp, kNoiseBurst, kAmTone };

struct EventTemplate {
  std::string label;
  SynthKind kind = SynthKind::kTone;
  double freq_lo = 0.0;  // primary band, Hz
  double freq_hi = 0.0;
  double min_duration = 0.5;
  double max_duration = 3.0;
  double attack = 0.02;
  double release = 0.05;
};

// Four classes with pairwise disjoint primary bands.
std::vector<EventTemplate> default_templates();

struct SynthConfig {
  std::size_t n_clips = 100;
  double clip_seconds = 10.0;
  int sample_rate = 22050;
  std::vector<EventTemplate> classes = default_templates();
  std::size_t max_polyphony = 2;
  std::size_t min_events = 1;
  std::size_t max_events = 4;
  double snr_min_db = 6.0;
  double snr_max_db = 20.0;
  double background_dbfs = -40.0;  // pink-noise RMS level
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<std::string> class_names() const;
};

nlohmann::json to_json(const SynthConfig& config);
// Strict: unknown keys throw.
SynthConfig synth_config_from_json(const nlohmann::json& j);

struct SynthClip {
  std::string clip_id;
  std::vector<double> samples;
  std::vector<EventAnnotation> events;  // sorted by onset
  std::vector<std::string> weak_labels;  // classes present, template order
};

std::string clip_name(std::size_t index);  // "clip_0007"

// Clip `index` depends only on (config, index).
SynthClip synthesize_clip(const SynthConfig& config, std::size_t index);

struct SynthManifest {
  std::vector<std::string> clip_ids;
  std::vector<EventAnnotation> strong_refs;
  std::vector<std::vector<std::string>> weak_labels;
};

// Writes clip_<index>.wav, weak_labels.tsv, strong_refs.tsv and
// manifest.json into `out_dir` (created if needed).
SynthManifest generate_dataset(const SynthConfig& config, const std::filesystem::path& out_dir);

inline constexpr const char* kWeakLabelsFile = "weak_labels.tsv";
inline constexpr const char* kStrongRefsFile = "strong_refs.tsv";
inline constexpr const char* kManifestFile = "manifest.json";

struct WeakLabelRow {
  std::string clip_id;
  std::vector<std::string> labels;
};

void write_weak_labels(const std::filesystem::path& path, const std::vector<WeakLabelRow>& rows);
std::vector<WeakLabelRow> read_weak_labels(const std::filesystem::path& path);

}  // namespace mbl
