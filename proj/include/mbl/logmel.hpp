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
#include <memory>
#include <string>
#include <vector>

#include "mbl/audio.hpp"

namespace mbl {

struct LogMelConfig {
  double sample_rate = 22050.0;
  std::size_t bands = 64;
  double frame_seconds = 0.040;
  double hop_seconds = 0.020;  // 50 % overlap
  double log_floor = 1e-10;
};

// T x F log-mel matrix (row-major, one row per frame).
struct LogMelClip {
  std::vector<double> features;
  std::size_t frames = 0;
  std::size_t bands = 0;
  double frame_hop_seconds = 0.0;
  std::string clip_id;

  double at(std::size_t t, std::size_t f) const { return features[t * bands + f]; }
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Hann-windowed STFT (reflect center padding) -> triangular HTK mel
// filterbank over [0, Nyquist] -> ln(power + floor).
//
// Holds an FFT plan and scratch buffers, so one instance per thread.
class LogMelExtractor {
 public:
  explicit LogMelExtractor(LogMelConfig config = {});
  ~LogMelExtractor();
  LogMelExtractor(const LogMelExtractor&) = delete;
  LogMelExtractor& operator=(const LogMelExtractor&) = delete;

  // Resamples to the configured rate if needed.
  LogMelClip compute(const AudioClip& clip, std::string clip_id = {});

  const LogMelConfig& config() const { return config_; }
  std::size_t frame_length() const { return frame_length_; }
  std::size_t hop_length() const { return hop_length_; }
  std::size_t fft_size() const { return fft_size_; }
  std::size_t frame_count(std::size_t n_samples) const;

  // bands x (fft_size/2 + 1), row-major.
  const std::vector<double>& filterbank() const { return filterbank_; }

 private:
  struct Fft;

  LogMelConfig config_;
  std::size_t frame_length_ = 0;
  std::size_t hop_length_ = 0;
  std::size_t fft_size_ = 0;
  std::vector<double> window_;
  std::vector<double> filterbank_;
  std::unique_ptr<Fft> fft_;
};

LogMelClip logmel(const AudioClip& clip, const LogMelConfig& config = {},
                  std::string clip_id = {});

// Feature cache: u32 T, u32 F (little endian), then T*F little-endian
// float64 values, row-major.
void write_feature_cache(const std::filesystem::path& path, const LogMelClip& clip);
LogMelClip read_feature_cache(const std::filesystem::path& path, double hop_seconds,
                              std::string clip_id = {});

}  // namespace mbl
