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
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbl {

class AudioIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AudioClip {
  std::vector<double> samples;  // mono, [-1, 1]
  double sample_rate = 0.0;

  double duration_seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// Reads RIFF/WAVE PCM-16, mono or stereo (channels averaged).
AudioClip load_wav(const std::filesystem::path& path);
AudioClip decode_wav(std::span<const unsigned char> bytes);

// Writes mono PCM-16. Samples are clipped to [-1, 1] and rounded to the
// nearest step of 1/32768.
void write_wav(const std::filesystem::path& path, std::span<const double> samples,
               int sample_rate);
std::vector<unsigned char> encode_wav(std::span<const double> samples, int sample_rate);

// Linear interpolation resampler; identity when the rates match.
AudioClip resample_linear(const AudioClip& clip, double target_rate);

}  // namespace mbl
