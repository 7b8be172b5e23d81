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

#include "mbl/logmel.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <mutex>
#include <stdexcept>

namespace mbl {
namespace {

constexpr double kPi = 3.14159265358979323846;

// FFTW planning is not thread safe; execution with private buffers is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

void put_le_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_le_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_le(std::istream& in, int bytes) {
  unsigned char b[8] = {};
  in.read(reinterpret_cast<char*>(b), bytes);
  if (!in) throw AudioIoError("truncated feature cache");
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct LogMelExtractor::Fft {
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;

  explicit Fft(std::size_t n) {
    in = fftw_alloc_real(n);
    out = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  ~Fft() {
    {
      std::lock_guard<std::mutex> lock(fftw_planner_mutex());
      fftw_destroy_plan(plan);
    }
    fftw_free(in);
    fftw_free(out);
  }
};

LogMelExtractor::LogMelExtractor(LogMelConfig config) : config_(config) {
  if (!(config_.sample_rate > 0.0)) throw std::invalid_argument("sample rate must be positive");
  if (config_.bands == 0) throw std::invalid_argument("band count must be positive");
  if (!(config_.log_floor > 0.0)) throw std::invalid_argument("log floor must be positive");
  frame_length_ = static_cast<std::size_t>(std::lround(config_.frame_seconds * config_.sample_rate));
  hop_length_ = static_cast<std::size_t>(std::lround(config_.hop_seconds * config_.sample_rate));
  if (frame_length_ < 2 || hop_length_ == 0) throw std::invalid_argument("frame/hop too short");
  fft_size_ = next_pow2(frame_length_);

  // Periodic Hann window.
  window_.resize(frame_length_);
  for (std::size_t i = 0; i < frame_length_; ++i) {
    window_[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) /
                                      static_cast<double>(frame_length_));
  }

  const std::size_t bins = fft_size_ / 2 + 1;
  const std::size_t nb = config_.bands;
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(config_.sample_rate / 2.0);
  std::vector<double> edges(nb + 2);
  for (std::size_t i = 0; i < nb + 2; ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(nb + 1));
  }
  filterbank_.assign(nb * bins, 0.0);
  for (std::size_t b = 0; b < nb; ++b) {
    const double lo = edges[b], center = edges[b + 1], hi = edges[b + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * config_.sample_rate / static_cast<double>(fft_size_);
      double w = 0.0;
      if (f > lo && f <= center) {
        w = (f - lo) / (center - lo);
      } else if (f > center && f < hi) {
        w = (hi - f) / (hi - center);
      }
      filterbank_[b * bins + k] = w;
    }
  }
  fft_ = std::make_unique<Fft>(fft_size_);
}

LogMelExtractor::~LogMelExtractor() = default;

std::size_t LogMelExtractor::frame_count(std::size_t n_samples) const {
  return (n_samples + hop_length_ - 1) / hop_length_;
}

LogMelClip LogMelExtractor::compute(const AudioClip& input, std::string clip_id) {
  if (input.samples.empty()) throw std::invalid_argument("empty audio clip");
  const AudioClip clip = resample_linear(input, config_.sample_rate);
  const std::size_t n = clip.samples.size();
  if (n < hop_length_) {
    throw std::invalid_argument("clip of " + std::to_string(n) +
                                " samples is shorter than one hop (" +
                                std::to_string(hop_length_) + ")");
  }
  const std::size_t frames = frame_count(n);
  const std::size_t bins = fft_size_ / 2 + 1;
  const std::size_t nb = config_.bands;
  const auto pad = static_cast<std::ptrdiff_t>(frame_length_ / 2);

  LogMelClip out;
  out.frames = frames;
  out.bands = nb;
  out.frame_hop_seconds = static_cast<double>(hop_length_) / config_.sample_rate;
  out.clip_id = std::move(clip_id);
  out.features.resize(frames * nb);

  std::vector<double> power(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * hop_length_) - pad;
    for (std::size_t i = 0; i < frame_length_; ++i) {
      fft_->in[i] =
          clip.samples[reflect_index(start + static_cast<std::ptrdiff_t>(i), n)] * window_[i];
    }
    std::fill(fft_->in + frame_length_, fft_->in + fft_size_, 0.0);
    fftw_execute(fft_->plan);
    for (std::size_t k = 0; k < bins; ++k) {
      power[k] = fft_->out[k][0] * fft_->out[k][0] + fft_->out[k][1] * fft_->out[k][1];
    }
    for (std::size_t b = 0; b < nb; ++b) {
      const double* w = filterbank_.data() + b * bins;
      double acc = 0.0;
      for (std::size_t k = 0; k < bins; ++k) acc += w[k] * power[k];
      out.features[t * nb + b] = std::log(acc + config_.log_floor);
    }
  }
  return out;
}

LogMelClip logmel(const AudioClip& clip, const LogMelConfig& config, std::string clip_id) {
  LogMelExtractor extractor(config);
  return extractor.compute(clip, std::move(clip_id));
}

void write_feature_cache(const std::filesystem::path& path, const LogMelClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw AudioIoError("cannot write feature cache " + path.string());
  put_le_u32(out, static_cast<std::uint32_t>(clip.frames));
  put_le_u32(out, static_cast<std::uint32_t>(clip.bands));
  for (double v : clip.features) put_le_f64(out, v);
  if (!out) throw AudioIoError("write failed for " + path.string());
}

LogMelClip read_feature_cache(const std::filesystem::path& path, double hop_seconds,
                              std::string clip_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioIoError("cannot open feature cache " + path.string());
  LogMelClip clip;
  clip.frames = static_cast<std::size_t>(get_le(in, 4));
  clip.bands = static_cast<std::size_t>(get_le(in, 4));
  if (clip.frames == 0 || clip.bands == 0) throw AudioIoError("empty feature cache " + path.string());
  clip.features.resize(clip.frames * clip.bands);
  for (double& v : clip.features) v = std::bit_cast<double>(get_le(in, 8));
  clip.frame_hop_seconds = hop_seconds;
  clip.clip_id = std::move(clip_id);
  return clip;
}

}  // namespace mbl
