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

#include "mbl/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mbl {
namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace

AudioClip decode_wav(std::span<const unsigned char> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw AudioIoError("not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t size = read_u32(hdr + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16 || body + 16 > bytes.size()) throw AudioIoError("truncated fmt chunk");
      const std::uint16_t format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      if (format != 1) {
        throw AudioIoError("unsupported WAV encoding (format tag " + std::to_string(format) +
                           "); only PCM is supported");
      }
      if (bits != 16) {
        throw AudioIoError("unsupported sample width " + std::to_string(bits) +
                           " bits; only 16-bit PCM is supported");
      }
      if (channels != 1 && channels != 2) {
        throw AudioIoError("unsupported channel count " + std::to_string(channels));
      }
      if (rate == 0) throw AudioIoError("sample rate of zero in fmt chunk");
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      if (!have_fmt) throw AudioIoError("data chunk precedes fmt chunk");
      if (body + size > bytes.size()) throw AudioIoError("truncated data chunk");
      const std::size_t frame_bytes = 2u * channels;
      const std::size_t frames = size / frame_bytes;
      if (frames == 0) throw AudioIoError("WAV file contains no samples");
      AudioClip clip;
      clip.sample_rate = rate;
      clip.samples.resize(frames);
      for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (std::size_t ch = 0; ch < channels; ++ch) {
          const auto raw = static_cast<std::int16_t>(
              read_u16(bytes.data() + body + f * frame_bytes + 2 * ch));
          acc += static_cast<double>(raw) / 32768.0;
        }
        clip.samples[f] = acc / channels;
      }
      return clip;
    }
    pos = body + size + (size & 1u);
  }
  throw AudioIoError(have_fmt ? "missing data chunk" : "missing fmt chunk");
}

AudioClip load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioIoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes);
  } catch (const AudioIoError& e) {
    throw AudioIoError(path.string() + ": " + e.what());
  }
}

std::vector<unsigned char> encode_wav(std::span<const double> samples, int sample_rate) {
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (double s : samples) {
    const double scaled = std::nearbyint(std::clamp(s, -1.0, 1.0) * 32768.0);
    const auto q = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
    put_u16(out, static_cast<std::uint16_t>(q));
  }
  return out;
}

void write_wav(const std::filesystem::path& path, std::span<const double> samples,
               int sample_rate) {
  const auto bytes = encode_wav(samples, sample_rate);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw AudioIoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw AudioIoError("write failed for " + path.string());
}

AudioClip resample_linear(const AudioClip& clip, double target_rate) {
  if (!(target_rate > 0.0)) throw std::invalid_argument("target rate must be positive");
  if (clip.sample_rate == target_rate) return clip;
  const double ratio = clip.sample_rate / target_rate;
  const auto n_out = static_cast<std::size_t>(
      std::floor(static_cast<double>(clip.samples.size()) / ratio));
  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(std::max<std::size_t>(n_out, 1));
  const std::size_t last = clip.samples.size() - 1;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const double pos = static_cast<double>(i) * ratio;
    const auto i0 = std::min(static_cast<std::size_t>(pos), last);
    const std::size_t i1 = std::min(i0 + 1, last);
    const double frac = pos - static_cast<double>(i0);
    out.samples[i] = clip.samples[i0] * (1.0 - frac) + clip.samples[i1] * frac;
  }
  return out;
}

}  // namespace mbl
