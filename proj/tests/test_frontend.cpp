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

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mbl/audio.hpp"
#include "mbl/logmel.hpp"
#include "mbl/rng.hpp"
#include "test_util.hpp"

using namespace mbl;

namespace {

AudioClip noise_clip(double seconds, double rate, std::uint64_t seed) {
  Rng rng(seed);
  AudioClip c;
  c.sample_rate = rate;
  c.samples.resize(static_cast<std::size_t>(std::lround(seconds * rate)));
  for (double& s : c.samples) s = rng.uniform(-0.5, 0.5);
  return c;
}

}  // namespace

TEST_CASE("hz/mel conversion is the HTK formula and invertible") {
  CHECK(hz_to_mel(0.0) == 0.0);
  CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
  for (double hz : {10.0, 440.0, 1000.0, 11025.0}) CHECK(mel_to_hz(hz_to_mel(hz)) == doctest::Approx(hz));
}

TEST_CASE("a 10 s clip yields 500 x 64 features at any input rate") {
  for (double rate : {22050.0, 44100.0, 16000.0}) {
    CAPTURE(rate);
    const LogMelClip f = logmel(noise_clip(10.0, rate, 1));
    CHECK(f.frames == 500);
    CHECK(f.bands == 64);
    CHECK(f.features.size() == 500 * 64);
    CHECK(f.frame_hop_seconds == doctest::Approx(0.02));
    for (double v : f.features) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("frame geometry: 40 ms frames, 50 % overlap, 1024-point FFT") {
  LogMelExtractor ex;
  CHECK(ex.frame_length() == 882);
  CHECK(ex.hop_length() == 441);
  CHECK(ex.fft_size() == 1024);
  CHECK(ex.frame_count(220500) == 500);
  CHECK(ex.frame_count(441) == 1);
  CHECK_THROWS_AS(ex.compute(AudioClip{std::vector<double>(100, 0.0), 22050.0}), std::invalid_argument);
}

TEST_CASE("mel filters are unit-peak triangles that overlap into a partition of unity") {
  LogMelExtractor ex;
  const std::size_t bins = ex.fft_size() / 2 + 1;
  const auto& fb = ex.filterbank();
  REQUIRE(fb.size() == 64 * bins);
  const double mel_hi = hz_to_mel(11025.0);
  auto center = [&](std::size_t b) { return mel_to_hz(mel_hi * static_cast<double>(b + 1) / 65.0); };
  for (std::size_t k = 0; k < bins; ++k) {
    const double f = static_cast<double>(k) * 22050.0 / 1024.0;
    double total = 0.0;
    for (std::size_t b = 0; b < 64; ++b) {
      const double w = fb[b * bins + k];
      CHECK(w >= 0.0);
      CHECK(w <= 1.0);
      total += w;
    }
    // Between the first and last centers each bin is shared by two
    // neighbouring triangles whose weights add to one.
    if (f > center(0) && f < center(63)) CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
  for (std::size_t b = 0; b < 64; ++b) {
    std::size_t arg = 0;
    for (std::size_t k = 1; k < bins; ++k)
      if (fb[b * bins + k] > fb[b * bins + arg]) arg = k;
    const double bin_hz = 22050.0 / 1024.0;
    CHECK(std::abs(static_cast<double>(arg) * bin_hz - center(b)) <= bin_hz);
  }
}

TEST_CASE("one frame agrees with a direct DFT of the reflect-padded Hann frame") {
  const AudioClip clip = noise_clip(1.0, 22050.0, 5);
  LogMelExtractor ex;
  const LogMelClip f = ex.compute(clip);
  const std::size_t n = clip.samples.size(), bins = 513;
  for (std::size_t t : {0UL, 7UL, f.frames - 1}) {
    std::vector<double> frame(1024, 0.0);
    for (std::size_t i = 0; i < 882; ++i) {
      long j = static_cast<long>(t * 441 + i) - 441;
      if (j < 0) j = -j;
      if (j >= static_cast<long>(n)) j = 2 * static_cast<long>(n) - 2 - j;
      frame[i] = clip.samples[static_cast<std::size_t>(j)] *
                 (0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / 882.0));
    }
    std::vector<double> power(bins);
    for (std::size_t k = 0; k < bins; ++k) {
      double re = 0.0, im = 0.0;
      for (std::size_t i = 0; i < 1024; ++i) {
        const double a = -2.0 * std::numbers::pi * static_cast<double>(k * i) / 1024.0;
        re += frame[i] * std::cos(a);
        im += frame[i] * std::sin(a);
      }
      power[k] = re * re + im * im;
    }
    for (std::size_t b = 0; b < 64; b += 9) {
      double acc = 0.0;
      for (std::size_t k = 0; k < bins; ++k) acc += ex.filterbank()[b * bins + k] * power[k];
      CHECK(f.at(t, b) == doctest::Approx(std::log(acc + 1e-10)).epsilon(1e-9));
    }
  }
}

TEST_CASE("a pure tone peaks in the mel band containing its frequency") {
  AudioClip c;
  c.sample_rate = 22050.0;
  for (std::size_t i = 0; i < 22050; ++i) c.samples.push_back(0.5 * std::sin(2.0 * std::numbers::pi * 2000.0 * i / 22050.0));
  const LogMelClip f = logmel(c);
  std::size_t arg = 0;
  for (std::size_t b = 1; b < 64; ++b)
    if (f.at(20, b) > f.at(20, arg)) arg = b;
  const double mel_hi = hz_to_mel(11025.0);
  const double center = mel_to_hz(mel_hi * static_cast<double>(arg + 1) / 65.0);
  CHECK(std::abs(center - 2000.0) < 150.0);
}

TEST_CASE("WAV round trip is exact at 16-bit resolution") {
  const auto dir = testutil::scratch_dir("wav");
  std::vector<double> s{0.0, 0.5, -0.5, 0.999, -1.0, 1.0, 1e-5};
  write_wav(dir / "a.wav", s, 22050);
  const AudioClip back = load_wav(dir / "a.wav");
  CHECK(back.sample_rate == 22050.0);
  REQUIRE(back.samples.size() == s.size());
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(back.samples[i] - s[i]) <= 1.0 / 32768.0);
  CHECK(back.samples[4] == -1.0);
}

TEST_CASE("malformed WAV input is rejected with a reason") {
  std::vector<unsigned char> junk{'R', 'I', 'F', 'F', 0, 0, 0, 0, 'A', 'V', 'I', ' '};
  CHECK_THROWS_AS(decode_wav(junk), AudioIoError);
  CHECK_THROWS_AS(load_wav("/nonexistent/x.wav"), AudioIoError);
  auto bytes = encode_wav(std::vector<double>{0.1, 0.2}, 8000);
  bytes.resize(bytes.size() - 2);
  CHECK_THROWS_AS(decode_wav(bytes), AudioIoError);
}

TEST_CASE("feature cache round trip preserves values bit for bit") {
  const auto dir = testutil::scratch_dir("cache");
  const LogMelClip f = logmel(noise_clip(0.5, 22050.0, 9), {}, "x");
  write_feature_cache(dir / "x.lmc", f);
  const LogMelClip g = read_feature_cache(dir / "x.lmc", 0.02, "x");
  CHECK(g.frames == f.frames);
  CHECK(g.bands == f.bands);
  CHECK(g.features == f.features);
}
