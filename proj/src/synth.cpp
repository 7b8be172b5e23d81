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

#include "mbl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mbl/audio.hpp"
#include "mbl/rng.hpp"

namespace mbl {
namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr std::size_t kPlacementAttempts = 1000;
constexpr std::size_t kNoiseComponents = 48;

const char* kind_name(SynthKind k) {
  switch (k) {
    case SynthKind::kTone: return "tone";
    case SynthKind::kChirp: return "chirp";
    case SynthKind::kNoiseBurst: return "noise_burst";
    case SynthKind::kAmTone: return "am_tone";
  }
  return "?";
}

SynthKind kind_from_name(const std::string& s) {
  if (s == "tone") return SynthKind::kTone;
  if (s == "chirp") return SynthKind::kChirp;
  if (s == "noise_burst") return SynthKind::kNoiseBurst;
  if (s == "am_tone") return SynthKind::kAmTone;
  throw std::invalid_argument("unknown synthesis kind '" + s + "'");
}

void normalize_rms(std::vector<double>& x, double target) {
  double sq = 0.0;
  for (double v : x) sq += v * v;
  const double rms = std::sqrt(sq / static_cast<double>(std::max<std::size_t>(x.size(), 1)));
  if (rms <= 0.0) return;
  const double g = target / rms;
  for (double& v : x) v *= g;
}

// Paul Kellet's economy pink filter over white noise.
std::vector<double> pink_noise(std::size_t n, Rng& rng) {
  std::vector<double> out(n);
  double b0 = 0.0, b1 = 0.0, b2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double white = rng.uniform(-1.0, 1.0);
    b0 = 0.99765 * b0 + white * 0.0990460;
    b1 = 0.96300 * b1 + white * 0.2965164;
    b2 = 0.57000 * b2 + white * 1.0526913;
    out[i] = b0 + b1 + b2 + white * 0.1848;
  }
  return out;
}

std::vector<double> render_event(const EventTemplate& tpl, std::size_t n, double sr, Rng& rng) {
  std::vector<double> x(n, 0.0);
  switch (tpl.kind) {
    case SynthKind::kTone: {
      const double f = rng.uniform(tpl.freq_lo, tpl.freq_hi);
      const double phase = rng.uniform(0.0, kTwoPi);
      for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(kTwoPi * f * static_cast<double>(i) / sr + phase);
      break;
    }
    case SynthKind::kChirp: {
      double f0 = rng.uniform(tpl.freq_lo, tpl.freq_hi);
      double f1 = rng.uniform(tpl.freq_lo, tpl.freq_hi);
      if (rng.uniform() < 0.5) std::swap(f0, f1);
      const double dur = static_cast<double>(n) / sr;
      const double phase = rng.uniform(0.0, kTwoPi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        x[i] = std::sin(kTwoPi * (f0 * t + 0.5 * (f1 - f0) / dur * t * t) + phase);
      }
      break;
    }
    case SynthKind::kNoiseBurst: {
      for (std::size_t k = 0; k < kNoiseComponents; ++k) {
        const double f = rng.uniform(tpl.freq_lo, tpl.freq_hi);
        const double phase = rng.uniform(0.0, kTwoPi);
        const double amp = rng.uniform(0.5, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
          x[i] += amp * std::sin(kTwoPi * f * static_cast<double>(i) / sr + phase);
        }
      }
      break;
    }
    case SynthKind::kAmTone: {
      const double f = rng.uniform(tpl.freq_lo, tpl.freq_hi);
      const double rate = rng.uniform(6.0, 12.0);
      const double phase = rng.uniform(0.0, kTwoPi);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        x[i] = (1.0 + 0.8 * std::sin(kTwoPi * rate * t)) * std::sin(kTwoPi * f * t + phase);
      }
      break;
    }
  }
  normalize_rms(x, 1.0);
  const auto attack = static_cast<std::size_t>(tpl.attack * sr);
  const auto release = static_cast<std::size_t>(tpl.release * sr);
  for (std::size_t i = 0; i < n; ++i) {
    double env = 1.0;
    if (attack > 0 && i < attack) env = static_cast<double>(i) / static_cast<double>(attack);
    if (release > 0 && n - 1 - i < release) {
      env = std::min(env, static_cast<double>(n - 1 - i) / static_cast<double>(release));
    }
    x[i] *= env;
  }
  return x;
}

// Identity below the knee, tanh-compressed above it; |y| < 1 always.
double soft_limit(double x) {
  constexpr double kKnee = 0.9;
  const double a = std::abs(x);
  if (a <= kKnee) return x;
  const double y = kKnee + (1.0 - kKnee) * std::tanh((a - kKnee) / (1.0 - kKnee));
  return x < 0.0 ? -y : y;
}

struct Placement {
  std::size_t cls;
  std::size_t start;
  std::size_t length;
};

std::size_t max_overlap(const std::vector<Placement>& placed, const Placement& cand) {
  // Polyphony is piecewise constant; it can only peak at a start point.
  std::size_t worst = 0;
  std::vector<std::size_t> probes{cand.start};
  for (const auto& p : placed) {
    if (p.start >= cand.start && p.start < cand.start + cand.length) probes.push_back(p.start);
  }
  for (std::size_t t : probes) {
    std::size_t active = 1;
    for (const auto& p : placed) active += (p.start <= t && t < p.start + p.length) ? 1 : 0;
    worst = std::max(worst, active);
  }
  return worst;
}

bool overlaps_same_class(const std::vector<Placement>& placed, const Placement& cand) {
  for (const auto& p : placed) {
    if (p.cls == cand.cls && p.start < cand.start + cand.length && cand.start < p.start + p.length) {
      return true;
    }
  }
  return false;
}

}  // namespace

std::vector<EventTemplate> default_templates() {
  return {
      {"tone", SynthKind::kTone, 500.0, 800.0, 0.5, 3.0, 0.02, 0.05},
      {"chirp", SynthKind::kChirp, 1500.0, 2500.0, 0.5, 3.0, 0.02, 0.05},
      {"noise", SynthKind::kNoiseBurst, 3500.0, 5000.0, 0.5, 3.0, 0.02, 0.05},
      {"buzz", SynthKind::kAmTone, 7000.0, 9000.0, 0.5, 3.0, 0.02, 0.05},
  };
}

void SynthConfig::validate() const {
  if (n_clips == 0) throw std::invalid_argument("n_clips must be positive");
  if (!(clip_seconds > 0.0)) throw std::invalid_argument("clip_seconds must be positive");
  if (sample_rate <= 0) throw std::invalid_argument("sample_rate must be positive");
  if (classes.empty()) throw std::invalid_argument("at least one event class is required");
  if (max_polyphony < 1) throw std::invalid_argument("max_polyphony must be at least 1");
  if (min_events > max_events) throw std::invalid_argument("min_events exceeds max_events");
  if (snr_min_db > snr_max_db) throw std::invalid_argument("snr_min_db exceeds snr_max_db");
  std::set<std::string> labels;
  for (const auto& t : classes) {
    if (t.label.empty()) throw std::invalid_argument("event class with empty label");
    if (!labels.insert(t.label).second) throw std::invalid_argument("duplicate class '" + t.label + "'");
    if (!(t.min_duration > 0.25 && t.max_duration < 4.0 && t.min_duration <= t.max_duration)) {
      throw std::invalid_argument("class '" + t.label +
                                  "': duration range must lie within (0.25 s, 4 s)");
    }
    if (!(t.freq_lo > 0.0 && t.freq_hi > t.freq_lo && t.freq_hi < sample_rate / 2.0)) {
      throw std::invalid_argument("class '" + t.label + "': band must lie within (0, Nyquist)");
    }
    if (t.min_duration > clip_seconds) {
      throw std::invalid_argument("class '" + t.label + "': minimum duration exceeds the clip");
    }
  }
  for (std::size_t i = 0; i < classes.size(); ++i) {
    for (std::size_t j = i + 1; j < classes.size(); ++j) {
      const auto& a = classes[i];
      const auto& b = classes[j];
      if (a.freq_lo < b.freq_hi && b.freq_lo < a.freq_hi) {
        throw std::invalid_argument("classes '" + a.label + "' and '" + b.label +
                                    "' have overlapping frequency bands");
      }
    }
  }
  // Same-class events may not overlap, so a clip holds at most
  // max_polyphony concurrent events and each class at most
  // floor(clip / min_duration) events.
  double capacity = 0.0;
  for (const auto& t : classes) capacity += std::floor(clip_seconds / t.min_duration);
  double shortest = classes[0].min_duration;
  for (const auto& t : classes) shortest = std::min(shortest, t.min_duration);
  const double poly_capacity =
      static_cast<double>(max_polyphony) * std::floor(clip_seconds / shortest);
  if (static_cast<double>(min_events) > std::min(capacity, poly_capacity)) {
    std::ostringstream msg;
    msg << "unsatisfiable constraints: " << min_events << " events per clip cannot fit in "
        << clip_seconds << " s with max polyphony " << max_polyphony
        << " and minimum durations of the configured classes";
    throw std::invalid_argument(msg.str());
  }
}

std::vector<std::string> SynthConfig::class_names() const {
  std::vector<std::string> out;
  for (const auto& t : classes) out.push_back(t.label);
  return out;
}

nlohmann::json to_json(const SynthConfig& c) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& t : c.classes) {
    classes.push_back({{"label", t.label},
                       {"kind", kind_name(t.kind)},
                       {"freq_lo", t.freq_lo},
                       {"freq_hi", t.freq_hi},
                       {"min_duration", t.min_duration},
                       {"max_duration", t.max_duration},
                       {"attack", t.attack},
                       {"release", t.release}});
  }
  return {{"n_clips", c.n_clips},           {"clip_seconds", c.clip_seconds},
          {"sample_rate", c.sample_rate},   {"classes", classes},
          {"max_polyphony", c.max_polyphony}, {"min_events", c.min_events},
          {"max_events", c.max_events},     {"snr_min_db", c.snr_min_db},
          {"snr_max_db", c.snr_max_db},     {"background_dbfs", c.background_dbfs},
          {"seed", c.seed}};
}

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                    const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw std::invalid_argument("unknown key '" + it.key() + "' in " + where);
  }
}

}  // namespace

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"n_clips", "clip_seconds", "sample_rate", "classes", "max_polyphony",
                  "min_events", "max_events", "snr_min_db", "snr_max_db", "background_dbfs",
                  "seed"},
                 "synth config");
  SynthConfig c;
  c.n_clips = j.value("n_clips", c.n_clips);
  c.clip_seconds = j.value("clip_seconds", c.clip_seconds);
  c.sample_rate = j.value("sample_rate", c.sample_rate);
  c.max_polyphony = j.value("max_polyphony", c.max_polyphony);
  c.min_events = j.value("min_events", c.min_events);
  c.max_events = j.value("max_events", c.max_events);
  c.snr_min_db = j.value("snr_min_db", c.snr_min_db);
  c.snr_max_db = j.value("snr_max_db", c.snr_max_db);
  c.background_dbfs = j.value("background_dbfs", c.background_dbfs);
  c.seed = j.value("seed", c.seed);
  if (j.contains("classes")) {
    c.classes.clear();
    for (const auto& t : j.at("classes")) {
      reject_unknown(t,
                     {"label", "kind", "freq_lo", "freq_hi", "min_duration", "max_duration",
                      "attack", "release"},
                     "synth class");
      EventTemplate tpl;
      tpl.label = t.at("label").get<std::string>();
      tpl.kind = kind_from_name(t.at("kind").get<std::string>());
      tpl.freq_lo = t.at("freq_lo").get<double>();
      tpl.freq_hi = t.at("freq_hi").get<double>();
      tpl.min_duration = t.value("min_duration", tpl.min_duration);
      tpl.max_duration = t.value("max_duration", tpl.max_duration);
      tpl.attack = t.value("attack", tpl.attack);
      tpl.release = t.value("release", tpl.release);
      c.classes.push_back(tpl);
    }
  }
  return c;
}

std::string clip_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "clip_%04zu", index);
  return buf;
}

SynthClip synthesize_clip(const SynthConfig& config, std::size_t index) {
  const double sr = config.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(config.clip_seconds * sr));
  Rng rng(mix_seed(config.seed, index));

  SynthClip clip;
  clip.clip_id = clip_name(index);
  clip.samples = pink_noise(n, rng);
  const double bg_rms = std::pow(10.0, config.background_dbfs / 20.0);
  normalize_rms(clip.samples, bg_rms);

  const std::size_t count =
      config.min_events + rng.index(config.max_events - config.min_events + 1);
  std::vector<Placement> placed;
  for (std::size_t e = 0; e < count; ++e) {
    bool done = false;
    for (std::size_t attempt = 0; attempt < kPlacementAttempts && !done; ++attempt) {
      Placement p;
      p.cls = rng.index(config.classes.size());
      const auto& tpl = config.classes[p.cls];
      const double dur = std::min(rng.uniform(tpl.min_duration, tpl.max_duration), config.clip_seconds);
      p.length = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(dur * sr)));
      p.length = std::min(p.length, n);
      p.start = rng.index(n - p.length + 1);
      if (overlaps_same_class(placed, p) || max_overlap(placed, p) > config.max_polyphony) continue;
      placed.push_back(p);
      done = true;
    }
    if (!done) {
      // Only the configured minimum is mandatory; extra events are optional.
      if (placed.size() < config.min_events) {
        throw std::runtime_error("could not place " + std::to_string(config.min_events) +
                                 " events in " + clip.clip_id + " under polyphony cap " +
                                 std::to_string(config.max_polyphony) +
                                 "; relax the event count or duration range");
      }
      break;
    }
  }

  std::sort(placed.begin(), placed.end(),
            [](const Placement& a, const Placement& b) { return a.start < b.start; });
  std::vector<bool> present(config.classes.size(), false);
  for (const auto& p : placed) {
    const auto& tpl = config.classes[p.cls];
    const double snr = rng.uniform(config.snr_min_db, config.snr_max_db);
    std::vector<double> ev = render_event(tpl, p.length, sr, rng);
    const double gain = bg_rms * std::pow(10.0, snr / 20.0);
    for (std::size_t i = 0; i < p.length; ++i) clip.samples[p.start + i] += gain * ev[i];
    clip.events.push_back({clip.clip_id, tpl.label, static_cast<double>(p.start) / sr,
                           static_cast<double>(p.start + p.length) / sr});
    present[p.cls] = true;
  }
  for (double& s : clip.samples) s = soft_limit(s);
  for (std::size_t c = 0; c < present.size(); ++c)
    if (present[c]) clip.weak_labels.push_back(config.classes[c].label);
  return clip;
}

SynthManifest generate_dataset(const SynthConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  std::filesystem::create_directories(out_dir);
  SynthManifest manifest;
  std::vector<WeakLabelRow> weak_rows;
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < config.n_clips; ++i) {
    SynthClip clip = synthesize_clip(config, i);
    const std::string file = clip.clip_id + ".wav";
    write_wav(out_dir / file, clip.samples, config.sample_rate);
    files.push_back(file);
    manifest.clip_ids.push_back(clip.clip_id);
    manifest.strong_refs.insert(manifest.strong_refs.end(), clip.events.begin(), clip.events.end());
    manifest.weak_labels.push_back(clip.weak_labels);
    weak_rows.push_back({clip.clip_id, clip.weak_labels});
  }
  write_weak_labels(out_dir / kWeakLabelsFile, weak_rows);
  write_events_tsv(out_dir / kStrongRefsFile, manifest.strong_refs);
  nlohmann::json j;
  j["config"] = to_json(config);
  j["audio"] = files;
  j["weak_labels"] = kWeakLabelsFile;
  j["strong_refs"] = kStrongRefsFile;
  std::ofstream out(out_dir / kManifestFile);
  if (!out) throw std::runtime_error("cannot write manifest in " + out_dir.string());
  out << j.dump(2) << '\n';
  return manifest;
}

void write_weak_labels(const std::filesystem::path& path, const std::vector<WeakLabelRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : rows) {
    out << r.clip_id << '\t';
    for (std::size_t i = 0; i < r.labels.size(); ++i) out << (i ? "," : "") << r.labels[i];
    out << '\n';
  }
}

std::vector<WeakLabelRow> read_weak_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<WeakLabelRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    WeakLabelRow row;
    const std::size_t tab = line.find('\t');
    row.clip_id = line.substr(0, tab);
    if (row.clip_id.empty()) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": empty clip id");
    }
    if (tab != std::string::npos) {
      std::stringstream ss(line.substr(tab + 1));
      std::string label;
      while (std::getline(ss, label, ',')) {
        if (!label.empty()) row.labels.push_back(label);
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace mbl
