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

#include "mbl/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "mbl/audio.hpp"
#include "mbl/rng.hpp"
#include "mbl/synth.hpp"

namespace mbl {
namespace {

using nlohmann::json;

// Reads keys out of one config section and rejects whatever is left over.
class Section {
 public:
  Section(const json& root, const std::string& name) : name_(name) {
    if (!root.contains(name)) return;
    const json& s = root.at(name);
    if (!s.is_object()) throw std::invalid_argument("config section '" + name + "' must be an object");
    for (auto it = s.begin(); it != s.end(); ++it) pending_[it.key()] = it.value();
  }

  template <typename T>
  void take(const std::string& key, T& into) {
    auto it = pending_.find(key);
    if (it == pending_.end()) return;
    try {
      into = it->second.get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument("config key '" + name_ + "." + key + "': " + e.what());
    }
    pending_.erase(it);
  }

  void finish() const {
    if (!pending_.empty()) {
      throw std::invalid_argument("unknown config key '" + name_ + "." + pending_.begin()->first + "'");
    }
  }

 private:
  std::string name_;
  std::map<std::string, json> pending_;
};

std::string join_branches(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : " + ") + n;
  return out;
}

std::string cache_key(const std::filesystem::path& wav, double sample_rate) {
  const auto size = std::filesystem::file_size(wav);
  const std::uint64_t h = fnv1a(std::filesystem::absolute(wav).string() + "|" + std::to_string(size) +
                                "|" + std::to_string(sample_rate) + "|logmel-64-882-441");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

LogMelClip load_clip(LogMelExtractor& extractor, const std::filesystem::path& wav,
                     const std::string& clip_id, const std::string& cache_dir) {
  std::filesystem::path cached;
  if (!cache_dir.empty()) {
    cached = std::filesystem::path(cache_dir) /
             (clip_id + "-" + cache_key(wav, extractor.config().sample_rate) + ".lmc");
    if (std::filesystem::exists(cached)) {
      return read_feature_cache(cached, extractor.config().hop_seconds, clip_id);
    }
  }
  LogMelClip clip = extractor.compute(load_wav(wav), clip_id);
  if (!cached.empty()) {
    std::filesystem::create_directories(cache_dir);
    write_feature_cache(cached, clip);
  }
  return clip;
}

}  // namespace

void RunConfig::validate() const {
  if (model.preset != "small" && model.preset != "large") {
    throw std::invalid_argument("model.preset must be 'small' or 'large', got '" + model.preset + "'");
  }
  std::size_t mains = 0;
  for (const auto& b : parse_branches(model.branches)) mains += b.is_main() ? 1 : 0;
  if (mains != 1) {
    throw std::invalid_argument("model.branches [" + join_branches(model.branches) +
                                "] must contain exactly one E-* main branch");
  }
  for (const auto& combo : ablation.configurations) {
    std::size_t m = 0;
    for (const auto& b : parse_branches(combo)) m += b.is_main() ? 1 : 0;
    if (m != 1) {
      throw std::invalid_argument("ablation configuration [" + join_branches(combo) +
                                  "] must contain exactly one E-* main branch");
    }
  }
  if (!(training.learning_rate >= 0.0)) throw std::invalid_argument("training.learning_rate must be >= 0");
  if (training.batch_size == 0) throw std::invalid_argument("training.batch_size must be positive");
  if (training.repeats == 0) throw std::invalid_argument("training.repeats must be positive");
  if (!(data.sample_rate > 0.0)) throw std::invalid_argument("data.sample_rate must be positive");
  if (!(postprocess.threshold > 0.0 && postprocess.threshold < 1.0)) {
    throw std::invalid_argument("postprocess.threshold must lie in (0, 1)");
  }
  const auto& rule = postprocess.window_rule;
  if (rule != "default" && rule != "fixed" && rule != "adaptive") {
    throw std::invalid_argument("postprocess.window_rule must be default, fixed or adaptive");
  }
  if (postprocess.window == 0 || postprocess.window % 2 == 0) {
    throw std::invalid_argument("postprocess.window must be odd and positive");
  }
  if (rule == "adaptive" && postprocess.durations_tsv.empty()) {
    throw std::invalid_argument("postprocess.window_rule 'adaptive' needs postprocess.durations_tsv");
  }
  parse_protocol(eval.protocol);
  if (!(eval.segment_length > 0.0)) throw std::invalid_argument("eval.segment_length must be positive");
  if (!(eval.clip_duration > 0.0)) throw std::invalid_argument("eval.clip_duration must be positive");
  if (!(eval.onset_collar >= 0.0 && eval.offset_min >= 0.0 && eval.offset_fraction >= 0.0)) {
    throw std::invalid_argument("eval collar parameters must be non-negative");
  }
}

std::string RunConfig::test_refs_path() const {
  if (!data.test_refs.empty()) return data.test_refs;
  return (std::filesystem::path(data.test_dir) / kStrongRefsFile).string();
}

EventMatchParams RunConfig::match_params() const {
  return {eval.onset_collar, eval.offset_min, eval.offset_fraction};
}

json to_json(const RunConfig& c) {
  json j;
  j["data"] = {{"train_dir", c.data.train_dir},     {"test_dir", c.data.test_dir},
               {"test_refs", c.data.test_refs},     {"cache_dir", c.data.cache_dir},
               {"sample_rate", c.data.sample_rate}, {"classes", c.data.classes}};
  j["model"] = {{"preset", c.model.preset},
                {"branches", c.model.branches},
                {"alpha", c.model.alpha},
                {"beta", c.model.beta},
                {"channels", c.model.channels}};
  j["training"] = {{"learning_rate", c.training.learning_rate},
                   {"batch_size", c.training.batch_size},
                   {"epochs", c.training.epochs},
                   {"seed", c.training.seed},
                   {"repeats", c.training.repeats}};
  j["postprocess"] = {{"threshold", c.postprocess.threshold},
                      {"window_rule", c.postprocess.window_rule},
                      {"window", c.postprocess.window},
                      {"durations_tsv", c.postprocess.durations_tsv}};
  j["eval"] = {{"protocol", c.eval.protocol},
               {"segment_length", c.eval.segment_length},
               {"clip_duration", c.eval.clip_duration},
               {"onset_collar", c.eval.onset_collar},
               {"offset_min", c.eval.offset_min},
               {"offset_fraction", c.eval.offset_fraction}};
  j["ablation"] = {{"configurations", c.ablation.configurations}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("run config must be a JSON object");
  static const std::set<std::string> kSections{"data", "model", "training", "postprocess", "eval",
                                               "ablation"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!kSections.count(it.key())) throw std::invalid_argument("unknown config section '" + it.key() + "'");
  }
  RunConfig c;
  Section data(j, "data");
  data.take("train_dir", c.data.train_dir);
  data.take("test_dir", c.data.test_dir);
  data.take("test_refs", c.data.test_refs);
  data.take("cache_dir", c.data.cache_dir);
  data.take("sample_rate", c.data.sample_rate);
  data.take("classes", c.data.classes);
  data.finish();
  Section model(j, "model");
  model.take("preset", c.model.preset);
  model.take("branches", c.model.branches);
  model.take("alpha", c.model.alpha);
  model.take("beta", c.model.beta);
  model.take("channels", c.model.channels);
  model.finish();
  Section training(j, "training");
  training.take("learning_rate", c.training.learning_rate);
  training.take("batch_size", c.training.batch_size);
  training.take("epochs", c.training.epochs);
  training.take("seed", c.training.seed);
  training.take("repeats", c.training.repeats);
  training.finish();
  Section post(j, "postprocess");
  post.take("threshold", c.postprocess.threshold);
  post.take("window_rule", c.postprocess.window_rule);
  post.take("window", c.postprocess.window);
  post.take("durations_tsv", c.postprocess.durations_tsv);
  post.finish();
  Section eval(j, "eval");
  eval.take("protocol", c.eval.protocol);
  eval.take("segment_length", c.eval.segment_length);
  eval.take("clip_duration", c.eval.clip_duration);
  eval.take("onset_collar", c.eval.onset_collar);
  eval.take("offset_min", c.eval.offset_min);
  eval.take("offset_fraction", c.eval.offset_fraction);
  eval.finish();
  Section ablation(j, "ablation");
  ablation.take("configurations", c.ablation.configurations);
  ablation.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

void write_run_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << to_json(config).dump(2) << "\n";
}

std::vector<std::vector<std::string>> default_ablation_grid() {
  std::vector<std::vector<std::string>> grid;
  for (const char* main : {"E-GMP", "E-GAP", "E-ATP"}) {
    grid.push_back({main});
    grid.push_back({main, "I-GMP"});
    grid.push_back({main, "I-GAP"});
    grid.push_back({main, "I-GAP", "I-GMP"});
  }
  return grid;
}

ModelConfig build_model_config(const RunConfig& config, const std::vector<std::string>& classes,
                               const std::vector<std::string>& branches, std::uint64_t seed) {
  auto specs = parse_branches(branches, config.model.alpha, config.model.beta);
  const bool small = config.model.preset == "small";
  ModelConfig m = small ? ModelConfig::small(classes, specs) : ModelConfig::large(classes, specs);
  if (!config.model.channels.empty()) {
    if (config.model.channels.size() != m.encoder.size()) {
      throw std::invalid_argument("model.channels lists " + std::to_string(config.model.channels.size()) +
                                  " blocks, preset '" + config.model.preset + "' has " +
                                  std::to_string(m.encoder.size()));
    }
    for (std::size_t i = 0; i < m.encoder.size(); ++i) m.encoder[i].out_channels = config.model.channels[i];
    // Keep the preset's divisor relation between d and E.
    m.attention_scale = static_cast<double>(m.feature_dim()) / (small ? 2.5 : 3.0);
  }
  m.optimizer.learning_rate = config.training.learning_rate;
  m.optimizer.batch_size = config.training.batch_size;
  m.optimizer.epochs = config.training.epochs;
  m.seed = seed;
  m.validate();
  return m;
}

double output_hop_seconds(const ModelConfig& model, const LogMelConfig& frontend) {
  return frontend.hop_seconds * static_cast<double>(model.time_reduction());
}

PostConfig build_post_config(const RunConfig& config, const std::vector<std::string>& classes,
                             double hop_seconds) {
  PostConfig post;
  post.threshold = config.postprocess.threshold;
  const auto& rule = config.postprocess.window_rule;
  if (rule == "fixed") {
    post.median_windows.assign(classes.size(), config.postprocess.window);
  } else if (rule == "adaptive") {
    post.median_windows =
        adaptive_windows(read_events_tsv(std::filesystem::path(config.postprocess.durations_tsv)),
                         classes, hop_seconds);
  } else {
    post.median_windows.assign(classes.size(), kDefaultMedianWindow);
  }
  post.validate();
  return post;
}

std::vector<LogMelClip> load_audio_dir(const std::filesystem::path& dir, double sample_rate,
                                       const std::string& cache_dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("audio directory '" + dir.string() + "' does not exist");
  }
  std::vector<std::filesystem::path> wavs;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") wavs.push_back(entry.path());
  }
  std::sort(wavs.begin(), wavs.end());
  LogMelConfig fc;
  fc.sample_rate = sample_rate;
  LogMelExtractor extractor(fc);
  std::vector<LogMelClip> clips;
  clips.reserve(wavs.size());
  for (const auto& w : wavs) clips.push_back(load_clip(extractor, w, w.stem().string(), cache_dir));
  return clips;
}

WeakDataset load_weak_dataset(const std::filesystem::path& dir, const RunConfig& config) {
  const auto label_path = dir / kWeakLabelsFile;
  if (!std::filesystem::exists(label_path)) {
    throw std::runtime_error("weak label file '" + label_path.string() + "' not found");
  }
  const auto rows = read_weak_labels(label_path);
  if (rows.empty()) throw std::runtime_error("'" + label_path.string() + "' lists no clips");
  WeakDataset data;
  data.class_names = config.data.classes;
  if (data.class_names.empty()) {
    std::set<std::string> seen;
    for (const auto& r : rows) seen.insert(r.labels.begin(), r.labels.end());
    data.class_names.assign(seen.begin(), seen.end());
  }
  LogMelConfig fc;
  fc.sample_rate = config.data.sample_rate;
  LogMelExtractor extractor(fc);
  for (const auto& r : rows) {
    const auto wav = dir / (r.clip_id + ".wav");
    if (!std::filesystem::exists(wav)) {
      throw std::runtime_error("clip '" + r.clip_id + "' listed in '" + label_path.string() +
                               "' has no audio file '" + wav.string() + "'");
    }
    std::vector<double> y(data.class_names.size(), 0.0);
    for (const auto& l : r.labels) {
      auto it = std::find(data.class_names.begin(), data.class_names.end(), l);
      if (it == data.class_names.end()) {
        throw std::runtime_error("clip '" + r.clip_id + "' has label '" + l +
                                 "' outside the configured classes");
      }
      y[static_cast<std::size_t>(it - data.class_names.begin())] = 1.0;
    }
    data.clips.push_back(load_clip(extractor, wav, r.clip_id, config.data.cache_dir));
    data.labels.push_back(std::move(y));
  }
  data.validate();
  return data;
}

PredictionSet predict_clips(const SedModel& model, const std::vector<LogMelClip>& clips,
                            const PostConfig& post) {
  PredictionSet out;
  out.classes = model.config().class_names;
  const double hop = output_hop_seconds(model.config());
  for (const auto& clip : clips) {
    const ClipPrediction p = model.predict(clip);
    auto events = postprocess_clip(p.frame_probs, p.frames, out.classes, hop, clip.clip_id, post);
    out.events.insert(out.events.end(), events.begin(), events.end());
    out.tags.push_back({clip.clip_id, p.clip_probs});
  }
  sort_events(out.events);
  std::sort(out.tags.begin(), out.tags.end(),
            [](const TagRow& a, const TagRow& b) { return a.clip_id < b.clip_id; });
  return out;
}

void write_tag_probabilities(const std::filesystem::path& path, const PredictionSet& predictions) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "clip_id";
  for (const auto& c : predictions.classes) out << '\t' << c;
  out << '\n';
  char buf[32];
  for (const auto& row : predictions.tags) {
    out << row.clip_id;
    for (double p : row.probs) {
      std::snprintf(buf, sizeof buf, "\t%.6f", p);
      out << buf;
    }
    out << '\n';
  }
}

void write_loss_csv(const std::filesystem::path& path, const TrainResult& result) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "epoch,loss\n";
  char buf[64];
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e + 1, result.epoch_loss[e]);
    out << buf;
  }
}

EvalReport evaluate_events(const std::vector<EventAnnotation>& refs,
                           const std::vector<EventAnnotation>& preds, const RunConfig::Eval& eval) {
  if (parse_protocol(eval.protocol) == Protocol::kEvent) {
    return event_based_f1(refs, preds, {eval.onset_collar, eval.offset_min, eval.offset_fraction});
  }
  return segment_based_f1(refs, preds, eval.segment_length, eval.clip_duration);
}

std::vector<TrainedModel> train_repeats(const RunConfig& config, const WeakDataset& data,
                                        const std::function<void(const std::string&)>& log) {
  std::vector<TrainedModel> out;
  for (std::size_t r = 0; r < config.training.repeats; ++r) {
    const std::uint64_t seed = config.training.seed + r;
    SedModel model(build_model_config(config, data.class_names, config.model.branches, seed));
    TrainResult result = train(model, data, [&](std::size_t epoch, double loss) {
      if (log) log("seed " + std::to_string(seed) + " epoch " + std::to_string(epoch + 1) + " loss " +
                   std::to_string(loss));
    });
    out.push_back({std::move(model), std::move(result), seed});
  }
  return out;
}

AblationRow summarize_scores(std::string name, std::vector<double> scores) {
  if (scores.empty()) throw std::invalid_argument("summarize_scores: no scores");
  AblationRow row;
  row.name = std::move(name);
  const double n = static_cast<double>(scores.size());
  double total = 0.0;
  for (double s : scores) total += s;
  row.mean = total / n;
  double sq = 0.0;
  for (double s : scores) sq += (s - row.mean) * (s - row.mean);
  row.stddev = scores.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
  row.best = *std::max_element(scores.begin(), scores.end());
  row.scores = std::move(scores);
  return row;
}

std::vector<AblationRow> run_ablation(const RunConfig& config, const WeakDataset& train_data,
                                      const std::vector<LogMelClip>& test,
                                      const std::vector<EventAnnotation>& test_refs,
                                      std::size_t workers,
                                      const std::function<void(const std::string&)>& log) {
  const auto combos = config.ablation.configurations.empty() ? default_ablation_grid()
                                                             : config.ablation.configurations;
  const std::size_t repeats = config.training.repeats;
  const std::size_t jobs = combos.size() * repeats;
  std::vector<double> scores(jobs, 0.0);
  std::vector<std::exception_ptr> errors(jobs);
  std::mutex log_mutex;
  auto say = [&](const std::string& s) {
    if (!log) return;
    std::lock_guard<std::mutex> lock(log_mutex);
    log(s);
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t job = next++; job < jobs; job = next++) {
      const auto& combo = combos[job / repeats];
      const std::uint64_t seed = config.training.seed + job % repeats;
      try {
        SedModel model(build_model_config(config, train_data.class_names, combo, seed));
        train(model, train_data);
        const PostConfig post =
            build_post_config(config, train_data.class_names, output_hop_seconds(model.config()));
        const PredictionSet preds = predict_clips(model, test, post);
        scores[job] = evaluate_events(test_refs, preds.events, config.eval).macro_f1;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", scores[job]);
        say(join_branches(combo) + " seed " + std::to_string(seed) + ": " + config.eval.protocol +
            " macro F1 " + buf);
      } catch (...) {
        errors[job] = std::current_exception();
      }
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, jobs);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<AblationRow> rows;
  for (std::size_t c = 0; c < combos.size(); ++c) {
    rows.push_back(summarize_scores(
        join_branches(combos[c]),
        std::vector<double>(scores.begin() + static_cast<std::ptrdiff_t>(c * repeats),
                            scores.begin() + static_cast<std::ptrdiff_t>((c + 1) * repeats))));
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows, const std::string& protocol) {
  std::ostringstream out;
  out << "| Configuration | Average " << protocol << " F1 | Best " << protocol << " F1 |\n";
  out << "|---|---|---|\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, " | %.3f ± %.3f | %.3f |\n", r.mean, r.stddev, r.best);
    out << "| " << r.name << buf;
  }
  return out.str();
}

}  // namespace mbl
