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
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "mbl/checkpoint.hpp"
#include "mbl/logmel.hpp"
#include "mbl/metrics.hpp"
#include "mbl/model.hpp"
#include "mbl/postprocess.hpp"
#include "mbl/train.hpp"

namespace mbl {

struct RunConfig {
  struct Data {
    std::string train_dir;
    std::string test_dir;
    std::string test_refs;  // default: <test_dir>/strong_refs.tsv
    std::string cache_dir;  // empty disables the feature cache
    double sample_rate = 22050.0;
    std::vector<std::string> classes;  // empty: sorted union of weak labels
  } data;
  struct Model {
    std::string preset = "small";  // small | large
    std::vector<std::string> branches{"E-ATP", "I-GAP", "I-GMP"};
    double alpha = 1.0;
    double beta = 0.5;
    std::vector<std::size_t> channels;  // per-block override, empty keeps the preset
  } model;
  struct Training {
    double learning_rate = 1e-3;
    std::size_t batch_size = 16;
    std::size_t epochs = 60;
    std::uint64_t seed = 0;
    std::size_t repeats = 1;
  } training;
  struct Post {
    double threshold = 0.5;
    std::string window_rule = "default";  // default | fixed | adaptive
    std::size_t window = kDefaultMedianWindow;
    std::string durations_tsv;  // event TSV feeding the adaptive rule
  } postprocess;
  struct Eval {
    std::string protocol = "segment";
    double segment_length = 1.0;
    double clip_duration = 10.0;
    double onset_collar = 0.2;
    double offset_min = 0.2;
    double offset_fraction = 0.2;
  } eval;
  struct Ablation {
    std::vector<std::vector<std::string>> configurations;  // empty: the full grid
  } ablation;

  void validate() const;
  std::string test_refs_path() const;
  EventMatchParams match_params() const;
};

nlohmann::json to_json(const RunConfig& config);
// Strict: unknown sections or keys throw std::invalid_argument naming them.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
void write_run_config(const std::filesystem::path& path, const RunConfig& config);

// The twelve main/auxiliary combinations over {GMP, GAP, ATP}.
std::vector<std::vector<std::string>> default_ablation_grid();

ModelConfig build_model_config(const RunConfig& config, const std::vector<std::string>& classes,
                               const std::vector<std::string>& branches, std::uint64_t seed);

// Frame hop of the model's output in seconds.
double output_hop_seconds(const ModelConfig& model, const LogMelConfig& frontend = {});

PostConfig build_post_config(const RunConfig& config, const std::vector<std::string>& classes,
                             double hop_seconds);

// Log-mel features for every *.wav in `dir`, sorted by clip id.
std::vector<LogMelClip> load_audio_dir(const std::filesystem::path& dir, double sample_rate,
                                       const std::string& cache_dir = {});

// Clips listed in <dir>/weak_labels.tsv with their label vectors.
WeakDataset load_weak_dataset(const std::filesystem::path& dir, const RunConfig& config);

struct TagRow {
  std::string clip_id;
  std::vector<double> probs;
};

struct PredictionSet {
  std::vector<std::string> classes;
  std::vector<EventAnnotation> events;  // sorted by (clip_id, onset)
  std::vector<TagRow> tags;
};

PredictionSet predict_clips(const SedModel& model, const std::vector<LogMelClip>& clips,
                            const PostConfig& post);

// Header `clip_id<TAB>class...`, then one row per clip, 6 decimals.
void write_tag_probabilities(const std::filesystem::path& path, const PredictionSet& predictions);

// `epoch,loss` with a header row.
void write_loss_csv(const std::filesystem::path& path, const TrainResult& result);

EvalReport evaluate_events(const std::vector<EventAnnotation>& refs,
                           const std::vector<EventAnnotation>& preds, const RunConfig::Eval& eval);

struct TrainedModel {
  SedModel model;
  TrainResult result;
  std::uint64_t seed = 0;
};

// Trains one model per repeat with seeds seed, seed+1, ...
std::vector<TrainedModel> train_repeats(const RunConfig& config, const WeakDataset& data,
                                        const std::function<void(const std::string&)>& log = {});

struct AblationRow {
  std::string name;  // "E-ATP + I-GAP + I-GMP"
  std::vector<double> scores;
  double mean = 0.0;
  double stddev = 0.0;  // n - 1 denominator
  double best = 0.0;
};

AblationRow summarize_scores(std::string name, std::vector<double> scores);

// Every (configuration, repeat) pair is an independent job; `workers` jobs
// run concurrently. Results do not depend on the worker count.
std::vector<AblationRow> run_ablation(const RunConfig& config, const WeakDataset& train,
                                      const std::vector<LogMelClip>& test,
                                      const std::vector<EventAnnotation>& test_refs,
                                      std::size_t workers,
                                      const std::function<void(const std::string&)>& log = {});

// Markdown table, cells to 3 decimals.
std::string format_ablation_table(const std::vector<AblationRow>& rows, const std::string& protocol);

}  // namespace mbl
