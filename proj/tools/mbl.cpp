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

// mbl: synthesize data, train multi-branch SED models, predict, evaluate and
// run branch ablations.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "mbl/checkpoint.hpp"
#include "mbl/events.hpp"
#include "mbl/pipeline.hpp"
#include "mbl/synth.hpp"

namespace fs = std::filesystem;
using namespace mbl;

namespace {

constexpr const char* kWorkersEnv = "MBL_WORKERS";

std::size_t worker_count() {
  if (const char* v = std::getenv(kWorkersEnv)) {
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end == v || *end != '\0' || n < 1) {
      throw std::invalid_argument(std::string(kWorkersEnv) + " must be a positive integer, got '" + v + "'");
    }
    return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> repeats;
  // synth
  std::optional<long long> clips;
  // predict
  std::string checkpoint, audio, tags;
  // evaluate
  std::string refs, preds, protocol = "segment", csv;
  double segment = 1.0, clip_duration = 10.0, collar = 0.2, offset_min = 0.2, offset_fraction = 0.2;
};

RunConfig resolve(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) c.training.seed = *o.seed;
  if (o.repeats) c.training.repeats = *o.repeats;
  c.validate();
  return c;
}

int cmd_synth(const Options& o) {
  SynthConfig sc;
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw std::runtime_error("cannot open synth config '" + o.config + "'");
    sc = synth_config_from_json(nlohmann::json::parse(in));
  }
  if (o.clips) {
    if (*o.clips <= 0) throw std::invalid_argument("n_clips must be positive");
    sc.n_clips = static_cast<std::size_t>(*o.clips);
  }
  if (o.seed) sc.seed = *o.seed;
  const fs::path out = o.out.empty() ? fs::path("synth") : fs::path(o.out);
  const SynthManifest m = generate_dataset(sc, out);
  std::cout << "wrote " << m.clip_ids.size() << " clips, " << m.strong_refs.size() << " events, "
            << sc.classes.size() << " classes to " << out.string() << "\n"
            << "  " << (out / kWeakLabelsFile).string() << "\n"
            << "  " << (out / kStrongRefsFile).string() << "\n"
            << "  " << (out / kManifestFile).string() << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig c = resolve(o);
  if (c.data.train_dir.empty()) throw std::invalid_argument("data.train_dir is not set");
  const fs::path out = o.out.empty() ? fs::path("run") : fs::path(o.out);
  fs::create_directories(out);
  const WeakDataset data = load_weak_dataset(c.data.train_dir, c);
  std::cerr << "training on " << data.size() << " clips, classes:";
  for (const auto& n : data.class_names) std::cerr << ' ' << n;
  std::cerr << std::endl;
  const auto trained = train_repeats(c, data, log_line);
  for (const auto& t : trained) {
    const std::string tag = "seed" + std::to_string(t.seed);
    RunConfig resolved = c;
    resolved.training.seed = t.seed;
    resolved.training.repeats = 1;
    resolved.data.classes = data.class_names;
    save_checkpoint(t.model, out / ("model_" + tag + ".mbl"));
    write_loss_csv(out / ("loss_" + tag + ".csv"), t.result);
    write_run_config(out / ("config_" + tag + ".json"), resolved);
    std::cout << (out / ("model_" + tag + ".mbl")).string() << "\n";
  }
  return 0;
}

int cmd_predict(const Options& o) {
  if (o.checkpoint.empty() || o.audio.empty() || o.out.empty()) {
    throw std::invalid_argument("predict needs --checkpoint, --audio and --out");
  }
  const RunConfig c = resolve(o);
  const SedModel model = load_checkpoint(o.checkpoint);
  const auto& classes = model.config().class_names;
  const PostConfig post = build_post_config(c, classes, output_hop_seconds(model.config()));
  const auto clips = load_audio_dir(o.audio, c.data.sample_rate, c.data.cache_dir);
  const PredictionSet preds = predict_clips(model, clips, post);
  const fs::path out(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_events_tsv(out, preds.events);
  fs::path tags = o.tags.empty() ? fs::path(out).replace_extension(".tags.tsv") : fs::path(o.tags);
  write_tag_probabilities(tags, preds);
  RunConfig resolved = c;
  resolved.data.classes = classes;
  write_run_config(fs::path(out).replace_extension(".config.json"), resolved);
  std::cout << "predicted " << preds.events.size() << " events in " << clips.size() << " clips -> "
            << out.string() << "\n";
  return 0;
}

int cmd_evaluate(const Options& o) {
  if (o.refs.empty() || o.preds.empty()) throw std::invalid_argument("evaluate needs --refs and --preds");
  RunConfig::Eval e;
  e.protocol = o.protocol;
  e.segment_length = o.segment;
  e.clip_duration = o.clip_duration;
  e.onset_collar = o.collar;
  e.offset_min = o.offset_min;
  e.offset_fraction = o.offset_fraction;
  const auto refs = read_events_tsv(fs::path(o.refs));
  const auto preds = read_events_tsv(fs::path(o.preds));
  const EvalReport report = evaluate_events(refs, preds, e);
  if (report.protocol == Protocol::kEvent) {
    std::cout << "# protocol event, onset_collar " << e.onset_collar << " s, offset_tolerance max("
              << e.offset_min << " s, " << e.offset_fraction << " x duration)\n";
  } else {
    std::cout << "# protocol segment, segment_length " << e.segment_length << " s, clip_duration "
              << e.clip_duration << " s\n";
  }
  std::cout << format_report(report);
  if (!o.csv.empty()) {
    std::ofstream csv(o.csv);
    if (!csv) throw std::runtime_error("cannot write '" + o.csv + "'");
    csv << "label,precision,recall,f1,tp,fp,fn\n";
    for (const auto& [label, s] : report.per_class) {
      csv << label << ',' << s.precision << ',' << s.recall << ',' << s.f1 << ',' << s.tp << ','
          << s.fp << ',' << s.fn << '\n';
    }
  }
  return 0;
}

int cmd_ablate(const Options& o) {
  const RunConfig c = resolve(o);
  if (c.data.train_dir.empty() || c.data.test_dir.empty()) {
    throw std::invalid_argument("ablate needs data.train_dir and data.test_dir");
  }
  if (c.training.repeats < 2) std::cerr << "warning: fewer than 2 repeats, std is reported as 0\n";
  const WeakDataset train = load_weak_dataset(c.data.train_dir, c);
  const auto test = load_audio_dir(c.data.test_dir, c.data.sample_rate, c.data.cache_dir);
  const auto refs = read_events_tsv(fs::path(c.test_refs_path()));
  const auto rows = run_ablation(c, train, test, refs, worker_count(), log_line);
  const std::string table = format_ablation_table(rows, c.eval.protocol);
  std::cout << table;
  if (!o.out.empty()) {
    const fs::path out(o.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write '" + o.out + "'");
    f << table;
    RunConfig resolved = c;
    resolved.data.classes = train.class_names;
    write_run_config(fs::path(out).replace_extension(".config.json"), resolved);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-branch weakly supervised sound event detection"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic soundscape dataset");
  synth->add_option("--clips", o.clips, "Number of clips");
  synth->add_option("--seed", o.seed, "Master seed");
  synth->add_option("--config", o.config, "Synthesis config (JSON)");
  synth->add_option("--out", o.out, "Output directory");

  auto* train = app.add_subcommand("train", "Train models from weak labels");
  train->add_option("--config", o.config, "Run config (JSON)")->required();
  train->add_option("--seed", o.seed, "Base seed (overrides training.seed)");
  train->add_option("--repeats", o.repeats, "Number of seeds seed, seed+1, ...");
  train->add_option("--out", o.out, "Output directory for checkpoints and logs");

  auto* predict = app.add_subcommand("predict", "Detect events with a trained checkpoint");
  predict->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  predict->add_option("--audio", o.audio, "Directory of WAV clips")->required();
  predict->add_option("--out", o.out, "Event TSV to write")->required();
  predict->add_option("--tags", o.tags, "Tag probability TSV (default: <out>.tags.tsv)");
  predict->add_option("--config", o.config, "Run config supplying postprocess settings");

  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against references");
  evaluate->add_option("--refs", o.refs, "Reference event TSV")->required();
  evaluate->add_option("--preds", o.preds, "Predicted event TSV")->required();
  evaluate->add_option("--protocol", o.protocol, "event | segment")->capture_default_str();
  evaluate->add_option("--segment", o.segment, "Segment length in seconds")->capture_default_str();
  evaluate->add_option("--clip-duration", o.clip_duration, "Clip length in seconds")->capture_default_str();
  evaluate->add_option("--collar", o.collar, "Onset collar in seconds")->capture_default_str();
  evaluate->add_option("--offset-min", o.offset_min, "Minimum offset tolerance")->capture_default_str();
  evaluate->add_option("--offset-fraction", o.offset_fraction, "Offset tolerance as a duration fraction")
      ->capture_default_str();
  evaluate->add_option("--csv", o.csv, "Also write per-class scores as CSV");

  auto* ablate = app.add_subcommand("ablate", "Compare branch combinations over repeated trainings");
  ablate->add_option("--config", o.config, "Run config (JSON)")->required();
  ablate->add_option("--seed", o.seed, "Base seed");
  ablate->add_option("--repeats", o.repeats, "Repeats per configuration");
  ablate->add_option("--out", o.out, "Markdown table to write");
  ablate->footer(std::string("Worker threads: $") + kWorkersEnv + " (default: hardware threads)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (synth->parsed()) return cmd_synth(o);
    if (train->parsed()) return cmd_train(o);
    if (predict->parsed()) return cmd_predict(o);
    if (evaluate->parsed()) return cmd_evaluate(o);
    if (ablate->parsed()) return cmd_ablate(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
