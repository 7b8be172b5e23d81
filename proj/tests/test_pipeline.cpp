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

#include "doctest.h"
#include "mbl/pipeline.hpp"
#include "model_fixtures.hpp"
#include "test_util.hpp"

using namespace mbl;
using testutil::toy_dataset;

TEST_CASE("run config JSON is strict and round-trips") {
  RunConfig c;
  c.training.epochs = 3;
  c.model.channels = {8, 8, 8};
  c.ablation.configurations = {{"E-GMP"}, {"E-GMP", "I-GAP"}};
  const RunConfig back = run_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));

  auto j = to_json(c);
  j["training"]["epoch"] = 3;
  try {
    run_config_from_json(j);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("training.epoch") != std::string::npos);
  }
  j = to_json(c);
  j["extras"] = nlohmann::json::object();
  CHECK_THROWS_AS(run_config_from_json(j), std::invalid_argument);
  j = to_json(c);
  j["training"]["epochs"] = "many";
  CHECK_THROWS_AS(run_config_from_json(j), std::invalid_argument);

  // Partial configs keep the defaults.
  const RunConfig p = run_config_from_json(nlohmann::json::parse(R"({"training": {"seed": 4}})"));
  CHECK(p.training.seed == 4);
  CHECK(p.model.branches == std::vector<std::string>{"E-ATP", "I-GAP", "I-GMP"});
  CHECK(p.model.alpha == 1.0);
  CHECK(p.model.beta == 0.5);
}

TEST_CASE("run config validation names the offending field") {
  RunConfig c;
  c.model.branches = {"I-GAP"};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.postprocess.window = 4;
  c.postprocess.window_rule = "fixed";
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.postprocess.window_rule = "adaptive";
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.model.preset = "medium";
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.data.test_dir = "/data/test";
  CHECK(c.test_refs_path() == "/data/test/strong_refs.tsv");
}

TEST_CASE("the default grid has twelve main/auxiliary combinations") {
  const auto g = default_ablation_grid();
  REQUIRE(g.size() == 12);
  std::size_t main_only = 0;
  for (const auto& combo : g) {
    CHECK(combo.front()[0] == 'E');
    main_only += combo.size() == 1;
  }
  CHECK(main_only == 3);
  CHECK(g.back() == std::vector<std::string>{"E-ATP", "I-GAP", "I-GMP"});
}

TEST_CASE("channel overrides keep the attention divisor") {
  RunConfig c;
  c.model.channels = {8, 8, 8};
  const auto m = build_model_config(c, {"a", "b"}, {"E-ATP"}, 3);
  CHECK(m.feature_dim() == 32);
  CHECK(m.attention_scale == doctest::Approx(32.0 / 2.5));
  CHECK(m.seed == 3);
  c.model.channels = {8, 8};
  CHECK_THROWS_AS(build_model_config(c, {"a"}, {"E-ATP"}, 0), std::invalid_argument);
  CHECK(output_hop_seconds(build_model_config(RunConfig{}, {"a"}, {"E-ATP"}, 0)) == doctest::Approx(0.02));
}

TEST_CASE("post config follows the window rule") {
  RunConfig c;
  CHECK(build_post_config(c, {"a", "b"}, 0.02).median_windows ==
        std::vector<std::size_t>{kDefaultMedianWindow, kDefaultMedianWindow});
  c.postprocess.window_rule = "fixed";
  c.postprocess.window = 5;
  CHECK(build_post_config(c, {"a"}, 0.02).median_windows == std::vector<std::size_t>{5});
  const auto dir = testutil::scratch_dir("post_rule");
  write_events_tsv(dir / "d.tsv", {{"c", "a", 0.0, 0.54}});
  c.postprocess.window_rule = "adaptive";
  c.postprocess.durations_tsv = (dir / "d.tsv").string();
  CHECK(build_post_config(c, {"a", "b"}, 0.02).median_windows ==
        std::vector<std::size_t>{9, kDefaultMedianWindow});
}

TEST_CASE("ablation summaries use the n - 1 standard deviation") {
  const auto r = summarize_scores("E-GMP", {0.5, 0.6, 0.7});
  CHECK(r.mean == doctest::Approx(0.6));
  CHECK(r.stddev == doctest::Approx(0.1));
  CHECK(r.best == 0.7);
  CHECK(summarize_scores("x", {0.4}).stddev == 0.0);
  CHECK_THROWS_AS(summarize_scores("x", {}), std::invalid_argument);
  CHECK(format_ablation_table({r}, "segment") ==
        "| Configuration | Average segment F1 | Best segment F1 |\n|---|---|---|\n"
        "| E-GMP | 0.600 ± 0.100 | 0.700 |\n");
}

TEST_CASE("evaluation dispatches on the protocol") {
  const std::vector<EventAnnotation> refs{{"c", "A", 0.0, 5.0}}, preds{{"c", "A", 1.0, 6.0}};
  RunConfig::Eval e;
  CHECK(evaluate_events(refs, preds, e).macro_f1 == doctest::Approx(0.8));
  e.protocol = "event";
  CHECK(evaluate_events(refs, preds, e).macro_f1 == 0.0);
  e.onset_collar = 1.0;
  e.offset_min = 1.0;
  CHECK(evaluate_events(refs, preds, e).macro_f1 == 1.0);
}

TEST_CASE("ablation results do not depend on the worker count") {
  WeakDataset train_set = toy_dataset(6, 24, 40);
  const WeakDataset test_set = toy_dataset(3, 24, 41);
  std::vector<EventAnnotation> refs;
  for (std::size_t i = 0; i < test_set.size(); ++i)
    for (std::size_t k = 0; k < 3; ++k)
      if (test_set.labels[i][k] > 0.5)
        refs.push_back({test_set.clips[i].clip_id, train_set.class_names[k], 0.1 * k, 0.1 * k + 0.2});

  RunConfig c;
  c.model.channels = {4, 4, 4};
  c.training.epochs = 1;
  c.training.batch_size = 3;
  c.training.repeats = 2;
  c.postprocess.window_rule = "fixed";
  c.postprocess.window = 3;
  c.eval.clip_duration = 0.48;
  c.eval.segment_length = 0.12;
  c.ablation.configurations = {{"E-GMP"}, {"E-ATP", "I-GAP"}};
  const auto one = run_ablation(c, train_set, test_set.clips, refs, 1);
  const auto three = run_ablation(c, train_set, test_set.clips, refs, 3);
  REQUIRE(one.size() == 2);
  CHECK(one[1].name == "E-ATP + I-GAP");
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(one[i].scores.size() == 2);
    CHECK(one[i].scores == three[i].scores);
  }
}
