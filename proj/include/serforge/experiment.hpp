/* Copyright 2026 The SER-Forge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// The two scaled-down experiments run by `ser_forge run-experiment`:
//
//   1. Train each pathway from scratch on the synthetic six-class corpus and
//      report test accuracy per seed.
//   2. Train on the four-class source-domain corpus, swap the head to six
//      classes, score the target test split zero-shot, then fine-tune on the
//      target corpus and compare against training from scratch at the same
//      epoch budget.

#pragma once

#include <chrono>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "serforge/checkpoint.hpp"
#include "serforge/data.hpp"
#include "serforge/pipeline.hpp"
#include "serforge/training.hpp"

namespace serforge {

struct ExperimentConfig {
  std::string work_dir = "experiment";
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<Pathway> pathways{Pathway::kRawAudio, Pathway::kSpectrogram};
  std::uint64_t corpus_seed = 2026;
  bool transfer_only = false;  // skip experiment 1
  bool scratch_only = false;   // skip experiment 2
  std::size_t clips_per_class = 50;      // target (six-class) corpus
  std::size_t src_clips_per_class = 50;  // source (four-class) corpus
  TrainConfig train;                     // experiment 1 and stage 1
  std::size_t stage2_epochs = 8;         // matched budget, no early stopping
  double dropout = 0.1;
};

inline Json to_json(const ExperimentConfig& c) {
  Json pw = Json::array();
  for (auto p : c.pathways) pw.push_back(std::string(pathway_name(p)));
  return Json{{"seeds", c.seeds},
              {"pathways", pw},
              {"corpus_seed", c.corpus_seed},
              {"clips_per_class", c.clips_per_class},
              {"src_clips_per_class", c.src_clips_per_class},
              {"train", to_json(c.train)},
              {"stage2_epochs", c.stage2_epochs},
              {"dropout", c.dropout}};
}

namespace experiment_detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline Corpus make_corpus(const SynthSpec& spec, std::uint64_t seed, const std::string& dir) {
  return Corpus::load(synth_corpus(spec, seed, dir));
}

inline Corpus with_split(const Corpus& base, std::uint64_t seed) {
  Corpus c{split(base.manifest, {}, seed), base.clips};
  return c;
}

}  // namespace experiment_detail

// Runs the configured experiments. Progress goes to `log` when non-null.
// The returned report holds per-seed results; "elapsed_seconds" fields are
// wall-clock and the only non-deterministic content.
inline Json run_experiments(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  using experiment_detail::seconds_since;
  namespace fs = std::filesystem;
  auto say = [&](const std::string& s) {
    if (log) *log << s << std::endl;
  };

  SynthSpec tgt_spec;
  tgt_spec.clips_per_class = cfg.clips_per_class;
  const Corpus tgt = experiment_detail::make_corpus(tgt_spec, cfg.corpus_seed, (fs::path(cfg.work_dir) / "tgt").string());
  say("target corpus: " + std::to_string(tgt.clips.size()) + " clips");

  Json report{{"config", to_json(cfg)}};
  if (!cfg.transfer_only) report["experiment1"] = Json::object();
  if (!cfg.scratch_only) report["experiment2"] = Json::object();

  std::optional<Corpus> src;
  if (!cfg.scratch_only) {
    SynthSpec src_spec;
    src_spec.labels = LabelSet::src4();
    src_spec.domain = SynthDomain::src();
    src_spec.clips_per_class = cfg.src_clips_per_class;
    src = experiment_detail::make_corpus(src_spec, cfg.corpus_seed + 1, (fs::path(cfg.work_dir) / "src").string());
    say("source corpus: " + std::to_string(src->clips.size()) + " clips");
  }

  for (Pathway pw : cfg.pathways) {
    const std::string name(pathway_name(pw));
    const FeatureCache tgt_cache(tgt, pw);

    if (!cfg.transfer_only) {
      Json runs = Json::array();
      std::size_t passing = 0;
      for (auto seed : cfg.seeds) {
        const auto t0 = std::chrono::steady_clock::now();
        const Corpus data = experiment_detail::with_split(tgt, seed);
        auto mc = ModelConfig::defaults(pw, data.manifest.labels.size());
        mc.seed = seed;
        mc.dropout = cfg.dropout;
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        auto run = train_run(initial_checkpoint(mc, data.manifest.labels), data, tgt_cache, tc, "synthetic-tgt");
        auto test = evaluate_run(run.checkpoint, data, tgt_cache, Split::kTest);
        const double secs = seconds_since(t0);
        passing += test.metrics.accuracy >= 0.90;
        say("[exp1 " + name + " seed " + std::to_string(seed) + "] epochs " + std::to_string(run.history.size()) +
            ", best val " + std::to_string(run.best_val_accuracy) + ", test " +
            std::to_string(test.metrics.accuracy) + " (" + std::to_string(static_cast<int>(secs)) + " s)");
        runs.push_back({{"seed", seed},
                        {"epochs_run", run.history.size()},
                        {"best_epoch", run.best_epoch},
                        {"best_val_accuracy", run.best_val_accuracy},
                        {"test", metrics_json(test.metrics, data.manifest.labels)},
                        {"history", history_json(run.history)},
                        {"elapsed_seconds", secs}});
      }
      report["experiment1"][name] = {{"runs", runs}, {"seeds_at_or_above_0.90", passing}};
    }

    if (!cfg.scratch_only) {
      const FeatureCache src_cache(*src, pw);
      Json runs = Json::array();
      std::size_t val_wins = 0;
      double transfer_test_sum = 0.0, scratch_test_sum = 0.0, zero_shot_max = 0.0;
      for (auto seed : cfg.seeds) {
        const auto t0 = std::chrono::steady_clock::now();
        const Corpus src_data = experiment_detail::with_split(*src, seed);
        const Corpus tgt_data = experiment_detail::with_split(tgt, seed);

        auto mc = ModelConfig::defaults(pw, src_data.manifest.labels.size());
        mc.seed = seed;
        mc.dropout = cfg.dropout;
        TrainConfig tc1 = cfg.train;
        tc1.seed = seed;
        auto stage1 = train_run(initial_checkpoint(mc, src_data.manifest.labels), src_data, src_cache, tc1,
                                "synthetic-src");
        auto src_test = evaluate_run(stage1.checkpoint, src_data, src_cache, Split::kTest);

        // The swapped head sees target audio through the source model's
        // frontend statistics, exactly as a deployed checkpoint would.
        Checkpoint swapped = head_swap(stage1.checkpoint, tgt_data.manifest.labels, seed);
        auto zero_shot = evaluate_run(swapped, tgt_data, tgt_cache, Split::kTest);

        TrainConfig tc2 = cfg.train;
        tc2.seed = seed;
        tc2.epochs = cfg.stage2_epochs;
        tc2.early_stop_patience = 0;
        auto transfer = train_run(swapped, tgt_data, tgt_cache, tc2, "synthetic-tgt");
        auto transfer_test = evaluate_run(transfer.checkpoint, tgt_data, tgt_cache, Split::kTest);

        auto mc6 = ModelConfig::defaults(pw, tgt_data.manifest.labels.size());
        mc6.seed = seed;
        mc6.dropout = cfg.dropout;
        auto scratch = train_run(initial_checkpoint(mc6, tgt_data.manifest.labels), tgt_data, tgt_cache, tc2,
                                 "synthetic-tgt");
        auto scratch_test = evaluate_run(scratch.checkpoint, tgt_data, tgt_cache, Split::kTest);
        const double secs = seconds_since(t0);

        val_wins += transfer.best_val_accuracy >= scratch.best_val_accuracy;
        transfer_test_sum += transfer_test.metrics.accuracy;
        scratch_test_sum += scratch_test.metrics.accuracy;
        zero_shot_max = std::max(zero_shot_max, zero_shot.metrics.accuracy);
        say("[exp2 " + name + " seed " + std::to_string(seed) + "] source test " +
            std::to_string(src_test.metrics.accuracy) + ", zero-shot " + std::to_string(zero_shot.metrics.accuracy) +
            ", transfer val/test " + std::to_string(transfer.best_val_accuracy) + "/" +
            std::to_string(transfer_test.metrics.accuracy) + ", scratch val/test " +
            std::to_string(scratch.best_val_accuracy) + "/" + std::to_string(scratch_test.metrics.accuracy) + " (" +
            std::to_string(static_cast<int>(secs)) + " s)");
        runs.push_back({{"seed", seed},
                        {"stage1_epochs_run", stage1.history.size()},
                        {"source_test_accuracy", src_test.metrics.accuracy},
                        {"zero_shot_test", metrics_json(zero_shot.metrics, tgt_data.manifest.labels)},
                        {"transfer_best_val_accuracy", transfer.best_val_accuracy},
                        {"transfer_test", metrics_json(transfer_test.metrics, tgt_data.manifest.labels)},
                        {"transfer_history", history_json(transfer.history)},
                        {"scratch_best_val_accuracy", scratch.best_val_accuracy},
                        {"scratch_test", metrics_json(scratch_test.metrics, tgt_data.manifest.labels)},
                        {"scratch_history", history_json(scratch.history)},
                        {"elapsed_seconds", secs}});
      }
      const double n = static_cast<double>(cfg.seeds.size());
      report["experiment2"][name] = {{"runs", runs},
                                     {"max_zero_shot_test_accuracy", zero_shot_max},
                                     {"seeds_transfer_val_at_least_scratch", val_wins},
                                     {"mean_transfer_test_accuracy", transfer_test_sum / n},
                                     {"mean_scratch_test_accuracy", scratch_test_sum / n}};
    }
  }
  return report;
}

}  // namespace serforge
