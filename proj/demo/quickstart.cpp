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

// Quickstart: synthesize the default corpus (6 x 40 clips), split it
// 80/10/10, train the raw-audio model, evaluate on the test split and
// classify one clip. Takes a few minutes on one core.
//
//   quickstart [work_dir]

#include <filesystem>
#include <iostream>

#include "serforge/checkpoint.hpp"
#include "serforge/data.hpp"
#include "serforge/evaluation.hpp"
#include "serforge/pipeline.hpp"
#include "serforge/runtime.hpp"
#include "serforge/training.hpp"

int main(int argc, char** argv) {
  namespace sf = serforge;
  sf::tune_allocator();
  const std::filesystem::path work = argc > 1 ? argv[1] : "quickstart_out";

  try {
    sf::SynthSpec spec;
    auto manifest = sf::synth_corpus(spec, /*seed=*/7, (work / "corpus").string());
    manifest = sf::split(std::move(manifest), {}, /*seed=*/7);
    const auto counts = sf::count_splits(manifest);
    std::cout << "corpus: " << manifest.size() << " clips, split " << counts.train << "/" << counts.val << "/"
              << counts.test << "\n";

    const sf::Corpus corpus = sf::Corpus::load(manifest);
    const sf::FeatureCache cache(corpus, sf::Pathway::kRawAudio);

    auto cfg = sf::ModelConfig::defaults(sf::Pathway::kRawAudio, spec.labels.size());
    cfg.seed = 7;
    sf::TrainConfig tc;
    tc.epochs = 20;
    tc.seed = 7;
    auto run = sf::train_run(sf::initial_checkpoint(cfg, spec.labels), corpus, cache, tc, "quickstart",
                             [](const sf::EpochRecord& r) {
                               std::cout << "epoch " << r.epoch << "  loss " << r.train_loss << "  val "
                                         << r.val_accuracy << "\n";
                             });
    sf::save_checkpoint(run.checkpoint, (work / "model.serf").string());

    const auto ev = sf::evaluate_run(run.checkpoint, corpus, cache, sf::Split::kTest);
    std::cout << "test accuracy " << ev.metrics.accuracy << "\n"
              << sf::confusion_table(ev.confusion, run.checkpoint.labels());

    const std::size_t rec = corpus.indices(sf::Split::kTest).front();
    const auto probs = sf::predict_probabilities(run.checkpoint, corpus.clips[rec]);
    std::cout << corpus.manifest.records[rec].utterance_id << " -> "
              << run.checkpoint.labels().name(sf::argmax<double>(probs)) << "\n";
  } catch (const sf::Error& e) {
    std::cerr << "quickstart: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
