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

// Manifest-level workflows: load a corpus, featurize it once, train a
// checkpoint on its train/val splits, evaluate on a split, predict a clip.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "serforge/audio_io.hpp"
#include "serforge/checkpoint.hpp"
#include "serforge/data.hpp"
#include "serforge/evaluation.hpp"
#include "serforge/features.hpp"
#include "serforge/runtime.hpp"
#include "serforge/training.hpp"

namespace serforge {

// A manifest together with its decoded audio, in record order.
struct Corpus {
  DatasetManifest manifest;
  std::vector<AudioClip> clips;

  static Corpus load(DatasetManifest m) {
    Corpus c{std::move(m), {}};
    c.clips.resize(c.manifest.size());
    parallel_for(c.clips.size(), [&](std::size_t i) { c.clips[i] = read_wav_file(c.manifest.resolve(c.manifest.records[i])); });
    return c;
  }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      if (manifest.records[i].split == s) out.push_back(i);
    }
    return out;
  }
};

// Split-independent features of every clip: the normalized waveform (raw
// audio) or the un-normalized log-mel grid (spectrogram). Model inputs for a
// split are then cheap to form once corpus statistics are known.
class FeatureCache {
 public:
  FeatureCache(const Corpus& corpus, Pathway pathway, const SpectrogramConfig& cfg = {})
      : fx_(pathway, cfg) {
    const std::size_t n = corpus.clips.size();
    if (pathway == Pathway::kRawAudio) {
      raw_.resize(n);
      parallel_for(n, [&](std::size_t i) { raw_[i] = normalize_waveform(condition_clip(corpus.clips[i]).samples); });
    } else {
      mel_.resize(n);
      parallel_for(n, [&](std::size_t i) { mel_[i] = fx_.mel(corpus.clips[i]); });
    }
  }

  Pathway pathway() const { return fx_.pathway(); }
  const SpectrogramConfig& spectrogram_config() const { return fx_.spectrogram_config(); }

  SpectrogramStats stats(std::span<const std::size_t> idx) const {
    if (idx.empty()) fail(ErrorKind::kEmptySplit, "no clips to compute statistics over");
    std::vector<MelSpectrogram> specs;
    specs.reserve(idx.size());
    for (auto i : idx) specs.push_back(mel_.at(i));
    return spectrogram_stats(specs, spectrogram_config().log_floor);
  }

  ModelInput input(std::size_t i, const std::optional<SpectrogramStats>& stats) const {
    if (pathway() == Pathway::kRawAudio) return raw_.at(i);
    if (!stats) fail(ErrorKind::kBadStats, "spectrogram features need corpus statistics");
    const auto& cfg = spectrogram_config();
    return patchify(normalize_spectrogram(mel_.at(i), stats->mean, stats->stddev), cfg.patch_size, cfg.patch_stride);
  }

  std::vector<ModelInput> inputs(std::span<const std::size_t> idx, const std::optional<SpectrogramStats>& stats) const {
    std::vector<ModelInput> out(idx.size());
    parallel_for(idx.size(), [&](std::size_t k) { out[k] = input(idx[k], stats); });
    return out;
  }

 private:
  FeatureExtractor fx_;
  std::vector<std::vector<float>> raw_;
  std::vector<MelSpectrogram> mel_;
};

// Class indices of the given records under `labels`; a record whose label
// the model does not know is a LabelError.
inline std::vector<std::size_t> label_indices(const Corpus& corpus, std::span<const std::size_t> idx,
                                              const LabelSet& labels) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (auto i : idx) {
    const auto& r = corpus.manifest.records[i];
    auto k = labels.find(r.label);
    if (!k) {
      fail(ErrorKind::kLabel, "utterance '" + r.utterance_id + "' has label '" + r.label +
                                  "', which the model's label set {" + labels.joined() + "} lacks");
    }
    out.push_back(*k);
  }
  return out;
}

inline void require_compatible(const Checkpoint& ckpt, const FeatureCache& cache) {
  if (ckpt.config().pathway != cache.pathway()) {
    fail(ErrorKind::kConfig, "checkpoint is a " + std::string(pathway_name(ckpt.config().pathway)) +
                                 " model but features are " + std::string(pathway_name(cache.pathway())));
  }
  if (cache.pathway() == Pathway::kSpectrogram &&
      to_json(ckpt.spectrogram) != to_json(cache.spectrogram_config())) {
    fail(ErrorKind::kConfig, "spectrogram settings differ between checkpoint and features");
  }
}

// A fresh checkpoint around a randomly initialized model.
inline Checkpoint initial_checkpoint(const ModelConfig& cfg, const LabelSet& labels,
                                     const SpectrogramConfig& spec = {}) {
  Checkpoint ckpt;
  ckpt.model = init_model(cfg, labels);
  ckpt.spectrogram = spec;
  return ckpt;
}

struct TrainRun {
  Checkpoint checkpoint;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
};

// Trains `start` on the corpus's train split, selecting on its val split.
// Spectrogram statistics are refit on the train split and stored in the
// result. The label sets must match exactly (swap the head first when
// moving to a new taxonomy).
inline TrainRun train_run(const Checkpoint& start, const Corpus& corpus, const FeatureCache& cache,
                          const TrainConfig& cfg, const std::string& dataset_id, const EpochCallback& on_epoch = {}) {
  require_compatible(start, cache);
  if (!(start.labels() == corpus.manifest.labels)) {
    fail(ErrorKind::kLabel, "checkpoint labels {" + start.labels().joined() + "} differ from dataset labels {" +
                                corpus.manifest.labels.joined() + "}; swap the head first");
  }
  const auto tr = corpus.indices(Split::kTrain), va = corpus.indices(Split::kVal);
  if (tr.empty()) fail(ErrorKind::kEmptySplit, "manifest has no train records (run split first)");
  if (va.empty()) fail(ErrorKind::kEmptySplit, "manifest has no val records (run split first)");

  std::optional<SpectrogramStats> stats;
  if (cache.pathway() == Pathway::kSpectrogram) stats = cache.stats(tr);
  auto make = [&](const std::vector<std::size_t>& idx) {
    auto inputs = cache.inputs(idx, stats);
    auto labels = label_indices(corpus, idx, start.labels());
    std::vector<Example> out(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) out[k] = Example{std::move(inputs[k]), labels[k]};
    return out;
  };
  const auto train_set = make(tr), val_set = make(va);

  auto result = train(start.model, train_set, val_set, cfg, on_epoch);
  TrainRun run;
  run.checkpoint = start;
  run.checkpoint.model = std::move(result.model);
  run.checkpoint.frontend_stats = stats;
  run.checkpoint.provenance.push_back(
      {"train", dataset_id, result.history.size(),
       Json{{"best_epoch", result.best_epoch}, {"best_val_accuracy", result.best_val_accuracy},
            {"train_records", tr.size()}, {"val_records", va.size()}}});
  run.history = std::move(result.history);
  run.best_epoch = result.best_epoch;
  run.best_val_accuracy = result.best_val_accuracy;
  return run;
}

inline std::optional<SpectrogramStats> checkpoint_stats(const Checkpoint& ckpt) {
  if (ckpt.config().pathway == Pathway::kSpectrogram && !ckpt.frontend_stats) {
    fail(ErrorKind::kConfig, "spectrogram checkpoint carries no frontend statistics (was it trained?)");
  }
  return ckpt.frontend_stats;
}

// Eval-mode metrics of a checkpoint on one split of a corpus.
inline Evaluation evaluate_run(const Checkpoint& ckpt, const Corpus& corpus, const FeatureCache& cache, Split split) {
  require_compatible(ckpt, cache);
  const auto idx = corpus.indices(split);
  if (idx.empty()) fail(ErrorKind::kEmptyEval, "split '" + std::string(split_name(split)) + "' is empty");
  auto labels = label_indices(corpus, idx, ckpt.labels());
  auto inputs = cache.inputs(idx, checkpoint_stats(ckpt));
  return evaluate(ckpt.model, inputs, labels);
}

// Softmax probabilities of one clip.
inline std::vector<double> predict_probabilities(const Checkpoint& ckpt, const AudioClip& clip) {
  FeatureExtractor fx(ckpt.config().pathway, ckpt.spectrogram);
  auto logits = predict_logits(ckpt.model, fx.features(clip, checkpoint_stats(ckpt)));
  double mx = logits[0];
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += p[i] = std::exp(logits[i] - mx);
  for (auto& v : p) v /= total;
  return p;
}

}  // namespace serforge
