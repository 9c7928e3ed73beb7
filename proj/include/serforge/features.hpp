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

// Clip -> model input, shared by training, evaluation and prediction so the
// three can never disagree about conditioning.
//
//   raw audio:    resample 16 kHz -> fix 5 s -> zero-mean/unit-variance
//   spectrogram:  resample 16 kHz -> fix 5 s -> log-mel -> corpus stats
//                 normalization -> 16x16 patches

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "serforge/audio_io.hpp"
#include "serforge/dsp_frontend.hpp"
#include "serforge/error.hpp"
#include "serforge/model.hpp"
#include "serforge/runtime.hpp"

namespace serforge {

class FeatureExtractor {
 public:
  FeatureExtractor(Pathway pathway, SpectrogramConfig cfg = {})
      : pathway_(pathway), cfg_(cfg), fb_(pathway == Pathway::kSpectrogram ? mel_filterbank(cfg) : MelFilterbank{}) {}

  Pathway pathway() const { return pathway_; }
  const SpectrogramConfig& spectrogram_config() const { return cfg_; }
  const MelFilterbank& filterbank() const { return fb_; }

  // Un-normalized log-mel grid of a clip after conditioning.
  MelSpectrogram mel(const AudioClip& clip) const { return log_mel_spectrogram(condition_clip(clip).samples, cfg_, fb_); }

  // Global mean/std over the log-mel grids of a set of (training) clips.
  SpectrogramStats fit_stats(std::span<const AudioClip> clips) const {
    std::vector<MelSpectrogram> specs(clips.size());
    parallel_for(clips.size(), [&](std::size_t i) { specs[i] = mel(clips[i]); });
    return spectrogram_stats(specs, cfg_.log_floor);
  }

  // Model input for one clip. The spectrogram pathway needs stats.
  ModelInput features(const AudioClip& clip, const std::optional<SpectrogramStats>& stats) const {
    const AudioClip conditioned = condition_clip(clip);
    if (pathway_ == Pathway::kRawAudio) return normalize_waveform(conditioned.samples);
    if (!stats) fail(ErrorKind::kBadStats, "spectrogram features need corpus statistics");
    auto spec = log_mel_spectrogram(conditioned.samples, cfg_, fb_);
    return patchify(normalize_spectrogram(spec, stats->mean, stats->stddev), cfg_.patch_size, cfg_.patch_stride);
  }

  std::vector<ModelInput> features(std::span<const AudioClip> clips,
                                   const std::optional<SpectrogramStats>& stats) const {
    std::vector<ModelInput> out(clips.size());
    parallel_for(clips.size(), [&](std::size_t i) { out[i] = features(clips[i], stats); });
    return out;
  }

 private:
  Pathway pathway_;
  SpectrogramConfig cfg_;
  MelFilterbank fb_;
};

}  // namespace serforge
