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

// Small helpers shared by the unit tests.

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "serforge/data.hpp"
#include "serforge/model.hpp"
#include "serforge/tensor.hpp"

namespace serforge::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("serforge_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& child = "") const { return (child.empty() ? path_ : path_ / child).string(); }

 private:
  std::filesystem::path path_;
};

template <typename T = double>
BasicTensor<T> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  BasicTensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(n(rng));
  return t;
}

// Raw-audio model small enough for finite differences: a 400-sample input
// gives 39 conv frames.
inline ModelConfig tiny_raw_config(std::size_t n_classes = 3) {
  ModelConfig c = ModelConfig::defaults(Pathway::kRawAudio, n_classes);
  c.d_model = 8;
  c.n_heads = 2;
  c.ff_dim = 16;
  c.n_layers = 1;
  c.conv_channels = 4;
  c.conv_kernels = {10, 3};
  c.conv_strides = {5, 2};
  c.max_tokens = 64;
  c.dropout = 0.0;
  return c;
}

// Spectrogram model over 4x4 patches.
inline ModelConfig tiny_spec_config(std::size_t n_classes = 3) {
  ModelConfig c = ModelConfig::defaults(Pathway::kSpectrogram, n_classes);
  c.d_model = 8;
  c.n_heads = 2;
  c.ff_dim = 16;
  c.n_layers = 1;
  c.patch_size = 4;
  c.max_tokens = 16;
  c.dropout = 0.0;
  return c;
}

inline std::vector<float> random_wave(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> w(n);
  for (auto& v : w) v = d(rng);
  return w;
}

inline PatchSequence random_patches(std::size_t patch, std::size_t n_freq, std::size_t n_time, std::uint64_t seed) {
  PatchSequence p;
  p.patch_size = patch;
  p.n_freq_patches = n_freq;
  p.n_time_patches = n_time;
  p.values = random_wave(patch * patch * n_freq * n_time, seed);
  return p;
}

inline LabelSet labels_of(std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) names.push_back("c" + std::to_string(i));
  return LabelSet(names);
}

}  // namespace serforge::testing
