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

// The two emotion classifiers, sharing one pre-norm transformer encoder:
//
//   raw audio:    waveform -> strided conv stack -> linear -> + positions
//   spectrogram:  patches  -> linear -> [cls] prepended -> + positions
//
// followed by n_layers of x += MHSA(LN(x)); x += FFN(LN(x)) and a linear
// head over the mean token (raw audio) or the class token (spectrogram).
//
// Models are templated on the scalar so the same code runs in float for
// training and in double for gradient checking.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "serforge/autodiff.hpp"
#include "serforge/dsp_frontend.hpp"
#include "serforge/error.hpp"
#include "serforge/labels.hpp"
#include "serforge/tensor.hpp"

namespace serforge {

enum class Pathway { kRawAudio, kSpectrogram };

inline std::string_view pathway_name(Pathway p) { return p == Pathway::kRawAudio ? "raw_audio" : "spectrogram"; }

inline Pathway parse_pathway(std::string_view s) {
  if (s == "raw_audio") return Pathway::kRawAudio;
  if (s == "spectrogram") return Pathway::kSpectrogram;
  fail(ErrorKind::kConfig, "unknown pathway '" + std::string(s) + "' (expected raw_audio or spectrogram)");
}

struct ModelConfig {
  Pathway pathway = Pathway::kRawAudio;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ff_dim = 128;
  std::size_t n_classes = 6;
  std::size_t conv_channels = 32;
  std::vector<std::size_t> conv_strides{5, 2, 2, 2, 2, 2, 2};
  std::vector<std::size_t> conv_kernels{10, 3, 3, 3, 3, 2, 2};
  std::size_t patch_size = 16;
  std::size_t max_tokens = 249;
  double dropout = 0.1;
  std::uint64_t seed = 0;

  // Defaults sized for a 5 s, 16 kHz input: 249 conv frames, or 600 patches
  // plus the class token.
  static ModelConfig defaults(Pathway pathway, std::size_t n_classes) {
    ModelConfig cfg;
    cfg.pathway = pathway;
    cfg.n_classes = n_classes;
    cfg.max_tokens = pathway == Pathway::kRawAudio ? 249 : 601;
    return cfg;
  }

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t patch_values() const { return patch_size * patch_size; }

  void validate() const {
    auto bad = [](const std::string& msg) { fail(ErrorKind::kConfig, msg); };
    if (d_model == 0 || n_heads == 0 || ff_dim == 0 || n_layers == 0) bad("model dimensions must be positive");
    if (d_model % n_heads != 0) bad("d_model must be divisible by n_heads");
    if (n_classes < 2) bad("need at least two classes");
    if (max_tokens == 0) bad("max_tokens must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout must lie in [0, 1)");
    if (pathway == Pathway::kRawAudio) {
      if (conv_channels == 0) bad("conv_channels must be positive");
      if (conv_strides.empty() || conv_strides.size() != conv_kernels.size()) {
        bad("conv_strides and conv_kernels must be non-empty and of equal length");
      }
      for (std::size_t i = 0; i < conv_strides.size(); ++i) {
        if (conv_strides[i] == 0 || conv_kernels[i] == 0) bad("conv kernels and strides must be positive");
      }
    } else {
      if (patch_size == 0) bad("patch_size must be positive");
      if (max_tokens < 2) bad("spectrogram pathway needs max_tokens >= 2");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

// Frames produced by the conv stack for an input of `samples` samples, or 0
// when the input is shorter than the receptive field.
inline std::size_t conv_output_frames(const ModelConfig& cfg, std::size_t samples) {
  std::size_t len = samples;
  for (std::size_t i = 0; i < cfg.conv_kernels.size(); ++i) {
    if (len < cfg.conv_kernels[i]) return 0;
    len = (len - cfg.conv_kernels[i]) / cfg.conv_strides[i] + 1;
  }
  return len;
}

// Every parameter's name and shape, in initialization order.
inline std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::string, Shape>> out;
  const std::size_t d = cfg.d_model;
  if (cfg.pathway == Pathway::kRawAudio) {
    std::size_t c_in = 1;
    for (std::size_t i = 0; i < cfg.conv_kernels.size(); ++i) {
      const std::string p = "conv." + std::to_string(i);
      out.emplace_back(p + ".weight", Shape{cfg.conv_channels, c_in, cfg.conv_kernels[i]});
      out.emplace_back(p + ".norm.gain", Shape{cfg.conv_channels});
      out.emplace_back(p + ".norm.bias", Shape{cfg.conv_channels});
      c_in = cfg.conv_channels;
    }
    out.emplace_back("proj.weight", Shape{d, cfg.conv_channels});
    out.emplace_back("proj.bias", Shape{d});
  } else {
    out.emplace_back("patch.weight", Shape{d, cfg.patch_values()});
    out.emplace_back("patch.bias", Shape{d});
    out.emplace_back("cls_token", Shape{1, d});
  }
  out.emplace_back("pos_embedding", Shape{cfg.max_tokens, d});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l);
    out.emplace_back(p + ".norm1.gain", Shape{d});
    out.emplace_back(p + ".norm1.bias", Shape{d});
    out.emplace_back(p + ".attn.qkv.weight", Shape{3 * d, d});
    out.emplace_back(p + ".attn.qkv.bias", Shape{3 * d});
    out.emplace_back(p + ".attn.out.weight", Shape{d, d});
    out.emplace_back(p + ".attn.out.bias", Shape{d});
    out.emplace_back(p + ".norm2.gain", Shape{d});
    out.emplace_back(p + ".norm2.bias", Shape{d});
    out.emplace_back(p + ".ffn.in.weight", Shape{cfg.ff_dim, d});
    out.emplace_back(p + ".ffn.in.bias", Shape{cfg.ff_dim});
    out.emplace_back(p + ".ffn.out.weight", Shape{d, cfg.ff_dim});
    out.emplace_back(p + ".ffn.out.bias", Shape{d});
  }
  out.emplace_back("head.weight", Shape{cfg.n_classes, d});
  out.emplace_back("head.bias", Shape{cfg.n_classes});
  return out;
}

inline std::size_t parameter_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& [name, shape] : parameter_shapes(cfg)) n += shape_numel(shape);
  return n;
}

inline bool is_head_parameter(std::string_view name) { return name.starts_with("head."); }

template <typename T>
using ParameterMap = std::map<std::string, BasicTensor<T>>;

template <typename T>
struct BasicEmotionModel {
  ModelConfig config;
  LabelSet labels;
  ParameterMap<T> params;

  BasicTensor<T>& param(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) fail(ErrorKind::kConfig, "model has no parameter '" + name + "'");
    return it->second;
  }
  const BasicTensor<T>& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) fail(ErrorKind::kConfig, "model has no parameter '" + name + "'");
    return it->second;
  }

  template <typename U>
  BasicEmotionModel<U> cast() const {
    BasicEmotionModel<U> out{config, labels, {}};
    for (const auto& [name, t] : params) out.params.emplace(name, t.template cast<U>());
    return out;
  }

  // Parameters agree with the shapes the config implies and the label set.
  void check_consistency() const {
    if (labels.size() != config.n_classes) {
      fail(ErrorKind::kConfig, "label set has " + std::to_string(labels.size()) + " names for " +
                                   std::to_string(config.n_classes) + " classes");
    }
    auto shapes = parameter_shapes(config);
    if (shapes.size() != params.size()) fail(ErrorKind::kConfig, "parameter set does not match config");
    for (const auto& [name, shape] : shapes) {
      auto it = params.find(name);
      if (it == params.end()) fail(ErrorKind::kConfig, "missing parameter '" + name + "'");
      if (it->second.shape() != shape) {
        fail(ErrorKind::kConfig, "parameter '" + name + "' has shape " + shape_string(it->second.shape()) +
                                     ", config implies " + shape_string(shape));
      }
    }
  }
};

using EmotionModel = BasicEmotionModel<float>;

inline constexpr double kInitStd = 0.02;

// Head rows drawn from N(0, 0.02^2) with zero bias.
template <typename T>
void init_head(BasicEmotionModel<T>& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kInitStd);
  BasicTensor<T> w(Shape{model.config.n_classes, model.config.d_model});
  for (auto& v : w.data()) v = static_cast<T>(normal(rng));
  w.set_requires_grad(true);
  BasicTensor<T> b(Shape{model.config.n_classes});
  b.set_requires_grad(true);
  model.params.insert_or_assign("head.weight", std::move(w));
  model.params.insert_or_assign("head.bias", std::move(b));
}

// Weights N(0, 0.02^2) except the conv stack (see below), norm gains 1,
// biases 0. Deterministic in cfg.seed.
template <typename T = float>
BasicEmotionModel<T> init_model(const ModelConfig& cfg, LabelSet labels) {
  cfg.validate();
  if (labels.size() != cfg.n_classes) {
    fail(ErrorKind::kConfig, "label set size " + std::to_string(labels.size()) + " != n_classes " +
                                 std::to_string(cfg.n_classes));
  }
  BasicEmotionModel<T> model{cfg, std::move(labels), {}};
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, kInitStd);
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    BasicTensor<T> t(shape);
    if (name.ends_with(".gain")) {
      std::fill(t.data().begin(), t.data().end(), T(1));
    } else if (name.starts_with("conv.") && name.ends_with(".weight")) {
      // He (fan-in) scale: each conv is followed by a layer norm, which makes
      // its weights scale-invariant, so at N(0, 0.02^2) every Adam step is a
      // large relative change and the encoder can sit at chance for epochs.
      const double fan_in = static_cast<double>(shape[1] * shape[2]);
      std::normal_distribution<double> he(0.0, std::sqrt(2.0 / fan_in));
      for (auto& v : t.data()) v = static_cast<T>(he(rng));
    } else if (!name.ends_with(".bias")) {
      for (auto& v : t.data()) v = static_cast<T>(normal(rng));
    }
    t.set_requires_grad(true);
    model.params.emplace(name, std::move(t));
  }
  return model;
}

// A normalized waveform (raw audio) or a patch sequence (spectrogram).
using ModelInput = std::variant<std::vector<float>, PatchSequence>;

// Per-forward state: the graph, the model's parameters bound into it, and
// the dropout stream.
template <typename T>
class ForwardContext {
 public:
  // Parameters become bound leaves that receive gradients.
  ForwardContext(Graph<T>& graph, BasicEmotionModel<T>& model, bool train_mode, std::uint64_t dropout_seed = 0)
      : graph_(graph), model_(model), train_mode_(train_mode), rng_(dropout_seed) {
    for (auto& [name, t] : model.params) vars_.emplace(name, graph.parameter(t));
  }

  // Inference on a frozen model: parameters enter as constants.
  ForwardContext(Graph<T>& graph, const BasicEmotionModel<T>& model)
      : graph_(graph), model_(model), train_mode_(false), rng_(0) {
    for (const auto& [name, t] : model.params) vars_.emplace(name, graph.constant(t));
  }

  Graph<T>& graph() { return graph_; }
  const ModelConfig& config() const { return model_.config; }
  bool train_mode() const { return train_mode_; }

  const Var<T>& operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) fail(ErrorKind::kConfig, "model has no parameter '" + name + "'");
    return it->second;
  }

  Var<T> maybe_dropout(const Var<T>& x) {
    if (!train_mode_) return x;
    return dropout(x, model_.config.dropout, rng_);
  }

  // When set, every head's attention probabilities ([T x T]) are appended,
  // layer by layer.
  std::vector<BasicTensor<T>>* attention_probe = nullptr;

 private:
  Graph<T>& graph_;
  const BasicEmotionModel<T>& model_;
  bool train_mode_;
  std::mt19937_64 rng_;
  std::map<std::string, Var<T>> vars_;
};

template <typename T>
Var<T> linear(ForwardContext<T>& ctx, const Var<T>& x, const std::string& prefix) {
  return add_bias(matmul_nt(x, ctx[prefix + ".weight"]), ctx[prefix + ".bias"]);
}

// Conv feature encoder: each layer is conv1d -> layer norm over channels ->
// GELU; the last layer's output is projected to d_model. Returns
// [frames x d_model].
template <typename T>
Var<T> conv_encode(ForwardContext<T>& ctx, std::span<const float> waveform) {
  const auto& cfg = ctx.config();
  if (cfg.pathway != Pathway::kRawAudio) fail(ErrorKind::kConfig, "conv_encode needs the raw_audio pathway");
  if (conv_output_frames(cfg, waveform.size()) == 0) {
    fail(ErrorKind::kTooShort, "waveform of " + std::to_string(waveform.size()) +
                                   " samples is shorter than the conv receptive field");
  }
  // Activations stay time-major ([frames x channels]) so the channel layer
  // norm runs over the last axis.
  std::vector<T> samples(waveform.begin(), waveform.end());
  Var<T> x = ctx.graph().constant(Shape{waveform.size(), 1}, std::move(samples));
  for (std::size_t i = 0; i < cfg.conv_kernels.size(); ++i) {
    const std::string p = "conv." + std::to_string(i);
    Var<T> y = conv1d_time_major(x, ctx[p + ".weight"], cfg.conv_strides[i]);
    x = gelu(layer_norm(y, ctx[p + ".norm.gain"], ctx[p + ".norm.bias"]));
  }
  return linear(ctx, x, "proj");
}

// Shared linear patch projection, class token prepended, positions added.
// Returns [(1 + n_patches) x d_model].
template <typename T>
Var<T> patch_embed(ForwardContext<T>& ctx, const PatchSequence& patches) {
  const auto& cfg = ctx.config();
  if (cfg.pathway != Pathway::kSpectrogram) fail(ErrorKind::kConfig, "patch_embed needs the spectrogram pathway");
  const std::size_t n = patches.size();
  if (n == 0) fail(ErrorKind::kTooSmall, "no patches to embed");
  if (patches.patch_values() != cfg.patch_values()) {
    fail(ErrorKind::kShape, "patches hold " + std::to_string(patches.patch_values()) + " values, model expects " +
                                std::to_string(cfg.patch_values()));
  }
  if (n + 1 > cfg.max_tokens) {
    fail(ErrorKind::kTokenOverflow, std::to_string(n) + " patches plus class token exceed max_tokens " +
                                        std::to_string(cfg.max_tokens));
  }
  std::vector<T> values(patches.values.begin(), patches.values.end());
  Var<T> x = ctx.graph().constant(Shape{n, cfg.patch_values()}, std::move(values));
  Var<T> tokens = concat_rows<T>({ctx["cls_token"], linear(ctx, x, "patch")});
  return add(tokens, slice_rows(ctx["pos_embedding"], 0, n + 1));
}

// n_layers of pre-norm self-attention + feed-forward blocks.
template <typename T>
Var<T> encode(ForwardContext<T>& ctx, Var<T> x) {
  const auto& cfg = ctx.config();
  const std::size_t tokens = x.dim(0);
  if (tokens > cfg.max_tokens) {
    fail(ErrorKind::kTokenOverflow, std::to_string(tokens) + " tokens exceed max_tokens " +
                                        std::to_string(cfg.max_tokens));
  }
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l);
    Var<T> h = layer_norm(x, ctx[p + ".norm1.gain"], ctx[p + ".norm1.bias"]);
    Var<T> heads = multi_head_attention(linear(ctx, h, p + ".attn.qkv"), cfg.n_heads, ctx.attention_probe);
    Var<T> attn = linear(ctx, heads, p + ".attn.out");
    x = add(x, ctx.maybe_dropout(attn));

    Var<T> h2 = layer_norm(x, ctx[p + ".norm2.gain"], ctx[p + ".norm2.bias"]);
    Var<T> ff = linear(ctx, gelu(linear(ctx, h2, p + ".ffn.in")), p + ".ffn.out");
    x = add(x, ctx.maybe_dropout(ff));
  }
  return x;
}

// Mean over tokens (raw audio) or the class token (spectrogram), then the
// linear head. Returns [1 x n_classes].
template <typename T>
Var<T> classify(ForwardContext<T>& ctx, const Var<T>& tokens) {
  Var<T> pooled = ctx.config().pathway == Pathway::kRawAudio ? mean_rows(tokens) : slice_rows(tokens, 0, 1);
  return linear(ctx, pooled, "head");
}

template <typename T>
Var<T> forward(ForwardContext<T>& ctx, const ModelInput& input) {
  const auto& cfg = ctx.config();
  Var<T> tokens;
  if (cfg.pathway == Pathway::kRawAudio) {
    const auto* wave = std::get_if<std::vector<float>>(&input);
    if (!wave) fail(ErrorKind::kConfig, "raw_audio model needs a waveform input");
    Var<T> frames = conv_encode(ctx, *wave);
    const std::size_t n = frames.dim(0);
    if (n > cfg.max_tokens) {
      fail(ErrorKind::kTokenOverflow, std::to_string(n) + " conv frames exceed max_tokens " +
                                          std::to_string(cfg.max_tokens));
    }
    tokens = add(frames, slice_rows(ctx["pos_embedding"], 0, n));
  } else {
    const auto* patches = std::get_if<PatchSequence>(&input);
    if (!patches) fail(ErrorKind::kConfig, "spectrogram model needs a patch-sequence input");
    tokens = patch_embed(ctx, *patches);
  }
  return classify(ctx, encode(ctx, tokens));
}

// Eval-mode logits.
template <typename T>
std::vector<T> predict_logits(const BasicEmotionModel<T>& model, const ModelInput& input) {
  Graph<T> g;
  ForwardContext<T> ctx(g, model);
  auto logits = forward(ctx, input);
  return {logits.value().begin(), logits.value().end()};
}

// Index of the largest value; ties resolve to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace serforge
