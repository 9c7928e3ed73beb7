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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "serforge/grad_check.hpp"
#include "serforge/model.hpp"
#include "test_util.hpp"

namespace serforge {
namespace {

using testing::random_patches;
using testing::random_wave;

bool same_bits(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

TEST(ModelConfig, DefaultsAndValidation) {
  const auto c = ModelConfig::defaults(Pathway::kRawAudio, 6);
  EXPECT_EQ(c.head_dim(), 16u);
  EXPECT_EQ(c.max_tokens, 249u);
  EXPECT_EQ(ModelConfig::defaults(Pathway::kSpectrogram, 6).max_tokens, 601u);
  auto bad = c;
  bad.n_heads = 5;
  EXPECT_THROW(bad.validate(), Error);
  bad = c;
  bad.n_classes = 1;
  EXPECT_THROW(bad.validate(), Error);
  bad = c;
  bad.conv_kernels.pop_back();
  EXPECT_THROW(init_model(bad, LabelSet::shemo6()), Error);
}

// Closed-form counts for the default configurations, d = 64, ff = 128:
//   transformer layer: 2 norms (4d) + qkv (3d*d + 3d) + out (d*d + d)
//                      + ffn (ff*d + ff + d*ff + d)              = 33,472
//   raw conv stack:    320 + 4 * 3072 + 2 * 2048 weights + 7 * 64 norm = 17,152
//   raw projection:    64 * 32 + 64                               = 2,112
//   patch embedding:   64 * 256 + 64, class token 64
//   positions:         max_tokens * 64;  head: 6 * 64 + 6         = 390
TEST(ModelConfig, ParameterCountTable) {
  EXPECT_EQ(parameter_count(ModelConfig::defaults(Pathway::kRawAudio, 6)),
            17152u + 2112u + 249u * 64u + 2u * 33472u + 390u);
  EXPECT_EQ(parameter_count(ModelConfig::defaults(Pathway::kRawAudio, 6)), 102534u);
  EXPECT_EQ(parameter_count(ModelConfig::defaults(Pathway::kSpectrogram, 6)),
            16448u + 64u + 601u * 64u + 2u * 33472u + 390u);
  EXPECT_EQ(parameter_count(ModelConfig::defaults(Pathway::kSpectrogram, 6)), 122310u);
  EXPECT_EQ(parameter_count(ModelConfig::defaults(Pathway::kRawAudio, 4)), 102534u - 2u * 65u);
  const auto m = init_model(ModelConfig::defaults(Pathway::kSpectrogram, 6), LabelSet::shemo6());
  std::size_t total = 0;
  for (const auto& [name, t] : m.params) total += t.numel();
  EXPECT_EQ(total, 122310u);
  EXPECT_EQ(m.param("head.weight").shape(), (Shape{6, 64}));
}

TEST(InitModel, DeterministicPerSeed) {
  auto cfg = ModelConfig::defaults(Pathway::kRawAudio, 6);
  const auto a = init_model(cfg, LabelSet::shemo6());
  const auto b = init_model(cfg, LabelSet::shemo6());
  for (const auto& [name, t] : a.params) EXPECT_TRUE(t.bit_equal(b.param(name))) << name;
  cfg.seed = 1;
  const auto c = init_model(cfg, LabelSet::shemo6());
  EXPECT_FALSE(a.param("layers.0.attn.qkv.weight").bit_equal(c.param("layers.0.attn.qkv.weight")));
  EXPECT_EQ(a.param("layers.0.norm1.gain")[0], 1.0f);
  EXPECT_EQ(a.param("layers.0.norm1.bias")[0], 0.0f);
}

TEST(InitModel, TransformerWeightsUseSmallNormal) {
  const auto m = init_model(ModelConfig::defaults(Pathway::kSpectrogram, 6), LabelSet::shemo6());
  const auto& w = m.param("layers.1.ffn.in.weight");
  double s = 0;
  for (float v : w.data()) s += static_cast<double>(v) * v;
  EXPECT_NEAR(std::sqrt(s / w.numel()), 0.02, 0.002);
}

TEST(ConvEncode, FrameCounts) {
  const auto cfg = ModelConfig::defaults(Pathway::kRawAudio, 6);
  std::size_t len = 80000;
  const std::size_t expected[] = {15999, 7999, 3999, 1999, 999, 499, 249};
  for (std::size_t i = 0; i < 7; ++i) {
    len = (len - cfg.conv_kernels[i]) / cfg.conv_strides[i] + 1;
    EXPECT_EQ(len, expected[i]);
  }
  EXPECT_EQ(conv_output_frames(cfg, 80000), 249u);
  EXPECT_EQ(conv_output_frames(cfg, 160000), 499u);
  EXPECT_EQ(conv_output_frames(cfg, 399), 0u);
  EXPECT_EQ(conv_output_frames(cfg, 400), 1u);

  const auto m = init_model(cfg, LabelSet::shemo6());
  Graph<float> g;
  ForwardContext<float> ctx(g, m);
  auto frames = conv_encode(ctx, random_wave(80000, 1));
  EXPECT_EQ(frames.shape(), (Shape{249, 64}));
  try {
    conv_encode(ctx, random_wave(300, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kTooShort);
  }
}

TEST(ConvEncode, ZeroWaveformGivesIdenticalFrames) {
  const auto m = init_model(ModelConfig::defaults(Pathway::kRawAudio, 6), LabelSet::shemo6());
  Graph<float> g;
  ForwardContext<float> ctx(g, m);
  auto frames = conv_encode(ctx, std::vector<float>(80000, 0.0f));
  const auto v = frames.value();
  for (float x : v) ASSERT_TRUE(std::isfinite(x));
  for (std::size_t t = 1; t < 249; ++t) ASSERT_TRUE(same_bits(v.subspan(0, 64), v.subspan(t * 64, 64))) << t;
}

TEST(PatchEmbed, TokenCounts) {
  const auto m = init_model(ModelConfig::defaults(Pathway::kSpectrogram, 6), LabelSet::shemo6());
  Graph<float> g;
  ForwardContext<float> ctx(g, m);
  EXPECT_EQ(patch_embed(ctx, random_patches(16, 12, 50, 1)).shape(), (Shape{601, 64}));
  EXPECT_EQ(patch_embed(ctx, random_patches(16, 1, 1, 2)).shape(), (Shape{2, 64}));
  try {
    patch_embed(ctx, random_patches(16, 12, 51, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kTokenOverflow);
  }
}

TEST(PatchEmbed, PositionsDistinguishIdenticalPatches) {
  const auto m = init_model(ModelConfig::defaults(Pathway::kSpectrogram, 6), LabelSet::shemo6());
  auto p = random_patches(16, 1, 2, 4);
  std::copy(p.values.begin(), p.values.begin() + 256, p.values.begin() + 256);
  Graph<float> g;
  ForwardContext<float> ctx(g, m);
  const auto v = patch_embed(ctx, p).value();
  EXPECT_FALSE(same_bits(v.subspan(64, 64), v.subspan(128, 64)));
}

TEST(Encode, SingleTokenAttendsToItself) {
  auto m = init_model(testing::tiny_spec_config(), testing::labels_of(3));
  Graph<float> g;
  ForwardContext<float> ctx(g, m);
  std::vector<BasicTensor<float>> probe;
  ctx.attention_probe = &probe;
  encode(ctx, g.constant(testing::random_tensor<float>({1, 8}, 5, 3.0)));
  ASSERT_EQ(probe.size(), 2u);  // one layer, two heads
  for (const auto& p : probe) {
    ASSERT_EQ(p.numel(), 1u);
    EXPECT_EQ(p[0], 1.0f);
  }
}

TEST(Encode, IdenticalTokensAttendUniformly) {
  Graph<double> g;
  // Packed q|k|v rows, all tokens equal.
  std::vector<double> row = {0.3, -1.2, 0.5, 2.0, 0.1, 0.7, -0.4, 1.1, 0.9, -0.6, 0.2, 0.8};
  std::vector<double> qkv;
  for (int t = 0; t < 5; ++t) qkv.insert(qkv.end(), row.begin(), row.end());
  std::vector<BasicTensor<double>> probe;
  auto out = multi_head_attention(g.constant({5, 12}, qkv), 2, &probe);
  for (const auto& p : probe) {
    for (double v : p.data()) EXPECT_NEAR(v, 0.2, 1e-15);
  }
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.value()[t * 4 + j], row[8 + j], 1e-12);
  }
}

TEST(Encode, AttentionRowsSumToOne) {
  for (Pathway pw : {Pathway::kRawAudio, Pathway::kSpectrogram}) {
    auto m = init_model(ModelConfig::defaults(pw, 6), LabelSet::shemo6());
    Graph<float> g;
    ForwardContext<float> ctx(g, m);
    std::vector<BasicTensor<float>> probe;
    ctx.attention_probe = &probe;
    if (pw == Pathway::kRawAudio) {
      forward(ctx, ModelInput{random_wave(80000, 6)});
    } else {
      forward(ctx, ModelInput{random_patches(16, 12, 50, 6)});
    }
    ASSERT_EQ(probe.size(), 8u);
    for (const auto& p : probe) {
      const std::size_t n = p.dim(0);
      for (std::size_t r = 0; r < n; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < n; ++c) s += p[r * n + c];
        ASSERT_NEAR(s, 1.0, 1e-6);
      }
    }
  }
}

TEST(Encode, ResidualIdentity) {
  auto m = init_model(ModelConfig::defaults(Pathway::kSpectrogram, 6), LabelSet::shemo6());
  for (auto& [name, t] : m.params) {
    if (name.ends_with("attn.out.weight") || name.ends_with("attn.out.bias") || name.ends_with("ffn.out.weight") ||
        name.ends_with("ffn.out.bias")) {
      std::fill(t.data().begin(), t.data().end(), 0.0f);
    }
  }
  Graph<float> g;
  ForwardContext<float> ctx(g, m);
  auto x = g.constant(testing::random_tensor<float>({20, 64}, 7));
  EXPECT_TRUE(same_bits(encode(ctx, x).value(), x.value()));
}

TEST(Classify, HeadBiasOnly) {
  auto m = init_model(testing::tiny_spec_config(), testing::labels_of(3));
  std::fill(m.param("head.weight").data().begin(), m.param("head.weight").data().end(), 0.0f);
  m.param("head.bias") = BasicTensor<float>({3}, std::vector<float>{0.5f, -1.0f, 2.0f});
  const auto logits = predict_logits(m, ModelInput{random_patches(4, 2, 3, 8)});
  EXPECT_EQ(logits, (std::vector<float>{0.5f, -1.0f, 2.0f}));
}

TEST(Classify, MeanPoolIsLinear) {
  auto m = init_model(testing::tiny_raw_config(6), LabelSet::shemo6());
  Graph<double> g;
  auto md = m.cast<double>();
  ForwardContext<double> ctx(g, md);
  auto u = testing::random_tensor<double>({1, 8}, 9), v = testing::random_tensor<double>({1, 8}, 10);
  auto pooled = classify(ctx, concat_rows<double>({g.constant(u), g.constant(v)}));
  BasicTensor<double> mid({1, 8});
  for (std::size_t i = 0; i < 8; ++i) mid[i] = (u[i] + v[i]) / 2;
  auto direct = linear(ctx, g.constant(mid), "head");
  ASSERT_EQ(pooled.numel(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(pooled.value()[i], direct.value()[i], 1e-14);
}

TEST(Forward, RawDefaultsOnFiveSeconds) {
  const auto m = init_model(ModelConfig::defaults(Pathway::kRawAudio, 6), LabelSet::shemo6());
  const ModelInput in{random_wave(80000, 11)};
  const auto a = predict_logits(m, in);
  const auto b = predict_logits(m, in);
  ASSERT_EQ(a.size(), 6u);
  for (float v : a) EXPECT_TRUE(std::isfinite(v));
  EXPECT_TRUE(same_bits(a, b));
}

TEST(Forward, InputMustMatchPathway) {
  const auto m = init_model(ModelConfig::defaults(Pathway::kRawAudio, 6), LabelSet::shemo6());
  EXPECT_THROW(predict_logits(m, ModelInput{random_patches(16, 1, 1, 1)}), Error);
}

TEST(Forward, TrainModeWithoutDropoutMatchesEval) {
  auto cfg = ModelConfig::defaults(Pathway::kSpectrogram, 6);
  cfg.dropout = 0.0;
  auto m = init_model(cfg, LabelSet::shemo6());
  const ModelInput in{random_patches(16, 12, 50, 12)};
  Graph<float> g;
  ForwardContext<float> ctx(g, m, true, 123);
  auto train_logits = forward(ctx, in);
  EXPECT_TRUE(same_bits(train_logits.value(), predict_logits(m, in)));
}

TEST(Forward, LabelPermutationPermutesLogits) {
  auto m = init_model(ModelConfig::defaults(Pathway::kSpectrogram, 6), LabelSet::shemo6());
  const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  auto p = m;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < 6; ++i) {
    names.push_back(m.labels.name(perm[i]));
    for (std::size_t j = 0; j < 64; ++j) p.param("head.weight")[i * 64 + j] = m.param("head.weight")[perm[i] * 64 + j];
    p.param("head.bias")[i] = m.param("head.bias")[perm[i]];
  }
  p.labels = LabelSet(names);
  const ModelInput in{random_patches(16, 12, 50, 13)};
  const auto a = predict_logits(m, in), b = predict_logits(p, in);
  for (std::size_t i = 0; i < 6; ++i) {
    // Equal up to GEMM rounding: the BLAS kernel may block rows differently.
    EXPECT_NEAR(b[i], a[perm[i]], 1e-6);
    EXPECT_EQ(p.labels.index_of(m.labels.name(perm[i])), i);
  }
}

TEST(Forward, EveryParameterReceivesGradient) {
  for (Pathway pw : {Pathway::kRawAudio, Pathway::kSpectrogram}) {
    auto m = init_model(ModelConfig::defaults(pw, 6), LabelSet::shemo6());
    const ModelInput in = pw == Pathway::kRawAudio ? ModelInput{random_wave(80000, 14)}
                                                   : ModelInput{random_patches(16, 12, 50, 14)};
    Graph<float> g;
    ForwardContext<float> ctx(g, m, true, 5);
    g.compute_gradients(softmax_cross_entropy(forward(ctx, in), 2));
    for (const auto& [name, t] : m.params) {
      const auto grad = g.gradient_for(t);
      ASSERT_EQ(grad.size(), t.numel()) << name;
      EXPECT_TRUE(std::any_of(grad.begin(), grad.end(), [](float v) { return v != 0.0f; }))
          << pathway_name(pw) << " " << name;
    }
  }
}

TEST(Forward, FullModelGradientCheck) {
  {
    auto m = init_model<double>(testing::tiny_raw_config(), testing::labels_of(3));
    const auto r = model_grad_check<double>(m, ModelInput{random_wave(400, 15)}, 1, 1e-3);
    EXPECT_GE(r.fraction_within(1e-2), 0.99) << "raw max " << r.max_rel_error;
  }
  {
    auto m = init_model<double>(testing::tiny_spec_config(), testing::labels_of(3));
    const auto r = model_grad_check<double>(m, ModelInput{random_patches(4, 2, 3, 16)}, 2, 1e-3);
    EXPECT_GE(r.fraction_within(1e-2), 0.99) << "spectrogram max " << r.max_rel_error;
  }
}

}  // namespace
}  // namespace serforge
