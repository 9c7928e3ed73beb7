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
#include <random>
#include <vector>

#include "serforge/evaluation.hpp"
#include "test_util.hpp"

namespace serforge {
namespace {

using testing::labels_of;

ConfusionMatrix from_rows(std::vector<std::vector<std::uint64_t>> rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t p = 0; p < rows.size(); ++p) cm.at(t, p) = rows[t][p];
  }
  return cm;
}

TEST(Confusion, CountsTruthByPrediction) {
  const std::vector<std::size_t> preds = {0, 1, 1, 2, 0};
  const std::vector<std::size_t> truth = {0, 1, 2, 2, 1};
  const auto cm = confusion(preds, truth, 3);
  EXPECT_EQ(cm, from_rows({{1, 0, 0}, {1, 1, 0}, {0, 1, 1}}));
  EXPECT_EQ(cm.total(), 5u);
}

TEST(Confusion, Errors) {
  const std::vector<std::size_t> a = {0, 1}, b = {0};
  try {
    confusion(a, b, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShape);
  }
  const std::vector<std::size_t> c = {0, 5};
  EXPECT_THROW(confusion(a, c, 2), Error);
}

TEST(Metrics, TwoClassExample) {
  const auto m = compute_metrics(from_rows({{2, 0}, {1, 1}}));
  EXPECT_DOUBLE_EQ(m.accuracy, 0.75);
  EXPECT_DOUBLE_EQ(m.balanced_accuracy, 0.75);
  // Class 0: p 2/3, r 1, f1 0.8. Class 1: p 1, r 0.5, f1 2/3.
  EXPECT_NEAR(m.macro_f1, 0.7333333333, 1e-9);
  EXPECT_DOUBLE_EQ(m.per_class[0].precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.per_class[1].recall, 0.5);
  EXPECT_EQ(m.per_class[0].support, 2u);
  EXPECT_EQ(m.n_examples, 4u);
}

TEST(Metrics, PerfectDiagonal) {
  const auto m = compute_metrics(from_rows({{3, 0, 0}, {0, 5, 0}, {0, 0, 1}}));
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.balanced_accuracy, 1.0);
  EXPECT_EQ(m.macro_f1, 1.0);
}

TEST(Metrics, ZeroSupportClassIsExcludedFromMacroAverages) {
  const auto m = compute_metrics(from_rows({{2, 0, 0}, {0, 2, 0}, {0, 0, 0}}));
  EXPECT_EQ(m.per_class[2].support, 0u);
  EXPECT_EQ(m.per_class[2].recall, 0.0);
  EXPECT_EQ(m.balanced_accuracy, 1.0);
  EXPECT_EQ(m.macro_f1, 1.0);
  // A zero-support class that is still predicted has precision 0 but no recall.
  const auto p = compute_metrics(from_rows({{1, 0, 1}, {0, 2, 0}, {0, 0, 0}}));
  EXPECT_EQ(p.per_class[2].precision, 0.0);
  EXPECT_DOUBLE_EQ(p.balanced_accuracy, 0.75);
}

TEST(Metrics, AccuracyIsSupportWeightedRecall) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    ConfusionMatrix cm(6);
    for (auto& c : cm.counts) c = rng() % 20;
    const auto m = compute_metrics(cm);
    double weighted = 0.0;
    for (const auto& pc : m.per_class) weighted += pc.recall * static_cast<double>(pc.support);
    EXPECT_NEAR(m.accuracy, weighted / static_cast<double>(m.n_examples), 1e-12);
    EXPECT_GE(m.macro_f1, 0.0);
    EXPECT_LE(m.macro_f1, 1.0);
  }
}

TEST(Metrics, EmptyEvaluationThrows) {
  try {
    compute_metrics(ConfusionMatrix(4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kEmptyEval);
  }
}

TEST(Metrics, JsonAndTable) {
  const auto labels = labels_of(2);
  const auto cm = from_rows({{2, 0}, {1, 1}});
  const auto j = metrics_json(compute_metrics(cm), labels);
  EXPECT_DOUBLE_EQ(j.at("accuracy").get<double>(), 0.75);
  EXPECT_EQ(j.at("per_class").at(labels.name(1)).at("support").get<int>(), 2);
  const auto table = confusion_table(cm, labels);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 3);
}

TEST(Evaluate, DeterministicAndConsistent) {
  const auto cfg = testing::tiny_raw_config(3);
  const auto model = init_model(cfg, labels_of(3));
  std::vector<ModelInput> inputs;
  std::vector<std::size_t> truth;
  for (std::size_t i = 0; i < 12; ++i) {
    inputs.emplace_back(testing::random_wave(400, 100 + i));
    truth.push_back(i % 3);
  }
  const auto a = evaluate(model, inputs, truth);
  const auto b = evaluate(model, inputs, truth);
  EXPECT_EQ(a.confusion, b.confusion);
  EXPECT_EQ(a.metrics.accuracy, b.metrics.accuracy);
  EXPECT_EQ(a.confusion.total(), 12u);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto pred = argmax<float>(predict_logits(model, inputs[i]));
    EXPECT_GE(a.confusion.at(truth[i], pred), 1u);
  }
  EXPECT_THROW(evaluate(model, std::span<const ModelInput>{}, std::span<const std::size_t>{}), Error);
}

}  // namespace
}  // namespace serforge
