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

// Confusion matrices and the metrics derived from them: accuracy, balanced
// accuracy (mean recall over supported classes) and macro-F1.
//
// Zero denominators yield 0 for precision, recall and F1. Classes without
// support are left out of the balanced-accuracy and macro-F1 means.

#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "serforge/error.hpp"
#include "serforge/labels.hpp"
#include "serforge/model.hpp"
#include "serforge/runtime.hpp"

namespace serforge {

using Json = nlohmann::json;

// counts[t * n + p]: examples of true class t predicted as p.
struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t n = 0) : n_classes(n), counts(n * n, 0) {}

  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * n_classes + pred]; }
  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * n_classes + pred]; }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }

  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(std::span<const std::size_t> preds, std::span<const std::size_t> truths,
                                 std::size_t n_classes) {
  if (preds.size() != truths.size()) {
    fail(ErrorKind::kShape, std::to_string(preds.size()) + " predictions for " + std::to_string(truths.size()) +
                                " labels");
  }
  ConfusionMatrix cm(n_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= n_classes || truths[i] >= n_classes) {
      fail(ErrorKind::kLabel, "class index out of range at position " + std::to_string(i));
    }
    ++cm.at(truths[i], preds[i]);
  }
  return cm;
}

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
};

struct Metrics {
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
  std::uint64_t n_examples = 0;
};

inline Metrics compute_metrics(const ConfusionMatrix& cm) {
  const std::size_t n = cm.n_classes;
  const std::uint64_t total = cm.total();
  if (total == 0) fail(ErrorKind::kEmptyEval, "confusion matrix is empty");
  Metrics m;
  m.n_examples = total;
  m.per_class.resize(n);
  std::uint64_t trace = 0;
  double recall_sum = 0.0, f1_sum = 0.0;
  std::size_t supported = 0;
  for (std::size_t c = 0; c < n; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t k = 0; k < n; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const auto tp = cm.at(c, c);
    trace += tp;
    auto& pc = m.per_class[c];
    pc.support = row;
    pc.recall = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    pc.precision = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    pc.f1 = pc.precision + pc.recall > 0 ? 2.0 * pc.precision * pc.recall / (pc.precision + pc.recall) : 0.0;
    if (row > 0) {
      ++supported;
      recall_sum += pc.recall;
      f1_sum += pc.f1;
    }
  }
  m.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  m.balanced_accuracy = recall_sum / static_cast<double>(supported);
  m.macro_f1 = f1_sum / static_cast<double>(supported);
  return m;
}

inline Json metrics_json(const Metrics& m, const LabelSet& labels) {
  Json per = Json::object();
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    const auto& pc = m.per_class[c];
    per[labels.name(c)] = {{"precision", pc.precision}, {"recall", pc.recall}, {"f1", pc.f1}, {"support", pc.support}};
  }
  return Json{{"accuracy", m.accuracy},
              {"balanced_accuracy", m.balanced_accuracy},
              {"macro_f1", m.macro_f1},
              {"per_class", per},
              {"n_examples", m.n_examples}};
}

// Aligned plain-text table, rows = truth, columns = prediction.
inline std::string confusion_table(const ConfusionMatrix& cm, const LabelSet& labels) {
  std::size_t w = 5;
  for (const auto& name : labels.names()) w = std::max(w, name.size());
  for (auto c : cm.counts) w = std::max(w, std::to_string(c).size());
  auto pad = [&](const std::string& s) { return std::string(w - std::min(w, s.size()), ' ') + s; };
  std::ostringstream out;
  out << pad("true\\pred");
  for (const auto& name : labels.names()) out << "  " << pad(name);
  out << '\n';
  for (std::size_t t = 0; t < cm.n_classes; ++t) {
    out << pad(labels.name(t));
    for (std::size_t p = 0; p < cm.n_classes; ++p) out << "  " << pad(std::to_string(cm.at(t, p)));
    out << '\n';
  }
  return out.str();
}

struct Evaluation {
  ConfusionMatrix confusion;
  Metrics metrics;
};

// Eval-mode argmax prediction for every input; the confusion matrix is
// reduced in input order.
inline Evaluation evaluate(const EmotionModel& model, std::span<const ModelInput> inputs,
                           std::span<const std::size_t> labels) {
  if (inputs.size() != labels.size()) fail(ErrorKind::kShape, "input and label counts differ");
  if (inputs.empty()) fail(ErrorKind::kEmptyEval, "nothing to evaluate");
  std::vector<std::size_t> preds(inputs.size());
  parallel_for(inputs.size(), [&](std::size_t i) { preds[i] = argmax<float>(predict_logits(model, inputs[i])); });
  Evaluation ev{confusion(preds, labels, model.config.n_classes), {}};
  ev.metrics = compute_metrics(ev.confusion);
  return ev;
}

}  // namespace serforge
