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

// Cross-entropy fine-tuning with Adam, best-on-validation model selection,
// early stopping, and the classification-head swap used for transfer.
//
// A step computes each example's gradient on its own graph (optionally on
// several threads), then sums them in batch order, so the result does not
// depend on the thread count.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "serforge/autodiff.hpp"
#include "serforge/checkpoint.hpp"
#include "serforge/error.hpp"
#include "serforge/model.hpp"
#include "serforge/runtime.hpp"

namespace serforge {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  std::size_t early_stop_patience = 5;  // 0 disables early stopping
  bool class_weights = false;           // inverse-frequency loss weights

  void validate() const {
    auto bad = [](const std::string& msg) { fail(ErrorKind::kConfig, msg); };
    if (epochs < 1) bad("train.epochs must be >= 1");
    if (batch_size < 1) bad("train.batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) bad("train.learning_rate must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) bad("train.adam_beta1 must lie in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) bad("train.adam_beta2 must lie in [0, 1)");
    if (!(adam_eps > 0.0)) bad("train.adam_eps must be positive");
    if (!(weight_decay >= 0.0)) bad("train.weight_decay must be >= 0");
  }
};

inline Json to_json(const TrainConfig& c) {
  return Json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"weight_decay", c.weight_decay},
              {"seed", c.seed},
              {"early_stop_patience", c.early_stop_patience},
              {"class_weights", c.class_weights}};
}

inline void apply_json(const Json& j, TrainConfig& c, const std::string& where = "train") {
  using json_detail::read_field;
  json_detail::reject_unknown(j,
                              {"epochs", "batch_size", "learning_rate", "adam_beta1", "adam_beta2", "adam_eps",
                               "weight_decay", "seed", "early_stop_patience", "class_weights"},
                              where);
  read_field(j, "epochs", c.epochs, where);
  read_field(j, "batch_size", c.batch_size, where);
  read_field(j, "learning_rate", c.learning_rate, where);
  read_field(j, "adam_beta1", c.adam_beta1, where);
  read_field(j, "adam_beta2", c.adam_beta2, where);
  read_field(j, "adam_eps", c.adam_eps, where);
  read_field(j, "weight_decay", c.weight_decay, where);
  read_field(j, "seed", c.seed, where);
  read_field(j, "early_stop_patience", c.early_stop_patience, where);
  read_field(j, "class_weights", c.class_weights, where);
}

// A featurized, labelled example.
struct Example {
  ModelInput input;
  std::size_t label = 0;
};

// -ln softmax(logits)[label].
inline double cross_entropy(std::span<const float> logits, std::size_t label) {
  if (label >= logits.size()) {
    fail(ErrorKind::kLabel, "label index " + std::to_string(label) + " out of range for " +
                                std::to_string(logits.size()) + " classes");
  }
  double mx = logits[0];
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  double total = 0.0;
  for (float v : logits) total += std::exp(v - mx);
  return mx + std::log(total) - logits[label];
}

// Mean cross-entropy over a batch of logit rows.
inline double cross_entropy(std::span<const std::vector<float>> logits, std::span<const std::size_t> labels) {
  if (logits.size() != labels.size()) fail(ErrorKind::kShape, "logit and label counts differ");
  if (logits.empty()) fail(ErrorKind::kEmptySplit, "empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += cross_entropy(logits[i], labels[i]);
  return total / static_cast<double>(logits.size());
}

using GradientMap = std::map<std::string, std::vector<float>>;

struct AdamState {
  GradientMap m;
  GradientMap v;
};

// One bias-corrected Adam update at step t (t >= 1):
//   m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
inline void adam_step(ParameterMap<float>& params, const GradientMap& grads, AdamState& state, const TrainConfig& cfg,
                      std::size_t t) {
  if (t < 1) fail(ErrorKind::kConfig, "adam step index must be >= 1");
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const auto& g = git->second;
    auto x = p.data();
    if (g.size() != x.size()) fail(ErrorKind::kShape, "gradient for '" + name + "' has the wrong size");
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != x.size()) m.assign(x.size(), 0.0f);
    if (v.size() != x.size()) v.assign(x.size(), 0.0f);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      x[i] = static_cast<float>(x[i] - cfg.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + cfg.adam_eps));
    }
  }
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  EmotionModel model;  // parameters from the best validation epoch
  std::vector<EpochRecord> history;
  double best_val_accuracy = 0.0;
  std::size_t best_epoch = 0;
};

inline Json history_json(std::span<const EpochRecord> history) {
  Json out = Json::array();
  for (const auto& r : history) {
    out.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_accuracy", r.val_accuracy}});
  }
  return out;
}

namespace train_detail {

inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t dropout_seed(std::uint64_t seed, std::size_t epoch, std::size_t step, std::size_t example) {
  return mix(mix(mix(mix(seed) ^ epoch) ^ step) ^ example);
}

inline void check_labels(std::span<const Example> set, std::size_t n_classes, const char* which) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set[i].label >= n_classes) {
      fail(ErrorKind::kLabel, std::string(which) + " example " + std::to_string(i) + " has label index " +
                                  std::to_string(set[i].label) + " outside the model's " +
                                  std::to_string(n_classes) + " classes");
    }
  }
}

inline bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

}  // namespace train_detail

// Fraction of examples whose eval-mode argmax matches the label.
inline double accuracy(const EmotionModel& model, std::span<const Example> set) {
  if (set.empty()) fail(ErrorKind::kEmptySplit, "no examples to score");
  std::vector<char> hit(set.size());
  parallel_for(set.size(), [&](std::size_t i) {
    auto logits = predict_logits(model, set[i].input);
    hit[i] = argmax<float>(logits) == set[i].label;
  });
  return static_cast<double>(std::count(hit.begin(), hit.end(), 1)) / static_cast<double>(set.size());
}

using EpochCallback = std::function<void(const EpochRecord&)>;

inline TrainResult train(EmotionModel model, std::span<const Example> train_set, std::span<const Example> val_set,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  model.check_consistency();
  if (train_set.empty()) fail(ErrorKind::kEmptySplit, "training split is empty");
  if (val_set.empty()) fail(ErrorKind::kEmptySplit, "validation split is empty");
  const std::size_t n_classes = model.config.n_classes;
  train_detail::check_labels(train_set, n_classes, "training");
  train_detail::check_labels(val_set, n_classes, "validation");

  std::vector<double> class_weight(n_classes, 1.0);
  if (cfg.class_weights) {
    std::vector<std::size_t> counts(n_classes, 0);
    for (const auto& ex : train_set) ++counts[ex.label];
    const auto present = static_cast<double>(std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }));
    for (std::size_t c = 0; c < n_classes; ++c) {
      if (counts[c] > 0) class_weight[c] = static_cast<double>(train_set.size()) / (present * counts[c]);
    }
  }

  for (auto& [name, p] : model.params) p.set_requires_grad(true);
  TrainResult result{model, {}, -1.0, 0};
  AdamState adam;
  std::size_t step = 0, since_best = 0;
  std::vector<std::size_t> order(train_set.size());
  const std::size_t threads = worker_threads();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(cfg.seed + epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      ++step;
      const std::size_t batch = std::min(cfg.batch_size, order.size() - start);
      std::vector<GradientMap> per_example(batch);
      std::vector<double> losses(batch);
      parallel_for(
          batch,
          [&](std::size_t b) {
            const std::size_t idx = order[start + b];
            const Example& ex = train_set[idx];
            Graph<float> g;
            ForwardContext<float> ctx(g, model, true, train_detail::dropout_seed(cfg.seed, epoch, step, idx));
            Var<float> logits = forward(ctx, ex.input);
            Var<float> loss = softmax_cross_entropy(logits, ex.label, static_cast<float>(class_weight[ex.label]));
            g.compute_gradients(loss);
            losses[b] = cross_entropy(logits.value(), ex.label);
            for (auto& [name, p] : model.params) per_example[b].emplace(name, g.gradient_for(p));
          },
          threads);

      GradientMap grads;
      const float inv = 1.0f / static_cast<float>(batch);
      for (auto& [name, p] : model.params) {
        auto& acc = grads[name];
        acc.assign(p.numel(), 0.0f);
        for (std::size_t b = 0; b < batch; ++b) {
          const auto& gi = per_example[b][name];
          for (std::size_t j = 0; j < gi.size(); ++j) acc[j] += gi[j];
        }
        for (std::size_t j = 0; j < acc.size(); ++j) {
          acc[j] = acc[j] * inv + static_cast<float>(cfg.weight_decay) * p[j];
        }
        if (!train_detail::all_finite(acc)) {
          fail(ErrorKind::kNumerical, "non-finite gradient for '" + name + "' at epoch " + std::to_string(epoch) +
                                          ", step " + std::to_string(step));
        }
      }
      for (std::size_t b = 0; b < batch; ++b) {
        if (!std::isfinite(losses[b])) {
          fail(ErrorKind::kNumerical, "non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                          std::to_string(step));
        }
        loss_sum += losses[b];
      }
      adam_step(model.params, grads, adam, cfg, step);
    }
    for (const auto& [name, p] : model.params) {
      if (!p.all_finite()) {
        fail(ErrorKind::kNumerical, "parameter '" + name + "' became non-finite in epoch " + std::to_string(epoch));
      }
    }

    EpochRecord rec{epoch, loss_sum / static_cast<double>(train_set.size()), accuracy(model, val_set)};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = rec.val_accuracy;
      result.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (cfg.early_stop_patience > 0 && ++since_best >= cfg.early_stop_patience) {
      break;
    }
  }
  for (auto& [name, p] : result.model.params) p.clear_grad();
  return result;
}

// Replaces the classification head: every backbone tensor is copied
// bit-exactly, the head is re-drawn for the new label set (even when the
// labels are unchanged), and the swap is appended to the provenance.
inline Checkpoint head_swap(const Checkpoint& ckpt, const LabelSet& new_labels, std::uint64_t seed) {
  if (new_labels.empty()) fail(ErrorKind::kLabel, "new label set is empty");
  ckpt.model.check_consistency();
  Checkpoint out = ckpt;
  const std::string old_labels = ckpt.model.labels.joined();
  out.model.labels = new_labels;
  out.model.config.n_classes = new_labels.size();
  init_head(out.model, seed);
  out.provenance.push_back({"head_swap", new_labels.joined(), 0, Json{{"from_labels", old_labels}, {"seed", seed}}});
  out.model.check_consistency();
  return out;
}

inline Checkpoint head_swap(const Checkpoint& ckpt, const std::vector<std::string>& new_labels, std::uint64_t seed) {
  return head_swap(ckpt, LabelSet(new_labels), seed);
}

}  // namespace serforge
