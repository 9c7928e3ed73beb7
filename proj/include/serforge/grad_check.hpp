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

// Central-difference gradient checker.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "serforge/autodiff.hpp"
#include "serforge/model.hpp"

namespace serforge {

struct GradCheckReport {
  double max_rel_error = 0.0;
  // One entry per input element, in input order.
  std::vector<double> rel_errors;

  // Fraction of entries whose relative error is at most `threshold`.
  double fraction_within(double threshold) const {
    if (rel_errors.empty()) return 1.0;
    auto ok = std::count_if(rel_errors.begin(), rel_errors.end(), [&](double e) { return e <= threshold; });
    return static_cast<double>(ok) / static_cast<double>(rel_errors.size());
  }
};

// The function receives a fresh graph and one parameter leaf per input and
// must return a scalar.
template <typename T>
using ScalarFunction = std::function<Var<T>(Graph<T>&, std::span<const Var<T>>)>;

template <typename T>
GradCheckReport grad_check_report(const ScalarFunction<T>& f, std::vector<BasicTensor<T>> inputs, T eps) {
  auto evaluate = [&](std::vector<BasicTensor<T>>& xs) {
    Graph<T> g;
    std::vector<Var<T>> vars;
    for (auto& x : xs) vars.push_back(g.parameter(x));
    return static_cast<double>(f(g, vars).item());
  };

  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.clear_grad();
  }
  {
    Graph<T> g;
    std::vector<Var<T>> vars;
    for (auto& x : inputs) vars.push_back(g.parameter(x));
    g.backward(f(g, vars));
  }

  GradCheckReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<T> analytic(inputs[i].numel(), T(0));
    if (inputs[i].has_grad()) std::copy(inputs[i].grad().begin(), inputs[i].grad().end(), analytic.begin());
    for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
      const T saved = inputs[i][j];
      inputs[i][j] = saved + eps;
      const double up = evaluate(inputs);
      inputs[i][j] = saved - eps;
      const double down = evaluate(inputs);
      inputs[i][j] = saved;
      const double numeric = (up - down) / (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[j]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      report.rel_errors.push_back(err);
      report.max_rel_error = std::max(report.max_rel_error, err);
    }
  }
  return report;
}

// Max over all input elements of |analytic - central difference| /
// max(|analytic|, |central difference|, 1e-8).
template <typename T>
double grad_check(const ScalarFunction<T>& f, std::vector<BasicTensor<T>> inputs, T eps) {
  return grad_check_report(f, std::move(inputs), eps).max_rel_error;
}

// Gradient check of a full model: cross-entropy of one eval-mode forward
// pass, differentiated w.r.t. every parameter entry.
template <typename T>
GradCheckReport model_grad_check(BasicEmotionModel<T> model, const ModelInput& input, std::size_t label, T eps) {
  auto loss_of = [&](BasicEmotionModel<T>& m, bool grads) {
    Graph<T> g;
    ForwardContext<T> ctx(g, m, false);
    Var<T> loss = softmax_cross_entropy(forward(ctx, input), label);
    if (grads) g.backward(loss);
    return static_cast<double>(loss.item());
  };
  for (auto& [name, p] : model.params) {
    p.set_requires_grad(true);
    p.clear_grad();
  }
  loss_of(model, true);
  GradCheckReport report;
  for (auto& [name, p] : model.params) {
    std::vector<T> analytic(p.numel(), T(0));
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    for (std::size_t j = 0; j < p.numel(); ++j) {
      const T saved = p[j];
      p[j] = saved + eps;
      const double up = loss_of(model, false);
      p[j] = saved - eps;
      const double down = loss_of(model, false);
      p[j] = saved;
      const double numeric = (up - down) / (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[j]);
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      report.rel_errors.push_back(err);
      report.max_rel_error = std::max(report.max_rel_error, err);
    }
  }
  return report;
}

}  // namespace serforge
