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

#include <cmath>
#include <vector>

#include "op_checks.hpp"
#include "serforge/autodiff.hpp"
#include "serforge/grad_check.hpp"

namespace serforge {
namespace {

using testing::random_tensor;

std::vector<double> values(const Var<double>& v) { return {v.value().begin(), v.value().end()}; }

TEST(Autodiff, MatmulExamples) {
  Graph<double> g;
  auto eye = g.constant({2, 2}, {1, 0, 0, 1});
  auto x = g.constant({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(values(matmul(eye, x)), values(x));
  auto a = g.constant({2, 2}, {1, 2, 3, 4});
  auto ones = g.constant({2, 1}, {1, 1});
  auto y = matmul(a, ones);
  EXPECT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_EQ(values(y), (std::vector<double>{3, 7}));
  EXPECT_THROW(matmul(a, g.constant({3, 1}, {1, 1, 1})), Error);
}

TEST(Autodiff, LayerNormExamples) {
  Graph<double> g;
  auto gain = g.constant({2}, {1, 1});
  auto bias = g.constant({2}, {0, 0});
  auto c = layer_norm(g.constant({1, 2}, {3, 3}), gain, bias);
  EXPECT_EQ(values(c), (std::vector<double>{0, 0}));
  auto u = layer_norm(g.constant({1, 2}, {-1, 1}), gain, bias, 0.0);
  EXPECT_NEAR(u.value()[0], -1.0, 1e-12);
  EXPECT_NEAR(u.value()[1], 1.0, 1e-12);

  auto x = random_tensor<double>({1, 16}, 3);
  auto gain16 = g.constant(BasicTensor<double>({16}, 1.0));
  auto bias16 = g.constant(BasicTensor<double>({16}, 0.25));
  auto y = layer_norm(g.constant(x), gain16, bias16);
  double mean = 0;
  for (double v : y.value()) mean += v;
  EXPECT_NEAR(mean / 16, 0.25, 1e-12);
}

TEST(Autodiff, GeluExamples) {
  Graph<double> g;
  auto y = gelu(g.constant({3}, {0.0, 10.0, -1.0}));
  EXPECT_EQ(y.value()[0], 0.0);
  EXPECT_GE(y.value()[1], 9.999);
  EXPECT_LE(y.value()[1], 10.0);
  EXPECT_NEAR(y.value()[2], -0.1588, 5e-5);

  Graph<float> gf;
  auto yf = gelu(gf.constant({4}, {0.0f, 10.0f, -1.0f, -30.0f}));
  EXPECT_EQ(yf.value()[0], 0.0f);
  EXPECT_NEAR(yf.value()[2], -0.1588f, 1e-4f);
  EXPECT_TRUE(std::isfinite(yf.value()[3]));
}

TEST(Autodiff, SoftmaxExamples) {
  for (auto [in, out] : std::vector<std::pair<std::vector<double>, std::vector<double>>>{
           {{0, 0}, {0.5, 0.5}}, {{1000, 1000}, {0.5, 0.5}}, {{0, std::log(3.0)}, {0.25, 0.75}}}) {
    Graph<double> g;
    auto y = softmax(g.constant({1, 2}, in));
    EXPECT_NEAR(y.value()[0], out[0], 1e-12);
    EXPECT_NEAR(y.value()[1], out[1], 1e-12);
  }
  Graph<float> g;
  auto y = softmax(g.constant({1, 2}, {1000.0f, 1000.0f}));
  EXPECT_FLOAT_EQ(y.value()[0], 0.5f);
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
  Graph<float> g;
  auto x = random_tensor<float>({7, 37}, 5, 10.0);
  auto y = softmax(g.constant(x));
  for (std::size_t r = 0; r < 7; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 37; ++j) {
      const float p = y.value()[r * 37 + j];
      EXPECT_GE(p, 0.0f);
      EXPECT_LE(p, 1.0f);
      s += p;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Autodiff, Conv1dExamples) {
  Graph<double> g;
  auto x = g.constant(random_tensor<double>({2, 7}, 6));
  auto w = g.constant({2, 2, 1}, {1, 0, 0, 1});
  EXPECT_EQ(values(conv1d(x, w, 1)), values(x));
  auto y = conv1d(g.constant(BasicTensor<double>({1, 10}, 1.0)), g.constant(BasicTensor<double>({1, 1, 3}, 1.0)), 2);
  EXPECT_EQ(y.shape(), (Shape{1, 4}));
  try {
    conv1d(g.constant(BasicTensor<double>({1, 2}, 1.0)), g.constant(BasicTensor<double>({1, 1, 3}, 1.0)), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kTooShort);
  }
}

TEST(Autodiff, TimeMajorConvMatchesChannelMajor) {
  for (std::size_t stride : {1u, 2u, 3u, 5u}) {
    Graph<double> g;
    auto xt = random_tensor<double>({23, 3}, 7);
    auto w = g.constant(random_tensor<double>({4, 3, 5}, 8));
    auto a = conv1d_time_major(g.constant(xt), w, stride);
    auto b = transpose(conv1d(transpose(g.constant(xt)), w, stride));
    ASSERT_EQ(a.shape(), b.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.value()[i], b.value()[i], 1e-12);
  }
}

TEST(Autodiff, BackwardBasics) {
  BasicTensor<double> x({3}, std::vector<double>{1, -2, 0.5});
  x.set_requires_grad(true);
  {
    Graph<double> g;
    g.backward(sum(g.parameter(x)));
  }
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 1, 1}));
  x.clear_grad();
  {
    Graph<double> g;
    auto v = g.parameter(x);
    g.backward(sum(mul(v, v)));
  }
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, -4, 1}));
  // A second backward accumulates.
  {
    Graph<double> g;
    auto v = g.parameter(x);
    g.backward(sum(mul(v, v)));
  }
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{4, -8, 2}));
}

TEST(Autodiff, NonScalarLoss) {
  Graph<double> g;
  BasicTensor<double> x({2}, 1.0);
  x.set_requires_grad(true);
  try {
    g.backward(g.parameter(x));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNotScalar);
  }
}

TEST(Autodiff, SharedNodeGradientsAccumulate) {
  // y = x * x + x, where x feeds three uses.
  BasicTensor<double> x({1}, 3.0);
  x.set_requires_grad(true);
  Graph<double> g;
  auto v = g.parameter(x);
  g.backward(sum(add(mul(v, v), v)));
  EXPECT_EQ(x.grad()[0], 7.0);
}

TEST(GradCheck, LinearMapIsExact) {
  const double err = grad_check<double>(
      [](Graph<double>& g, std::span<const Var<double>> v) {
        return sum(matmul(v[0], g.constant(random_tensor<double>({4, 1}, 1))));
      },
      {random_tensor<double>({2, 4}, 2)}, 1e-3);
  EXPECT_LE(err, 1e-6);
}

TEST(GradCheck, GeluComposition) {
  const double err = grad_check<double>(
      [](Graph<double>&, std::span<const Var<double>> v) { return sum(gelu(mul(gelu(v[0]), v[0]))); },
      {random_tensor<double>({6}, 3, 1.5)}, 1e-3);
  EXPECT_LE(err, 1e-3);
}

// gelu with its backward rule negated.
Var<double> broken_gelu(const Var<double>& x) {
  auto y = gelu(x);
  auto yv = y.value();
  return x.graph()->emit(x.shape(), {yv.begin(), yv.end()}, {x}, [x](Graph<double>& g, std::size_t self) {
    const auto& d = g.grad(self);
    auto& gx = g.grad(x.id());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double v = x.value()[i];
      const double t = std::tanh(0.7978845608028654 * (v + 0.044715 * v * v * v));
      const double du = 0.7978845608028654 * (1 + 3 * 0.044715 * v * v);
      gx[i] -= d[i] * (0.5 * (1 + t) + 0.5 * v * (1 - t * t) * du);
    }
  });
}

TEST(GradCheck, SignFlipIsDetected) {
  const double err = grad_check<double>(
      [](Graph<double>&, std::span<const Var<double>> v) { return sum(broken_gelu(v[0])); },
      {BasicTensor<double>({3}, std::vector<double>{0.5, 1.0, 2.0})}, 1e-3);
  EXPECT_NEAR(err, 2.0, 1e-3);
}

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  auto c = testing::op_checks().at(GetParam());
  const auto report = grad_check_report(c.f, c.inputs, 1e-3);
  EXPECT_GE(report.fraction_within(c.threshold), c.required_within)
      << c.name << ": max relative error " << report.max_rel_error;
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range<std::size_t>(0, testing::op_checks().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           return testing::op_checks().at(info.param).name;
                         });

}  // namespace
}  // namespace serforge
