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

// Tape-based reverse-mode differentiation over BasicTensor values.
//
// A Graph records every operation of one forward pass in creation order, so
// the node list is already topologically sorted and backward is a single
// reverse sweep. Parameters enter the graph as bound leaves: backward()
// accumulates into the bound tensor's grad buffer, compute_gradients() only
// fills the graph-local buffers (used by the trainer to reduce per-example
// gradients in a fixed order).
//
// Broadcasting is limited to add_bias over the last axis.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "serforge/blas.hpp"
#include "serforge/error.hpp"
#include "serforge/tensor.hpp"

namespace serforge {

template <typename T>
class Graph;

template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<T>* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Shape& shape() const { return graph_->shape(id_); }
  std::size_t numel() const { return graph_->value(id_).size(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::span<const T> value() const { return graph_->value(id_); }
  T item() const { return graph_->value(id_).at(0); }
  std::span<const T> grad() const { return graph_->grad_or_empty(id_); }

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf that never receives gradient.
  Var<T> constant(const BasicTensor<T>& t) { return leaf(t.shape(), t.storage(), false, nullptr); }
  Var<T> constant(Shape shape, std::vector<T> values) {
    return leaf(std::move(shape), std::move(values), false, nullptr);
  }

  // Leaf bound to a tensor; gradients flow to it when t.requires_grad().
  Var<T> parameter(BasicTensor<T>& t) { return leaf(t.shape(), t.storage(), t.requires_grad(), &t); }

  // Records a custom operation. `backward` reads grad(self) and accumulates
  // into grad(input) for each input that needs_grad().
  Var<T> emit(Shape shape, std::vector<T> values, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
    return emit(std::move(shape), std::move(values), std::vector<Var<T>>(inputs), std::move(backward));
  }

  Var<T> emit(Shape shape, std::vector<T> values, const std::vector<Var<T>>& inputs, BackwardFn backward) {
    bool needs = false;
    for (const auto& in : inputs) {
      if (in.graph() != this) fail(ErrorKind::kShape, "operands belong to different graphs");
      needs = needs || nodes_[in.id()].needs_grad;
    }
    Node node;
    node.shape = std::move(shape);
    node.value = std::move(values);
    node.needs_grad = needs;
    if (needs) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var<T>(this, nodes_.size() - 1);
  }

  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  const std::vector<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(const Var<T>& v) const { return nodes_[v.id()].needs_grad; }

  // Gradient buffer of a node, zero-filled on first access.
  std::vector<T>& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), T(0));
    return n.grad;
  }
  std::span<const T> grad_or_empty(std::size_t id) const { return nodes_[id].grad; }

  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss, filling graph-local gradients only.
  // Any previous graph-local gradients are discarded first.
  void compute_gradients(const Var<T>& loss) {
    if (loss.graph() != this) fail(ErrorKind::kShape, "loss belongs to a different graph");
    if (value(loss.id()).size() != 1) {
      fail(ErrorKind::kNotScalar, "loss has shape " + shape_string(shape(loss.id())));
    }
    for (auto& n : nodes_) n.grad.clear();
    grad(loss.id())[0] = T(1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  // compute_gradients, then add each bound leaf's gradient into its tensor.
  void backward(const Var<T>& loss) {
    compute_gradients(loss);
    for (auto& n : nodes_) {
      if (n.bound == nullptr || !n.needs_grad || n.grad.empty()) continue;
      auto& dst = n.bound->grad_buffer();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += n.grad[j];
    }
  }

  // Graph-local gradient reaching the leaf bound to `t` (empty when the
  // tensor was not bound or received nothing). Sums over repeated bindings.
  std::vector<T> gradient_for(const BasicTensor<T>& t) const {
    std::vector<T> out;
    for (const auto& n : nodes_) {
      if (n.bound != &t || n.grad.empty()) continue;
      if (out.empty()) out.assign(n.grad.size(), T(0));
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += n.grad[j];
    }
    return out;
  }

 private:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    BackwardFn backward;
    BasicTensor<T>* bound = nullptr;
    bool needs_grad = false;
  };

  Var<T> leaf(Shape shape, std::vector<T> values, bool needs, BasicTensor<T>* bound) {
    Node node;
    node.shape = std::move(shape);
    node.value = std::move(values);
    node.needs_grad = needs;
    node.bound = bound;
    nodes_.push_back(std::move(node));
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

namespace ad_detail {

template <typename T>
void require_same_graph(const Var<T>& a, const Var<T>& b) {
  if (a.graph() != b.graph()) fail(ErrorKind::kShape, "operands belong to different graphs");
}

template <typename T>
void require_rank2(const Var<T>& a, const char* op) {
  if (a.shape().size() != 2) {
    fail(ErrorKind::kShape, std::string(op) + " expects a matrix, got " + shape_string(a.shape()));
  }
}

template <typename T>
void accumulate(Graph<T>& g, const Var<T>& dst, std::span<const T> src) {
  if (!g.needs_grad(dst)) return;
  auto& d = g.grad(dst.id());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += src[i];
}

// Branch-free expf (Cody-Waite reduction, degree-6 polynomial) that GCC
// auto-vectorizes. Relative error is about 2e-7; exp_fast(0) == 1 exactly.
inline float exp_fast(float x) {
  x = x < -87.0f ? -87.0f : x;
  x = x > 88.0f ? 88.0f : x;
  // Round to nearest by adding and removing 1.5 * 2^23.
  const float n = (x * 1.44269504088896341f + 12582912.0f) - 12582912.0f;
  float r = x - n * 0.693359375f;
  r = r + n * 2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  const auto bits = static_cast<std::int32_t>((static_cast<std::int32_t>(n) + 127) << 23);
  return p * std::bit_cast<float>(bits);
}
inline double exp_fast(double x) { return std::exp(x); }

// Reductions with 16 independent partial sums so they vectorize without
// reassociation flags; the summation order is fixed, so results are
// deterministic.
template <typename T>
T sum_lanes(const T* x, std::size_t n) {
  constexpr std::size_t kLanes = 16;
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += x[i + l];
  T total = T(0);
  for (; i < n; ++i) total += x[i];
  for (std::size_t l = 0; l < kLanes; ++l) total += acc[l];
  return total;
}

template <typename T>
T dot_lanes(const T* x, const T* y, std::size_t n) {
  constexpr std::size_t kLanes = 16;
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += x[i + l] * y[i + l];
  T total = T(0);
  for (; i < n; ++i) total += x[i] * y[i];
  for (std::size_t l = 0; l < kLanes; ++l) total += acc[l];
  return total;
}

template <typename T>
T max_lanes(const T* x, std::size_t n) {
  constexpr std::size_t kLanes = 16;
  T acc[kLanes];
  for (std::size_t l = 0; l < kLanes; ++l) acc[l] = x[0];
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] = x[i + l] > acc[l] ? x[i + l] : acc[l];
  T mx = x[0];
  for (; i < n; ++i) mx = x[i] > mx ? x[i] : mx;
  for (std::size_t l = 0; l < kLanes; ++l) mx = acc[l] > mx ? acc[l] : mx;
  return mx;
}

// In-place softmax of one row.
template <typename T>
void softmax_row(T* row, std::size_t n) {
  const T mx = max_lanes(row, n);
  for (std::size_t j = 0; j < n; ++j) row[j] = exp_fast(row[j] - mx);
  const T inv = T(1) / sum_lanes(row, n);
  for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
}

inline float tanh_approx(float x) {
  // 1 - 2 / (e^{2x} + 1); saturates cleanly at both ends.
  return 1.0f - 2.0f / (exp_fast(2.0f * x) + 1.0f);
}
inline double tanh_approx(double x) { return std::tanh(x); }

}  // namespace ad_detail

// [m x k] . [k x n]
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  ad_detail::require_same_graph(a, b);
  ad_detail::require_rank2(a, "matmul");
  ad_detail::require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    fail(ErrorKind::kShape, "matmul " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  }
  std::vector<T> out(m * n);
  blas::gemm(false, false, m, n, k, T(1), a.value().data(), b.value().data(), T(0), out.data());
  return a.graph()->emit({m, n}, std::move(out), {a, b}, [a, b, m, n, k](Graph<T>& g, std::size_t self) {
    const T* dc = g.grad(self).data();
    if (g.needs_grad(a)) blas::gemm(false, true, m, k, n, T(1), dc, b.value().data(), T(1), g.grad(a.id()).data());
    if (g.needs_grad(b)) blas::gemm(true, false, k, n, m, T(1), a.value().data(), dc, T(1), g.grad(b.id()).data());
  });
}

// [m x k] . [n x k]^T, the layout of a linear layer with weights [out x in].
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  ad_detail::require_same_graph(a, b);
  ad_detail::require_rank2(a, "matmul_nt");
  ad_detail::require_rank2(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    fail(ErrorKind::kShape, "matmul_nt " + shape_string(a.shape()) + " by " + shape_string(b.shape()) + "^T");
  }
  std::vector<T> out(m * n);
  blas::gemm(false, true, m, n, k, T(1), a.value().data(), b.value().data(), T(0), out.data());
  return a.graph()->emit({m, n}, std::move(out), {a, b}, [a, b, m, n, k](Graph<T>& g, std::size_t self) {
    const T* dc = g.grad(self).data();
    if (g.needs_grad(a)) blas::gemm(false, false, m, k, n, T(1), dc, b.value().data(), T(1), g.grad(a.id()).data());
    if (g.needs_grad(b)) blas::gemm(true, false, n, k, m, T(1), dc, a.value().data(), T(1), g.grad(b.id()).data());
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  ad_detail::require_same_graph(a, b);
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kShape, "add " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  auto av = a.value(), bv = b.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return a.graph()->emit(a.shape(), std::move(out), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad(self);
    ad_detail::accumulate<T>(g, a, d);
    ad_detail::accumulate<T>(g, b, d);
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  ad_detail::require_same_graph(a, b);
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kShape, "mul " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  auto av = a.value(), bv = b.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.graph()->emit(a.shape(), std::move(out), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad(self);
    auto av = a.value(), bv = b.value();
    if (g.needs_grad(a)) {
      auto& ga = g.grad(a.id());
      for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i] * bv[i];
    }
    if (g.needs_grad(b)) {
      auto& gb = g.grad(b.id());
      for (std::size_t i = 0; i < d.size(); ++i) gb[i] += d[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  auto xv = x.value();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  return x.graph()->emit(x.shape(), std::move(out), {x}, [x, factor](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad(self);
    auto& gx = g.grad(x.id());
    for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i] * factor;
  });
}

// x[... x d] + bias[d], broadcast over every leading index.
template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& bias) {
  ad_detail::require_same_graph(x, bias);
  const std::size_t d = x.shape().back();
  if (bias.numel() != d) {
    fail(ErrorKind::kShape, "bias " + shape_string(bias.shape()) + " for input " + shape_string(x.shape()));
  }
  auto xv = x.value(), bv = bias.value();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + bv[i % d];
  return x.graph()->emit(x.shape(), std::move(out), {x, bias}, [x, bias, d](Graph<T>& g, std::size_t self) {
    const auto& dy = g.grad(self);
    ad_detail::accumulate<T>(g, x, dy);
    if (g.needs_grad(bias)) {
      auto& gb = g.grad(bias.id());
      for (std::size_t i = 0; i < dy.size(); ++i) gb[i % d] += dy[i];
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = T(0);
  for (T v : x.value()) acc += v;
  return x.graph()->emit({1}, {acc}, {x}, [x](Graph<T>& g, std::size_t self) {
    const T d = g.grad(self)[0];
    auto& gx = g.grad(x.id());
    for (auto& v : gx) v += d;
  });
}

// Mean over the rows of a matrix: [r x c] -> [1 x c].
template <typename T>
Var<T> mean_rows(const Var<T>& x) {
  ad_detail::require_rank2(x, "mean_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  auto xv = x.value();
  std::vector<T> out(c, T(0));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += xv[i * c + j];
  const T inv = T(1) / static_cast<T>(r);
  for (auto& v : out) v *= inv;
  return x.graph()->emit({1, c}, std::move(out), {x}, [x, r, c, inv](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad(self);
    auto& gx = g.grad(x.id());
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += d[j] * inv;
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    fail(ErrorKind::kShape, "cannot reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  std::vector<T> out(x.value().begin(), x.value().end());
  return x.graph()->emit(std::move(shape), std::move(out), {x}, [x](Graph<T>& g, std::size_t self) {
    ad_detail::accumulate<T>(g, x, g.grad(self));
  });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
  ad_detail::require_rank2(x, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  auto xv = x.value();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return x.graph()->emit({c, r}, std::move(out), {x}, [x, r, c](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad(self);
    auto& gx = g.grad(x.id());
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += d[j * r + i];
  });
}

// Columns [start, start + width) of a matrix.
template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t start, std::size_t width) {
  ad_detail::require_rank2(x, "slice_cols");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (width == 0 || start + width > c) fail(ErrorKind::kShape, "column slice out of range");
  auto xv = x.value();
  std::vector<T> out(r * width);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(xv.data() + i * c + start, width, out.data() + i * width);
  return x.graph()->emit({r, width}, std::move(out), {x}, [x, r, c, start, width](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad(self);
    auto& gx = g.grad(x.id());
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < width; ++j) gx[i * c + start + j] += d[i * width + j];
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) fail(ErrorKind::kShape, "concat_cols of nothing");
  const std::size_t r = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    ad_detail::require_rank2(p, "concat_cols");
    if (p.dim(0) != r) fail(ErrorKind::kShape, "concat_cols row mismatch");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<T> out(r * total);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto v = parts[p].value();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(v.data() + i * widths[p], widths[p], out.data() + i * total + offset);
    offset += widths[p];
  }
  return parts[0].graph()->emit({r, total}, std::move(out), parts,
                                [parts, widths, r, total](Graph<T>& g, std::size_t self) {
                                  const auto& d = g.grad(self);
                                  std::size_t offset = 0;
                                  for (std::size_t p = 0; p < parts.size(); ++p) {
                                    if (g.needs_grad(parts[p])) {
                                      auto& gp = g.grad(parts[p].id());
                                      for (std::size_t i = 0; i < r; ++i)
                                        for (std::size_t j = 0; j < widths[p]; ++j)
                                          gp[i * widths[p] + j] += d[i * total + offset + j];
                                    }
                                    offset += widths[p];
                                  }
                                });
}

// Rows [start, start + count) of a matrix.
template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t start, std::size_t count) {
  ad_detail::require_rank2(x, "slice_rows");
  const std::size_t c = x.dim(1);
  if (count == 0 || start + count > x.dim(0)) fail(ErrorKind::kShape, "row slice out of range");
  auto xv = x.value();
  std::vector<T> out(xv.begin() + static_cast<std::ptrdiff_t>(start * c),
                     xv.begin() + static_cast<std::ptrdiff_t>((start + count) * c));
  return x.graph()->emit({count, c}, std::move(out), {x}, [x, start, c](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad(self);
    auto& gx = g.grad(x.id());
    for (std::size_t i = 0; i < d.size(); ++i) gx[start * c + i] += d[i];
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) fail(ErrorKind::kShape, "concat_rows of nothing");
  const std::size_t c = parts[0].dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    ad_detail::require_rank2(p, "concat_rows");
    if (p.dim(1) != c) fail(ErrorKind::kShape, "concat_rows column mismatch");
    rows += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(rows * c);
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  return parts[0].graph()->emit({rows, c}, std::move(out), parts, [parts](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad(self);
    std::size_t offset = 0;
    for (const auto& p : parts) {
      if (g.needs_grad(p)) {
        auto& gp = g.grad(p.id());
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += d[offset + i];
      }
      offset += p.numel();
    }
  });
}

// Per-row (x - mean) / sqrt(var + eps) * gain + bias over the last axis.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  ad_detail::require_same_graph(x, gain);
  ad_detail::require_same_graph(x, bias);
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    fail(ErrorKind::kShape, "layer_norm parameters do not match last dim of " + shape_string(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  auto xv = x.value(), gv = gain.value(), bv = bias.value();
  std::vector<T> out(xv.size()), xhat(xv.size()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    rstd[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mean) * inv;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return x.graph()->emit(
      x.shape(), std::move(out), {x, gain, bias},
      [x, gain, bias, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Graph<T>& g, std::size_t self) {
        const auto& dy = g.grad(self);
        auto gv = gain.value();
        if (g.needs_grad(gain) || g.needs_grad(bias)) {
          std::vector<T> dg(d, T(0)), db(d, T(0));
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) {
              dg[j] += dy[r * d + j] * xhat[r * d + j];
              db[j] += dy[r * d + j];
            }
          ad_detail::accumulate<T>(g, gain, dg);
          ad_detail::accumulate<T>(g, bias, db);
        }
        if (!g.needs_grad(x)) return;
        auto& gx = g.grad(x.id());
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dh = T(0), mean_dh_h = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = dy[r * d + j] * gv[j];
            mean_dh += dh;
            mean_dh_h += dh * xhat[r * d + j];
          }
          mean_dh /= static_cast<T>(d);
          mean_dh_h /= static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = dy[r * d + j] * gv[j];
            gx[r * d + j] += rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
          }
        }
      });
}

// Tanh-approximated GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr T kC = static_cast<T>(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T kA = static_cast<T>(0.044715);
  auto xv = x.value();
  std::vector<T> out(xv.size()), th(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T v = xv[i];
    th[i] = ad_detail::tanh_approx(kC * (v + kA * v * v * v));
    out[i] = T(0.5) * v * (T(1) + th[i]);
  }
  return x.graph()->emit(x.shape(), std::move(out), {x}, [x, th = std::move(th)](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad(self);
    auto xv = x.value();
    auto& gx = g.grad(x.id());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const T v = xv[i];
      const T t = th[i];
      const T du = kC * (T(1) + T(3) * kA * v * v);
      gx[i] += d[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du);
    }
  });
}

// Softmax over the last axis with max subtraction.
template <typename T>
Var<T> softmax(const Var<T>& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  auto xv = x.value();
  std::vector<T> out(xv.size());
  std::copy(xv.begin(), xv.end(), out.begin());
  for (std::size_t r = 0; r < rows; ++r) ad_detail::softmax_row(out.data() + r * n, n);
  return x.graph()->emit(x.shape(), std::move(out), {x}, [x, n, rows](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad(self);
    const auto& y = g.value(self);
    auto& gx = g.grad(x.id());
    for (std::size_t r = 0; r < rows; ++r) {
      const T dot = ad_detail::dot_lanes(d.data() + r * n, y.data() + r * n, n);
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (d[r * n + j] - dot);
    }
  });
}

// Valid (unpadded) strided cross-correlation: x[c_in x L], w[c_out x c_in x k]
// -> [c_out x L'], L' = (L - k) / stride + 1. Lowered to one GEMM over an
// im2col buffer.
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, std::size_t stride) {
  ad_detail::require_same_graph(x, w);
  ad_detail::require_rank2(x, "conv1d");
  if (w.shape().size() != 3) fail(ErrorKind::kShape, "conv1d weight must be [c_out x c_in x k]");
  if (stride == 0) fail(ErrorKind::kConfig, "conv1d stride must be positive");
  const std::size_t c_in = x.dim(0), len = x.dim(1);
  const std::size_t c_out = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c_in) {
    fail(ErrorKind::kShape, "conv1d weight " + shape_string(w.shape()) + " for input " + shape_string(x.shape()));
  }
  if (len < k) fail(ErrorKind::kTooShort, "conv1d input length " + std::to_string(len) + " < kernel " + std::to_string(k));
  const std::size_t out_len = (len - k) / stride + 1;
  const std::size_t rows = c_in * k;

  auto xv = x.value();
  std::vector<T> cols(rows * out_len);
  for (std::size_t c = 0; c < c_in; ++c)
    for (std::size_t j = 0; j < k; ++j) {
      T* dst = cols.data() + (c * k + j) * out_len;
      const T* src = xv.data() + c * len + j;
      for (std::size_t t = 0; t < out_len; ++t) dst[t] = src[t * stride];
    }
  std::vector<T> out(c_out * out_len);
  blas::gemm(false, false, c_out, out_len, rows, T(1), w.value().data(), cols.data(), T(0), out.data());

  return x.graph()->emit(
      {c_out, out_len}, std::move(out), {x, w},
      [x, w, c_in, len, c_out, k, stride, out_len, rows, cols = std::move(cols)](Graph<T>& g, std::size_t self) {
        const T* dy = g.grad(self).data();
        if (g.needs_grad(w)) {
          blas::gemm(false, true, c_out, rows, out_len, T(1), dy, cols.data(), T(1), g.grad(w.id()).data());
        }
        if (g.needs_grad(x)) {
          std::vector<T> dcols(rows * out_len);
          blas::gemm(true, false, rows, out_len, c_out, T(1), w.value().data(), dy, T(0), dcols.data());
          auto& gx = g.grad(x.id());
          for (std::size_t c = 0; c < c_in; ++c)
            for (std::size_t j = 0; j < k; ++j) {
              const T* src = dcols.data() + (c * k + j) * out_len;
              T* dst = gx.data() + c * len + j;
              for (std::size_t t = 0; t < out_len; ++t) dst[t * stride] += src[t];
            }
        }
      });
}

// conv1d on time-major activations: x[L x c_in] -> [L' x c_out], equal to
// transpose(conv1d(transpose(x), w, stride)). Row t of the im2col matrix is
// the contiguous block x[t * stride, t * stride + k), so it is a strided view
// of x when windows do not overlap and a row-wise copy when they do.
template <typename T>
Var<T> conv1d_time_major(const Var<T>& x, const Var<T>& w, std::size_t stride) {
  ad_detail::require_same_graph(x, w);
  ad_detail::require_rank2(x, "conv1d_time_major");
  if (w.shape().size() != 3) fail(ErrorKind::kShape, "conv1d weight must be [c_out x c_in x k]");
  if (stride == 0) fail(ErrorKind::kConfig, "conv1d stride must be positive");
  const std::size_t len = x.dim(0), c_in = x.dim(1);
  const std::size_t c_out = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c_in) {
    fail(ErrorKind::kShape, "conv1d weight " + shape_string(w.shape()) + " for input " + shape_string(x.shape()));
  }
  if (len < k) fail(ErrorKind::kTooShort, "conv1d input length " + std::to_string(len) + " < kernel " + std::to_string(k));
  const std::size_t out_len = (len - k) / stride + 1;
  const std::size_t span = k * c_in;

  // [c_out x c_in x k] -> [c_out x k x c_in] to match the row layout.
  auto wv = w.value();
  std::vector<T> wp(c_out * span);
  for (std::size_t o = 0; o < c_out; ++o)
    for (std::size_t c = 0; c < c_in; ++c)
      for (std::size_t j = 0; j < k; ++j) wp[(o * k + j) * c_in + c] = wv[(o * c_in + c) * k + j];

  const std::size_t pitch = stride * c_in;
  const bool overlapping = pitch < span;
  std::vector<T> cols;
  if (overlapping) {
    cols.resize(out_len * span);
    const T* src = x.value().data();
    for (std::size_t t = 0; t < out_len; ++t) std::copy_n(src + t * pitch, span, cols.data() + t * span);
  }
  std::vector<T> out(out_len * c_out);
  blas::gemm_strided(false, true, out_len, c_out, span, T(1), overlapping ? cols.data() : x.value().data(),
                     overlapping ? span : pitch, wp.data(), span, T(0), out.data(), c_out);

  return x.graph()->emit(
      {out_len, c_out}, std::move(out), {x, w},
      [x, w, c_in, c_out, k, stride, out_len, span, pitch, overlapping, wp = std::move(wp),
       cols = std::move(cols)](Graph<T>& g, std::size_t self) {
        const T* dy = g.grad(self).data();
        if (g.needs_grad(w)) {
          std::vector<T> dwp(c_out * span);
          blas::gemm_strided(true, false, c_out, span, out_len, T(1), dy, c_out,
                             overlapping ? cols.data() : x.value().data(), overlapping ? span : pitch, T(0),
                             dwp.data(), span);
          auto& gw = g.grad(w.id());
          for (std::size_t o = 0; o < c_out; ++o)
            for (std::size_t c = 0; c < c_in; ++c)
              for (std::size_t j = 0; j < k; ++j) gw[(o * c_in + c) * k + j] += dwp[(o * k + j) * c_in + c];
        }
        if (g.needs_grad(x)) {
          auto& gx = g.grad(x.id());
          if (!overlapping) {
            blas::gemm_strided(false, false, out_len, span, c_out, T(1), dy, c_out, wp.data(), span, T(1),
                               gx.data(), pitch);
          } else {
            std::vector<T> dcols(out_len * span);
            blas::gemm(false, false, out_len, span, c_out, T(1), dy, wp.data(), T(0), dcols.data());
            for (std::size_t t = 0; t < out_len; ++t) {
              T* dst = gx.data() + t * pitch;
              const T* src = dcols.data() + t * span;
              for (std::size_t i = 0; i < span; ++i) dst[i] += src[i];
            }
          }
        }
      });
}

// Scaled dot-product attention over all heads of a packed projection.
// qkv is [T x 3d] holding Q | K | V; head h uses columns [h * dh, (h + 1) * dh)
// of each block, dh = d / n_heads. Returns the concatenated head outputs
// [T x d]. Equal to slicing each head, softmax(Q K^T / sqrt(dh)) V, and
// concatenating, but reads the heads in place. When `probe` is non-null the
// [T x T] probabilities of every head are appended to it.
template <typename T>
Var<T> multi_head_attention(const Var<T>& qkv, std::size_t n_heads, std::vector<BasicTensor<T>>* probe = nullptr) {
  ad_detail::require_rank2(qkv, "multi_head_attention");
  const std::size_t tokens = qkv.dim(0), width = qkv.dim(1);
  if (n_heads == 0 || width % (3 * n_heads) != 0) {
    fail(ErrorKind::kShape, "packed qkv width " + std::to_string(width) + " is not 3 * d with d divisible by " +
                                std::to_string(n_heads) + " heads");
  }
  const std::size_t d = width / 3, dh = d / n_heads;
  const T alpha = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const T* base = qkv.value().data();

  std::vector<T> probs(n_heads * tokens * tokens);
  std::vector<T> out(tokens * d);
  for (std::size_t h = 0; h < n_heads; ++h) {
    T* p = probs.data() + h * tokens * tokens;
    blas::gemm_strided(false, true, tokens, tokens, dh, alpha, base + h * dh, width, base + d + h * dh, width, T(0),
                       p, tokens);
    for (std::size_t r = 0; r < tokens; ++r) ad_detail::softmax_row(p + r * tokens, tokens);
    blas::gemm_strided(false, false, tokens, dh, tokens, T(1), p, tokens, base + 2 * d + h * dh, width, T(0),
                       out.data() + h * dh, d);
    if (probe) probe->emplace_back(Shape{tokens, tokens}, std::vector<T>(p, p + tokens * tokens));
  }

  return qkv.graph()->emit(
      {tokens, d}, std::move(out), {qkv},
      [qkv, n_heads, tokens, width, d, dh, alpha, probs = std::move(probs)](Graph<T>& g, std::size_t self) {
        const T* dout = g.grad(self).data();
        const T* base = qkv.value().data();
        T* dbase = g.grad(qkv.id()).data();
        std::vector<T> dp(tokens * tokens);
        for (std::size_t h = 0; h < n_heads; ++h) {
          const T* p = probs.data() + h * tokens * tokens;
          // dV_h += P^T dO_h
          blas::gemm_strided(true, false, tokens, dh, tokens, T(1), p, tokens, dout + h * dh, d, T(1),
                             dbase + 2 * d + h * dh, width);
          // dP = dO_h V_h^T, then through the softmax into dS (in place).
          blas::gemm_strided(false, true, tokens, tokens, dh, T(1), dout + h * dh, d, base + 2 * d + h * dh, width,
                             T(0), dp.data(), tokens);
          for (std::size_t r = 0; r < tokens; ++r) {
            T* drow = dp.data() + r * tokens;
            const T* prow = p + r * tokens;
            const T dot = ad_detail::dot_lanes(drow, prow, tokens);
            for (std::size_t j = 0; j < tokens; ++j) drow[j] = prow[j] * (drow[j] - dot);
          }
          // dQ_h += alpha dS K_h ; dK_h += alpha dS^T Q_h
          blas::gemm_strided(false, false, tokens, dh, tokens, alpha, dp.data(), tokens, base + d + h * dh, width,
                             T(1), dbase + h * dh, width);
          blas::gemm_strided(true, false, tokens, dh, tokens, alpha, dp.data(), tokens, base + h * dh, width, T(1),
                             dbase + d + h * dh, width);
        }
      });
}

// Inverted dropout; the identity (same node) when rate is zero.
template <typename T, typename Rng>
Var<T> dropout(const Var<T>& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) fail(ErrorKind::kConfig, "dropout rate must be below 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const T scale_kept = static_cast<T>(1.0 / (1.0 - rate));
  auto xv = x.value();
  std::vector<T> mask(xv.size()), out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = keep(rng) ? scale_kept : T(0);
    out[i] = xv[i] * mask[i];
  }
  return x.graph()->emit(x.shape(), std::move(out), {x}, [x, mask = std::move(mask)](Graph<T>& g, std::size_t self) {
    const auto& d = g.grad(self);
    auto& gx = g.grad(x.id());
    for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i] * mask[i];
  });
}

// weight * -ln softmax(logits)[label] for a single logit vector.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::size_t label, T weight = T(1)) {
  const std::size_t n = logits.numel();
  if (label >= n) {
    fail(ErrorKind::kLabel, "label index " + std::to_string(label) + " out of range for " + std::to_string(n) + " classes");
  }
  auto z = logits.value();
  const T mx = *std::max_element(z.begin(), z.end());
  T total = T(0);
  for (T v : z) total += std::exp(v - mx);
  const T log_norm = mx + std::log(total);
  std::vector<T> probs(n);
  for (std::size_t j = 0; j < n; ++j) probs[j] = std::exp(z[j] - log_norm);
  const T loss = weight * (log_norm - z[label]);
  return logits.graph()->emit({1}, {loss}, {logits},
                              [logits, label, weight, probs = std::move(probs)](Graph<T>& g, std::size_t self) {
                                const T d = g.grad(self)[0] * weight;
                                auto& gz = g.grad(logits.id());
                                for (std::size_t j = 0; j < probs.size(); ++j) {
                                  gz[j] += d * (probs[j] - (j == label ? T(1) : T(0)));
                                }
                              });
}

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  return add(a, b);
}

template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) {
  return mul(a, b);
}

}  // namespace serforge
