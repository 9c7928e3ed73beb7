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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "serforge/error.hpp"

namespace serforge {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major array with an optional gradient buffer of the same shape.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_numel(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_numel(shape_)) {
      fail(ErrorKind::kShape, "data length " + std::to_string(data_.size()) + " does not match shape " +
                                  shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  bool requires_grad() const { return requires_grad_; }
  BasicTensor& set_requires_grad(bool on) {
    requires_grad_ = on;
    return *this;
  }

  bool has_grad() const { return !grad_.empty(); }
  std::span<const T> grad() const { return grad_; }
  // Zero-initialized on first use.
  std::vector<T>& grad_buffer() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), T(0));
    return grad_;
  }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), T(0)); }
  void clear_grad() { grad_.clear(); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data().begin(), [](T v) { return static_cast<U>(v); });
    out.set_requires_grad(requires_grad_);
    return out;
  }

  // Same shape and bitwise-identical values.
  bool bit_equal(const BasicTensor& other) const {
    return shape_ == other.shape_ &&
           (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(T)) == 0);
  }

 private:
  void check_shape() const {
    if (shape_.empty()) fail(ErrorKind::kShape, "tensor needs at least one dimension");
    for (auto d : shape_) {
      if (d == 0) fail(ErrorKind::kShape, "tensor dimensions must be positive, got " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
  bool requires_grad_ = false;
  std::vector<T> grad_;
};

using Tensor = BasicTensor<float>;

}  // namespace serforge
