// Copyright 2026 The autous Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "autous/error.hpp"

namespace autous {

using Shape = std::vector<std::size_t>;

inline std::size_t ShapeSize(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string ShapeToString(const Shape& shape);

/// Dense row-major array. Owns its storage; copies are deep.
template <typename S>
class Tensor {
 public:
  using value_type = S;

  Tensor() = default;
  explicit Tensor(Shape shape, S fill = S{0})
      : shape_(std::move(shape)), data_(ShapeSize(shape_), fill) {}
  Tensor(Shape shape, std::vector<S> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != ShapeSize(shape_)) {
      throw InternalError("tensor value count " + std::to_string(data_.size()) +
                          " does not match shape " + ShapeToString(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::span<S> values() { return data_; }
  std::span<const S> values() const { return data_; }
  std::vector<S>& storage() { return data_; }
  const std::vector<S>& storage() const { return data_; }

  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }

  void Fill(S v) { std::fill(data_.begin(), data_.end(), v); }

  void Reshape(Shape shape) {
    if (ShapeSize(shape) != data_.size()) {
      throw InternalError("cannot reshape " + ShapeToString(shape_) + " to " +
                          ShapeToString(shape));
    }
    shape_ = std::move(shape);
  }

  template <typename T>
  Tensor<T> Cast() const {
    return Tensor<T>(shape_, std::vector<T>(data_.begin(), data_.end()));
  }

 private:
  Shape shape_;
  std::vector<S> data_;
};

}  // namespace autous
