// Copyright 2026 The fmxcoders Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace fmx {

// Owning row-major matrix. Small and deliberately dumb: the heavy
// contractions live in tensor_kernel and index the raw storage directly.
template <typename Scalar>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, Scalar fill = Scalar{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  Scalar& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  Scalar operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<Scalar> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const Scalar> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<Scalar> flat() { return data_; }
  std::span<const Scalar> flat() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Scalar> data_;
};

// Owning row-major 3-way array; the last axis is contiguous.
template <typename Scalar>
class Tensor3 {
 public:
  using Shape = std::array<std::size_t, 3>;

  Tensor3() = default;
  explicit Tensor3(Shape shape, Scalar fill = Scalar{0})
      : shape_(shape), data_(shape[0] * shape[1] * shape[2], fill) {}

  const Shape& shape() const { return shape_; }
  std::size_t dim(int axis) const { return shape_[axis]; }
  std::size_t size() const { return data_.size(); }

  std::size_t offset(std::size_t a, std::size_t b, std::size_t c) const {
    return (a * shape_[1] + b) * shape_[2] + c;
  }
  Scalar& operator()(std::size_t a, std::size_t b, std::size_t c) {
    return data_[offset(a, b, c)];
  }
  Scalar operator()(std::size_t a, std::size_t b, std::size_t c) const {
    return data_[offset(a, b, c)];
  }

  std::span<Scalar> flat() { return data_; }
  std::span<const Scalar> flat() const { return data_; }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  Shape shape_{0, 0, 0};
  std::vector<Scalar> data_;
};

}  // namespace fmx
